# app/services/deterministic_flow.py

"""
The conservative flow dx/dt = B(x, x): RK4 trajectories, derivative polynomials
P_{j+1} = d^j x/dt^j at t = 0, kernel passthrough scans over K_delta and the
det(D) transversality diagnostic.
"""

from dataclasses import dataclass, field
from math import ceil, comb
from typing import List, Optional, Tuple

import numpy as np

from app.core.exceptions import (
    AxisIndexError,
    BlowupDetected,
    DimensionError,
    PreconditionError,
    SamplingError,
)
from app.core.logging_config import flow_logger
from app.services.bilinear_core import CoefficientTensor, evaluate, evaluate_batch

MAX_REJECTION_DRAWS = 10**6


@dataclass(frozen=True)
class KernelSpec:
    """ker A = span{e_1..e_J} (0-based coordinates 0..J-1)."""
    d: int
    J: int

    def __post_init__(self):
        if not (1 <= self.J < self.d):
            raise PreconditionError(f"kernel dimension must satisfy 1 <= J < d, got J={self.J}, d={self.d}")

    @property
    def proj_K(self) -> np.ndarray:
        P = np.zeros((self.d, self.d))
        P[: self.J, : self.J] = np.eye(self.J)
        return P

    @property
    def proj_K_perp(self) -> np.ndarray:
        return np.eye(self.d) - self.proj_K

    def kernel_part(self, X: np.ndarray) -> np.ndarray:
        Y = np.zeros_like(X)
        Y[..., : self.J] = X[..., : self.J]
        return Y

    def perp_part(self, X: np.ndarray) -> np.ndarray:
        Y = np.array(X, dtype=float, copy=True)
        Y[..., : self.J] = 0.0
        return Y


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    dt: float

    @property
    def energy_drift(self) -> float:
        e = np.sum(self.states ** 2, axis=1)
        return float(abs(e[-1] - e[0]))


@dataclass(frozen=True)
class EscapeSample:
    x: np.ndarray
    j_min: Optional[int]
    margin: float
    dist: float


@dataclass
class EscapeScan:
    delta: float
    samples: List[EscapeSample] = field(default_factory=list)
    draws: int = 0

    @property
    def J_delta(self) -> Optional[int]:
        finite = [s.j_min for s in self.samples if s.j_min is not None]
        return max(finite) if finite else None

    @property
    def c_delta(self) -> float:
        return min((s.margin for s in self.samples), default=0.0)

    @property
    def n_unresolved(self) -> int:
        return sum(1 for s in self.samples if s.j_min is None)

    def restrict(self, delta: float) -> "EscapeScan":
        """Subset of samples that also lie in K_delta for a larger delta."""
        kept = [s for s in self.samples if s.dist >= delta]
        return EscapeScan(delta=delta, samples=kept, draws=self.draws)


# --- Integration ---

def default_dt(b: CoefficientTensor, x0: np.ndarray) -> float:
    return min(1e-2, 0.01 / (1.0 + b.max_abs * float(np.linalg.norm(x0))))


def max_stable_dt(b: CoefficientTensor, x0: np.ndarray) -> float:
    return 0.1 / (1.0 + b.max_abs * float(np.linalg.norm(x0)))


def grid_steps(T: float, dt: float) -> Tuple[int, float]:
    """Number of steps covering [0, T] and the effective (uniform) step."""
    n = max(1, int(ceil(T / dt - 1e-9)))
    return n, T / n


def rk4_step(coeffs, X: np.ndarray, dt: float, linear: Optional[np.ndarray] = None) -> np.ndarray:
    """One RK4 step of dx = B(x,x) - linear x, row-wise on a batch."""
    def f(Y):
        F = evaluate_batch(coeffs, Y)
        if linear is not None:
            F = F - Y @ linear.T
        return F

    k1 = f(X)
    k2 = f(X + 0.5 * dt * k1)
    k3 = f(X + 0.5 * dt * k2)
    k4 = f(X + dt * k3)
    return X + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(
    b: CoefficientTensor,
    x0,
    T: float,
    dt: Optional[float] = None,
    backward: bool = False,
) -> Trajectory:
    """Classical RK4 on dx/dt = B(x, x); backward=True integrates the time-reversed field B_{-b}."""
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (b.d,):
        raise DimensionError(f"x0 must have shape ({b.d},), got {x0.shape}")
    if not T > 0:
        raise PreconditionError(f"T must be > 0, got {T}")
    dt = default_dt(b, x0) if dt is None else dt
    limit = max_stable_dt(b, x0)
    if not (0 < dt <= limit):
        raise PreconditionError(f"dt={dt} outside (0, {limit:.3e}] for |x0|={np.linalg.norm(x0):.3g}")

    n, h = grid_steps(T, dt)
    coeffs = -b.coeffs if backward else b.coeffs
    states = np.empty((n + 1, b.d))
    states[0] = x0
    X = x0[None, :]
    for step in range(1, n + 1):
        X = rk4_step(coeffs, X, h)
        if not np.all(np.isfinite(X)):
            flow_logger.error(f"[INTEGRATE] blowup at step {step}, dt={h:.3e}")
            raise BlowupDetected(step)
        states[step] = X[0]
    traj = Trajectory(times=h * np.arange(n + 1), states=states, dt=h)
    flow_logger.debug(f"[INTEGRATE] d={b.d} T={T} steps={n} energy_drift={traj.energy_drift:.3e}")
    return traj


# --- Derivative polynomials ---

def derivative_polynomials(b: CoefficientTensor, x, j_max: int) -> List[np.ndarray]:
    """[P_1, ..., P_{j_max+1}] with P_1 = x and P_{j+1} = sum_m C(j-1, m) B(P_{m+1}, P_{j-m})."""
    if int(j_max) != j_max or j_max < 1:
        raise PreconditionError(f"j_max must be an integer >= 1, got {j_max}")
    x = np.asarray(x, dtype=float)
    if x.shape != (b.d,):
        raise DimensionError(f"x must have shape ({b.d},), got {x.shape}")
    P = [x]
    for j in range(1, j_max + 1):
        acc = np.zeros(b.d)
        for m in range(j):
            acc = acc + comb(j - 1, m) * evaluate(b, P[m], P[j - 1 - m])
        P.append(acc)
    return P


# --- Kernel passthrough ---

def dist_to_axes(X: np.ndarray) -> np.ndarray:
    """Distance to the union of coordinate axes, sqrt(|x|^2 - max_m (x^m)^2), along the last axis."""
    X = np.asarray(X, dtype=float)
    sq = X ** 2
    return np.sqrt(np.maximum(np.sum(sq, axis=-1) - np.max(sq, axis=-1), 0.0))


def kernel_escape(b: CoefficientTensor, K: KernelSpec, x, j_max: int = 8) -> Tuple[Optional[int], float]:
    """Smallest j with |Pi_K^perp P_{j+1}(x)| above the degree-scaled zero threshold, with that norm."""
    x = np.asarray(x, dtype=float)
    if x.shape != (K.d,) or K.d != b.d:
        raise DimensionError(f"x must have shape ({b.d},) and K must match d={b.d}")
    norm_x = float(np.linalg.norm(x))
    if np.linalg.norm(x[K.J:]) > 1e-12 * max(norm_x, 1.0):
        raise PreconditionError("x must lie in the kernel span{e_1..e_J}")
    scale = b.max_abs
    P = derivative_polynomials(b, x, j_max)
    for j in range(1, j_max + 1):
        margin = float(np.linalg.norm(P[j][K.J:]))
        threshold = 1e-12 * scale ** j * norm_x ** (j + 1)
        if margin > threshold:
            return j, margin
    return None, 0.0


def _sample_shell(rng: np.random.Generator, n: int, J: int) -> np.ndarray:
    direction = rng.standard_normal((n, J))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    lo, hi = 0.5 ** J, 1.5 ** J
    radius = (lo + (hi - lo) * rng.random(n)) ** (1.0 / J)
    return direction * radius[:, None]


def kdelta_scan(
    b: CoefficientTensor,
    K: KernelSpec,
    delta: float,
    n_samples: int,
    j_max: int,
    rng: np.random.Generator,
    chunk: int = 4096,
) -> EscapeScan:
    """
    Uniform points of K intersected with K_delta = {1/2 <= |x| <= 3/2, dist(x, axes) >= delta}
    by rejection from the shell, each with its kernel escape order.
    """
    if not (0 < delta < 0.5):
        raise PreconditionError(f"delta must lie in (0, 1/2), got {delta}")
    if n_samples < 1:
        raise PreconditionError(f"n_samples must be >= 1, got {n_samples}")
    budget = max(MAX_REJECTION_DRAWS, 100 * n_samples)
    accepted: List[np.ndarray] = []
    n_acc = 0
    draws = 0
    while n_acc < n_samples:
        if draws >= budget:
            flow_logger.error(f"[KDELTA] rejection budget exhausted: {n_acc}/{n_samples} after {draws} draws, J={K.J} delta={delta}")
            raise SamplingError(f"accepted {n_acc} of {n_samples} points after {draws} draws (J={K.J}, delta={delta})")
        m = min(chunk, budget - draws)
        pts = _sample_shell(rng, m, K.J)
        draws += m
        ok = pts[dist_to_axes(pts) >= delta]
        if ok.size:
            accepted.append(ok[: n_samples - n_acc])
            n_acc += min(ok.shape[0], n_samples - n_acc)

    kernel_pts = np.concatenate(accepted)
    scan = EscapeScan(delta=delta, draws=draws)
    for y in kernel_pts:
        x = np.zeros(b.d)
        x[: K.J] = y
        j_min, margin = kernel_escape(b, K, x, j_max)
        scan.samples.append(EscapeSample(x=x, j_min=j_min, margin=margin, dist=float(dist_to_axes(y))))
    flow_logger.info(
        f"[KDELTA] d={b.d} J={K.J} delta={delta} n={n_samples} draws={draws} "
        f"J_delta={scan.J_delta} c_delta={scan.c_delta:.3e} unresolved={scan.n_unresolved}"
    )
    return scan


# --- Transversality diagnostic ---

def transversality_detD(b: CoefficientTensor, x, k: int, m: int, p: int) -> Tuple[float, float]:
    """det(D) from the closed form 4(x^k)^2(xdot^p x^m - xdot^m x^p) and from the explicit 2x2 matrix."""
    x = np.asarray(x, dtype=float)
    if x.shape != (b.d,):
        raise DimensionError(f"x must have shape ({b.d},), got {x.shape}")
    if len({k, m, p}) != 3:
        raise PreconditionError(f"indices must be distinct, got ({k}, {m}, {p})")
    for idx in (k, m, p):
        if not (0 <= idx < b.d):
            raise AxisIndexError(f"index {idx} out of range for d={b.d}")
    xd = evaluate(b, x, x)
    det_formula = 4.0 * x[k] ** 2 * (xd[p] * x[m] - xd[m] * x[p])
    D = np.array([
        [2.0 * x[k] * x[m], 2.0 * x[k] * x[p]],
        [2.0 * xd[k] * x[m] + 2.0 * xd[m] * x[k], 2.0 * xd[k] * x[p] + 2.0 * xd[p] * x[k]],
    ])
    return float(det_formula), float(np.linalg.det(D))
