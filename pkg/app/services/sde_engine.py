# app/services/sde_engine.py

"""
Partially damped SDE dx = B(x,x) dt - A x dt + sum_m sigma_m e_m dW^m and its
high-energy rescaling dx = B(x,x) dt - eps A x dt + eps^{3/2} sigma dW.

All Monte Carlo runs step a batch of paths in lockstep; each path draws its
noise from its own stream, so per-path results do not depend on batching.
"""

import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats
from scipy.integrate import trapezoid

from app.core.exceptions import BlowupDetected, DimensionError, PreconditionError
from app.core.logging_config import error_logger, simulation_logger
from app.core.seeding import BatchNoise, make_generator
from app.schemas.reports import (
    CoercivityReport,
    EnergyBalanceReport,
    ExitTimeRow,
    ExitTimeScalingReport,
    FluxReport,
)
from app.services.bilinear_core import CoefficientTensor, evaluate_batch
from app.services.deterministic_flow import KernelSpec, dist_to_axes, grid_steps
from app.services.ensemble import EnsembleResult, fsum_mean, fsum_se, path_seeds, run_batches

SCHEMES = ("tamed-em", "split-rk4")
RESCALED_DT = 1e-3

RngLike = Union[int, np.random.Generator]


@dataclass(frozen=True)
class DampingSpec:
    A: np.ndarray
    J: int
    sigma: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "sigma", sigma)
        d = A.shape[0]
        if A.shape != (d, d) or sigma.shape != (d,):
            raise DimensionError(f"A must be square and sigma must match, got {A.shape} and {sigma.shape}")
        if not (0 <= self.J < d):
            raise PreconditionError(f"kernel dimension J must satisfy 0 <= J < d, got {self.J}")
        norm_A = float(np.linalg.norm(A)) if A.size else 0.0
        if np.max(np.abs(A - A.T), initial=0.0) > 1e-14 * max(norm_A, 1.0):
            raise PreconditionError("damping matrix A must be symmetric")
        if A.size and np.min(np.linalg.eigvalsh(A)) < -1e-12 * norm_A:
            raise PreconditionError("damping matrix A must be positive semi-definite")
        if np.any(A[:, : self.J] != 0.0):
            raise PreconditionError(f"A e_m must vanish exactly for the first {self.J} modes")

    @classmethod
    def kernel_damping(cls, d: int, J: int, sigma: Sequence[float], gamma: float = 1.0) -> "DampingSpec":
        """A = gamma * diag(0,...,0,1,...,1) with J undamped modes."""
        if gamma < 0:
            raise PreconditionError(f"gamma must be >= 0, got {gamma}")
        diag = np.zeros(d)
        diag[J:] = gamma
        return cls(A=np.diag(diag), J=J, sigma=np.asarray(sigma, dtype=float))

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @property
    def noise_power(self) -> float:
        return float(np.sum(self.sigma ** 2))

    @property
    def kernel_noise_power(self) -> float:
        return float(np.sum(self.sigma[: self.J] ** 2))

    @property
    def forced_modes(self) -> List[int]:
        return [m for m in range(self.d) if self.sigma[m] != 0.0]

    def require_generic_forcing(self) -> None:
        if len(self.forced_modes) < 2:
            raise PreconditionError(f"at least two forced modes required, got {self.forced_modes}")


@dataclass(frozen=True)
class SdePath:
    times: np.ndarray
    states: np.ndarray
    seed: Optional[int]
    dt: float
    scheme: str


@dataclass(frozen=True)
class StoppingRecord:
    epsilon: float
    delta: float
    tau: float
    censored: bool
    horizon: float
    seed: Optional[int]
    dt: float


@dataclass(frozen=True)
class SdeModel:
    """Batch drift plus diagonal additive noise, advanced by one of SCHEMES."""
    drift: Callable[[np.ndarray], np.ndarray]
    sigma: np.ndarray
    dt: float
    scheme: str = "tamed-em"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise PreconditionError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if not self.dt > 0:
            raise PreconditionError(f"dt must be > 0, got {self.dt}")

    def drift_increment(self, X: np.ndarray) -> np.ndarray:
        dt = self.dt
        if self.scheme == "tamed-em":
            F = self.drift(X)
            return dt * F / (1.0 + dt * np.linalg.norm(F, axis=1))[:, None]
        k1 = self.drift(X)
        k2 = self.drift(X + 0.5 * dt * k1)
        k3 = self.drift(X + 0.5 * dt * k2)
        k4 = self.drift(X + dt * k3)
        return (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    def step(self, X: np.ndarray, xi: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        drift_inc = self.drift_increment(X)
        noise_inc = math.sqrt(self.dt) * self.sigma * xi
        return X + drift_inc + noise_inc, drift_inc, noise_inc


def bilinear_model(coeffs, A: np.ndarray, sigma: np.ndarray, dt: float, scheme: str = "tamed-em") -> SdeModel:
    """Drift B(x,x) - A x; coeffs may be a single tensor or a per-path stack."""
    C = coeffs.coeffs if isinstance(coeffs, CoefficientTensor) else np.asarray(coeffs)
    A = np.asarray(A, dtype=float)
    damped = bool(np.any(A != 0.0))

    def drift(X: np.ndarray) -> np.ndarray:
        F = evaluate_batch(C, X)
        return F - X @ A.T if damped else F

    return SdeModel(drift=drift, sigma=np.asarray(sigma, dtype=float), dt=dt, scheme=scheme)


StepHook = Callable[[int, np.ndarray, np.ndarray, np.ndarray, np.ndarray], Optional[bool]]


def advance(
    model: SdeModel,
    X0: np.ndarray,
    n_steps: int,
    noise: BatchNoise,
    hook: Optional[StepHook] = None,
    active_steps: Optional[np.ndarray] = None,
    record: bool = False,
) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """
    Step a batch n_steps times. hook(n, X_prev, X_next, drift_inc, noise_inc) runs
    after every step and may return True to stop early. Rows with
    active_steps <= n are frozen (their increments are reported as zero).
    """
    X = np.array(X0, dtype=float, copy=True)
    states = np.empty((n_steps + 1,) + X.shape) if record else None
    if record:
        states[0] = X
    for n in range(n_steps):
        xi = noise.next()
        X_next, drift_inc, noise_inc = model.step(X, xi)
        if active_steps is not None:
            frozen = (active_steps <= n)[:, None]
            if frozen.any():
                X_next = np.where(frozen, X, X_next)
                drift_inc = np.where(frozen, 0.0, drift_inc)
                noise_inc = np.where(frozen, 0.0, noise_inc)
        if not np.all(np.isfinite(X_next)):
            error_logger.error(f"[SDE] non-finite state at step {n + 1}, dt={model.dt:.3e}, scheme={model.scheme}")
            raise BlowupDetected(n + 1)
        stop = hook(n + 1, X, X_next, drift_inc, noise_inc) if hook is not None else None
        X = X_next
        if record:
            states[n + 1] = X
        if stop:
            if record:
                states = states[: n + 2]
            break
    return X, states


# --- Helpers ---

def default_dt(b: CoefficientTensor, x0) -> float:
    return min(1e-3, 0.05 / (1.0 + float(np.linalg.norm(x0)) * b.max_abs))


def _check_inputs(b: CoefficientTensor, damping: DampingSpec, x0) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float)
    if damping.d != b.d or x0.shape != (b.d,):
        raise DimensionError(f"tensor d={b.d}, damping d={damping.d} and x0 {x0.shape} must agree")
    return x0


def _check_eps(eps: float) -> None:
    if not (0.0 <= eps < 1.0):
        raise PreconditionError(f"eps must lie in [0, 1), got {eps}")


def _single_noise(rng: RngLike, d: int) -> Tuple[BatchNoise, Optional[int]]:
    if isinstance(rng, np.random.Generator):
        return BatchNoise([rng], d), None
    return BatchNoise([make_generator(int(rng))], d), int(rng)


def rescaled_model(b: CoefficientTensor, damping: DampingSpec, eps: float, dt: float, scheme: str = "tamed-em") -> SdeModel:
    _check_eps(eps)
    return bilinear_model(b, eps * damping.A, eps ** 1.5 * damping.sigma, dt, scheme)


# --- Single paths ---

def em_simulate(
    b: CoefficientTensor,
    damping: DampingSpec,
    x0,
    T: float,
    dt: Optional[float] = None,
    rng: RngLike = 0,
    scheme: str = "tamed-em",
) -> SdePath:
    """One path of the original SDE on the uniform grid k*dt, k = 0..T/dt."""
    x0 = _check_inputs(b, damping, x0)
    dt = default_dt(b, x0) if dt is None else dt
    if not (dt > 0 and T >= dt):
        raise PreconditionError(f"need dt > 0 and T >= dt, got dt={dt}, T={T}")
    n, h = grid_steps(T, dt)
    model = bilinear_model(b, damping.A, damping.sigma, h, scheme)
    noise, seed = _single_noise(rng, b.d)
    _, states = advance(model, x0[None, :], n, noise, record=True)
    return SdePath(times=h * np.arange(n + 1), states=states[:, 0, :], seed=seed, dt=h, scheme=scheme)


def simulate_rescaled(
    b: CoefficientTensor,
    damping: DampingSpec,
    eps: float,
    x0,
    T: float,
    dt: float = RESCALED_DT,
    rng: RngLike = 0,
    scheme: str = "tamed-em",
) -> SdePath:
    x0 = _check_inputs(b, damping, x0)
    if not (dt > 0 and T >= dt):
        raise PreconditionError(f"need dt > 0 and T >= dt, got dt={dt}, T={T}")
    n, h = grid_steps(T, dt)
    model = rescaled_model(b, damping, eps, h, scheme)
    noise, seed = _single_noise(rng, b.d)
    _, states = advance(model, x0[None, :], n, noise, record=True)
    return SdePath(times=h * np.arange(n + 1), states=states[:, 0, :], seed=seed, dt=h, scheme=scheme)


def flux_average(path: SdePath, b: CoefficientTensor, K: KernelSpec) -> float:
    """(1/T) int <Pi_K x, Pi_K B(x,x)> dt, trapezoid on the stored grid."""
    X = path.states
    F = evaluate_batch(b, X)
    g = np.sum(X[:, : K.J] * F[:, : K.J], axis=1)
    T = path.times[-1] - path.times[0]
    if T <= 0:
        return 0.0
    return float(trapezoid(g, path.times) / T)


# --- Ensembles ---

def simulate_ensemble(
    b: CoefficientTensor,
    damping: DampingSpec,
    x0,
    T: float,
    n_paths: int,
    dt: Optional[float] = None,
    master_seed: int = 0,
    threads: Optional[int] = None,
    eps: Optional[float] = None,
    scheme: str = "tamed-em",
) -> EnsembleResult:
    """Terminal states of n_paths paths (rescaled dynamics when eps is given); values are |x_T|^2."""
    x0 = _check_inputs(b, damping, x0)
    if dt is None:
        dt = RESCALED_DT if eps is not None else default_dt(b, x0)
    n, h = grid_steps(T, dt)
    model = rescaled_model(b, damping, eps, h, scheme) if eps is not None else bilinear_model(b, damping.A, damping.sigma, h, scheme)
    seeds = path_seeds(master_seed, n_paths)

    def worker(idx: np.ndarray) -> Dict[str, np.ndarray]:
        noise = BatchNoise.from_seeds((seeds[p] for p in idx), b.d)
        X, _ = advance(model, np.tile(x0, (idx.size, 1)), n, noise)
        return {"final": X}

    out = run_batches(n_paths, worker, threads, label="SIMULATE")
    final = out["final"]
    return EnsembleResult(
        values=np.sum(final ** 2, axis=1),
        censored=np.zeros(n_paths, dtype=bool),
        seeds=seeds,
        extras={"final": final},
    )


def energy_balance(
    b: CoefficientTensor,
    damping: DampingSpec,
    x0,
    T: float,
    dt: Optional[float] = None,
    n_paths: int = 1000,
    master_seed: int = 0,
    threads: Optional[int] = None,
    scheme: str = "tamed-em",
) -> EnergyBalanceReport:
    """Monte Carlo residual of E|x_T|^2 + 2 int E[Ax.x] - |x0|^2 - T sum sigma^2."""
    x0 = _check_inputs(b, damping, x0)
    if n_paths < 100:
        raise PreconditionError(f"n_paths must be >= 100, got {n_paths}")
    dt = default_dt(b, x0) if dt is None else dt
    n, h = grid_steps(T, dt)
    model = bilinear_model(b, damping.A, damping.sigma, h, scheme)
    A = damping.A
    seeds = path_seeds(master_seed, n_paths)

    def worker(idx: np.ndarray) -> Dict[str, np.ndarray]:
        noise = BatchNoise.from_seeds((seeds[p] for p in idx), b.d)
        diss = np.zeros(idx.size)

        def hook(step, X, X_next, _d, _n):
            q0 = np.einsum("ni,ij,nj->n", X, A, X)
            q1 = np.einsum("ni,ij,nj->n", X_next, A, X_next)
            diss[:] += h * (q0 + q1)  # 2 * trapezoid

        X, _ = advance(model, np.tile(x0, (idx.size, 1)), n, noise, hook=hook)
        return {"final_energy": np.sum(X ** 2, axis=1), "dissipation": diss}

    out = run_batches(n_paths, worker, threads, label="ENERGY_BALANCE")
    injected = T * damping.noise_power
    residuals = out["final_energy"] + out["dissipation"] - float(x0 @ x0) - injected
    report = EnergyBalanceReport(
        residual=fsum_mean(residuals),
        se=fsum_se(residuals),
        n_paths=n_paths,
        T=T,
        dt=h,
        scheme=scheme,
        mean_final_energy=fsum_mean(out["final_energy"]),
        mean_dissipation=fsum_mean(out["dissipation"]),
        injected=injected,
    )
    simulation_logger.info(f"[ENERGY_BALANCE] d={b.d} T={T} dt={h:.3e} residual={report.residual:.4e} se={report.se:.4e}")
    return report


def _bookkeeping_worker(model: SdeModel, b: CoefficientTensor, J: int, x0: np.ndarray, n_steps: int, burn_steps: int, seeds: List[int]):
    h = model.dt
    # Itô correction per unit time: sum of sigma_m^2 over the projected modes
    power = float(np.sum(model.sigma[:J] ** 2))

    def worker(idx: np.ndarray) -> Dict[str, np.ndarray]:
        noise = BatchNoise.from_seeds((seeds[p] for p in idx), b.d)
        X = np.tile(x0, (idx.size, 1))
        if burn_steps:
            X, _ = advance(model, X, burn_steps, noise)
        acc = {k: np.zeros(idx.size) for k in ("bracket", "drift", "martingale", "quadratic")}
        start = np.sum(X[:, :J] ** 2, axis=1)
        g_prev = [np.sum(X[:, :J] * evaluate_batch(b, X)[:, :J], axis=1)]

        def hook(step, Xp, Xn, d_inc, n_inc):
            g_next = np.sum(Xn[:, :J] * evaluate_batch(b, Xn)[:, :J], axis=1)
            acc["bracket"] += 0.5 * h * (g_prev[0] + g_next)
            g_prev[0] = g_next
            acc["drift"] += 2.0 * np.sum(Xp[:, :J] * d_inc[:, :J], axis=1)
            acc["martingale"] += 2.0 * np.sum(Xp[:, :J] * n_inc[:, :J], axis=1)
            inc = d_inc[:, :J] + n_inc[:, :J]
            acc["quadratic"] += np.sum(inc * inc, axis=1)

        X, _ = advance(model, X, n_steps - burn_steps, noise, hook=hook)
        end = np.sum(X[:, :J] ** 2, axis=1)
        acc["correction"] = np.full(idx.size, power * (n_steps - burn_steps) * h)
        acc["residual"] = end - start - (acc["drift"] + acc["martingale"] + acc["correction"])
        return acc

    return worker


def ito_bookkeeping(
    b: CoefficientTensor,
    damping: DampingSpec,
    x0,
    T: float,
    dt: Optional[float] = None,
    rng: RngLike = 0,
    K: Optional[KernelSpec] = None,
    scheme: str = "tamed-em",
) -> Dict[str, float]:
    """
    Itô identity |P x_T|^2 - |P x_0|^2 = D + M + S T + residual for one path, with P
    the kernel projector (identity when K is None): D = sum 2<Px, P drift step>,
    M = sum 2<Px, P noise step> and S the noise power on the projected modes.
    The residual is O(sqrt(dt)) noise plus O(dt) bias; Q = sum |P step|^2 is the
    realized quadratic variation, an estimate of S T.
    """
    x0 = _check_inputs(b, damping, x0)
    dt = default_dt(b, x0) if dt is None else dt
    n, h = grid_steps(T, dt)
    J = b.d if K is None else K.J
    model = bilinear_model(b, damping.A, damping.sigma, h, scheme)
    if isinstance(rng, np.random.Generator):
        raise PreconditionError("ito_bookkeeping takes an integer seed")
    out = _bookkeeping_worker(model, b, J, x0, n, 0, [int(rng)])(np.arange(1))
    return {k: float(v[0]) for k, v in out.items()}


def stationary_flux(
    b: CoefficientTensor,
    damping: DampingSpec,
    K: KernelSpec,
    x0,
    T: float,
    n_paths: int,
    burn_in: float = 0.0,
    dt: Optional[float] = None,
    master_seed: int = 0,
    threads: Optional[int] = None,
    scheme: str = "tamed-em",
) -> FluxReport:
    """
    Long-run kernel flux over [burn_in, T] on n_paths independent paths: the
    bracket average <Pi_K x, Pi_K B(x,x)> and the Itô terms on the same paths.
    """
    x0 = _check_inputs(b, damping, x0)
    damping.require_generic_forcing()
    if not (0.0 <= burn_in < T):
        raise PreconditionError(f"burn_in must lie in [0, T), got {burn_in}")
    dt = default_dt(b, x0) if dt is None else dt
    n, h = grid_steps(T, dt)
    burn_steps = int(round(burn_in / h))
    span = (n - burn_steps) * h
    model = bilinear_model(b, damping.A, damping.sigma, h, scheme)
    seeds = path_seeds(master_seed, n_paths)
    out = run_batches(n_paths, _bookkeeping_worker(model, b, K.J, x0, n, burn_steps, seeds), threads, label="FLUX")

    bracket = out["bracket"] / span
    report = FluxReport(
        bracket_average=fsum_mean(bracket),
        bracket_se=fsum_se(bracket),
        kernel_flux=-fsum_mean(bracket),
        expected_flux=0.5 * float(np.sum(damping.sigma[: K.J] ** 2)),
        ito_drift=fsum_mean(out["drift"]) / span,
        ito_martingale=fsum_mean(out["martingale"]) / span,
        ito_quadratic=fsum_mean(out["quadratic"]) / span,
        ito_correction=fsum_mean(out["correction"]) / span,
        bookkeeping_residual=fsum_mean(out["residual"]) / span,
        bookkeeping_se=fsum_se(out["residual"]) / span,
        n_paths=n_paths,
        T=T,
        burn_in=burn_steps * h,
        dt=h,
    )
    simulation_logger.info(
        f"[FLUX] d={b.d} J={K.J} paths={n_paths} span={span:.1f} bracket={report.bracket_average:.4e} "
        f"expected={report.expected_flux:.4e} bookkeeping_residual={report.bookkeeping_residual:.2e}+-{report.bookkeeping_se:.1e}"
    )
    return report


# --- Stopping times ---

Target = Callable[[np.ndarray], np.ndarray]


def kdelta_target(delta: float) -> Target:
    """dist(x, axes) >= delta and 1/2 <= |x| <= 3/2."""
    def target(X: np.ndarray) -> np.ndarray:
        r = np.linalg.norm(X, axis=1)
        return (dist_to_axes(X) >= delta) & (r >= 0.5) & (r <= 1.5)
    return target


def first_hitting_steps(
    model: SdeModel,
    X0: np.ndarray,
    n_steps: int,
    noise: BatchNoise,
    target: Target,
) -> Tuple[np.ndarray, np.ndarray]:
    """Grid index of the first visit to target (0 if X0 is already there); hit=False means censored at n_steps."""
    hit = target(X0).copy()
    steps = np.where(hit, 0, n_steps)
    if hit.all():
        return steps, hit

    def hook(step, _Xp, Xn, _d, _n):
        new = target(Xn) & ~hit
        if new.any():
            steps[new] = step
            hit[new] = True
        return bool(hit.all())

    # hit paths keep moving; their recorded step is already fixed
    advance(model, X0, n_steps, noise, hook=hook)
    return steps, hit


def exit_time(
    b: CoefficientTensor,
    damping: DampingSpec,
    eps: float,
    delta: float,
    x0,
    horizon: float,
    dt: float = RESCALED_DT,
    rng: RngLike = 0,
    scheme: str = "tamed-em",
) -> StoppingRecord:
    """First grid time of the rescaled path in K_delta, censored at horizon."""
    x0 = _check_inputs(b, damping, x0)
    _check_delta(delta)
    n, h = grid_steps(horizon, dt)
    model = rescaled_model(b, damping, eps, h, scheme)
    noise, seed = _single_noise(rng, b.d)
    steps, hit = first_hitting_steps(model, x0[None, :], n, noise, kdelta_target(delta))
    return StoppingRecord(
        epsilon=eps, delta=delta, tau=float(steps[0] * h), censored=not bool(hit[0]), horizon=n * h, seed=seed, dt=h
    )


def _check_delta(delta: float) -> None:
    if not (0.0 < delta < 0.5):
        raise PreconditionError(f"delta must lie in (0, 1/2), got {delta}")


def exit_times(
    b: CoefficientTensor,
    damping: DampingSpec,
    eps: float,
    delta: float,
    x0,
    horizon: float,
    n_paths: int,
    dt: float = RESCALED_DT,
    master_seed: int = 0,
    threads: Optional[int] = None,
    stream: int = 0,
    scheme: str = "tamed-em",
) -> Tuple[List[StoppingRecord], EnsembleResult]:
    x0 = _check_inputs(b, damping, x0)
    _check_delta(delta)
    n, h = grid_steps(horizon, dt)
    model = rescaled_model(b, damping, eps, h, scheme)
    seeds = path_seeds(master_seed, n_paths, stream)
    target = kdelta_target(delta)

    def worker(idx: np.ndarray) -> Dict[str, np.ndarray]:
        noise = BatchNoise.from_seeds((seeds[p] for p in idx), b.d)
        steps, hit = first_hitting_steps(model, np.tile(x0, (idx.size, 1)), n, noise, target)
        return {"tau": steps * h, "censored": ~hit}

    out = run_batches(n_paths, worker, threads, label="EXIT_TIME")
    records = [
        StoppingRecord(epsilon=eps, delta=delta, tau=float(t), censored=bool(c), horizon=n * h, seed=s, dt=h)
        for t, c, s in zip(out["tau"], out["censored"], seeds)
    ]
    result = EnsembleResult(values=out["tau"], censored=out["censored"], seeds=seeds)
    simulation_logger.info(
        f"[EXIT_TIME] eps={eps:.1e} delta={delta} paths={n_paths} mean_tau={result.mean:.4f} "
        f"se={result.se:.4f} censored={result.censored_n}"
    )
    return records, result


def exit_time_scaling(
    b: CoefficientTensor,
    damping: DampingSpec,
    eps_grid: Sequence[float],
    delta: float,
    x0,
    n_paths: int,
    dt: float = RESCALED_DT,
    horizon_factor: float = 20.0,
    master_seed: int = 0,
    threads: Optional[int] = None,
    scheme: str = "tamed-em",
) -> Tuple[ExitTimeScalingReport, List[StoppingRecord]]:
    """
    Mean exit time per eps, regressed on |log eps|. The fitted C is 1.5 times the
    largest mean tau / |log eps| on the grid; c is the smallest fraction of paths
    with tau <= C |log eps|. Censored paths enter mean tau at their horizon, so
    a row with censored_fraction > 0 is a lower bound.
    """
    if len(eps_grid) < 2:
        raise PreconditionError("eps grid needs at least two values")
    damping.require_generic_forcing()
    rows: List[ExitTimeRow] = []
    all_records: List[StoppingRecord] = []
    taus: List[np.ndarray] = []
    for g, eps in enumerate(eps_grid):
        if not (0.0 < eps < 1.0):
            raise PreconditionError(f"eps must lie in (0, 1), got {eps}")
        horizon = horizon_factor * abs(math.log(eps))
        records, result = exit_times(
            b, damping, eps, delta, x0, horizon, n_paths, dt, master_seed, threads, stream=g, scheme=scheme
        )
        all_records.extend(records)
        taus.append(np.where(result.censored, np.inf, result.values))
        rows.append(
            ExitTimeRow(
                epsilon=eps, mean_tau=result.mean, se=result.se, n=result.n,
                censored_n=result.censored_n, horizon=records[0].horizon,
                censored_fraction=result.censored_n / result.n,
            )
        )

    logs = np.array([abs(math.log(r.epsilon)) for r in rows])
    means = np.array([r.mean_tau for r in rows])
    fit = stats.linregress(logs, means)
    C = 1.5 * float(np.max(means / logs))
    for row, t, L in zip(rows, taus, logs):
        row.fraction_within = float(np.mean(t <= C * L))
    c = min(r.fraction_within for r in rows)
    report = ExitTimeScalingReport(
        delta=delta, dt=dt, rows=rows, slope=float(fit.slope), intercept=float(fit.intercept),
        r_squared=float(fit.rvalue ** 2), C=C, c=c,
        max_censored_fraction=max(r.censored_fraction for r in rows),
    )
    simulation_logger.info(
        f"[EXIT_SCALING] slope={report.slope:.4f} R2={report.r_squared:.4f} C={C:.3f} c={c:.3f} "
        f"max_censored={report.max_censored_fraction:.3f}"
    )
    return report, all_records


# --- Coercivity ---

def coercivity(
    b: CoefficientTensor,
    damping: DampingSpec,
    eps: float,
    x0,
    C0: float,
    dt: float = RESCALED_DT,
    n_paths: int = 500,
    master_seed: int = 0,
    threads: Optional[int] = None,
    scheme: str = "tamed-em",
) -> CoercivityReport:
    """E int_0^{C0 |log eps|} A x.x dt on the rescaled dynamics."""
    x0 = _check_inputs(b, damping, x0)
    if not (0.0 < eps < 1.0):
        raise PreconditionError(f"eps must lie in (0, 1), got {eps}")
    if not C0 > 0:
        raise PreconditionError(f"C0 must be > 0, got {C0}")
    horizon = C0 * abs(math.log(eps))
    n, h = grid_steps(horizon, dt)
    model = rescaled_model(b, damping, eps, h, scheme)
    A = damping.A
    seeds = path_seeds(master_seed, n_paths)

    def worker(idx: np.ndarray) -> Dict[str, np.ndarray]:
        noise = BatchNoise.from_seeds((seeds[p] for p in idx), b.d)
        acc = np.zeros(idx.size)

        def hook(step, X, X_next, _d, _n):
            acc[:] += 0.5 * h * (np.einsum("ni,ij,nj->n", X, A, X) + np.einsum("ni,ij,nj->n", X_next, A, X_next))

        advance(model, np.tile(x0, (idx.size, 1)), n, noise, hook=hook)
        return {"integral": acc}

    out = run_batches(n_paths, worker, threads, label="COERCIVITY")
    report = CoercivityReport(
        epsilon=eps, C0=C0, horizon=n * h, mean=fsum_mean(out["integral"]),
        se=fsum_se(out["integral"]), n_paths=n_paths, dt=h,
    )
    simulation_logger.info(f"[COERCIVITY] eps={eps:.1e} horizon={report.horizon:.2f} mean={report.mean:.4e} se={report.se:.4e}")
    return report


# --- Ornstein-Uhlenbeck closed forms ---

def ou_second_moment(x0_sq: float, gamma: float, noise_power: float, t: float) -> float:
    """E|x_t|^2 for dx = -gamma x dt + sigma dW, noise_power = sum sigma_m^2."""
    decay = math.exp(-2.0 * gamma * t)
    return decay * x0_sq + noise_power / (2.0 * gamma) * (1.0 - decay)


def ou_integrated_moment(x0_sq: float, gamma: float, noise_power: float, t: float) -> float:
    """int_0^t E|x_s|^2 ds for the same process."""
    k = (1.0 - math.exp(-2.0 * gamma * t)) / (2.0 * gamma)
    return x0_sq * k + noise_power / (2.0 * gamma) * (t - k)
