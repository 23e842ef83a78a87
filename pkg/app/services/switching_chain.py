# app/services/switching_chain.py

"""
Coefficient-switched Markov chain: at every step draw (b_n, t_n) uniformly from
a ball of the class times [1/2, 3/2], then run the SDE with B = B_{b_n} for
time t_n. Step n of path p uses the stream derive_stream(master, p, n): the
switch is drawn first, the noise follows from the same generator.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.core.exceptions import NotHyperbolic, NumericalFailure, PreconditionError
from app.core.logging_config import chain_logger
from app.core.seeding import BatchNoise, derive_stream, make_generator
from app.schemas.reports import CertificateMargins, DriftReport, MomentRow
from app.services.bilinear_core import (
    CoefficientTensor,
    free_coordinates,
    from_free_coordinates,
    n_free,
)
from app.services.deterministic_flow import KernelSpec, kdelta_scan
from app.services.ensemble import fsum_mean, fsum_se, run_batches
from app.services.equilibrium_spectral import hyperbolicity_report
from app.services.hormander_ladder import generic_hypoellipticity
from app.services.sde_engine import DampingSpec, advance, bilinear_model, em_simulate

DURATION_RANGE = (0.5, 1.5)
DEFAULT_RADIUS_FACTOR = 0.1


@dataclass(frozen=True)
class SwitchBall:
    center: CoefficientTensor
    radius: float
    margins: Optional[CertificateMargins] = None

    def __post_init__(self):
        if not (self.radius >= 0 and np.isfinite(self.radius)):
            raise PreconditionError(f"radius must be finite and >= 0, got {self.radius}")

    @property
    def d(self) -> int:
        return self.center.d

    @property
    def max_abs_bound(self) -> float:
        """Upper bound of max |b| over the ball (each entry moves by at most 2 * radius)."""
        return self.center.max_abs + 2.0 * self.radius


@dataclass
class ChainState:
    x: np.ndarray
    n: int = 0
    t: float = 0.0
    last_b: Optional[CoefficientTensor] = None
    last_duration: Optional[float] = None


@dataclass
class ChainRun:
    states: np.ndarray  # (n_steps + 1, d)
    durations: np.ndarray  # (n_steps,)
    records: List[Dict[str, float]] = field(default_factory=list)


# --- Ball ---

def certify_center(
    b: CoefficientTensor,
    K: KernelSpec,
    alpha: float = 1.0,
    ladder_tol: float = 1e-10,
    delta: float = 0.2,
    n_scan: int = 200,
    j_max: int = 8,
    seed: int = 0,
    radius: Optional[float] = None,
) -> SwitchBall:
    """
    Run the three certificates on the center and build the ball. Default radius:
    0.1 times the smallest scale-free margin times max |free coordinate| of the center.
    """
    hyp = hyperbolicity_report(b, alpha)
    if not hyp.verdict:
        raise NotHyperbolic(f"center fails hyperbolicity, min margin {hyp.min_margin:.3e}")
    hypo = generic_hypoellipticity(b, ladder_tol)
    if not hypo.passes:
        raise NumericalFailure(f"center fails the ladder certificate, min |G_normalized| {hypo.min_margin:.3e}")
    scan = kdelta_scan(b, K, delta, n_scan, j_max, make_generator(seed))
    if scan.n_unresolved:
        raise NumericalFailure(f"{scan.n_unresolved} K_delta points do not leave the kernel within j <= {j_max}")

    norm_L = max(2.0 * alpha * b.max_abs, 1e-300)
    scale = b.max_abs or 1.0
    margins = CertificateMargins(
        hyperbolicity_margin=hyp.min_margin,
        hyperbolicity_margin_rel=hyp.min_margin / norm_L,
        min_G_normalized=hypo.min_margin,
        passthrough_J_delta=scan.J_delta,
        passthrough_c_delta=scan.c_delta,
        passthrough_c_delta_rel=scan.c_delta / scale ** (scan.J_delta or 1),
    )
    if radius is None:
        radius = DEFAULT_RADIUS_FACTOR * margins.smallest * float(np.max(np.abs(free_coordinates(b))))
    chain_logger.info(
        f"[CERTIFY] d={b.d} J={K.J} hyp_rel={margins.hyperbolicity_margin_rel:.3e} "
        f"G_norm={margins.min_G_normalized:.3e} c_delta_rel={margins.passthrough_c_delta_rel:.3e} radius={radius:.3e}"
    )
    return SwitchBall(center=b, radius=radius, margins=margins)


def sample_switch(ball: SwitchBall, rng: np.random.Generator) -> Tuple[CoefficientTensor, float]:
    """b uniform on the free-coordinate ball, t uniform on [1/2, 3/2]."""
    dim = n_free(ball.d)
    direction = rng.standard_normal(dim)
    u = rng.random()
    duration = float(rng.uniform(*DURATION_RANGE))
    if ball.radius == 0.0:
        return ball.center, duration
    norm = np.linalg.norm(direction)
    c = free_coordinates(ball.center) + ball.radius * u ** (1.0 / dim) * direction / norm
    return from_free_coordinates(ball.d, c), duration


def _grid(duration: float, dt: float) -> int:
    return max(1, int(round(duration / dt)))


def _check_chain_damping(damping: DampingSpec) -> None:
    if not (damping.J < damping.d):
        raise PreconditionError("damping must have J < d")
    damping.require_generic_forcing()


def _check_chain_inputs(ball: SwitchBall, damping: DampingSpec, x0) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float)
    if damping.d != ball.d or x0.shape != (ball.d,):
        raise PreconditionError(f"ball d={ball.d}, damping d={damping.d} and x0 {x0.shape} must agree")
    _check_chain_damping(damping)
    return x0


def default_dt(ball: SwitchBall, x0) -> float:
    return min(1e-3, 0.05 / (1.0 + float(np.linalg.norm(x0)) * ball.max_abs_bound))


# --- Chain ---

def chain_step(
    state: ChainState,
    ball: SwitchBall,
    damping: DampingSpec,
    dt: float,
    rng: np.random.Generator,
    scheme: str = "tamed-em",
) -> ChainState:
    """Draw (b_n, t_n), run the SDE for t_n (rounded to the dt grid) and return the endpoint."""
    _check_chain_damping(damping)
    b, duration = sample_switch(ball, rng)
    n = _grid(duration, dt)
    path = em_simulate(b, damping, state.x, n * dt, dt, rng, scheme)
    return ChainState(x=path.states[-1].copy(), n=state.n + 1, t=state.t + n * dt, last_b=b, last_duration=n * dt)


def run_chain(
    ball: SwitchBall,
    damping: DampingSpec,
    x0,
    n_steps: int,
    dt: Optional[float] = None,
    master_seed: int = 0,
    path: int = 0,
    scheme: str = "tamed-em",
) -> ChainRun:
    """Sequential chain of n_steps steps with per-step records (n, t_n, |x|, V)."""
    x0 = _check_chain_inputs(ball, damping, x0)
    dt = default_dt(ball, x0) if dt is None else dt
    state = ChainState(x=x0)
    states = [x0]
    durations = []
    records = [{"n": 0, "t_n": 0.0, "norm": float(np.linalg.norm(x0)), "V": 1.0 + float(x0 @ x0)}]
    for step in range(n_steps):
        rng = make_generator(derive_stream(master_seed, path, step))
        state = chain_step(state, ball, damping, dt, rng, scheme)
        states.append(state.x)
        durations.append(state.last_duration)
        records.append({
            "n": state.n,
            "t_n": state.last_duration,
            "norm": float(np.linalg.norm(state.x)),
            "V": 1.0 + float(state.x @ state.x),
        })
    chain_logger.info(f"[CHAIN] d={ball.d} steps={n_steps} final_norm={records[-1]['norm']:.4e}")
    return ChainRun(states=np.array(states), durations=np.array(durations), records=records)


def chain_energies(
    ball: SwitchBall,
    damping: DampingSpec,
    x0,
    n_paths: int,
    n_chain_steps: int = 2,
    dt: Optional[float] = None,
    master_seed: int = 0,
    threads: Optional[int] = None,
    scheme: str = "split-rk4",
) -> Dict[str, np.ndarray]:
    """V(Phi_1), ..., V(Phi_n) for n_paths chains advanced in lockstep batches (per-path tensors and durations)."""
    x0 = _check_chain_inputs(ball, damping, x0)
    dt = default_dt(ball, x0) if dt is None else dt

    def worker(idx: np.ndarray) -> Dict[str, np.ndarray]:
        X = np.tile(x0, (idx.size, 1))
        energies = []
        for step in range(n_chain_steps):
            gens = [make_generator(derive_stream(master_seed, int(p), step)) for p in idx]
            switches = [sample_switch(ball, g) for g in gens]
            steps = np.array([_grid(t, dt) for _, t in switches])
            coeffs = np.stack([b.coeffs for b, _ in switches])
            model = bilinear_model(coeffs, damping.A, damping.sigma, dt, scheme)
            noise = BatchNoise(gens, ball.d)
            X, _ = advance(model, X, int(steps.max()), noise, active_steps=steps)
            energies.append(1.0 + np.sum(X ** 2, axis=1))
        return {f"V{s + 1}": v for s, v in enumerate(energies)}

    return run_batches(n_paths, worker, threads, label="CHAIN_ENSEMBLE")


def lyapunov_drift(
    ball: SwitchBall,
    damping: DampingSpec,
    x0,
    n_paths: int,
    dt: Optional[float] = None,
    master_seed: int = 0,
    threads: Optional[int] = None,
    scheme: str = "split-rk4",
) -> DriftReport:
    """
    Monte Carlo E[V(Phi_2)] - V(x0) with V = 1 + |x|^2, plus the one-step estimate.
    Runs in original units; split-rk4 keeps integrator energy error below the dissipation.
    """
    x0 = _check_chain_inputs(ball, damping, x0)
    r0 = float(np.linalg.norm(x0))
    if r0 < math.e:
        raise PreconditionError(f"|x0| must be >= e, got {r0:.4g}")
    if n_paths < 1000:
        raise PreconditionError(f"n_paths must be >= 1000, got {n_paths}")
    dt = default_dt(ball, x0) if dt is None else dt
    V0 = 1.0 + r0 * r0
    out = chain_energies(ball, damping, x0, n_paths, 2, dt, master_seed, threads, scheme)
    d1 = out["V1"] - V0
    d2 = out["V2"] - V0
    two = fsum_mean(d2)
    report = DriftReport(
        x0_norm=r0,
        one_step=fsum_mean(d1),
        one_step_se=fsum_se(d1),
        two_step=two,
        two_step_se=fsum_se(d2),
        normalized=two * math.log(r0) / r0,
        one_step_bound=DURATION_RANGE[1] * damping.noise_power,
        n_paths=n_paths,
        dt=dt,
    )
    chain_logger.info(
        f"[LYAPUNOV] |x0|={r0:.1f} one_step={report.one_step:.4e}+-{report.one_step_se:.2e} "
        f"two_step={two:.4e}+-{report.two_step_se:.2e} normalized={report.normalized:.4e}"
    )
    return report


# --- Empirical measure ---

def _batch_means_se(values: np.ndarray, n_batches: int) -> float:
    n = values.size
    n_batches = min(n_batches, n)
    if n_batches < 2:
        return 0.0
    size = n // n_batches
    means = [fsum_mean(values[k * size:(k + 1) * size]) for k in range(n_batches)]
    return fsum_se(means)


def empirical_measure(run: ChainRun, burn_in: int, p_list: Sequence[float], n_batches: int = 20) -> List[MomentRow]:
    """Averages of |x_n|^p over chain states after burn_in, with batch-means standard errors."""
    n_total = run.states.shape[0] - 1
    if not (0 <= burn_in < n_total):
        raise PreconditionError(f"burn_in must lie in [0, {n_total}), got {burn_in}")
    norms = np.linalg.norm(run.states[burn_in + 1:], axis=1)
    rows = []
    for p in p_list:
        values = np.ones_like(norms) if p == 0 else norms ** p
        rows.append(MomentRow(p=float(p), mean=fsum_mean(values), se=_batch_means_se(values, n_batches), n=int(values.size)))
    return rows
