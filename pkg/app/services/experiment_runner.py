# app/services/experiment_runner.py

"""
Dispatch of a validated ExperimentConfig to the computational modules.

Every artifact uses 1-based coordinate and path indices; the library API is
0-based. Random inputs that are not per-path noise (tensor samples, K_delta
points, detD probes, chain streams) come from their own stream ids below.
"""

import math
from pathlib import Path
from typing import Callable, Dict, List

import numpy as np

from app.core.exceptions import ConfigError
from app.core.logging_config import cli_logger, console_logger
from app.core.seeding import derive_stream, make_generator
from app.schemas.experiment import ExperimentConfig
from app.services.bilinear_core import (
    CoefficientTensor,
    load_tensor,
    lorenz96,
    sample,
    save_tensor,
    verify_membership,
)
from app.services.deterministic_flow import KernelSpec, kdelta_scan, transversality_detD
from app.services.equilibrium_spectral import hyperbolicity_report
from app.services.hormander_ladder import generic_hypoellipticity, witness_tensor
from app.services.sde_engine import (
    RESCALED_DT,
    DampingSpec,
    coercivity,
    energy_balance,
    exit_time_scaling,
    simulate_ensemble,
    stationary_flux,
)
from app.services.switching_chain import certify_center, empirical_measure, lyapunov_drift, run_chain
from app.utils.io_utils import write_csv, write_json
from app.utils.plotting import plot_drift, plot_exit_scaling

STREAM_TENSOR = 0x7E50
STREAM_KDELTA = 0x4B01
STREAM_DETD = 0xDE7D
STREAM_CHAIN = 0xC4A1
STREAM_DRIFT = 0xD41F

Runner = Callable[[ExperimentConfig, Path], List[str]]


# --- Inputs ---

def resolve_tensor(cfg: ExperimentConfig) -> CoefficientTensor:
    if cfg.tensor == "lorenz96":
        return lorenz96(cfg.d)
    if cfg.tensor == "witness":
        return witness_tensor(cfg.d)
    if cfg.tensor == "file":
        b = load_tensor(cfg.tensor_file)
        if b.d != cfg.d:
            raise ConfigError("d", f"tensor file has d={b.d}, config has d={cfg.d}")
        return b
    seed = cfg.sample_seed if cfg.sample_seed is not None else derive_stream(cfg.master_seed, STREAM_TENSOR)
    return sample(cfg.d, cfg.sample_scale, make_generator(seed))


def resolve_x0(cfg: ExperimentConfig) -> np.ndarray:
    if cfg.x0 is not None:
        return np.asarray(cfg.x0, dtype=float)
    x0 = np.zeros(cfg.d)
    x0[0] = 1.0
    return x0


def resolve_sigma(cfg: ExperimentConfig) -> np.ndarray:
    if cfg.sigma is not None:
        return np.asarray(cfg.sigma, dtype=float)
    sigma = np.zeros(cfg.d)
    sigma[:2] = 1.0
    return sigma


def resolve_damping(cfg: ExperimentConfig) -> DampingSpec:
    J = cfg.J if cfg.J is not None else 0
    return DampingSpec.kernel_damping(cfg.d, J, resolve_sigma(cfg), cfg.gamma)


def _coord_columns(d: int) -> List[str]:
    return [f"x_{m + 1}" for m in range(d)]


# --- Certificates ---

def run_verify_class(cfg: ExperimentConfig, out: Path) -> List[str]:
    b = resolve_tensor(cfg)
    report = verify_membership(b.coeffs, cfg.membership_tol)
    write_json(out / "membership.json", {**report.model_dump(), "max_residual": report.max_residual})
    save_tensor(out / "tensor.json", b)
    console_logger.info(f"[VERIFY_CLASS] d={b.d} pass={report.passes} max_residual={report.max_residual:.3e}")
    return ["membership.json", "tensor.json"]


def run_spectral_report(cfg: ExperimentConfig, out: Path) -> List[str]:
    b = resolve_tensor(cfg)
    report = hyperbolicity_report(b, cfg.alpha)
    rows = [
        {"axis": a.axis + 1, "re": re, "im": im, "class": cls}
        for a in report.axes
        for re, im, cls in zip(a.eigen_re, a.eigen_im, a.classes)
    ]
    write_csv(out / "spectrum.csv", rows, ["axis", "re", "im", "class"])
    write_json(out / "spectral_summary.json", {
        "verdict": report.verdict,
        "min_margin": report.min_margin,
        "alpha": report.alpha,
        "axes": [
            {"axis": a.axis + 1, "n_stable": a.n_stable, "n_unstable": a.n_unstable, "n_center": a.n_center,
             "margin": a.margin, "max_unstable": a.max_unstable, "tol_center": a.tol_center}
            for a in report.axes
        ],
    })
    console_logger.info(f"[SPECTRAL] d={b.d} verdict={report.verdict} min_margin={report.min_margin:.3e}")
    return ["spectrum.csv", "spectral_summary.json"]


def run_hormander(cfg: ExperimentConfig, out: Path) -> List[str]:
    b = resolve_tensor(cfg)
    report = generic_hypoellipticity(b, cfg.tol)
    rows = [
        {"i": r.i + 1, "j": r.j + 1, "G": r.G, "G_normalized": r.G_normalized, "pass": r.passes}
        for r in report.pairs
    ]
    write_csv(out / "hormander.csv", rows, ["i", "j", "G", "G_normalized", "pass"])
    write_json(out / "hormander_summary.json", {"passes": report.passes, "min_margin": report.min_margin, "tol": report.tol})
    console_logger.info(f"[HORMANDER] d={b.d} pass={report.passes} min_margin={report.min_margin:.3e}")
    return ["hormander.csv", "hormander_summary.json"]


def run_passthrough(cfg: ExperimentConfig, out: Path) -> List[str]:
    b = resolve_tensor(cfg)
    K = KernelSpec(cfg.d, cfg.J)
    rng = make_generator(derive_stream(cfg.master_seed, STREAM_KDELTA))
    scan = kdelta_scan(b, K, cfg.delta, cfg.n_samples, cfg.j_max, rng)
    columns = _coord_columns(cfg.d)
    rows = []
    for s in scan.samples:
        row = dict(zip(columns, s.x.tolist()))
        row["j_min"] = s.j_min
        row["margin"] = s.margin
        rows.append(row)
    write_csv(out / "passthrough.csv", rows, columns + ["j_min", "margin"])
    write_json(out / "passthrough_summary.json", {
        "J": K.J, "delta": cfg.delta, "n_samples": cfg.n_samples, "draws": scan.draws,
        "J_delta": scan.J_delta, "c_delta": scan.c_delta, "n_unresolved": scan.n_unresolved,
    })
    console_logger.info(f"[PASSTHROUGH] J_delta={scan.J_delta} c_delta={scan.c_delta:.3e} unresolved={scan.n_unresolved}")
    return ["passthrough.csv", "passthrough_summary.json"]


def run_detd(cfg: ExperimentConfig, out: Path) -> List[str]:
    b = resolve_tensor(cfg)
    rng = make_generator(derive_stream(cfg.master_seed, STREAM_DETD))
    rows = []
    for _ in range(cfg.detd_points):
        x = rng.standard_normal(cfg.d)
        k, m, p = (int(v) for v in rng.choice(cfg.d, size=3, replace=False))
        formula, matrix = transversality_detD(b, x, k, m, p)
        rows.append({"k": k + 1, "m": m + 1, "p": p + 1, "det_formula": formula, "det_matrix": matrix})
    write_csv(out / "detd.csv", rows, ["k", "m", "p", "det_formula", "det_matrix"])
    return ["detd.csv"]


# --- Monte Carlo ---

def run_simulate(cfg: ExperimentConfig, out: Path) -> List[str]:
    b = resolve_tensor(cfg)
    damping = resolve_damping(cfg)
    result = simulate_ensemble(
        b, damping, resolve_x0(cfg), cfg.T, cfg.n_paths, cfg.dt, cfg.master_seed, cfg.threads, cfg.eps, cfg.scheme
    )
    columns = _coord_columns(cfg.d)
    rows = []
    for p, (seed, x, energy) in enumerate(zip(result.seeds, result.extras["final"], result.values)):
        row = {"path_id": p + 1, "seed": seed}
        row.update(zip(columns, x.tolist()))
        row["energy"] = energy
        rows.append(row)
    write_csv(out / "simulate.csv", rows, ["path_id", "seed"] + columns + ["energy"])
    write_json(out / "simulate_summary.json", result.summary())
    return ["simulate.csv", "simulate_summary.json"]


def run_energy_balance(cfg: ExperimentConfig, out: Path) -> List[str]:
    b = resolve_tensor(cfg)
    report = energy_balance(
        b, resolve_damping(cfg), resolve_x0(cfg), cfg.T, cfg.dt, cfg.n_paths, cfg.master_seed, cfg.threads, cfg.scheme
    )
    write_json(out / "energy_balance.json", report)
    return ["energy_balance.json"]


def run_exit_times(cfg: ExperimentConfig, out: Path) -> List[str]:
    b = resolve_tensor(cfg)
    report, records = exit_time_scaling(
        b, resolve_damping(cfg), cfg.eps_grid, cfg.delta, resolve_x0(cfg), cfg.n_paths,
        cfg.dt or RESCALED_DT, cfg.horizon_factor, cfg.master_seed, cfg.threads, cfg.scheme,
    )
    rows = [
        {"epsilon": r.epsilon, "path_id": n % cfg.n_paths + 1, "tau": r.tau, "censored": r.censored, "seed": r.seed}
        for n, r in enumerate(records)
    ]
    write_csv(out / "exit_times.csv", rows, ["epsilon", "path_id", "tau", "censored", "seed"])
    write_json(out / "exit_times_summary.json", report)
    plot_exit_scaling(report, out / "exit_scaling.svg")
    return ["exit_times.csv", "exit_times_summary.json", "exit_scaling.svg"]


def run_coercivity(cfg: ExperimentConfig, out: Path) -> List[str]:
    b = resolve_tensor(cfg)
    damping = resolve_damping(cfg)
    x0 = resolve_x0(cfg)
    reports = [
        coercivity(b, damping, eps, x0, cfg.C0, cfg.dt or RESCALED_DT, cfg.n_paths, cfg.master_seed, cfg.threads, cfg.scheme)
        for eps in cfg.eps_grid
    ]
    columns = ["epsilon", "C0", "horizon", "mean", "se", "n_paths"]
    write_csv(out / "coercivity.csv", [r.model_dump(include=set(columns)) for r in reports], columns)
    lower = min(r.mean - 3.0 * r.se for r in reports)
    write_json(out / "coercivity_summary.json", {
        "min_mean": min(r.mean for r in reports),
        "lower_bound_3se": lower,
        "bounded_below": lower > 0.0,
    })
    return ["coercivity.csv", "coercivity_summary.json"]


def run_flux(cfg: ExperimentConfig, out: Path) -> List[str]:
    b = resolve_tensor(cfg)
    damping = resolve_damping(cfg)
    report = stationary_flux(
        b, damping, KernelSpec(cfg.d, cfg.J), resolve_x0(cfg), cfg.T, cfg.n_paths, cfg.burn_in,
        cfg.dt, cfg.master_seed, cfg.threads, cfg.scheme,
    )
    rel = abs(abs(report.kernel_flux) - report.expected_flux) / report.expected_flux if report.expected_flux else math.inf
    write_json(out / "flux.json", {**report.model_dump(), "relative_error": rel})
    return ["flux.json"]


def run_switch_chain(cfg: ExperimentConfig, out: Path) -> List[str]:
    b = resolve_tensor(cfg)
    damping = resolve_damping(cfg)
    K = KernelSpec(cfg.d, cfg.J)
    ball = certify_center(
        b, K, cfg.alpha, cfg.tol, cfg.delta, cfg.n_samples, cfg.j_max,
        seed=derive_stream(cfg.master_seed, STREAM_KDELTA), radius=cfg.radius,
    )
    x0 = resolve_x0(cfg)
    run = run_chain(ball, damping, x0, cfg.n_steps, cfg.dt, derive_stream(cfg.master_seed, STREAM_CHAIN), 0, cfg.scheme)
    write_csv(
        out / "chain.csv",
        [{"n": r["n"], "t_n": r["t_n"], "|x|": r["norm"], "V": r["V"]} for r in run.records],
        ["n", "t_n", "|x|", "V"],
    )
    moments = empirical_measure(run, cfg.chain_burn_in, cfg.p_list)
    artifacts = ["chain.csv"]

    direction = x0 / np.linalg.norm(x0)
    drifts = [
        lyapunov_drift(
            ball, damping, r * direction, cfg.n_paths, cfg.dt,
            derive_stream(cfg.master_seed, STREAM_DRIFT, s), cfg.threads, "split-rk4",
        )
        for s, r in enumerate(cfg.x0_norms)
    ]
    if drifts:
        columns = ["x0_norm", "one_step", "one_step_se", "two_step", "two_step_se", "normalized", "one_step_bound"]
        write_csv(out / "drift.csv", [d.model_dump(include=set(columns)) for d in drifts], columns)
        plot_drift(drifts, out / "drift.svg")
        artifacts += ["drift.csv", "drift.svg"]
    worst = max(drifts, key=lambda d: d.two_step / max(d.two_step_se, 1e-300)) if drifts else None
    write_json(out / "chain_summary.json", {
        "drift": worst.two_step if worst else None,
        "se": worst.two_step_se if worst else None,
        "moments": moments,
        "radius": ball.radius,
        "margins": ball.margins,
        "n_steps": cfg.n_steps,
        "burn_in": cfg.chain_burn_in,
    })
    artifacts.append("chain_summary.json")
    return artifacts


RUNNERS: Dict[str, Runner] = {
    "verify-class": run_verify_class,
    "spectral-report": run_spectral_report,
    "hormander": run_hormander,
    "passthrough": run_passthrough,
    "detd": run_detd,
    "simulate": run_simulate,
    "energy-balance": run_energy_balance,
    "exit-times": run_exit_times,
    "coercivity": run_coercivity,
    "flux": run_flux,
    "switch-chain": run_switch_chain,
}


def run_experiment(cfg: ExperimentConfig, out_dir: Path) -> List[str]:
    """Run cfg.kind, write its artifacts under out_dir and return their file names."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cli_logger.info(f"[RUN] kind={cfg.kind} d={cfg.d} seed={cfg.master_seed} out={out_dir}")
    artifacts = RUNNERS[cfg.kind](cfg, out_dir)
    cli_logger.info(f"[RUN] kind={cfg.kind} artifacts={artifacts}")
    return artifacts
