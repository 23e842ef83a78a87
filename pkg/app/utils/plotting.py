# app/utils/plotting.py

"""
Static SVG summaries. Agg backend, fixed hash salt and no date metadata so a
rerun writes the same bytes.
"""

import math
from pathlib import Path
from typing import Sequence, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from app.schemas.reports import DriftReport, ExitTimeScalingReport  # noqa: E402

PathLike = Union[str, Path]

RC = {
    "svg.hashsalt": "bilinear-sde-lab",
    "svg.fonttype": "none",
    "figure.figsize": (5.0, 3.6),
    "axes.labelsize": 10,
    "axes.linewidth": 0.6,
    "font.size": 9,
    "legend.fontsize": 8,
    "lines.linewidth": 1.0,
    "xtick.major.width": 0.5,
    "ytick.major.width": 0.5,
}


def _save(fig, path: PathLike) -> Path:
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_exit_scaling(report: ExitTimeScalingReport, path: PathLike) -> Path:
    """Mean exit time against |log eps| with error bars and the fitted line."""
    logs = np.array([abs(math.log(r.epsilon)) for r in report.rows])
    means = np.array([r.mean_tau for r in report.rows])
    ses = np.array([r.se for r in report.rows])
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        ax.errorbar(logs, means, yerr=3.0 * ses, fmt="o", capsize=2, label="mean tau (3 SE)")
        grid = np.linspace(0.0, logs.max() * 1.05, 50)
        ax.plot(
            grid, report.intercept + report.slope * grid, "--",
            label=f"fit slope={report.slope:.3g}, R^2={report.r_squared:.3f}",
        )
        ax.set_xlabel("|log eps|")
        ax.set_ylabel("mean exit time")
        if report.max_censored_fraction > 0:
            ax.set_title(f"censored fraction up to {report.max_censored_fraction:.1%}", fontsize="small")
        ax.legend(loc="upper left")
        fig.tight_layout()
        return _save(fig, path)


def plot_drift(reports: Sequence[DriftReport], path: PathLike) -> Path:
    """Two-step Lyapunov drift against |x0| on log-x axes."""
    r = np.array([rep.x0_norm for rep in reports])
    drift = np.array([rep.two_step for rep in reports])
    se = np.array([rep.two_step_se for rep in reports])
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        ax.errorbar(r, drift, yerr=3.0 * se, fmt="s-", capsize=2, label="P^2 V - V (3 SE)")
        ax.axhline(0.0, color="0.5", linewidth=0.5)
        ax.set_xscale("log")
        ax.set_xlabel("|x0|")
        ax.set_ylabel("two-step drift")
        ax.legend(loc="lower left")
        fig.tight_layout()
        return _save(fig, path)
