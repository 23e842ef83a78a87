#!/usr/bin/env python3
"""
Acceptance Sweep

Runs the desk-scale acceptance experiments against the service layer and prints
one PASS/FAIL line per criterion with its wall time. `--quick` shrinks every
sample size by --scale for a smoke run; full size takes tens of minutes.
"""

import argparse
import math
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from app.core.exceptions import NumericalFailure  # noqa: E402
from app.core.seeding import derive_stream, make_generator  # noqa: E402
from app.services.bilinear_core import (  # noqa: E402
    class_basis, divergence, energy_residual, evaluate, lorenz96, n_free, sample, verify_membership,
)
from app.services.deterministic_flow import KernelSpec, derivative_polynomials, integrate, kdelta_scan  # noqa: E402
from app.services.equilibrium_spectral import hyperbolicity_report  # noqa: E402
from app.services.hormander_ladder import (  # noqa: E402
    bracket_oracle, double_bracket, generic_hypoellipticity, ladder, witness_tensor,
)
from app.services.sde_engine import (  # noqa: E402
    DampingSpec, coercivity, energy_balance, exit_time_scaling, stationary_flux,
)
from app.services.switching_chain import certify_center, lyapunov_drift  # noqa: E402

MASTER_SEED = 20240901


class AcceptanceSweep:
    def __init__(self, scale=1.0, threads=None):
        self.scale = scale
        self.threads = threads
        self.results = []

    def n(self, full, minimum=1):
        return max(minimum, int(round(full * self.scale)))

    def rng(self, *ids):
        return make_generator(derive_stream(MASTER_SEED, *ids))

    def record(self, name, func):
        started = time.perf_counter()
        try:
            passed, detail = func()
        except NumericalFailure as exc:
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        elapsed = time.perf_counter() - started
        self.results.append((name, passed, detail, elapsed))
        print(f"{'PASS' if passed else 'FAIL'}  {name:<28} {elapsed:8.1f}s  {detail}")

    # --- Criteria ---

    def constraint_class(self):
        worst = 0.0
        for d in range(3, 9):
            rng = self.rng(1, d)
            for _ in range(self.n(1000)):
                b = sample(d, 1.0, rng)
                if not verify_membership(b.coeffs, 1e-12).passes:
                    return False, f"membership failed at d={d}"
                x = rng.standard_normal(d)
                r = np.linalg.norm(x)
                worst = max(worst, abs(energy_residual(b, x)) / (b.max_abs * r ** 3), abs(divergence(b, x)) / (b.max_abs * r))
        return worst <= 1e-10, f"worst relative residual {worst:.2e}"

    def dimension(self):
        bad = [d for d in range(3, 11) if np.linalg.matrix_rank(class_basis(d).flattened()) != n_free(d)]
        return not bad, f"rank mismatch at {bad}" if bad else "rank 2*C(d,3) for d=3..10"

    def lorenz96(self):
        rng = self.rng(3)
        worst = 0.0
        for d in range(4, 13):
            if not verify_membership(lorenz96(d).coeffs, 0.0).passes:
                return False, f"membership failed at d={d}"
        b = lorenz96(8)
        for _ in range(self.n(1000)):
            x = rng.standard_normal(8)
            direct = np.array([(x[(k + 1) % 8] - x[k - 2]) * x[k - 1] for k in range(8)])
            worst = max(worst, float(np.max(np.abs(evaluate(b, x, x) - direct))) / max(1.0, float(x @ x)))
        return worst <= 1e-14, f"loop oracle max error {worst:.1e}"

    def hyperbolicity(self):
        rates = []
        for d in range(4, 9):
            rng = self.rng(4, d)
            runs = [hyperbolicity_report(sample(d, 1.0, rng)).verdict for _ in range(self.n(500, 10))]
            rates.append(float(np.mean(runs)))
        return min(rates) >= 0.99, "pass rates " + ", ".join(f"{r:.3f}" for r in rates)

    def hormander(self):
        for d in range(3, 11):
            cert = ladder(witness_tensor(d), 0, 1)
            if cert.G_normalized != 1.0:
                return False, f"witness G_normalized={cert.G_normalized} at d={d}"
        rng = self.rng(5)
        rate = float(np.mean([generic_hypoellipticity(sample(5, 1.0, rng), 1e-10).passes for _ in range(self.n(500, 10))]))
        worst = 0.0
        for _ in range(20):
            b = sample(4, 1.0, rng)
            v, w = rng.standard_normal((2, 4))
            exact = double_bracket(b, v, w)
            worst = max(worst, float(np.max(np.abs(exact - bracket_oracle(b, v, w)))) / float(np.max(np.abs(exact))))
        return rate >= 0.99 and worst <= 1e-8, f"pass rate {rate:.3f}, oracle error {worst:.1e}"

    def derivative_polynomials(self):
        rng = self.rng(6)
        worst = 0.0
        for _ in range(self.n(100, 5)):
            b = sample(5, 1.0, rng)
            x = rng.standard_normal(5)
            x /= np.linalg.norm(x)
            P1 = derivative_polynomials(b, x, 5)
            P2 = derivative_polynomials(b, 2.0 * x, 5)
            for j in range(6):
                worst = max(worst, float(np.max(np.abs(P2[j] - 2.0 ** (j + 1) * P1[j]))) / (1.0 + float(np.max(np.abs(P2[j])))))
            h = 1e-3
            plus = integrate(b, x, T=h, dt=h / 10).states[-1]
            minus = integrate(b, x, T=h, dt=h / 10, backward=True).states[-1]
            if np.max(np.abs((plus - minus) / (2 * h) - P1[1])) > 1e-4:
                return False, "first derivative disagrees with trajectory"
        return worst <= 1e-12, f"homogeneity error {worst:.1e}"

    def passthrough(self):
        details = []
        for d, J in [(6, 3), (7, 4), (9, 5)]:
            b = sample(d, 1.0, self.rng(7, d))
            scan = kdelta_scan(b, KernelSpec(d, J), 0.2, self.n(10_000, 50), 8, self.rng(7, d, 1))
            if scan.n_unresolved:
                return False, f"{scan.n_unresolved} unresolved at (d,J)=({d},{J})"
            details.append(f"({d},{J}): J_delta={scan.J_delta} c_delta={scan.c_delta:.2e}")
        return True, "; ".join(details)

    def energy_balance(self):
        n_paths = self.n(10_000, 100)
        ou = DampingSpec.kernel_damping(3, 0, np.ones(3))
        zero = sample(3, 0.0, self.rng(8))
        x0 = np.array([1.0, 0.0, 0.0])
        residuals = []
        for dt in (1e-3, 5e-4):
            r = energy_balance(zero, ou, x0, 1.0, dt, n_paths, MASTER_SEED, self.threads, "split-rk4")
            residuals.append(r)
        l96 = energy_balance(
            lorenz96(5), DampingSpec.kernel_damping(5, 2, [1, 1, 0, 0, 0]), np.array([1.0, 0.5, 0, 0, 0]),
            1.0, 1e-3, n_paths, MASTER_SEED, self.threads, "split-rk4",
        )
        ok = all(abs(r.residual) <= 3 * r.se + 5 * r.dt for r in residuals + [l96])
        return ok, " ".join(f"{r.residual:+.2e}+-{r.se:.1e}" for r in residuals + [l96])

    def _generic_d4(self):
        """First seeded d=4 sample passing both certificates, fixed before any simulation runs."""
        for k in range(50):
            b = sample(4, 1.0, self.rng(9, k))
            if hyperbolicity_report(b).verdict and generic_hypoellipticity(b).passes:
                return b
        raise NumericalFailure("no generic d=4 sample found")

    def exit_times(self):
        b = self._generic_d4()
        damping = DampingSpec.kernel_damping(4, 2, [1, 1, 0, 0])
        report, _ = exit_time_scaling(
            b, damping, [1e-2, 1e-3, 1e-4, 1e-5], 0.2, np.array([1.0, 0, 0, 0]), self.n(500, 20),
            master_seed=MASTER_SEED, threads=self.threads,
        )
        return report.r_squared >= 0.95 and report.c > 0, f"R2={report.r_squared:.3f} C={report.C:.2f} c={report.c:.2f}"

    def coercivity(self):
        b = self._generic_d4()
        damping = DampingSpec.kernel_damping(4, 2, [1, 1, 0, 0])
        lows = []
        for eps in [1e-2, 1e-3, 1e-4, 1e-5]:
            r = coercivity(b, damping, eps, np.array([1.0, 0, 0, 0]), 3.0, n_paths=self.n(500, 20),
                           master_seed=MASTER_SEED, threads=self.threads)
            lows.append(r.mean - 3 * r.se)
        return min(lows) > 0, "lower bounds " + ", ".join(f"{v:.2e}" for v in lows)

    def switching_drift(self):
        ball = None
        for k in range(50):
            try:
                ball = certify_center(sample(4, 1.0, self.rng(11, k)), KernelSpec(4, 3), seed=k)
                break
            except NumericalFailure:
                continue
        if ball is None:
            return False, "no certified center"
        damping = DampingSpec.kernel_damping(4, 3, [1, 1, 0, 0])
        details, ok = [], True
        for s, r in enumerate([50.0, 100.0, 200.0]):
            x0 = np.zeros(4)
            x0[0] = r
            rep = lyapunov_drift(ball, damping, x0, max(1000, self.n(1000)), master_seed=derive_stream(MASTER_SEED, s),
                                 threads=self.threads)
            ok &= rep.two_step + 3 * rep.two_step_se < 0
            ok &= rep.one_step <= rep.one_step_bound + 3 * rep.one_step_se
            details.append(f"|x0|={r:.0f}: {rep.two_step:+.2e}+-{rep.two_step_se:.1e}")
        return bool(ok), "; ".join(details)

    def flux(self):
        b = sample(5, 1.0, self.rng(12))
        damping = DampingSpec.kernel_damping(5, 3, [1, 1, 0, 0, 0])
        T = max(100.0, 1e4 * self.scale)
        rep = stationary_flux(b, damping, KernelSpec(5, 3), np.array([1.0, 0, 0, 0, 0]), T, 4, burn_in=0.01 * T,
                              dt=1e-2, master_seed=MASTER_SEED, threads=self.threads)
        rel = abs(abs(rep.kernel_flux) - rep.expected_flux) / rep.expected_flux
        closes = abs(rep.bookkeeping_residual) <= 3 * rep.bookkeeping_se + 5 * rep.dt
        ok = rel <= 0.1 and rep.bracket_average < 0 and closes
        return ok, (
            f"flux={rep.kernel_flux:.3f} expected={rep.expected_flux:.3f} rel={rel:.3f} "
            f"residual={rep.bookkeeping_residual:+.2e}+-{rep.bookkeeping_se:.1e}"
        )

    def run(self, only=None):
        criteria = [
            ("constraint-class", self.constraint_class),
            ("dimension", self.dimension),
            ("lorenz96", self.lorenz96),
            ("hyperbolicity", self.hyperbolicity),
            ("hormander", self.hormander),
            ("derivative-polynomials", self.derivative_polynomials),
            ("passthrough", self.passthrough),
            ("energy-balance", self.energy_balance),
            ("exit-times", self.exit_times),
            ("coercivity", self.coercivity),
            ("switching-drift", self.switching_drift),
            ("flux", self.flux),
        ]
        for name, func in criteria:
            if only and name not in only:
                continue
            self.record(name, func)
        failed = [name for name, passed, _, _ in self.results if not passed]
        total = math.fsum(elapsed for *_, elapsed in self.results)
        print("=" * 50)
        print(f"{len(self.results) - len(failed)}/{len(self.results)} passed in {total:.1f}s")
        return not failed


def main():
    parser = argparse.ArgumentParser(description="Run the desk-scale acceptance experiments")
    parser.add_argument("--quick", action="store_true",
                        help="Shrink sample sizes by --scale")
    parser.add_argument("--scale", type=float, default=0.05,
                        help="Sample-size factor used with --quick (default: 0.05)")
    parser.add_argument("--threads", type=int, default=None,
                        help="Worker threads for ensembles")
    parser.add_argument("--only", nargs="*", default=None,
                        help="Criterion names to run")

    args = parser.parse_args()

    sweep = AcceptanceSweep(args.scale if args.quick else 1.0, args.threads)
    sys.exit(0 if sweep.run(args.only) else 1)


if __name__ == "__main__":
    main()
