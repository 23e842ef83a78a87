"""
Tests for RK4 trajectories, derivative polynomials, kernel passthrough scans
and the detD diagnostic.
"""

import numpy as np
import pytest

from app.core.exceptions import AxisIndexError, DimensionError, PreconditionError, SamplingError
from app.services.bilinear_core import evaluate, lorenz96, sample
from app.services.deterministic_flow import (
    KernelSpec,
    derivative_polynomials,
    dist_to_axes,
    grid_steps,
    integrate,
    kdelta_scan,
    kernel_escape,
    max_stable_dt,
    transversality_detD,
)
from app.services.hormander_ladder import witness_tensor


class TestIntegrate:
    def test_energy_conserved(self, generic_tensor, rng):
        b = generic_tensor(5)
        x0 = rng.standard_normal(5)
        x0 /= np.linalg.norm(x0)
        traj = integrate(b, x0, T=2.0)
        assert traj.energy_drift <= 1e-6
        assert traj.times[-1] == pytest.approx(2.0)

    def test_backward_returns_to_start(self, generic_tensor, rng):
        b = generic_tensor(4)
        x0 = rng.standard_normal(4)
        forward = integrate(b, x0, T=1.0, dt=1e-3)
        back = integrate(b, forward.states[-1], T=1.0, dt=1e-3, backward=True)
        np.testing.assert_allclose(back.states[-1], x0, atol=1e-9)

    def test_lorenz96_axis_is_equilibrium(self):
        x0 = np.zeros(6)
        x0[2] = 1.5
        traj = integrate(lorenz96(6), x0, T=1.0)
        assert np.array_equal(traj.states[-1], x0)

    def test_step_limit(self, generic_tensor):
        b = generic_tensor(4)
        x0 = np.ones(4)
        with pytest.raises(PreconditionError):
            integrate(b, x0, T=1.0, dt=2.0 * max_stable_dt(b, x0))

    def test_shape_mismatch(self, generic_tensor):
        with pytest.raises(DimensionError):
            integrate(generic_tensor(4), np.ones(3), T=1.0)

    def test_fourth_order_self_convergence(self, generic_tensor, rng):
        b = generic_tensor(5)
        x0 = rng.standard_normal(5)
        x0 *= 0.5 / np.linalg.norm(x0)
        ends = [integrate(b, x0, T=1.0, dt=dt).states[-1] for dt in (0.05, 0.025, 0.0125)]
        coarse = np.linalg.norm(ends[0] - ends[1])
        fine = np.linalg.norm(ends[1] - ends[2])
        assert fine > 0.0
        assert 10.0 <= coarse / fine <= 22.0

    def test_grid_steps_cover_horizon(self):
        n, h = grid_steps(1.0, 0.3)
        assert n == 4 and h == pytest.approx(0.25)
        assert grid_steps(1.0, 0.1)[0] == 10


class TestDerivativePolynomials:
    def test_first_terms(self, generic_tensor, rng):
        b = generic_tensor(5)
        x = rng.standard_normal(5)
        P = derivative_polynomials(b, x, 3)
        np.testing.assert_array_equal(P[0], x)
        np.testing.assert_allclose(P[1], evaluate(b, x, x), atol=1e-14)
        np.testing.assert_allclose(P[2], 2.0 * evaluate(b, x, P[1]), atol=1e-13)

    def test_homogeneity(self, generic_tensor, rng):
        b = generic_tensor(5)
        x = rng.standard_normal(5)
        P1 = derivative_polynomials(b, x, 5)
        P2 = derivative_polynomials(b, 2.0 * x, 5)
        for j in range(6):
            scale = 2.0 ** (j + 1)
            np.testing.assert_allclose(P2[j], scale * P1[j], rtol=1e-12, atol=1e-12 * np.max(np.abs(scale * P1[j])))

    def test_match_trajectory_differences(self):
        rng = np.random.default_rng(31)
        for _ in range(20):
            b = sample(5, 1.0, rng)
            x = rng.standard_normal(5)
            x /= np.linalg.norm(x)
            h = 1e-3
            plus = integrate(b, x, T=h, dt=h / 10).states[-1]
            minus = integrate(b, x, T=h, dt=h / 10, backward=True).states[-1]
            P = derivative_polynomials(b, x, 2)
            np.testing.assert_allclose((plus - minus) / (2 * h), P[1], atol=1e-4)
            np.testing.assert_allclose((plus - 2 * x + minus) / h ** 2, P[2], atol=1e-3)

    def test_higher_terms_match_trajectory_stencils(self):
        rng = np.random.default_rng(47)
        h = 5e-3
        for _ in range(5):
            b = sample(5, 1.0, rng)
            x = rng.standard_normal(5)
            x /= np.linalg.norm(x)
            f1, f2 = (integrate(b, x, T=k * h, dt=h / 10).states[-1] for k in (1, 2))
            b1, b2 = (integrate(b, x, T=k * h, dt=h / 10, backward=True).states[-1] for k in (1, 2))
            P = derivative_polynomials(b, x, 4)
            third = (f2 - 2.0 * f1 + 2.0 * b1 - b2) / (2.0 * h ** 3)
            fourth = (f2 - 4.0 * f1 + 6.0 * x - 4.0 * b1 + b2) / h ** 4
            np.testing.assert_allclose(third, P[3], atol=1e-2 * (1.0 + np.max(np.abs(P[3]))))
            np.testing.assert_allclose(fourth, P[4], atol=1e-2 * (1.0 + np.max(np.abs(P[4]))))

    def test_bad_order(self, generic_tensor):
        with pytest.raises(PreconditionError):
            derivative_polynomials(generic_tensor(4), np.ones(4), 0)


class TestPassthrough:
    def test_witness_escapes_at_first_order(self):
        b = witness_tensor(4)
        K = KernelSpec(4, 2)
        j_min, margin = kernel_escape(b, K, np.array([0.6, 0.8, 0.0, 0.0]))
        assert j_min == 1
        assert margin == pytest.approx(0.96)

    def test_point_outside_kernel_rejected(self, generic_tensor):
        with pytest.raises(PreconditionError):
            kernel_escape(generic_tensor(4), KernelSpec(4, 2), np.array([1.0, 0.0, 0.5, 0.0]))

    def test_kernel_dimension_bounds(self):
        with pytest.raises(PreconditionError):
            KernelSpec(4, 4)
        with pytest.raises(PreconditionError):
            KernelSpec(4, 0)

    @pytest.mark.parametrize("d,J", [(6, 3), (7, 4)])
    def test_generic_scan_resolves_every_point(self, generic_tensor, d, J):
        b = generic_tensor(d)
        scan = kdelta_scan(b, KernelSpec(d, J), 0.2, 300, 8, np.random.default_rng(d))
        assert len(scan.samples) == 300
        assert scan.n_unresolved == 0
        assert scan.J_delta is not None and scan.c_delta > 0.0
        for s in scan.samples:
            y = s.x[:J]
            assert 0.5 - 1e-12 <= np.linalg.norm(y) <= 1.5 + 1e-12
            assert s.dist >= 0.2
            assert np.all(s.x[J:] == 0.0)

    def test_restrict_keeps_subset(self, generic_tensor):
        scan = kdelta_scan(generic_tensor(6), KernelSpec(6, 3), 0.1, 200, 8, np.random.default_rng(3))
        narrow = scan.restrict(0.3)
        assert len(narrow.samples) <= len(scan.samples)
        assert all(s.dist >= 0.3 for s in narrow.samples)
        assert narrow.c_delta >= scan.c_delta

    def test_one_dimensional_kernel_never_leaves_axes(self, generic_tensor):
        with pytest.raises(SamplingError):
            kdelta_scan(generic_tensor(4), KernelSpec(4, 1), 0.2, 10, 8, np.random.default_rng(0))

    def test_delta_range(self, generic_tensor):
        with pytest.raises(PreconditionError):
            kdelta_scan(generic_tensor(4), KernelSpec(4, 2), 0.5, 10, 8, np.random.default_rng(0))

    def test_dist_to_axes(self):
        X = np.array([[3.0, 0.0, 0.0], [1.0, 1.0, 0.0], [1.0, 2.0, 2.0]])
        np.testing.assert_allclose(dist_to_axes(X), [0.0, 1.0, np.sqrt(5.0)])


class TestTransversality:
    def test_formula_matches_matrix(self, generic_tensor):
        b = generic_tensor(5)
        rng = np.random.default_rng(77)
        for _ in range(100):
            x = rng.standard_normal(5)
            k, m, p = rng.choice(5, size=3, replace=False)
            formula, matrix = transversality_detD(b, x, int(k), int(m), int(p))
            assert formula == pytest.approx(matrix, rel=1e-9, abs=1e-12)

    def test_bad_indices(self, generic_tensor):
        b = generic_tensor(4)
        with pytest.raises(PreconditionError):
            transversality_detD(b, np.ones(4), 0, 0, 1)
        with pytest.raises(AxisIndexError):
            transversality_detD(b, np.ones(4), 0, 1, 4)
