"""
Tests for the partially damped SDE: schemes, ensembles, energy balance,
Itô bookkeeping, exit times, coercivity and reproducibility.
"""

import math

import numpy as np
import pytest

from app.core.exceptions import BlowupDetected, DimensionError, PreconditionError
from app.core.seeding import BatchNoise
from app.services.bilinear_core import lorenz96, sample, zero_tensor
from app.services.deterministic_flow import KernelSpec
from app.services.equilibrium_spectral import hyperbolicity_report
from app.services.hormander_ladder import generic_hypoellipticity
from app.services.sde_engine import (
    DampingSpec,
    SdeModel,
    advance,
    bilinear_model,
    coercivity,
    em_simulate,
    energy_balance,
    exit_time,
    exit_time_scaling,
    exit_times,
    flux_average,
    ito_bookkeeping,
    ou_integrated_moment,
    ou_second_moment,
    simulate_ensemble,
    simulate_rescaled,
    stationary_flux,
)


class TestDampingSpec:
    def test_kernel_damping_layout(self):
        spec = DampingSpec.kernel_damping(5, 2, [1.0, 0.5, 0.0, 0.0, 0.0], gamma=2.0)
        np.testing.assert_array_equal(np.diag(spec.A), [0.0, 0.0, 2.0, 2.0, 2.0])
        assert spec.noise_power == pytest.approx(1.25)
        assert spec.kernel_noise_power == pytest.approx(1.25)
        assert spec.forced_modes == [0, 1]
        spec.require_generic_forcing()

    def test_rejects_non_symmetric(self):
        A = np.diag([0.0, 1.0, 1.0])
        A[1, 2] = 0.5
        with pytest.raises(PreconditionError):
            DampingSpec(A=A, J=1, sigma=np.ones(3))

    def test_rejects_damped_kernel(self):
        with pytest.raises(PreconditionError):
            DampingSpec(A=np.eye(3), J=1, sigma=np.ones(3))

    def test_rejects_indefinite(self):
        with pytest.raises(PreconditionError):
            DampingSpec(A=np.diag([0.0, -1.0, 1.0]), J=1, sigma=np.ones(3))

    def test_single_forced_mode(self):
        spec = DampingSpec.kernel_damping(4, 2, [1.0, 0.0, 0.0, 0.0])
        with pytest.raises(PreconditionError):
            spec.require_generic_forcing()

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            DampingSpec(A=np.eye(3), J=0, sigma=np.ones(4))


def _certified_sample(d: int):
    """First seeded sample passing the hyperbolicity and hypoellipticity certificates."""
    for seed in range(50):
        b = sample(d, 1.0, np.random.default_rng(9000 + seed))
        if hyperbolicity_report(b).verdict and generic_hypoellipticity(b).passes:
            return b
    raise AssertionError("no certified sample in the first 50 seeds")


class TestSinglePaths:
    def test_same_seed_same_path(self, generic_tensor, kernel_damping):
        b = generic_tensor(4)
        damping = kernel_damping(4, 2)
        x0 = np.array([1.0, 0.0, 0.0, 0.0])
        p1 = em_simulate(b, damping, x0, T=0.5, dt=1e-3, rng=42)
        p2 = em_simulate(b, damping, x0, T=0.5, dt=1e-3, rng=42)
        assert np.array_equal(p1.states, p2.states)
        assert p1.states.shape == (501, 4)
        assert p1.times[-1] == pytest.approx(0.5)
        assert p1.seed == 42

    def test_generator_and_seed_agree(self, generic_tensor, kernel_damping):
        b = generic_tensor(4)
        damping = kernel_damping(4, 2)
        x0 = np.array([0.5, 0.5, 0.0, 0.0])
        from_seed = em_simulate(b, damping, x0, T=0.2, dt=1e-3, rng=7)
        from_gen = em_simulate(b, damping, x0, T=0.2, dt=1e-3, rng=np.random.Generator(np.random.PCG64(7)))
        assert np.array_equal(from_seed.states, from_gen.states)
        assert from_gen.seed is None

    def test_noise_free_rk4_conserves_energy(self, generic_tensor):
        b = generic_tensor(5)
        damping = DampingSpec.kernel_damping(5, 0, np.zeros(5), gamma=0.0)
        x0 = np.ones(5) / math.sqrt(5)
        path = em_simulate(b, damping, x0, T=1.0, dt=1e-3, scheme="split-rk4")
        energy = np.sum(path.states ** 2, axis=1)
        assert np.max(np.abs(energy - 1.0)) <= 1e-9

    def test_rescaled_zero_eps_is_deterministic(self, generic_tensor, kernel_damping):
        b = generic_tensor(4)
        x0 = np.array([0.3, 0.4, 0.1, 0.0])
        a = simulate_rescaled(b, kernel_damping(4, 2), 0.0, x0, T=0.1, rng=1)
        c = simulate_rescaled(b, kernel_damping(4, 2), 0.0, x0, T=0.1, rng=2)
        np.testing.assert_array_equal(a.states, c.states)

    def test_rescaling_matches_original_pathwise(self):
        # y(t) = eps x(t / eps) with x0 = y0 / eps and dt scaled by eps
        b = lorenz96(5)
        damping = DampingSpec.kernel_damping(5, 2, [1.0, 1.0, 0.0, 0.0, 0.0])
        eps = 0.1
        y0 = np.array([1.0, 0.5, 0.0, 0.0, 0.0])
        rescaled = simulate_rescaled(b, damping, eps, y0, T=1.0, dt=1e-3, rng=5, scheme="split-rk4")
        original = em_simulate(b, damping, y0 / eps, T=0.1, dt=1e-4, rng=5, scheme="split-rk4")
        assert original.states.shape == rescaled.states.shape
        np.testing.assert_allclose(eps * original.states, rescaled.states, rtol=1e-8, atol=1e-9)

    def test_rescaling_matches_original_in_law(self):
        b = lorenz96(5)
        damping = DampingSpec.kernel_damping(5, 2, [1.0, 1.0, 0.0, 0.0, 0.0])
        eps = 0.1
        y0 = np.array([1.0, 0.5, 0.0, 0.0, 0.0])
        rescaled = simulate_ensemble(b, damping, y0, T=1.0, n_paths=1000, dt=1e-3, master_seed=31, eps=eps)
        original = simulate_ensemble(b, damping, y0 / eps, T=0.1, n_paths=1000, dt=1e-5, master_seed=32)
        scaled = eps ** 2 * original.values
        se = math.hypot(rescaled.se, eps ** 2 * original.se)
        # taming bias of order dt * |drift| on both sides
        assert abs(rescaled.mean - float(np.mean(scaled))) <= 3.0 * se + 5e-3

    def test_rescaled_energy_envelope(self):
        b = lorenz96(5)
        damping = DampingSpec.kernel_damping(5, 2, [1.0, 1.0, 0.0, 0.0, 0.0])
        eps, C = 1e-2, 1.0
        y0 = np.array([0.6, 0.8, 0.0, 0.0, 0.0])
        for seed in range(5):
            path = simulate_rescaled(b, damping, eps, y0, T=1.0, dt=1e-3, rng=seed)
            radius = np.linalg.norm(path.states, axis=1)
            envelope = np.exp(eps * C * path.times) * (1.0 + C * math.sqrt(eps))
            assert np.all(radius <= envelope)

    def test_eps_range(self, generic_tensor, kernel_damping):
        with pytest.raises(PreconditionError):
            simulate_rescaled(generic_tensor(4), kernel_damping(4, 2), 1.0, np.ones(4), T=0.1)

    def test_unknown_scheme(self, generic_tensor, kernel_damping):
        with pytest.raises(PreconditionError):
            em_simulate(generic_tensor(4), kernel_damping(4, 2), np.ones(4), T=0.1, dt=1e-2, scheme="milstein")

    def test_blowup_reports_step(self):
        model = SdeModel(drift=lambda X: np.full_like(X, np.inf), sigma=np.zeros(2), dt=0.1, scheme="split-rk4")
        with pytest.raises(BlowupDetected) as info:
            advance(model, np.zeros((1, 2)), 5, BatchNoise.from_seeds([0], 2))
        assert info.value.step == 1

    def test_frozen_rows_stay_put(self, generic_tensor):
        b = generic_tensor(3)
        model = bilinear_model(b, np.zeros((3, 3)), np.ones(3), 1e-2)
        X0 = np.ones((3, 3))
        X, _ = advance(model, X0, 10, BatchNoise.from_seeds([1, 2, 3], 3), active_steps=np.array([0, 5, 10]))
        np.testing.assert_array_equal(X[0], X0[0])
        assert not np.array_equal(X[2], X0[2])

    def test_flux_average_zero_without_kernel_motion(self):
        b = lorenz96(5)
        damping = DampingSpec.kernel_damping(5, 2, np.zeros(5))
        x0 = np.zeros(5)
        x0[0] = 1.0
        path = em_simulate(b, damping, x0, T=0.1, dt=1e-3)
        assert flux_average(path, b, KernelSpec(5, 2)) == 0.0


class TestOrnsteinUhlenbeck:
    def test_closed_forms_consistent(self):
        t, h = 0.7, 1e-5
        slope = (ou_integrated_moment(2.0, 1.5, 3.0, t + h) - ou_integrated_moment(2.0, 1.5, 3.0, t - h)) / (2 * h)
        assert slope == pytest.approx(ou_second_moment(2.0, 1.5, 3.0, t), rel=1e-8)
        assert ou_second_moment(2.0, 1.5, 3.0, 0.0) == 2.0

    def test_ensemble_matches_second_moment(self):
        b = zero_tensor(3)
        damping = DampingSpec.kernel_damping(3, 0, np.ones(3), gamma=1.0)
        x0 = np.array([1.0, 0.0, 0.0])
        result = simulate_ensemble(b, damping, x0, T=1.0, n_paths=2000, dt=1e-3, master_seed=11, scheme="split-rk4")
        expected = ou_second_moment(1.0, 1.0, 3.0, 1.0)
        # 3 SE plus the O(dt) weak error
        assert abs(result.mean - expected) <= 3.0 * result.se + 2e-3
        assert result.n == 2000 and result.censored_n == 0

    def test_default_scheme_matches_second_moment(self):
        b = zero_tensor(3)
        damping = DampingSpec.kernel_damping(3, 0, np.ones(3), gamma=1.0)
        x0 = np.array([1.0, 0.0, 0.0])
        result = simulate_ensemble(b, damping, x0, T=1.0, n_paths=2000, dt=1e-3, master_seed=12)
        expected = ou_second_moment(1.0, 1.0, 3.0, 1.0)
        assert abs(result.mean - expected) <= 3.0 * result.se + 1e-2

    def test_coercivity_matches_integrated_moment(self):
        b = zero_tensor(3)
        damping = DampingSpec.kernel_damping(3, 0, np.ones(3), gamma=1.0)
        eps, C0 = 0.1, 3.0
        report = coercivity(b, damping, eps, np.array([1.0, 0.0, 0.0]), C0, dt=1e-3, n_paths=200, master_seed=13)
        # rescaled OU: rate eps, noise power eps^3 * sum sigma^2
        expected = ou_integrated_moment(1.0, eps, eps ** 3 * 3.0, report.horizon)
        assert abs(report.mean - expected) <= 3.0 * report.se + 1e-3 * expected

    def test_energy_balance_ou(self):
        b = zero_tensor(3)
        damping = DampingSpec.kernel_damping(3, 0, np.ones(3), gamma=1.0)
        report = energy_balance(b, damping, np.array([1.0, 0.0, 0.0]), T=1.0, dt=1e-3, n_paths=1000, master_seed=3, scheme="split-rk4")
        assert abs(report.residual) <= 4.0 * report.se + 0.02
        assert report.injected == pytest.approx(3.0)


class TestEnergyBalance:
    def test_conservative_noise_free_residual(self, rng):
        b = lorenz96(5)
        damping = DampingSpec.kernel_damping(5, 0, np.zeros(5), gamma=0.0)
        x0 = rng.standard_normal(5)
        report = energy_balance(b, damping, x0, T=1.0, n_paths=100, scheme="split-rk4")
        assert abs(report.residual) <= 1e-6

    def test_partially_damped_lorenz96(self):
        b = lorenz96(5)
        damping = DampingSpec.kernel_damping(5, 2, [1.0, 1.0, 0.0, 0.0, 0.0], gamma=1.0)
        x0 = np.array([1.0, 0.5, 0.0, 0.0, 0.0])
        report = energy_balance(b, damping, x0, T=1.0, dt=1e-3, n_paths=1000, master_seed=5, scheme="split-rk4")
        assert abs(report.residual) <= 4.0 * report.se + 0.05

    def test_requires_enough_paths(self):
        with pytest.raises(PreconditionError):
            energy_balance(lorenz96(4), DampingSpec.kernel_damping(4, 0, np.ones(4)), np.ones(4), T=1.0, n_paths=50)


class TestEnsembles:
    def test_thread_count_does_not_change_results(self, generic_tensor, kernel_damping):
        b = generic_tensor(4)
        damping = kernel_damping(4, 2)
        x0 = np.array([1.0, 0.0, 0.0, 0.0])
        one = simulate_ensemble(b, damping, x0, T=0.05, n_paths=600, dt=1e-3, master_seed=9, threads=1)
        many = simulate_ensemble(b, damping, x0, T=0.05, n_paths=600, dt=1e-3, master_seed=9, threads=4)
        assert np.array_equal(one.values, many.values)
        assert one.seeds == many.seeds
        assert one.mean == many.mean

    def test_path_matches_single_simulation(self, generic_tensor, kernel_damping):
        b = generic_tensor(4)
        damping = kernel_damping(4, 2)
        x0 = np.array([0.2, 0.9, 0.0, 0.0])
        ens = simulate_ensemble(b, damping, x0, T=0.05, n_paths=5, dt=1e-3, master_seed=4)
        single = em_simulate(b, damping, x0, T=0.05, dt=1e-3, rng=ens.seeds[3])
        np.testing.assert_allclose(ens.extras["final"][3], single.states[-1], rtol=1e-12, atol=1e-14)


class TestBookkeeping:
    def test_identity_uses_noise_power_correction(self):
        b = zero_tensor(4)
        damping = DampingSpec.kernel_damping(4, 2, [1.0, 1.0, 0.0, 0.0], gamma=0.0)
        T, dt = 1.0, 1e-3
        terms = ito_bookkeeping(b, damping, np.array([1.0, 0.0, 0.5, 0.0]), T=T, dt=dt, rng=17, K=KernelSpec(4, 2))
        assert terms["drift"] == 0.0
        assert terms["correction"] == pytest.approx(2.0 * T)
        # no drift: the residual is the realized minus the expected quadratic variation
        assert terms["residual"] == pytest.approx(terms["quadratic"] - terms["correction"], abs=1e-10)
        assert terms["residual"] != 0.0
        assert abs(terms["quadratic"] / T - damping.kernel_noise_power) <= 5.0 * math.sqrt(2.0 * dt * 2.0 / T)

    def test_identity_closes_on_average(self, generic_tensor, kernel_damping):
        b = generic_tensor(5)
        damping = kernel_damping(5, 3)
        report = stationary_flux(
            b, damping, KernelSpec(5, 3), np.array([1.0, 0.5, 0.0, 0.0, 0.0]), T=1.0, n_paths=64, dt=1e-3, master_seed=17,
        )
        assert report.ito_correction == pytest.approx(damping.kernel_noise_power)
        assert abs(report.ito_quadratic - report.ito_correction) <= 0.05 * report.ito_correction
        assert abs(report.bookkeeping_residual) <= 4.0 * report.bookkeeping_se + 0.05

    def test_stationary_flux_report(self, generic_tensor, kernel_damping):
        b = generic_tensor(5)
        damping = kernel_damping(5, 3, forced=(0, 1), level=0.8)
        report = stationary_flux(
            b, damping, KernelSpec(5, 3), np.array([0.5, 0.5, 0.0, 0.0, 0.0]), T=2.0, n_paths=8,
            burn_in=0.5, dt=1e-3, master_seed=2,
        )
        assert report.expected_flux == pytest.approx(0.64)
        assert report.kernel_flux == -report.bracket_average
        assert report.ito_correction == pytest.approx(0.64)
        assert report.bookkeeping_se > 0.0
        assert report.burn_in == pytest.approx(0.5)

    def test_burn_in_range(self, generic_tensor, kernel_damping):
        with pytest.raises(PreconditionError):
            stationary_flux(generic_tensor(4), kernel_damping(4, 2), KernelSpec(4, 2), np.ones(4), T=1.0, n_paths=2, burn_in=1.0)

    def test_flux_needs_two_forced_modes(self, generic_tensor, kernel_damping):
        with pytest.raises(PreconditionError):
            stationary_flux(generic_tensor(4), kernel_damping(4, 2, forced=(0,)), KernelSpec(4, 2), np.ones(4), T=1.0, n_paths=2)


class TestExitTimes:
    def test_start_inside_target(self, generic_tensor, kernel_damping):
        x0 = np.full(4, 0.5)
        record = exit_time(generic_tensor(4), kernel_damping(4, 2), 1e-2, 0.2, x0, horizon=1.0, rng=1)
        assert record.tau == 0.0 and not record.censored

    def test_records_per_path(self, generic_tensor, kernel_damping):
        x0 = np.array([1.0, 0.0, 0.0, 0.0])
        records, result = exit_times(
            generic_tensor(4), kernel_damping(4, 2), 1e-2, 0.2, x0, horizon=2.0, n_paths=16, dt=1e-2, master_seed=6
        )
        assert len(records) == 16 == result.n
        assert len({r.seed for r in records}) == 16
        for r in records:
            assert 0.0 < r.tau <= r.horizon + 1e-12
            if r.censored:
                assert r.tau == pytest.approx(r.horizon)

    def test_scaling_report_shape(self, generic_tensor, kernel_damping):
        report, records = exit_time_scaling(
            generic_tensor(4), kernel_damping(4, 2), [1e-2, 1e-3], 0.2, np.array([1.0, 0.0, 0.0, 0.0]),
            n_paths=10, dt=1e-2, horizon_factor=2.0, master_seed=8,
        )
        assert len(report.rows) == 2 and len(records) == 20
        assert 0.0 <= report.c <= 1.0
        assert all(row.fraction_within is not None for row in report.rows)
        assert report.rows[1].horizon == pytest.approx(2.0 * abs(math.log(1e-3)), abs=1e-2)
        for row in report.rows:
            assert row.censored_fraction == row.censored_n / row.n
        assert report.max_censored_fraction == max(row.censored_fraction for row in report.rows)

    def test_censored_paths_are_reported(self, generic_tensor, kernel_damping):
        # a horizon of one step leaves almost every path censored
        report, records = exit_time_scaling(
            generic_tensor(4), kernel_damping(4, 2), [1e-2, 1e-3], 0.2, np.array([1.0, 0.0, 0.0, 0.0]),
            n_paths=10, dt=1e-2, horizon_factor=1e-3, master_seed=8,
        )
        censored = sum(r.censored for r in records)
        assert censored == sum(row.censored_n for row in report.rows)
        assert report.max_censored_fraction > 0.0

    def test_scaling_needs_two_eps(self, generic_tensor, kernel_damping):
        with pytest.raises(PreconditionError):
            exit_time_scaling(generic_tensor(4), kernel_damping(4, 2), [1e-2], 0.2, np.ones(4), n_paths=2)

    def test_scaling_needs_two_forced_modes(self, generic_tensor, kernel_damping):
        with pytest.raises(PreconditionError):
            exit_time_scaling(
                generic_tensor(4), kernel_damping(4, 2, forced=(1,)), [1e-2, 1e-3], 0.2, np.ones(4), n_paths=2,
            )

    def test_delta_range(self, generic_tensor, kernel_damping):
        with pytest.raises(PreconditionError):
            exit_time(generic_tensor(4), kernel_damping(4, 2), 1e-2, 0.7, np.ones(4), horizon=1.0)


class TestCoercivity:
    def test_positive_dissipation(self, generic_tensor, kernel_damping):
        report = coercivity(
            generic_tensor(4), kernel_damping(4, 2), 1e-2, np.array([0.6, 0.8, 0.0, 0.0]), C0=1.0,
            dt=1e-3, n_paths=40, master_seed=1,
        )
        assert report.mean > 0.0
        assert report.horizon == pytest.approx(abs(math.log(1e-2)), abs=1e-3)

    def test_c0_positive(self, generic_tensor, kernel_damping):
        with pytest.raises(PreconditionError):
            coercivity(generic_tensor(4), kernel_damping(4, 2), 1e-2, np.ones(4), C0=0.0)


@pytest.mark.slow
class TestAcceptance:
    def test_exit_time_scaling_is_logarithmic(self):
        b = _certified_sample(4)
        damping = DampingSpec.kernel_damping(4, 2, [1.0, 1.0, 0.0, 0.0])
        report, _ = exit_time_scaling(
            b, damping, [1e-2, 1e-3, 1e-4, 1e-5], 0.2, np.array([1.0, 0.0, 0.0, 0.0]), n_paths=500, master_seed=20240901,
        )
        assert report.r_squared >= 0.95
        assert report.c > 0.0

    def test_long_run_flux_balance(self):
        b = sample(5, 1.0, np.random.default_rng(21))
        damping = DampingSpec.kernel_damping(5, 3, [1.0, 1.0, 0.0, 0.0, 0.0])
        report = stationary_flux(
            b, damping, KernelSpec(5, 3), np.array([1.0, 0.0, 0.0, 0.0, 0.0]), T=1e4, n_paths=4,
            burn_in=100.0, dt=1e-2, master_seed=21,
        )
        assert report.bracket_average < 0.0
        assert abs(report.kernel_flux - report.expected_flux) <= 0.1 * report.expected_flux
