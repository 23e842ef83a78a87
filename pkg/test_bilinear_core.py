"""
Tests for the constraint class: parametrization, membership, evaluation,
projection, the Lorenz 96 instance and tensor files.
"""

from math import comb

import numpy as np
import pytest

from app.core.exceptions import DimensionError, InvalidDimension, PreconditionError
from app.schemas.tensor import TensorDocument
from app.services.bilinear_core import (
    CoefficientTensor,
    class_basis,
    divergence,
    energy_residual,
    evaluate,
    evaluate_batch,
    free_coordinates,
    from_document,
    from_free_coordinates,
    load_tensor,
    lorenz96,
    lorenz96_field,
    n_free,
    project,
    sample,
    save_tensor,
    to_document,
    verify_membership,
    zero_tensor,
)


class TestParametrization:
    @pytest.mark.parametrize("d", range(3, 11))
    def test_basis_rank_matches_free_count(self, d):
        basis = class_basis(d)
        assert len(basis) == 2 * comb(d, 3)
        assert np.linalg.matrix_rank(basis.flattened()) == n_free(d)

    @pytest.mark.parametrize("d", range(3, 9))
    def test_free_coordinates_invert_construction(self, d, rng):
        c = rng.uniform(-1, 1, n_free(d))
        assert np.array_equal(free_coordinates(from_free_coordinates(d, c)), c)

    def test_small_dimension_rejected(self):
        with pytest.raises(InvalidDimension):
            class_basis(2)
        with pytest.raises(InvalidDimension):
            sample(2, 1.0, np.random.default_rng(0))

    def test_negative_scale_rejected(self):
        with pytest.raises(PreconditionError):
            sample(4, -1.0, np.random.default_rng(0))

    def test_wrong_coordinate_count(self):
        with pytest.raises(DimensionError):
            from_free_coordinates(4, np.zeros(5))

    def test_tensor_is_read_only(self, generic_tensor):
        b = generic_tensor(4)
        with pytest.raises(ValueError):
            b.coeffs[0, 1, 2] = 1.0


class TestMembership:
    @pytest.mark.parametrize("d", range(3, 9))
    def test_samples_satisfy_identities(self, d):
        rng = np.random.default_rng(d)
        for _ in range(100):
            b = sample(d, 1.0, rng)
            report = verify_membership(b.coeffs, 1e-12)
            assert report.passes, report

    @pytest.mark.parametrize("d", range(3, 9))
    def test_energy_and_divergence_vanish(self, d):
        rng = np.random.default_rng(100 + d)
        b = sample(d, 1.0, rng)
        for _ in range(200):
            x = rng.standard_normal(d)
            scale = b.max_abs * float(x @ x) * np.linalg.norm(x)
            assert abs(energy_residual(b, x)) <= 1e-10 * scale
            assert abs(divergence(b, x)) <= 1e-10 * b.max_abs * np.linalg.norm(x)

    def test_broken_jacobi_detected(self, generic_tensor):
        raw = np.array(generic_tensor(4).coeffs)
        raw[0, 1, 2] += 1e-3
        raw[0, 2, 1] += 1e-3
        report = verify_membership(raw, 1e-12)
        assert not report.passes
        assert report.jacobi_residual == pytest.approx(1e-3, rel=1e-6)
        assert report.symmetry_residual == 0.0

    def test_broken_symmetry_and_zero_pattern_detected(self, generic_tensor):
        raw = np.array(generic_tensor(4).coeffs)
        raw[1, 1, 2] = 0.5
        report = verify_membership(raw, 1e-12)
        assert not report.passes
        assert report.zero_pattern_residual == 0.5
        assert report.symmetry_residual > 0.0

    def test_zero_tensor_passes_exactly(self):
        assert verify_membership(zero_tensor(5).coeffs, 0.0).passes

    def test_non_cubic_array_rejected(self):
        with pytest.raises(DimensionError):
            verify_membership(np.zeros((3, 3, 4)))

    def test_permutation_stays_in_class(self, generic_tensor):
        b = generic_tensor(6)
        perm = [3, 0, 5, 1, 4, 2]
        p = b.permuted(perm)
        assert verify_membership(p, 1e-12).passes
        x = np.random.default_rng(1).standard_normal(6)
        # relabelled field: B'(Px, Px) = P B(x, x)
        Px = np.empty(6)
        Px[perm] = x
        expected = np.empty(6)
        expected[perm] = evaluate(b, x, x)
        np.testing.assert_allclose(evaluate(p, Px, Px), expected, atol=1e-13)


class TestEvaluation:
    def test_symmetric_exactly(self, generic_tensor, rng):
        b = generic_tensor(5)
        x, y = rng.standard_normal((2, 5))
        assert np.array_equal(evaluate(b, x, y), evaluate(b, y, x))

    def test_bilinear(self, generic_tensor, rng):
        b = generic_tensor(5)
        x, y, z = rng.standard_normal((3, 5))
        np.testing.assert_allclose(evaluate(b, 2.0 * x + z, y), 2.0 * evaluate(b, x, y) + evaluate(b, z, y), atol=1e-12)

    def test_batch_matches_single(self, generic_tensor, rng):
        b = generic_tensor(5)
        X = rng.standard_normal((7, 5))
        Y = rng.standard_normal((7, 5))
        batch = evaluate_batch(b, X, Y)
        for n in range(7):
            np.testing.assert_allclose(batch[n], evaluate(b, X[n], Y[n]), atol=1e-14)
        stacked = np.stack([b.coeffs] * 7)
        np.testing.assert_allclose(evaluate_batch(stacked, X), evaluate_batch(b, X), atol=1e-14)

    def test_shape_mismatch(self, generic_tensor):
        with pytest.raises(DimensionError):
            evaluate(generic_tensor(4), np.zeros(3), np.zeros(4))


class TestProjection:
    def test_members_are_fixed(self, generic_tensor):
        b = generic_tensor(6)
        np.testing.assert_allclose(project(b.coeffs).coeffs, b.coeffs, atol=1e-14)

    def test_projection_is_orthogonal(self, rng):
        raw = rng.standard_normal((5, 5, 5))
        p = project(raw)
        assert verify_membership(p, 1e-12).passes
        residual = (raw - p.coeffs).ravel()
        gram = class_basis(5).flattened() @ residual
        assert np.max(np.abs(gram)) <= 1e-12 * np.max(np.abs(raw))

    def test_projection_is_idempotent(self, rng):
        p = project(rng.standard_normal((4, 4, 4)))
        assert isinstance(p, CoefficientTensor)
        np.testing.assert_allclose(project(p.coeffs).coeffs, p.coeffs, atol=1e-15)


class TestLorenz96:
    @pytest.mark.parametrize("d", range(4, 13))
    def test_exact_membership(self, d):
        assert verify_membership(lorenz96(d).coeffs, 0.0).passes

    @pytest.mark.parametrize("d", [4, 5, 8, 12])
    def test_matches_direct_loop(self, d):
        rng = np.random.default_rng(d)
        b = lorenz96(d)
        for _ in range(1000 // d):
            x = rng.standard_normal(d)
            direct = np.array([(x[(k + 1) % d] - x[k - 2]) * x[k - 1] for k in range(d)])
            np.testing.assert_allclose(evaluate(b, x, x), direct, atol=1e-14 * max(1.0, float(x @ x)))
            np.testing.assert_allclose(lorenz96_field(x), direct, atol=1e-14 * max(1.0, float(x @ x)))

    def test_needs_four_modes(self):
        with pytest.raises(InvalidDimension):
            lorenz96(3)


class TestTensorFiles:
    def test_document_uses_one_based_free_slots(self):
        b = from_free_coordinates(3, np.array([2.0, -0.5]))
        doc = to_document(b)
        assert doc.d == 3
        assert sorted(doc.entries) == [(1, 2, 3, 2.0), (2, 1, 3, -0.5)]

    def test_file_roundtrip(self, generic_tensor, tmp_path):
        b = generic_tensor(5)
        path = save_tensor(tmp_path / "b.json", b)
        assert load_tensor(path) == b

    def test_dependent_slot_rejected(self):
        doc = TensorDocument(d=3, entries=[(3, 1, 2, 1.0)])
        with pytest.raises(PreconditionError):
            from_document(doc)

    def test_repeated_index_rejected(self):
        with pytest.raises(ValueError):
            TensorDocument(d=3, entries=[(1, 1, 2, 1.0)])
