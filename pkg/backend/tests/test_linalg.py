import numpy as np
import pytest

from distheat.core.errors import DimensionError, ValidationError
from distheat.core.linalg import (
    as_matrix,
    matrix_norm,
    sample_covariance,
    symmetrize,
    validate_weights,
    weighted_l1_norm,
    weighted_l2_norm,
    weighted_sum,
    weights_from_sizes,
)
from distheat.models.ensemble import PrecisionEnsemble, decompose


def test_weighted_l1_norm():
    """Weighted l1 norm examples"""
    assert weighted_l1_norm([2, -2], [0.5, 0.5]) == pytest.approx(2.0)
    assert weighted_l1_norm([0, 0, 0], [0.2, 0.3, 0.5]) == 0.0
    assert weighted_l1_norm([1, 2, 3], [0.2, 0.3, 0.5]) == pytest.approx(2.3)


def test_weighted_l2_norm():
    """Weighted l2 norm examples"""
    assert weighted_l2_norm([3, -3], [0.5, 0.5]) == pytest.approx(3.0)
    assert weighted_l2_norm([1, 0], [0.5, 0.5]) == pytest.approx(np.sqrt(0.5))
    assert weighted_l2_norm([0, 0], [0.5, 0.5]) == 0.0


def test_weighted_norm_length_mismatch():
    with pytest.raises(DimensionError):
        weighted_l1_norm([1, 2, 3], [0.5, 0.5])
    with pytest.raises(DimensionError):
        weighted_l2_norm([1], [0.5, 0.5])


def test_weighted_norm_jensen_ordering():
    """l1,w never exceeds l2,w when weights sum to one"""
    rng = np.random.default_rng(11)
    for _ in range(200):
        M = int(rng.integers(1, 8))
        a = rng.standard_normal(M) * rng.uniform(0.1, 10)
        w = weights_from_sizes(rng.integers(10, 500, size=M))
        assert weighted_l1_norm(a, w) <= weighted_l2_norm(a, w) + 1e-12


def test_validate_weights():
    validate_weights([0.25, 0.75])
    with pytest.raises(ValidationError):
        validate_weights([0.5, 0.6])
    with pytest.raises(ValidationError):
        validate_weights([1.5, -0.5])


def test_matrix_norm_examples():
    """Closed-form matrix norms"""
    a = np.array([[1.0, -2.0], [3.0, 4.0]])
    assert matrix_norm(a, "one") == pytest.approx(6.0)
    assert matrix_norm(a, "inf") == pytest.approx(7.0)
    assert matrix_norm(np.eye(4), "two") == pytest.approx(1.0)
    assert matrix_norm(np.array([[3.0, 4.0]]), "frobenius") == pytest.approx(5.0)


def test_matrix_norm_empty():
    with pytest.raises(DimensionError):
        matrix_norm(np.zeros((0, 0)), "one")


def test_spectral_norm_matches_svd():
    """Power iteration agrees with a dense SVD"""
    rng = np.random.default_rng(3)
    for _ in range(20):
        a = rng.standard_normal((10, 10))
        expected = np.linalg.svd(a, compute_uv=False)[0]
        assert matrix_norm(a, "two") == pytest.approx(expected, abs=1e-8)


def test_norms_absolutely_homogeneous():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((6, 6))
    for c in (-3.5, 0.25, 7.0):
        for kind in ("one", "two", "inf", "frobenius"):
            assert matrix_norm(c * a, kind) == pytest.approx(abs(c) * matrix_norm(a, kind), rel=1e-8)
    v = rng.standard_normal(4)
    w = [0.1, 0.2, 0.3, 0.4]
    assert weighted_l1_norm(-2 * v, w) == pytest.approx(2 * weighted_l1_norm(v, w))
    assert weighted_l2_norm(-2 * v, w) == pytest.approx(2 * weighted_l2_norm(v, w))


def test_as_matrix_rejects_non_finite():
    with pytest.raises(ValidationError):
        as_matrix([[1.0, np.nan]])
    with pytest.raises(DimensionError):
        as_matrix([1.0, 2.0])


def test_sample_covariance_is_symmetric_and_centered():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((50, 4)) + 10.0
    cov = sample_covariance(x)
    np.testing.assert_array_equal(cov, cov.T)
    xc = x - x.mean(axis=0)
    np.testing.assert_allclose(cov, xc.T @ xc / 50, rtol=1e-12)


def test_weighted_sum_site_order():
    stack = np.stack([np.full((2, 2), 2.0), np.full((2, 2), 4.0)])
    np.testing.assert_allclose(weighted_sum(stack, np.array([0.5, 0.5])), np.full((2, 2), 3.0))


class TestDecompose:
    """Gamma / Lambda decomposition of an ensemble"""

    def test_homogeneous(self):
        a = np.array([[2.0, 0.5], [0.5, 1.0]])
        dec = decompose(PrecisionEnsemble([a, a], [0.5, 0.5]))
        np.testing.assert_allclose(dec.gamma, a)
        np.testing.assert_allclose(dec.lambdas, 0.0)

    def test_hand_computation(self):
        o1 = np.array([[1.0, 2.0], [2.0, 1.0]])
        o2 = np.array([[1.0, 4.0], [4.0, 1.0]])
        dec = decompose(PrecisionEnsemble([o1, o2], [0.5, 0.5]))
        assert dec.gamma[0, 1] == pytest.approx(3.0)
        assert dec.lambdas[0][0, 1] == pytest.approx(-1.0)
        assert dec.lambdas[1][0, 1] == pytest.approx(1.0)

    def test_constant_case(self):
        ones = np.ones((3, 3))
        dec = decompose(PrecisionEnsemble([ones, ones, ones], [0.2, 0.3, 0.5]))
        np.testing.assert_allclose(dec.gamma, ones)
        np.testing.assert_allclose(dec.lambdas, 0.0, atol=1e-15)

    def test_reconstruction_and_identification(self):
        rng = np.random.default_rng(9)
        mats = [symmetrize(rng.standard_normal((5, 5))) for _ in range(4)]
        ens = PrecisionEnsemble.from_sample_sizes(mats, [100, 250, 80, 300])
        dec = decompose(ens)
        np.testing.assert_allclose(dec.reconstruct(), ens.omegas, rtol=0, atol=1e-14)
        assert dec.identification_residual() <= 1e-8

    def test_ensemble_symmetrizes_members(self):
        a = np.array([[1.0, 0.2], [0.2 + 1e-12, 1.0]])
        ens = PrecisionEnsemble([a], [1.0])
        np.testing.assert_array_equal(ens[0], ens[0].T)

    def test_ensemble_shape_mismatch(self):
        with pytest.raises(DimensionError):
            PrecisionEnsemble([np.eye(2), np.eye(3)], [0.5, 0.5])
        with pytest.raises(DimensionError):
            PrecisionEnsemble([np.eye(2)], [0.5, 0.5])
