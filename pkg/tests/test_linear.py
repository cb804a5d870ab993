import numpy as np
import pytest
import scipy.linalg

from metaenc.errors import RankDeficientError, ShapeError
from metaenc.gauss_newton import GnConfig
from metaenc.linear import (LinearDecoder, jacobi_eigh, linear_decode, linear_encode, linear_meta_check,
                            pca_fit, second_moment, subspace_angle)


def test_axis_data_gives_first_axis():
    X = np.array([[1.0, 0.0], [-2.0, 0.0], [3.0, 0.0]])
    dec = pca_fit(X, 1)
    assert np.array_equal(np.abs(dec.V[:, 0]), [1.0, 0.0])
    assert not dec.degenerate


def test_isotropic_data_is_flagged_degenerate():
    X = np.eye(2)
    dec = pca_fit(X, 1)
    assert dec.degenerate
    assert np.abs(dec.V[:, 0]) @ np.abs(dec.V[:, 0]) == pytest.approx(1.0)


@pytest.mark.parametrize("seed", range(10))
def test_jacobi_matches_eigh(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 40))
    B = rng.standard_normal((n, n))
    A = B + B.T
    vals, vecs = jacobi_eigh(A)
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]
    ref_vals, ref_vecs = np.linalg.eigh(A)
    assert np.abs(vals - ref_vals).max() <= 1e-8 * max(1.0, np.abs(ref_vals).max())
    assert np.abs(vecs.T @ vecs - np.eye(n)).max() <= 1e-12
    # eigenvectors agree up to sign (spectrum of B + B^T is simple almost surely)
    signs = np.sign(np.sum(vecs * ref_vecs, axis=0))
    assert np.abs(vecs * signs - ref_vecs).max() <= 1e-8


def test_jacobi_rejects_non_symmetric():
    with pytest.raises(ValueError):
        jacobi_eigh(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_pca_orthonormal_and_sorted():
    X = np.random.default_rng(1).standard_normal((100, 12)) * np.arange(1, 13)
    dec = pca_fit(X, 5)
    assert np.abs(dec.V.T @ dec.V - np.eye(5)).max() <= 1e-10
    assert np.all(np.diff(dec.eigenvalues) <= 0)
    ref = np.linalg.eigvalsh(second_moment(X))[::-1]
    np.testing.assert_allclose(dec.eigenvalues, ref, rtol=1e-10)


def test_pca_error_non_increasing_in_r():
    X = np.random.default_rng(2).standard_normal((80, 9))
    errs = []
    for r in range(1, 10):
        V = pca_fit(X, r).V
        errs.append(np.mean((X @ V @ V.T - X) ** 2))
    assert all(b <= a + 1e-14 for a, b in zip(errs, errs[1:]))
    assert errs[-1] <= 1e-12


def test_centered_second_moment():
    X = np.random.default_rng(3).standard_normal((20, 4)) + 5.0
    np.testing.assert_allclose(second_moment(X, centered=True), np.cov(X.T, bias=True), atol=1e-12)


def test_rank_deficient_data_rejected():
    X = np.zeros((5, 3))
    X[:, 0] = np.arange(5)
    with pytest.raises(RankDeficientError):
        pca_fit(X, 2)


def test_encode_decode_examples():
    dec = LinearDecoder(np.array([[1.0], [0.0], [0.0]]), orthonormal=True)
    x = np.array([2.0, 5.0, 7.0])
    assert linear_encode(dec, x).tolist() == [2.0]
    assert linear_decode(dec, linear_encode(dec, x)).tolist() == [2.0, 0.0, 0.0]


def test_full_rank_decoder_is_identity():
    X = np.random.default_rng(4).standard_normal((30, 5))
    dec = pca_fit(X, 5)
    assert np.abs(linear_decode(dec, linear_encode(dec, X)) - X).max() <= 1e-12


def test_decoder_validation():
    with pytest.raises(ValueError):
        LinearDecoder(np.ones((3, 2)), orthonormal=True)
    with pytest.raises(ShapeError):
        LinearDecoder(np.ones((2, 3)))
    with pytest.raises(ShapeError):
        linear_encode(LinearDecoder(np.eye(3)[:, :1]), np.ones(4))


@pytest.mark.parametrize("seed", range(10))
def test_subspace_angle_matches_scipy(seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((8, 3))
    B = A + 10.0 ** rng.uniform(-6, 0) * rng.standard_normal((8, 3))
    ours = subspace_angle(A, B)
    ref = scipy.linalg.subspace_angles(A, B).max()
    assert ours == pytest.approx(ref, rel=1e-6, abs=1e-9)


def test_subspace_angle_of_orthogonal_axes():
    assert subspace_angle(np.eye(3)[:, :1], np.eye(3)[:, 1:2]) == pytest.approx(np.pi / 2)
    assert subspace_angle(np.eye(3)[:, :2], 2 * np.eye(3)[:, :2]) <= 1e-15


def test_linear_meta_check_small():
    rng = np.random.default_rng(5)
    basis = np.linalg.qr(rng.standard_normal((8, 2)))[0]
    X = rng.standard_normal((300, 2)) * [3.0, 1.5] @ basis.T + 0.01 * rng.standard_normal((300, 8))
    res = linear_meta_check(X, 2, GnConfig(iterations=1, damping=0.0))
    assert res["encode_gap"] <= 1e-10
    assert res["subspace_angle"] <= 1e-3
    assert not res["degenerate"]
