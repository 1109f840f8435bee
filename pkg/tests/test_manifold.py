import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_hpd
from mvgcn.manifold import (
    GrassmannPoint,
    ManifoldConfig,
    grassmann_kernel,
    grassmann_projection_distance,
    hermitian_to_real_vector,
    le_distance,
    le_mean,
    matrix_exp_hermitian,
    matrix_log_hermitian,
    riemannian_distance,
    subspace_extract,
)


def random_unitary(rng, n=3):
    Z = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    Q, R = np.linalg.qr(Z)
    return Q * (np.diag(R) / np.abs(np.diag(R)))


def test_log_matches_scipy_logm(rng):
    C = random_hpd(rng)
    assert np.allclose(matrix_log_hermitian(C), sla.logm(C), atol=1e-12)


def test_exp_inverts_log(rng):
    C = random_hpd(rng, size=20)
    assert np.allclose(matrix_exp_hermitian(matrix_log_hermitian(C)), C, atol=1e-12)


def test_log_rejects_non_hermitian():
    with pytest.raises(ValueError):
        matrix_log_hermitian(np.array([[1.0, 1.0], [0.0, 1.0]]))


def test_log_of_singular_is_finite():
    C = np.diag([1.0, 0.0, 0.0]).astype(complex)
    assert np.all(np.isfinite(matrix_log_hermitian(C)))


def test_le_distance_diagonal():
    # commuting matrices: distance of log-eigenvalue vectors
    d = le_distance(np.diag([1.0, 2.0, 4.0]), np.diag([2.0, 2.0, 1.0]))
    assert d == pytest.approx(np.sqrt(np.log(2) ** 2 + np.log(4) ** 2), abs=1e-14)


def test_le_distance_identity_and_scaled():
    I = np.eye(3)
    assert le_distance(I, I) == 0.0
    assert le_distance(I, np.e * I) == pytest.approx(np.sqrt(3), abs=1e-14)


def test_riemannian_distance_matches_scipy(rng):
    R1, R2 = random_hpd(rng), random_hpd(rng)
    isq = np.linalg.inv(sla.sqrtm(R2))
    ref = np.linalg.norm(sla.logm(isq @ R1 @ isq))
    assert riemannian_distance(R1, R2) == pytest.approx(ref, rel=1e-10)


def test_riemannian_distance_affine_invariant(rng):
    R1, R2 = random_hpd(rng), random_hpd(rng)
    G = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    d0 = riemannian_distance(R1, R2)
    d1 = riemannian_distance(G @ R1 @ G.conj().T, G @ R2 @ G.conj().T)
    assert abs(d0 - d1) < 1e-8


def test_le_mean_of_commuting_is_geometric():
    mats = np.stack([np.diag([1.0, 4.0, 9.0]), np.diag([4.0, 1.0, 1.0])])
    assert np.allclose(le_mean(mats), np.diag([2.0, 2.0, 3.0]), atol=1e-12)


def test_le_mean_unitary_congruence(rng):
    mats = random_hpd(rng, size=7)
    U = random_unitary(rng)
    rotated = U @ mats @ U.conj().T
    assert np.allclose(le_mean(rotated), U @ le_mean(mats) @ U.conj().T, atol=1e-8)


def test_le_mean_empty():
    with pytest.raises(ValueError):
        le_mean(np.zeros((0, 3, 3)))


def test_real_vector_is_isometric(rng):
    L1 = matrix_log_hermitian(random_hpd(rng))
    L2 = matrix_log_hermitian(random_hpd(rng))
    v1, v2 = hermitian_to_real_vector(L1), hermitian_to_real_vector(L2)
    assert v1.shape == (9,)
    assert np.linalg.norm(v1 - v2) == pytest.approx(np.linalg.norm(L1 - L2), rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_le_distance_symmetric_property(seed):
    r = np.random.default_rng(seed)
    A, B = random_hpd(r), random_hpd(r)
    assert le_distance(A, B) == pytest.approx(le_distance(B, A), abs=1e-12)


def test_manifold_config_validation():
    assert ManifoldConfig().q == 8
    with pytest.raises(ValueError):
        ManifoldConfig(q=0)
    with pytest.raises(ValueError):
        ManifoldConfig(bandwidth=-1.0)


def test_grassmann_kernel_matches_principal_angles(rng):
    A = np.linalg.qr(rng.standard_normal((10, 3)))[0]
    B = np.linalg.qr(rng.standard_normal((10, 3)))[0]
    angles = sla.subspace_angles(A, B)
    assert grassmann_kernel(A, B) == pytest.approx(np.sum(np.cos(angles) ** 2), rel=1e-12)
    assert grassmann_projection_distance(A, B) == pytest.approx(
        np.sqrt(np.sum(np.sin(angles) ** 2)), rel=1e-10
    )


def test_grassmann_identical_and_orthogonal():
    E = np.eye(6)
    assert grassmann_kernel(E[:, :2], E[:, :2]) == pytest.approx(2.0)
    assert grassmann_kernel(E[:, :2], E[:, 2:4]) == 0.0


def test_grassmann_shape_mismatch():
    with pytest.raises(ValueError):
        grassmann_kernel(np.eye(4)[:, :2], np.eye(4)[:, :3])


def test_subspace_extract_matches_svd(rng):
    X = rng.standard_normal((40, 6)) * np.array([5, 4, 3, 1, 0.5, 0.1])
    U = subspace_extract(X, 3).basis
    Xc = X - X.mean(0)
    ref = np.linalg.svd(Xc, full_matrices=False)[2][:3].T
    assert np.allclose(U @ U.T, ref @ ref.T, atol=1e-10)
    assert np.allclose(U.T @ U, np.eye(3), atol=1e-12)


def test_subspace_extract_invariant_to_rotation(rng):
    X = rng.standard_normal((30, 5))
    basis = subspace_extract(X, 2)
    assert isinstance(basis, GrassmannPoint)
    Q = np.linalg.qr(rng.standard_normal((5, 5)))[0]
    rot = subspace_extract(X @ Q.T, 2).basis
    assert np.allclose(rot @ rot.T, Q @ basis.projector() @ Q.T, atol=1e-10)


def test_subspace_extract_clamps_and_single_sample():
    X = np.arange(12.0).reshape(3, 4)
    assert subspace_extract(X, 8).q == 2
    single = subspace_extract(np.array([[3.0, 4.0]]), 2).basis
    assert np.allclose(single[:, 0], [0.6, 0.8])
