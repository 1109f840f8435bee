"""Metrics and kernels on the HPD and Grassmann manifolds.

All matrix functions act on the trailing two axes, so a whole image of
3x3 covariance matrices can be processed in one call.
"""

from dataclasses import dataclass

import numpy as np

HERMITIAN_RTOL = 1e-10
EIG_FLOOR = 1e-10


@dataclass(frozen=True)
class ManifoldConfig:
    """Subspace dimension, eigenvalue floor and HPD kernel bandwidth policy.

    ``bandwidth`` is either ``"median"`` (median log-Euclidean distance over
    the graph edges) or a positive float used as-is.
    """

    q: int = 8
    eig_floor: float = EIG_FLOOR
    bandwidth: object = "median"

    def __post_init__(self):
        if self.q < 1:
            raise ValueError(f"subspace dimension must be >= 1, got {self.q}")
        if not self.eig_floor > 0:
            raise ValueError("eig_floor must be positive")
        if self.bandwidth != "median" and not float(self.bandwidth) > 0:
            raise ValueError("bandwidth must be 'median' or a positive number")


def _check_hermitian(C, rtol=HERMITIAN_RTOL):
    C = np.asarray(C)
    if C.ndim < 2 or C.shape[-1] != C.shape[-2]:
        raise ValueError(f"expected square matrices, got shape {C.shape}")
    asym = np.linalg.norm(C - np.swapaxes(C, -1, -2).conj(), axis=(-2, -1))
    scale = np.linalg.norm(C, axis=(-2, -1))
    if np.any(asym > rtol * np.maximum(scale, np.finfo(float).tiny)):
        raise ValueError("matrix is not Hermitian within tolerance")
    return C


def hermitian_part(C):
    """Return (C + C^H) / 2."""
    C = np.asarray(C)
    return 0.5 * (C + np.swapaxes(C, -1, -2).conj())


def _eigh(C, eig_floor):
    w, V = np.linalg.eigh(hermitian_part(C))
    trace = np.clip(np.sum(w, axis=-1, keepdims=True), np.finfo(float).tiny, None)
    return np.maximum(w, eig_floor * trace), V


def _apply(w, V, fn):
    return hermitian_part((V * fn(w)[..., None, :]) @ np.swapaxes(V, -1, -2).conj())


def matrix_log_hermitian(C, eig_floor=EIG_FLOOR):
    r"""Matrix logarithm of Hermitian positive-definite matrices.

    Eigenvalues are floored at ``eig_floor * trace(C)`` before taking the
    logarithm, so near-singular speckled averages still map to finite
    Hermitian matrices.

    Parameters
    ----------
    C : ndarray, shape (..., n, n)
        Hermitian (or real symmetric) positive-definite matrices.
    eig_floor : float
        Relative eigenvalue floor.

    Returns
    -------
    L : ndarray, shape (..., n, n)
        :math:`V \operatorname{diag}(\ln\lambda) V^H`.
    """
    C = _check_hermitian(C)
    w, V = _eigh(C, eig_floor)
    return _apply(w, V, np.log)


def matrix_exp_hermitian(L):
    """Matrix exponential of Hermitian matrices via eigendecomposition."""
    L = _check_hermitian(L)
    w, V = np.linalg.eigh(hermitian_part(L))
    return _apply(w, V, np.exp)


def _matrix_power(C, p, eig_floor=EIG_FLOOR):
    w, V = _eigh(_check_hermitian(C), eig_floor)
    return _apply(w, V, lambda x: x**p)


def le_distance(C1, C2, eig_floor=EIG_FLOOR):
    """Log-Euclidean distance ``||log C1 - log C2||_F``."""
    diff = matrix_log_hermitian(C1, eig_floor) - matrix_log_hermitian(C2, eig_floor)
    return np.linalg.norm(diff, axis=(-2, -1))


def riemannian_distance(R1, R2, eig_floor=EIG_FLOOR):
    r"""Affine-invariant Riemannian distance.

    .. math::
        d(R_1, R_2) = \Vert \log(R_2^{-1/2} R_1 R_2^{-1/2}) \Vert_F
    """
    isq = _matrix_power(R2, -0.5, eig_floor)
    inner = hermitian_part(isq @ _check_hermitian(R1) @ isq)
    w = np.linalg.eigvalsh(inner)
    return np.sqrt(np.sum(np.log(w) ** 2, axis=-1))


def le_mean(mats, eig_floor=EIG_FLOOR):
    """Log-Euclidean Frechet mean ``exp(mean_i log C_i)`` over axis 0."""
    mats = np.asarray(mats)
    if mats.ndim < 3 or mats.shape[0] == 0:
        raise ValueError("le_mean needs a non-empty stack of matrices")
    return matrix_exp_hermitian(matrix_log_hermitian(mats, eig_floor).mean(axis=0))


def hermitian_to_real_vector(L):
    """Isometric real vectorization of Hermitian matrices.

    Diagonal entries are kept as-is and each strict upper-triangle entry
    contributes ``sqrt(2) * (re, im)``, so Euclidean distance between vectors
    equals Frobenius distance between matrices. A 3x3 input gives 9 reals.
    """
    L = np.asarray(L)
    n = L.shape[-1]
    iu = np.triu_indices(n, 1)
    diag = np.real(np.diagonal(L, axis1=-2, axis2=-1))
    off = L[..., iu[0], iu[1]] * np.sqrt(2.0)
    return np.concatenate([diag, off.real, off.imag], axis=-1)


def _fix_signs(V):
    # largest-magnitude component of each column made positive real
    idx = np.argmax(np.abs(V), axis=-2)
    pick = np.take_along_axis(V, idx[..., None, :], axis=-2)
    phase = pick / np.abs(pick)
    return V / phase


@dataclass(frozen=True)
class GrassmannPoint:
    """Orthonormal basis ``U`` (d x q) of a q-dimensional subspace."""

    basis: np.ndarray

    @property
    def d(self):
        return self.basis.shape[0]

    @property
    def q(self):
        return self.basis.shape[1]

    def projector(self):
        return self.basis @ self.basis.conj().T


def subspace_extract(samples, q):
    """Dominant q-dimensional subspace of a set of feature vectors.

    Eigenvectors of the within-set covariance ``(1/n) sum (x - xbar)(x - xbar)^H``
    for the ``q`` largest eigenvalues. ``q`` is clamped to ``min(d, n - 1)``.
    A single sample falls back to the line through its normalized mean.

    Parameters
    ----------
    samples : ndarray, shape (n, d)
    q : int

    Returns
    -------
    GrassmannPoint
    """
    X = np.asarray(samples, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("samples must be a non-empty (n, d) array")
    n, d = X.shape
    if n == 1:
        norm = np.linalg.norm(X[0])
        u = X[0] / norm if norm > 0 else np.eye(d)[0]
        return GrassmannPoint(_fix_signs(u[:, None]))
    q = max(1, min(q, d, n - 1))
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc / n
    _, V = np.linalg.eigh(0.5 * (cov + cov.T))
    U = V[:, ::-1][:, :q]
    return GrassmannPoint(_fix_signs(U))


def _basis(U):
    return U.basis if isinstance(U, GrassmannPoint) else np.asarray(U)


def _check_pair(U1, U2):
    U1, U2 = _basis(U1), _basis(U2)
    if U1.shape != U2.shape:
        raise ValueError(f"subspace shape mismatch: {U1.shape} vs {U2.shape}")
    return U1, U2


def grassmann_kernel(U1, U2):
    """Projection kernel ``||U1^H U2||_F^2``."""
    U1, U2 = _check_pair(U1, U2)
    return float(np.sum(np.abs(U1.conj().T @ U2) ** 2))


def grassmann_projection_distance(U1, U2):
    """Projection distance ``||U1 U1^H - U2 U2^H||_F / sqrt(2)``."""
    U1, U2 = _check_pair(U1, U2)
    P = U1 @ U1.conj().T - U2 @ U2.conj().T
    return float(np.linalg.norm(P) / np.sqrt(2.0))
