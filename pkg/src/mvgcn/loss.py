"""Training objective: auxiliary cross-entropy plus evidential Dirichlet losses.

Every loss comes with its analytic gradient. Inputs are restricted to the
training rows by the caller; class axis is last.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .special import digamma, digamma_difference, trigamma

LOG_CLAMP = 1e-12


@dataclass(frozen=True)
class LossConfig:
    """Linear KL annealing ``lambda_t = min(1, t / horizon)``."""

    horizon: int = 50

    def __post_init__(self):
        if self.horizon < 0:
            raise ValueError("annealing horizon must be >= 0")

    def coefficient(self, epoch):
        if self.horizon == 0:
            return 1.0
        return min(1.0, max(0, epoch) / self.horizon)


@dataclass(frozen=True)
class LossBreakdown:
    sgcn: float
    fused: float
    views: tuple
    distribution: float
    total: float


def ce_loss(probs, onehot):
    """Mean cross-entropy ``-sum_c y_c log p_c`` over rows."""
    probs = np.asarray(probs, dtype=float)
    onehot = np.asarray(onehot, dtype=float)
    n = probs.shape[0]
    return float(-np.sum(onehot * np.log(np.maximum(probs, LOG_CLAMP))) / n)


def ce_loss_grad(probs, onehot):
    probs = np.asarray(probs, dtype=float)
    n = probs.shape[0]
    clamped = probs > LOG_CLAMP
    return np.where(clamped, -onehot / np.where(clamped, probs, 1.0), 0.0) / n


def evidential_ce(alpha, onehot):
    """Expected cross-entropy under Dir(alpha): ``sum_k y_k (psi(S) - psi(alpha_k))``.

    Works row-wise on ``(..., K)`` arrays and returns one value per row.
    """
    alpha = np.asarray(alpha, dtype=float)
    onehot = np.asarray(onehot, dtype=float)
    S = alpha.sum(axis=-1, keepdims=True)
    gaps = digamma_difference(np.broadcast_to(S, alpha.shape), alpha)
    return np.sum(onehot * gaps, axis=-1)


def evidential_ce_grad(alpha, onehot):
    alpha = np.asarray(alpha, dtype=float)
    S = alpha.sum(axis=-1, keepdims=True)
    return onehot.sum(axis=-1, keepdims=True) * trigamma(S) - onehot * trigamma(alpha)


def dirichlet_kl(alpha_tilde):
    r"""KL(Dir(alpha_tilde) || Dir(1)), one value per row.

    .. math::
        \log\frac{\Gamma(A)}{\Gamma(K)} - \sum_k \log\Gamma(\tilde\alpha_k)
        + \sum_k (\tilde\alpha_k - 1)(\psi(\tilde\alpha_k) - \psi(A))
    """
    a = np.asarray(alpha_tilde, dtype=float)
    K = a.shape[-1]
    A = a.sum(axis=-1, keepdims=True)
    gaps = digamma(a) - digamma(np.broadcast_to(A, a.shape))
    kl = (
        gammaln(A[..., 0])
        - gammaln(K)
        - gammaln(a).sum(axis=-1)
        + np.sum((a - 1.0) * gaps, axis=-1)
    )
    return kl


def dirichlet_kl_grad(alpha_tilde):
    a = np.asarray(alpha_tilde, dtype=float)
    K = a.shape[-1]
    A = a.sum(axis=-1, keepdims=True)
    return (a - 1.0) * trigamma(a) - (A - K) * trigamma(A)


def strip_true_class(alpha, onehot):
    """``y + (1 - y) * alpha``: true-class parameter replaced by 1."""
    return onehot + (1.0 - onehot) * alpha


def dirichlet_loss(alpha, onehot, lam):
    """Summed per-row evidential loss and its gradient w.r.t. ``alpha``."""
    alpha = np.asarray(alpha, dtype=float)
    onehot = np.asarray(onehot, dtype=float)
    alpha_tilde = strip_true_class(alpha, onehot)
    value = np.sum(evidential_ce(alpha, onehot))
    grad = evidential_ce_grad(alpha, onehot)
    if lam != 0.0:
        value += lam * np.sum(dirichlet_kl(alpha_tilde))
        grad = grad + lam * dirichlet_kl_grad(alpha_tilde) * (1.0 - onehot)
    return float(value), grad


def total_loss(fused_alpha, view_alphas, view_probs, onehot, lam):
    """Full objective and gradients.

    Parameters
    ----------
    fused_alpha : ndarray (n, C) or None
        Fused Dirichlet parameters; ``None`` for single-view training.
    view_alphas : sequence of ndarray (n, C)
        Per-view Dirichlet parameters.
    view_probs : sequence of ndarray (n, C)
        Per-view auxiliary softmax probabilities.
    onehot : ndarray (n, C)
    lam : float
        KL annealing coefficient.

    Returns
    -------
    breakdown : LossBreakdown
    grads : dict
        ``fused_alpha``, ``view_alphas`` and ``view_probs`` gradients.
    """
    sgcn = 0.0
    prob_grads = []
    for p in view_probs:
        sgcn += ce_loss(p, onehot)
        prob_grads.append(ce_loss_grad(p, onehot))

    view_terms = []
    alpha_grads = []
    for a in view_alphas:
        v, g = dirichlet_loss(a, onehot, lam)
        view_terms.append(v)
        alpha_grads.append(g)

    fused_term, fused_grad = 0.0, None
    if fused_alpha is not None:
        fused_term, fused_grad = dirichlet_loss(fused_alpha, onehot, lam)

    distribution = fused_term + sum(view_terms)
    breakdown = LossBreakdown(
        sgcn=float(sgcn),
        fused=float(fused_term),
        views=tuple(view_terms),
        distribution=float(distribution),
        total=float(sgcn + distribution),
    )
    grads = {"fused_alpha": fused_grad, "view_alphas": alpha_grads, "view_probs": prob_grads}
    return breakdown, grads
