"""Subjective-logic opinions and Dempster-Shafer combination.

Two layers are provided. :class:`EvidenceState` and :func:`ds_combine_two`
work on per-class evidence and use the reduced two-view rule where only
singletons and the whole frame carry mass. :class:`MassFunction` and
:func:`dempster_generic` implement Dempster's rule over arbitrary subsets,
which is used to cross-check the reduced form.

The array functions (``opinion_from_evidence``, ``fuse_opinions``, ...) are
the vectorized versions used by the trainer; the last axis indexes classes.
"""

from dataclasses import dataclass
from itertools import product

import numpy as np

from ._binio import read_raster, write_raster

TOTAL_CONFLICT_EPS = 1e-12


class TotalConflictError(ValueError):
    """Raised when two sources are in total conflict (1 - K <= eps)."""


# ---------------------------------------------------------------------------
# Vectorized opinions


def opinion_from_evidence(e):
    """Return ``(alpha, S, b, u)`` for evidence ``e`` of shape (..., C)."""
    e = np.asarray(e, dtype=float)
    if np.any(e < 0) or not np.all(np.isfinite(e)):
        raise ValueError("evidence must be finite and non-negative")
    n_classes = e.shape[-1]
    alpha = e + 1.0
    S = alpha.sum(axis=-1)
    b = e / S[..., None]
    u = n_classes / S
    return alpha, S, b, u


def conflict(b1, b2):
    """Mass assigned to disagreeing singleton pairs, ``sum_{j!=k} b1_j b2_k``."""
    b1 = np.asarray(b1, dtype=float)
    b2 = np.asarray(b2, dtype=float)
    return b1.sum(axis=-1) * b2.sum(axis=-1) - np.sum(b1 * b2, axis=-1)


def fuse_opinions(b1, u1, b2, u2):
    """Reduced Dempster rule for two opinions.

    Returns fused ``(b, u, K)``; raises :class:`TotalConflictError` where
    ``1 - K`` falls below ``TOTAL_CONFLICT_EPS``.
    """
    K = conflict(b1, b2)
    norm = 1.0 - K
    if np.any(norm <= TOTAL_CONFLICT_EPS):
        raise TotalConflictError("total conflict between the two views")
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    # grouped so that swapping the two sources is bit-exact
    b = (b1 * b2 + (b1 * u2[..., None] + b2 * u1[..., None])) / norm[..., None]
    u = u1 * u2 / norm
    return b, u, K


def evidence_from_opinion(b, u):
    """Invert the opinion map: ``S = C/u``, ``e = b S``, ``alpha = e + 1``."""
    b = np.asarray(b, dtype=float)
    S = b.shape[-1] / np.asarray(u, dtype=float)
    e = b * S[..., None]
    return e, e + 1.0


def fuse_evidence(e1, e2):
    """Fuse two evidence arrays through the reduced Dempster rule.

    Returns the fused evidence. Algebraically this equals
    ``e1 + e2 + e1 * e2 / C``, which :func:`fuse_evidence_backward` uses.
    """
    _, _, b1, u1 = opinion_from_evidence(e1)
    _, _, b2, u2 = opinion_from_evidence(e2)
    b, u, _ = fuse_opinions(b1, u1, b2, u2)
    e, _ = evidence_from_opinion(b, u)
    return e


def fuse_evidence_backward(e1, e2, grad_e):
    """Gradients of the fused evidence w.r.t. ``e1`` and ``e2``.

    The normalizer ``1 - K`` cancels between ``b`` and ``u``, leaving the
    per-class product form ``e_k = e1_k + e2_k + e1_k e2_k / C``.
    """
    e1 = np.asarray(e1, dtype=float)
    e2 = np.asarray(e2, dtype=float)
    n_classes = e1.shape[-1]
    return grad_e * (1.0 + e2 / n_classes), grad_e * (1.0 + e1 / n_classes)


def predict_from_alpha(alpha):
    """Dirichlet mean, argmax (ties to the smaller index) and uncertainty."""
    alpha = np.asarray(alpha, dtype=float)
    S = alpha.sum(axis=-1)
    probs = alpha / S[..., None]
    return probs, np.argmax(probs, axis=-1), alpha.shape[-1] / S


# ---------------------------------------------------------------------------
# Value types


@dataclass(frozen=True)
class EvidenceState:
    """Evidence of one source for ``C`` classes with derived opinion."""

    evidence: np.ndarray
    alpha: np.ndarray
    strength: float
    belief: np.ndarray
    uncertainty: float

    @property
    def class_count(self):
        return self.evidence.shape[-1]


def evidence_to_state(e):
    e = np.asarray(e, dtype=float)
    if e.ndim != 1:
        raise ValueError("evidence_to_state expects a 1-D evidence vector")
    alpha, S, b, u = opinion_from_evidence(e)
    return EvidenceState(e, alpha, float(S), b, float(u))


def state_from_opinion(b, u):
    e, alpha = evidence_from_opinion(b, u)
    return EvidenceState(e, alpha, float(alpha.sum()), np.asarray(b, float), float(u))


def ds_combine_two(s1, s2):
    """Combine two states with the reduced Dempster rule.

    Raises
    ------
    ValueError
        If the class counts differ.
    TotalConflictError
        If the views are in total conflict; the caller chooses a fallback.
    """
    if s1.class_count != s2.class_count:
        raise ValueError("states have different class counts")
    b, u, _ = fuse_opinions(s1.belief, s1.uncertainty, s2.belief, s2.uncertainty)
    return state_from_opinion(b, float(u))


def predict(state):
    """Return ``(probabilities, class index, uncertainty)`` for one state."""
    probs, label, _ = predict_from_alpha(state.alpha)
    return probs, int(label), state.uncertainty


def average_fallback(s1, s2):
    """Average the two Dirichlet parameter vectors (used on total conflict)."""
    e = 0.5 * (s1.alpha + s2.alpha) - 1.0
    return evidence_to_state(e)


# ---------------------------------------------------------------------------
# Generic Dempster rule


@dataclass(frozen=True)
class MassFunction:
    """Basic belief assignment over subsets of a finite frame.

    ``masses`` maps frozensets of hypotheses to non-negative masses that
    sum to one. Hypotheses are any hashable values.
    """

    frame: frozenset
    masses: dict

    def __post_init__(self):
        total = 0.0
        for focal, m in self.masses.items():
            if not focal or not focal <= self.frame:
                raise ValueError(f"invalid focal set {set(focal)}")
            if m < 0:
                raise ValueError("masses must be non-negative")
            total += m
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"masses sum to {total}, expected 1")

    def __getitem__(self, subset):
        return self.masses.get(frozenset(subset), 0.0)

    @classmethod
    def from_opinion(cls, b, u):
        """Singleton masses ``b_k`` on class ``k`` plus ``u`` on the frame."""
        frame = frozenset(range(len(b)))
        masses = {frozenset([k]): float(bk) for k, bk in enumerate(b) if bk > 0}
        if u > 0:
            masses[frame] = masses.get(frame, 0.0) + float(u)
        return cls(frame, masses)

    @classmethod
    def vacuous(cls, frame):
        frame = frozenset(frame)
        return cls(frame, {frame: 1.0})


def dempster_generic(m1, m2):
    """Dempster's rule of combination with conflict normalization.

    ``m(A) = sum_{B & C = A} m1(B) m2(C) / (1 - K)`` with
    ``K = sum_{B & C = {}} m1(B) m2(C)``.
    """
    if m1.frame != m2.frame:
        raise ValueError("mass functions are defined on different frames")
    joint = {}
    K = 0.0
    for (B, mb), (Cset, mc) in product(m1.masses.items(), m2.masses.items()):
        inter = B & Cset
        if inter:
            joint[inter] = joint.get(inter, 0.0) + mb * mc
        else:
            K += mb * mc
    if 1.0 - K <= TOTAL_CONFLICT_EPS:
        raise TotalConflictError("total conflict (K = 1)")
    return MassFunction(m1.frame, {A: m / (1.0 - K) for A, m in joint.items()})


# ---------------------------------------------------------------------------
# Uncertainty raster

UNCERTAINTY_MAGIC = b"PUNC"


def write_uncertainty(path, u):
    """Write an H x W float32 uncertainty raster with a ``PUNC`` header."""
    u = np.asarray(u)
    if u.ndim != 2:
        raise ValueError("uncertainty raster must be 2-D")
    write_raster(path, UNCERTAINTY_MAGIC, u, "<f4")


def read_uncertainty(path):
    return read_raster(path, UNCERTAINTY_MAGIC, "<f4")[0]
