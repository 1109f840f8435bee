"""Digamma helpers for positive real arguments.

``digamma`` and ``trigamma`` wrap :mod:`scipy.special` and reject
non-positive input; ``digamma_difference`` is exact for integer gaps.
"""

import math

import numpy as np
from scipy import special


def _positive(x):
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise ValueError("digamma/trigamma are only implemented for x > 0")
    return x


def digamma(x):
    """psi(x) = d/dx log Gamma(x) for x > 0."""
    out = special.digamma(_positive(x))
    return out if np.ndim(out) else float(out)


def trigamma(x):
    """psi'(x) for x > 0."""
    out = special.polygamma(1, _positive(x))
    return out if np.ndim(out) else float(out)


def digamma_difference(big, small):
    """psi(big) - psi(small), elementwise.

    When ``big - small`` is a non-negative integer below 64 the difference is
    the finite recurrence sum ``sum_j 1/(small + j)``; otherwise the two
    digamma values are subtracted.
    """
    big = np.asarray(big, dtype=float)
    small = np.asarray(small, dtype=float)
    big, small = np.broadcast_arrays(big, small)
    gap = big - small
    steps = np.rint(gap)
    exact = (np.abs(gap - steps) == 0) & (steps >= 0) & (steps < 64)
    out = digamma(big) - digamma(small)
    if np.any(exact):
        flat_out = np.array(out, dtype=float, ndmin=1).reshape(-1)
        for i in np.flatnonzero(exact.reshape(-1)):
            s = small.reshape(-1)[i]
            flat_out[i] = math.fsum(1.0 / (s + j) for j in range(int(steps.reshape(-1)[i])))
        out = flat_out.reshape(big.shape)
    return out if np.ndim(out) else float(out)
