"""Per-pixel 57-dimensional polarimetric, textural and contour features.

Layout of the feature vector (index ranges are half-open)::

    [0, 6)    S-matrix elements   re/im of S_hh, S_hv, S_vv
    [6, 15)   coherency elements  T11 T22 T33 reT12 imT12 reT13 imT13 reT23 imT23
    15        span
    [16, 19)  Cloude-Pottier      H, A, alpha (degrees)
    [19, 22)  Freeman-Durden      P_s, P_d, P_v
    [22, 31)  Huynen              A0 B0 B C D E F G H
    31, 32    co-pol / cross-pol ratios
    [32, 48)  GLCM                contrast, energy, entropy, correlation x 4 orientations
    [48, 52)  edge energy         4 orientations
    [52, 57)  line energy         4 orientations

Orientations are always ordered 0, 45, 90, 135 degrees.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ._binio import read_raster, write_raster

N_FEATURES = 57
ORIENTATIONS = (0, 45, 90, 135)
# (row, col) displacement for GLCM pairs at distance 1
GLCM_OFFSETS = {0: (0, 1), 45: (-1, 1), 90: (-1, 0), 135: (-1, -1)}
GLCM_STATISTICS = ("contrast", "energy", "entropy", "correlation")
MEAN_FLOOR = 1e-12
DEGENERATE_ANISOTROPY = 1e-12

FEATURE_NAMES = (
    ["re_shh", "im_shh", "re_shv", "im_shv", "re_svv", "im_svv"]
    + ["t11", "t22", "t33", "re_t12", "im_t12", "re_t13", "im_t13", "re_t23", "im_t23"]
    + ["span", "entropy_h", "anisotropy_a", "alpha_deg"]
    + ["freeman_ps", "freeman_pd", "freeman_pv"]
    + ["huynen_" + p for p in ("a0", "b0", "b", "c", "d", "e", "f", "g", "h")]
    + ["copol_ratio", "crosspol_ratio"]
    + [f"glcm_{s}_{o}" for s in GLCM_STATISTICS for o in ORIENTATIONS]
    + [f"edge_{o}" for o in ORIENTATIONS]
    + [f"line_{o}" for o in ORIENTATIONS]
)
assert len(FEATURE_NAMES) == N_FEATURES

# lexicographic -> Pauli basis change
PAULI_BASIS = np.array(
    [[1.0, 0.0, 1.0], [1.0, 0.0, -1.0], [0.0, np.sqrt(2.0), 0.0]]
) / np.sqrt(2.0)


def coherency(C):
    """T = U_P C U_P^H for covariance matrices of shape (..., 3, 3)."""
    return PAULI_BASIS @ np.asarray(C) @ PAULI_BASIS.T


def _span(C):
    return np.real(C[..., 0, 0] + C[..., 1, 1] + C[..., 2, 2])


# ---------------------------------------------------------------------------
# Scattering-matrix, coherency, span, ratios


def scattering_elements(C):
    """Re/Im of S_hh, S_hv, S_vv with the HH phase set to zero.

    Magnitudes come from the diagonal of C and relative phases from C12 and
    C13, which is all the information the covariance retains.
    """
    C = np.asarray(C)
    s_hh = np.sqrt(np.maximum(C[..., 0, 0].real, 0.0))
    s_hv = np.sqrt(np.maximum(C[..., 1, 1].real, 0.0) / 2.0) * np.exp(-1j * np.angle(C[..., 0, 1]))
    s_vv = np.sqrt(np.maximum(C[..., 2, 2].real, 0.0)) * np.exp(-1j * np.angle(C[..., 0, 2]))
    return np.stack(
        [s_hh, np.zeros_like(s_hh), s_hv.real, s_hv.imag, s_vv.real, s_vv.imag], axis=-1
    )


def coherency_elements(C):
    T = coherency(C)
    return np.stack(
        [
            T[..., 0, 0].real,
            T[..., 1, 1].real,
            T[..., 2, 2].real,
            T[..., 0, 1].real,
            T[..., 0, 1].imag,
            T[..., 0, 2].real,
            T[..., 0, 2].imag,
            T[..., 1, 2].real,
            T[..., 1, 2].imag,
        ],
        axis=-1,
    )


def polarization_ratios(C):
    """Co-pol ratio C33/C11 and cross-pol ratio (C22/2)/C11."""
    C = np.asarray(C)
    c11 = C[..., 0, 0].real
    if np.any(c11 <= 0):
        raise ValueError("C11 must be positive for polarization ratios")
    return np.stack([C[..., 2, 2].real / c11, 0.5 * C[..., 1, 1].real / c11], axis=-1)


def scattering_features(C):
    """S elements (6), coherency elements (9), span, r_o, r_x: 18 values."""
    C = np.asarray(C)
    return np.concatenate(
        [
            scattering_elements(C),
            coherency_elements(C),
            _span(C)[..., None],
            polarization_ratios(C),
        ],
        axis=-1,
    )


# ---------------------------------------------------------------------------
# Target decompositions


def cloude_pottier(C):
    """Entropy H, anisotropy A and mean alpha angle (degrees) of T.

    ``H = -sum p_i log_3 p_i``, ``A = (l2 - l3) / (l2 + l3)`` and
    ``alpha = sum p_i arccos|u_i1|``, eigenvalues sorted descending.
    ``A`` is 0 when ``l2 + l3 < 1e-12 * l1``.
    """
    T = coherency(C)
    w, V = np.linalg.eigh(0.5 * (T + np.swapaxes(T, -1, -2).conj()))
    w = np.maximum(w[..., ::-1], 0.0)
    V = V[..., ::-1]
    total = w.sum(axis=-1, keepdims=True)
    p = w / np.where(total > 0, total, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p > 0, p * np.log(p), 0.0)
    H = np.clip(-plogp.sum(axis=-1) / np.log(3.0), 0.0, 1.0)
    l1, l2, l3 = w[..., 0], w[..., 1], w[..., 2]
    denom = l2 + l3
    degenerate = denom < DEGENERATE_ANISOTROPY * l1
    A = np.where(degenerate | (denom <= 0), 0.0, (l2 - l3) / np.where(denom > 0, denom, 1.0))
    first = np.clip(np.abs(V[..., 0, :]), 0.0, 1.0)
    alpha = np.degrees(np.sum(p * np.arccos(first), axis=-1))
    return H, np.clip(A, 0.0, 1.0), np.clip(alpha, 0.0, 90.0)


def freeman(C, eps=1e-12):
    """Three-component Freeman-Durden powers (P_s, P_d, P_v).

    Volume model ``fv [[1, 0, 1/3], [0, 2/3, 0], [1/3, 0, 1]]`` is removed
    first; if the remainder is non-physical everything goes to volume.
    Otherwise the surface/double-bounce split is fixed by the sign of
    Re(S_hh S_vv^*) and non-realizable cross terms are rescaled. Negative
    powers are clamped to zero.
    """
    C = np.asarray(C)
    c11 = C[..., 0, 0].real
    c22 = C[..., 1, 1].real
    c33 = C[..., 2, 2].real
    c13 = C[..., 0, 2]
    fv = 1.5 * c22
    a = c11 - fv
    b = c33 - fv
    c = c13 - fv / 3.0
    volume_only = (a <= eps) | (b <= eps)

    a_ = np.where(volume_only, 1.0, a)
    b_ = np.where(volume_only, 1.0, b)
    mag2 = np.abs(c) ** 2
    limit = a_ * b_
    c = np.where(mag2 > limit, c * np.sqrt(limit / np.where(mag2 > 0, mag2, 1.0)), c)
    mag2 = np.abs(c) ** 2
    det = np.maximum(a_ * b_ - mag2, 0.0)

    odd = c.real >= 0
    denom = np.where(odd, a_ + b_ + 2 * c.real, a_ + b_ - 2 * c.real)
    denom = np.where(denom > eps, denom, 1.0)
    # odd-bounce branch: alpha = -1, unknowns fs, beta
    fd_odd = det / denom
    fs_odd = b_ - fd_odd
    # even-bounce branch: beta = 1, unknowns fd, alpha
    fs_even = det / denom
    fd_even = b_ - fs_even

    with np.errstate(divide="ignore", invalid="ignore"):
        ps_odd = fs_odd + np.where(fs_odd > eps, np.abs(c + fd_odd) ** 2 / fs_odd, 0.0)
        pd_odd = 2.0 * fd_odd
        ps_even = 2.0 * fs_even
        pd_even = fd_even + np.where(fd_even > eps, np.abs(fs_even - c) ** 2 / fd_even, 0.0)

    ps = np.where(odd, ps_odd, ps_even)
    pd = np.where(odd, pd_odd, pd_even)
    pv = 8.0 * fv / 3.0

    span = c11 + c22 + c33
    ps = np.where(volume_only, 0.0, ps)
    pd = np.where(volume_only, 0.0, pd)
    pv = np.where(volume_only, span, pv)
    return np.maximum(ps, 0.0), np.maximum(pd, 0.0), np.maximum(pv, 0.0)


def huynen(C):
    """Huynen parameters (A0, B0, B, C, D, E, F, G, H) of the coherency matrix.

    Uses the target-generator layout::

        T = [[2 A0,    C - iD,  H + iG],
             [C + iD,  B0 + B,  E + iF],
             [H - iG,  E - iF,  B0 - B]]
    """
    T = coherency(C)
    return np.stack(
        [
            0.5 * T[..., 0, 0].real,
            0.5 * (T[..., 1, 1].real + T[..., 2, 2].real),
            0.5 * (T[..., 1, 1].real - T[..., 2, 2].real),
            T[..., 0, 1].real,
            -T[..., 0, 1].imag,
            T[..., 1, 2].real,
            T[..., 1, 2].imag,
            T[..., 0, 2].imag,
            T[..., 0, 2].real,
        ],
        axis=-1,
    )


def huynen_to_coherency(params):
    """Inverse of :func:`huynen`."""
    A0, B0, B, Cc, D, E, F, G, Hh = np.moveaxis(np.asarray(params, dtype=float), -1, 0)
    T = np.empty(A0.shape + (3, 3), dtype=complex)
    T[..., 0, 0] = 2 * A0
    T[..., 1, 1] = B0 + B
    T[..., 2, 2] = B0 - B
    T[..., 0, 1] = Cc - 1j * D
    T[..., 1, 0] = Cc + 1j * D
    T[..., 0, 2] = Hh + 1j * G
    T[..., 2, 0] = Hh - 1j * G
    T[..., 1, 2] = E + 1j * F
    T[..., 2, 1] = E - 1j * F
    return T


# ---------------------------------------------------------------------------
# GLCM texture


def quantize_equal_probability(image, levels):
    """Map ``image`` to ``0..levels-1`` using its empirical quantiles."""
    image = np.asarray(image, dtype=float)
    qs = np.arange(1, levels) / levels
    edges = np.quantile(image, qs)
    return np.searchsorted(edges, image, side="right").astype(np.int64)


def _box_sum(indicator, r0, r1, c0, c1, out_shape):
    # sum of indicator[y + r0 : y + r1, x + c0 : x + c1] for each output (y, x)
    ii = np.zeros((indicator.shape[0] + 1, indicator.shape[1] + 1))
    ii[1:, 1:] = indicator.cumsum(axis=0).cumsum(axis=1)
    H, W = out_shape
    ys = np.arange(H)[:, None]
    xs = np.arange(W)[None, :]
    return ii[ys + r1, xs + c1] - ii[ys + r0, xs + c1] - ii[ys + r1, xs + c0] + ii[ys + r0, xs + c0]


def glcm_statistics(levels_image, n_levels, window=9, offset=(0, 1)):
    """Sliding-window GLCM statistics for one displacement.

    The co-occurrence matrix of each ``window x window`` neighbourhood
    counts ordered pairs ``(p, p + offset)`` with both pixels inside the
    window, is symmetrized and normalized. Borders use edge replication.

    Returns
    -------
    dict of ndarray (H, W)
        ``contrast``, ``energy``, ``entropy`` (natural log) and
        ``correlation`` (defined as 1 where the window is constant).
    """
    Q = np.asarray(levels_image, dtype=np.int64)
    H, W = Q.shape
    if window > H or window > W:
        raise ValueError(f"window {window} larger than image {Q.shape}")
    if Q.min() < 0 or Q.max() >= n_levels:
        raise ValueError("levels image out of range")
    r = window // 2
    P = np.pad(Q, r, mode="edge")
    dr, dc = offset
    # pair grid: first pixel p at padded coords with p + offset also inside
    rows = slice(max(0, -dr), P.shape[0] - max(0, dr))
    cols = slice(max(0, -dc), P.shape[1] - max(0, dc))
    first = P[rows, cols]
    second = P[rows.start + dr: rows.stop + dr, cols.start + dc: cols.stop + dc]
    codes = first * n_levels + second
    # window at output (y, x) spans padded rows [y, y + window); first pixels
    # then lie in [y + max(0, -dr), y + window - max(0, dr)), shifted into pair grid
    r0 = max(0, -dr) - rows.start
    r1 = window - max(0, dr) - rows.start
    c0 = max(0, -dc) - cols.start
    c1 = window - max(0, dc) - cols.start
    n_pairs = (window - abs(dr)) * (window - abs(dc))

    counts = {}
    for code in np.unique(codes):
        counts[int(code)] = _box_sum(codes == code, r0, r1, c0, c1, (H, W))

    contrast = np.zeros((H, W))
    energy = np.zeros((H, W))
    entropy = np.zeros((H, W))
    mean = np.zeros((H, W))
    second_moment = np.zeros((H, W))
    cross = np.zeros((H, W))
    zero = np.zeros((H, W))
    for i in range(n_levels):
        for j in range(i, n_levels):
            nij = counts.get(i * n_levels + j, zero)
            nji = counts.get(j * n_levels + i, zero)
            if nij is zero and nji is zero:
                continue
            # p(i, j) = p(j, i) after symmetrization
            p = (nij + nji) / (2.0 * n_pairs)
            mult = 1.0 if i == j else 2.0
            contrast += mult * (i - j) ** 2 * p
            energy += mult * p * p
            with np.errstate(divide="ignore", invalid="ignore"):
                entropy -= mult * np.where(p > 0, p * np.log(p), 0.0)
            mean += p * (i + j) if i != j else p * i
            second_moment += p * (i * i + j * j) if i != j else p * i * i
            cross += mult * p * i * j
    var = second_moment - mean * mean
    flat = var <= 1e-12
    correlation = np.where(flat, 1.0, (cross - mean * mean) / np.where(flat, 1.0, var))
    return {
        "contrast": contrast,
        "energy": energy,
        "entropy": np.maximum(entropy, 0.0),
        "correlation": np.clip(correlation, -1.0, 1.0),
    }


def glcm_features(span_image, window=9, levels=16):
    """16 GLCM features per pixel: 4 statistics x 4 orientations.

    The span image is quantized to ``levels`` equal-probability bins first.
    Output shape (H, W, 16), statistic-major.
    """
    span_image = np.asarray(span_image, dtype=float)
    if span_image.shape[0] < window or span_image.shape[1] < window:
        raise ValueError(f"window {window} larger than image {span_image.shape}")
    Q = quantize_equal_probability(span_image, levels)
    per_offset = [glcm_statistics(Q, levels, window, GLCM_OFFSETS[o]) for o in ORIENTATIONS]
    return np.stack([stats[s] for s in GLCM_STATISTICS for stats in per_offset], axis=-1)


# ---------------------------------------------------------------------------
# Edge and line energy


def _signed_coordinate(orientation, window):
    r = window // 2
    dy, dx = np.mgrid[-r:r + 1, -r:r + 1]
    # coordinate along the edge normal; rows grow downwards
    return {0: dx, 90: -dy, 45: dx - dy, 135: -dx - dy}[orientation]


def _window_mean(image, mask):
    weights = mask.astype(float) / mask.sum()
    return np.maximum(ndimage.correlate(image, weights, mode="nearest"), MEAN_FLOOR)


def _ratio_energy(m1, m2):
    r = m1 / m2
    return np.maximum(r, 1.0 / r)


def edge_line_features(span_image, window=9):
    """Ratio edge and line energies for 4 orientations, shape (H, W, 8).

    Edge energy compares the mean of the two half-windows on either side of
    a line through the centre pixel: ``max(r, 1/r)``. Line energy splits the
    window into three parallel strips and keeps the weaker of the two
    centre-versus-side edge responses. Weights are uniform and borders use
    edge replication.
    """
    image = np.asarray(span_image, dtype=float)
    edges, lines = [], []
    for o in ORIENTATIONS:
        s = _signed_coordinate(o, window)
        edges.append(_ratio_energy(_window_mean(image, s > 0), _window_mean(image, s < 0)))
        left = _window_mean(image, s < -1)
        centre = _window_mean(image, np.abs(s) <= 1)
        right = _window_mean(image, s > 1)
        lines.append(np.minimum(_ratio_energy(left, centre), _ratio_energy(centre, right)))
    return np.stack(edges + lines, axis=-1)


# ---------------------------------------------------------------------------
# Assembly


@dataclass(frozen=True, eq=False)
class FeatureField:
    """Raw (H, W, 57) features and standardization statistics."""

    values: np.ndarray
    mean: np.ndarray
    std: np.ndarray

    def standardized(self):
        return (self.values - self.mean) / self.std


def pixel_features(C, span_image=None, window=9, levels=16):
    """Raw 57-dim features for a (H, W, 3, 3) covariance field."""
    C = np.asarray(C)
    span = _span(C) if span_image is None else span_image
    sf = scattering_features(C)
    H_, A_, alpha = cloude_pottier(C)
    ps, pd, pv = freeman(C)
    parts = [
        sf[..., :16],
        np.stack([H_, A_, alpha, ps, pd, pv], axis=-1),
        huynen(C),
        sf[..., 16:18],
        glcm_features(span, window, levels),
        edge_line_features(span, window),
    ]
    out = np.concatenate(parts, axis=-1)
    assert out.shape[-1] == N_FEATURES
    return out


def standardization_stats(values, mask=None):
    """Per-dimension mean and std over ``mask`` (all pixels if None)."""
    flat = values.reshape(-1, values.shape[-1])
    if mask is not None:
        flat = flat[np.asarray(mask).reshape(-1)]
    if flat.shape[0] == 0:
        raise ValueError("no pixels available for standardization")
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    return mean, np.where(std > 0, std, 1.0)


def extract_all(scene, train_mask=None, window=9, levels=16):
    """Feature field for ``scene`` standardized over the training pixels.

    ``train_mask`` defaults to all labeled pixels, or every pixel for an
    unlabeled scene.
    """
    values = pixel_features(scene.covariance, window=window, levels=levels)
    if train_mask is None:
        labeled = scene.labeled_mask()
        train_mask = labeled if labeled.any() else None
    mean, std = standardization_stats(values, train_mask)
    return FeatureField(values, mean, std)


FEATURE_MAGIC = b"PFEA"


def write_features(path, values):
    """Write (H, W, D) float32 features: ``PFEA | H | W | D | data``."""
    values = np.asarray(values)
    write_raster(path, FEATURE_MAGIC, values, "<f4", extra=np.uint32(values.shape[2]).tobytes())


def read_features(path):
    with open(path, "rb") as fh:
        head = fh.read(16)
    depth = int(np.frombuffer(head[12:16], "<u4")[0]) if len(head) >= 16 else 0
    arr, (d,) = read_raster(path, FEATURE_MAGIC, "<f4", extra_fmt="I", trailing_shape=(depth,))
    return arr
