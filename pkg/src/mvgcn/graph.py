"""Superpixel segmentation and the two manifold-weighted superpixel graphs.

Segmentation is SLIC-style k-means in the log-Euclidean embedding of the
covariance field: each pixel's ``log C`` is vectorized isometrically, so
squared Euclidean distance between vectors is the squared log-Euclidean
distance between matrices.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage, sparse

from ._binio import read_raster, write_raster
from .manifold import (
    EIG_FLOOR,
    hermitian_to_real_vector,
    le_distance,
    matrix_exp_hermitian,
    matrix_log_hermitian,
    subspace_extract,
)

MIN_DELTA = 16
SLIC_ITERATIONS = 10


@dataclass(frozen=True, eq=False)
class Segmentation:
    """Per-pixel superpixel ids ``0..count-1`` for target size ``delta``."""

    labels: np.ndarray
    count: int
    delta: float

    @property
    def sizes(self):
        return np.bincount(self.labels.ravel(), minlength=self.count)

    def pixel_lists(self):
        """Flat pixel indices of each superpixel, in raster order."""
        flat = self.labels.ravel()
        order = np.argsort(flat, kind="stable")
        return np.split(order, np.cumsum(self.sizes)[:-1])


def log_vectors(C, eig_floor=EIG_FLOOR):
    """Isometric 9-real embedding of ``log C`` for a stack of 3x3 matrices."""
    return hermitian_to_real_vector(matrix_log_hermitian(C, eig_floor))


# ---------------------------------------------------------------------------
# Segmentation


def _grid_centres(n, step_target):
    k = max(1, int(round(n / step_target)))
    step = n / k
    return (np.arange(k) + 0.5) * step, step


def _component_map(labels):
    """Relabel so that every 4-connected region of equal id is its own id."""
    comp = np.zeros(labels.shape, dtype=np.int64)
    next_id = 0
    for k, sl in enumerate(ndimage.find_objects(labels + 1)):
        if sl is None:
            continue
        lab, n = ndimage.label(labels[sl] == k)
        view = comp[sl]
        inside = lab > 0
        view[inside] = lab[inside] + next_id - 1
        next_id += n
    return comp, next_id


def _touching_pairs(labels):
    a = np.concatenate([labels[:, :-1].ravel(), labels[:-1, :].ravel()])
    b = np.concatenate([labels[:, 1:].ravel(), labels[1:, :].ravel()])
    keep = a != b
    lo = np.minimum(a[keep], b[keep])
    hi = np.maximum(a[keep], b[keep])
    return np.unique(np.stack([lo, hi], axis=1), axis=0) if lo.size else np.zeros((0, 2), int)


def _relabel_first_occurrence(labels):
    _, first, inverse = np.unique(labels.ravel(), return_index=True, return_inverse=True)
    rank = np.empty(first.size, dtype=np.int64)
    rank[np.argsort(first)] = np.arange(first.size)
    return rank[inverse].reshape(labels.shape), first.size


def enforce_connectivity(labels, min_size=1):
    """Make every superpixel 4-connected and at least ``min_size`` pixels.

    The largest fragment of each id survives; other fragments and undersized
    regions are absorbed, smallest first, into the largest touching region.
    Ids are renumbered in raster order of first appearance.
    """
    labels = np.asarray(labels, dtype=np.int64)
    while True:
        comp, n = _component_map(labels)
        sizes = np.bincount(comp.ravel(), minlength=n)
        # one surviving fragment per original id: its largest
        owner = np.zeros(n, dtype=np.int64)
        owner[comp.ravel()] = labels.ravel()
        best = {}
        for c in range(n):
            o = owner[c]
            if o not in best or sizes[c] > sizes[best[o]]:
                best[o] = c
        survivors = set(best.values())
        orphan = [c for c in range(n) if c not in survivors or sizes[c] < min_size]
        if not orphan or n == 1:
            return _relabel_first_occurrence(comp)

        neighbours = {c: set() for c in range(n)}
        for a, b in _touching_pairs(comp):
            neighbours[a].add(b)
            neighbours[b].add(a)
        parent = np.arange(n)

        def find(c):
            while parent[c] != c:
                parent[c] = parent[parent[c]]
                c = parent[c]
            return c

        size = sizes.astype(np.int64).copy()
        for c in sorted(orphan, key=lambda c: (sizes[c], c)):
            if find(c) != c:
                continue
            cands = {find(x) for x in neighbours[c]} - {c}
            if not cands:
                continue
            target = min(cands, key=lambda t: (-size[t], t))
            parent[c] = target
            size[target] += size[c]
            neighbours[target] |= neighbours[c]
        roots = np.array([find(c) for c in range(n)])
        labels = roots[comp]


def segment_superpixels(scene, delta, iterations=SLIC_ITERATIONS, spatial_weight=1.0,
                        min_size_fraction=0.25, eig_floor=EIG_FLOOR):
    """SLIC superpixels under the log-Euclidean polarimetric distance.

    Seeds sit on a grid with spacing about ``sqrt(delta)``. Each pixel joins
    the seed within a ``2 sqrt(delta)`` box minimizing
    ``d_LE^2 + (spatial_weight / delta) * d_xy^2``.

    Parameters
    ----------
    scene : PolsarScene
    delta : float
        Target pixels per superpixel, at least 16.
    min_size_fraction : float
        Regions smaller than ``min_size_fraction * delta`` are merged away.

    Returns
    -------
    Segmentation
    """
    H, W = scene.height, scene.width
    if delta < MIN_DELTA:
        raise ValueError(f"delta must be >= {MIN_DELTA}, got {delta}")
    if delta > H * W:
        raise ValueError(f"delta {delta} exceeds the image size {H}x{W}")
    V = log_vectors(scene.covariance, eig_floor)
    step = np.sqrt(delta)
    rc, row_step = _grid_centres(H, step)
    cc, col_step = _grid_centres(W, step)
    cy, cx = np.meshgrid(rc, cc, indexing="ij")
    cy, cx = cy.ravel(), cx.ravel()
    iy = np.clip(cy.astype(int), 0, H - 1)
    ix = np.clip(cx.astype(int), 0, W - 1)
    centres = V[iy, ix].copy()
    k = cy.size
    reach = int(np.ceil(max(row_step, col_step)))
    scale = spatial_weight / delta
    ys, xs = np.mgrid[0:H, 0:W]
    labels = np.zeros((H, W), dtype=np.int64)

    for _ in range(iterations):
        best = np.full((H, W), np.inf)
        for j in range(k):
            r0, r1 = max(0, int(cy[j]) - reach), min(H, int(cy[j]) + reach + 1)
            c0, c1 = max(0, int(cx[j]) - reach), min(W, int(cx[j]) + reach + 1)
            diff = V[r0:r1, c0:c1] - centres[j]
            d = np.einsum("...i,...i->...", diff, diff)
            d += scale * ((ys[r0:r1, c0:c1] - cy[j]) ** 2 + (xs[r0:r1, c0:c1] - cx[j]) ** 2)
            win = d < best[r0:r1, c0:c1]
            best[r0:r1, c0:c1][win] = d[win]
            labels[r0:r1, c0:c1][win] = j
        flat = labels.ravel()
        counts = np.bincount(flat, minlength=k)
        live = counts > 0
        for dim in range(V.shape[-1]):
            s = np.bincount(flat, weights=V[..., dim].ravel(), minlength=k)
            centres[live, dim] = s[live] / counts[live]
        cy[live] = np.bincount(flat, weights=ys.ravel(), minlength=k)[live] / counts[live]
        cx[live] = np.bincount(flat, weights=xs.ravel(), minlength=k)[live] / counts[live]

    min_size = max(1, int(min_size_fraction * delta))
    final, count = enforce_connectivity(labels, min_size)
    return Segmentation(final, count, float(delta))


def adjacency_edges(segmentation):
    """Sorted unique pairs ``(i, j)``, ``i < j``, of 4-adjacent superpixels."""
    return _touching_pairs(segmentation.labels)


def projection_matrix(segmentation):
    """Sparse HW x N one-hot membership matrix Q."""
    flat = segmentation.labels.ravel()
    n = flat.size
    return sparse.csr_matrix(
        (np.ones(n), (np.arange(n), flat)), shape=(n, segmentation.count)
    )


# ---------------------------------------------------------------------------
# Node statistics


@dataclass(frozen=True, eq=False)
class NodeStats:
    """Per-superpixel view statistics.

    ``covariance`` (N, 3, 3) log-Euclidean means, ``log_vectors`` (N, 9)
    their isometric log embedding, ``mean_features`` (N, D) and
    ``bases`` (N, D, q) orthonormal subspace bases.
    """

    covariance: np.ndarray
    log_vectors: np.ndarray
    mean_features: np.ndarray
    bases: np.ndarray


def _segment_means(flat_labels, values, count):
    sizes = np.bincount(flat_labels, minlength=count).astype(float)
    out = np.empty((count, values.shape[1]))
    for d in range(values.shape[1]):
        out[:, d] = np.bincount(flat_labels, weights=values[:, d], minlength=count) / sizes
    return out


def superpixel_stats(scene, features, segmentation, q=8, eig_floor=EIG_FLOOR):
    """View statistics for every superpixel.

    Parameters
    ----------
    scene : PolsarScene
    features : ndarray (H, W, D)
        Standardized pixel features.
    segmentation : Segmentation
    q : int
        Requested subspace dimension, clamped to ``min(D, smallest size - 1)``
        so that every node lives on the same Grassmannian.
    """
    flat = segmentation.labels.ravel()
    n = segmentation.count
    C = scene.covariance.reshape(-1, 3, 3)
    logs = matrix_log_hermitian(C, eig_floor).reshape(-1, 9)
    mean_log = _segment_means(flat, logs.real, n) + 1j * _segment_means(flat, logs.imag, n)
    mean_log = mean_log.reshape(n, 3, 3)
    mean_log = 0.5 * (mean_log + np.swapaxes(mean_log, -1, -2).conj())
    cov = matrix_exp_hermitian(mean_log)

    X = np.asarray(features, dtype=float).reshape(flat.size, -1)
    D = X.shape[1]
    xbar = _segment_means(flat, X, n)
    size_min = int(segmentation.sizes.min())
    q_eff = max(1, min(q, D, size_min - 1))
    bases = np.empty((n, D, q_eff))
    for i, members in enumerate(segmentation.pixel_lists()):
        bases[i] = subspace_extract(X[members], q_eff).basis
    return NodeStats(cov, hermitian_to_real_vector(mean_log), xbar, bases)


def node_targets(segmentation, labels, pixel_mask, class_count):
    """Majority label of each node over the masked labeled pixels.

    Returns ``(targets, has_label)``; ties go to the smaller class index and
    nodes without masked labeled pixels get ``class_count``.
    """
    flat = segmentation.labels.ravel()
    lab = np.asarray(labels).ravel()
    keep = np.asarray(pixel_mask).ravel() & (lab < class_count)
    counts = np.zeros((segmentation.count, class_count), dtype=np.int64)
    np.add.at(counts, (flat[keep], lab[keep]), 1)
    has = counts.sum(axis=1) > 0
    targets = np.where(has, np.argmax(counts, axis=1), class_count)
    return targets, has


# ---------------------------------------------------------------------------
# Adjacency


def lower_median(values):
    """Median that is always an element of ``values`` (lower middle)."""
    v = np.sort(np.asarray(values, dtype=float))
    return float(v[(v.size - 1) // 2])


def build_adjacency_hpd(node_covariance, edges, bandwidth="median", eig_floor=EIG_FLOOR):
    """Gaussian log-Euclidean affinity on graph edges.

    ``A_ij = exp(-d_LE(C_i, C_j)^2 / sigma^2)``. With ``bandwidth="median"``
    sigma is the lower median of the edge distances (1 if that is zero).

    Returns ``(A, sigma)`` with ``A`` a symmetric CSR matrix.
    """
    n = len(node_covariance)
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.shape[0] == 0:
        return sparse.csr_matrix((n, n)), 1.0
    d = le_distance(node_covariance[edges[:, 0]], node_covariance[edges[:, 1]], eig_floor)
    if bandwidth == "median":
        sigma = lower_median(d)
        sigma = sigma if sigma > 0 else 1.0
    else:
        sigma = float(bandwidth)
    w = np.exp(-(d**2) / sigma**2)
    return _symmetric(n, edges, w), sigma


def build_adjacency_grassmann(bases, edges):
    """Projection-kernel affinity ``||U_i^T U_j||_F^2`` on graph edges."""
    bases = np.asarray(bases)
    n = bases.shape[0]
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.shape[0] == 0:
        return sparse.csr_matrix((n, n))
    M = np.einsum("edq,edr->eqr", bases[edges[:, 0]].conj(), bases[edges[:, 1]])
    w = np.sum(np.abs(M) ** 2, axis=(1, 2))
    return _symmetric(n, edges, w)


def _symmetric(n, edges, w):
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    return sparse.csr_matrix((np.concatenate([w, w]), (rows, cols)), shape=(n, n))


def normalize_adjacency(A):
    """Renormalized propagation matrix ``D^-1/2 (A + I) D^-1/2`` (CSR)."""
    A = sparse.csr_matrix(A, dtype=float)
    n = A.shape[0]
    At = A + sparse.identity(n, format="csr")
    deg = np.asarray(At.sum(axis=1)).ravel()
    dinv = sparse.diags(1.0 / np.sqrt(deg))
    out = (dinv @ At @ dinv).tocsr()
    out.sort_indices()
    return out


# ---------------------------------------------------------------------------
# Assembled graph


@dataclass(frozen=True, eq=False)
class SuperpixelGraph:
    """Both views of the superpixel graph, ready for the GCN branches."""

    segmentation: Segmentation
    edges: np.ndarray
    adjacency_hpd: sparse.csr_matrix
    adjacency_grassmann: sparse.csr_matrix
    features_hpd: np.ndarray
    features_grassmann: np.ndarray
    stats: NodeStats
    sigma: float
    projection: sparse.csr_matrix

    @property
    def node_count(self):
        return self.segmentation.count


def _standardize_columns(X):
    std = X.std(axis=0)
    return (X - X.mean(axis=0)) / np.where(std > 0, std, 1.0)


def build_graph(scene, features, segmentation, q=8, bandwidth="median", eig_floor=EIG_FLOOR):
    """Node statistics, both adjacencies and node inputs for ``segmentation``.

    View-1 node inputs are the log-mean embeddings standardized over nodes;
    View-2 inputs are the mean standardized pixel features.
    """
    stats = superpixel_stats(scene, features, segmentation, q, eig_floor)
    edges = adjacency_edges(segmentation)
    A1, sigma = build_adjacency_hpd(stats.covariance, edges, bandwidth, eig_floor)
    A2 = build_adjacency_grassmann(stats.bases, edges)
    return SuperpixelGraph(
        segmentation=segmentation,
        edges=edges,
        adjacency_hpd=A1,
        adjacency_grassmann=A2,
        features_hpd=_standardize_columns(stats.log_vectors),
        features_grassmann=stats.mean_features,
        stats=stats,
        sigma=sigma,
        projection=projection_matrix(segmentation),
    )


SEGMENT_MAGIC = b"PSEG"


def write_segmentation(path, segmentation):
    write_raster(path, SEGMENT_MAGIC, segmentation.labels, "<u4")


def read_segmentation(path, delta=float("nan")):
    labels, _ = read_raster(path, SEGMENT_MAGIC, "<u4")
    labels = labels.astype(np.int64)
    count = int(labels.max()) + 1 if labels.size else 0
    return Segmentation(labels, count, delta)
