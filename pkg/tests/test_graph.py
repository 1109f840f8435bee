import numpy as np
import pytest
from scipy import ndimage, sparse

from conftest import random_hpd
from mvgcn import data
from mvgcn import graph as G
from mvgcn.features import extract_all
from mvgcn.manifold import grassmann_kernel, le_distance, le_mean


def constant_scene(h=64, w=64):
    C = np.broadcast_to(np.diag([1.0, 0.4, 0.7]).astype(complex), (h, w, 3, 3)).copy()
    return data.PolsarScene(C, 1)


def two_region_scene():
    spec = data.scene_spec_from_dict({
        "height": 48, "width": 48, "class_count": 2, "looks": 9, "seed": 5,
        "scales": [[1.0, 0.1, 0.2], [0.1, 1.0, 0.5]],
        "regions": [[0, 48, 0, 21, 0], [0, 48, 21, 48, 1]],
    })
    return data.synth_scene(spec)


def test_constant_image_tiles_uniformly():
    seg = G.segment_superpixels(constant_scene(), 256)
    assert seg.count == 16
    assert np.all(np.abs(seg.sizes - 256) <= 0.3 * 256)


def test_segmentation_contract(easy_scene):
    seg = G.segment_superpixels(easy_scene, 100)
    assert set(np.unique(seg.labels)) == set(range(seg.count))
    assert seg.sizes.sum() == 64 * 64
    for k in range(seg.count):
        _, n = ndimage.label(seg.labels == k)
        assert n == 1
    assert seg.sizes.min() >= 25


def test_no_superpixel_straddles_boundary():
    scene = two_region_scene()
    seg = G.segment_superpixels(scene, 64)
    lab = scene.labels.ravel()
    for members in seg.pixel_lists():
        counts = np.bincount(lab[members], minlength=2)
        assert counts.min() <= 0.05 * members.size


def test_segmentation_errors():
    with pytest.raises(ValueError):
        G.segment_superpixels(constant_scene(8, 8), 10)
    with pytest.raises(ValueError):
        G.segment_superpixels(constant_scene(8, 8), 100)


def test_segmentation_deterministic(easy_scene):
    a = G.segment_superpixels(easy_scene, 100)
    b = G.segment_superpixels(easy_scene, 100)
    assert np.array_equal(a.labels, b.labels)


def test_enforce_connectivity_merges_fragments():
    labels = np.zeros((6, 6), int)
    labels[:, 3:] = 1
    labels[0, 0] = 1  # detached fragment of id 1
    out, n = G.enforce_connectivity(labels, 1)
    assert n == 2 and out[0, 0] == out[1, 0]
    out, n = G.enforce_connectivity(labels, 20)
    assert n == 1


def test_edges_and_projection():
    seg = G.Segmentation(np.array([[0, 0, 1], [2, 2, 1]]), 3, 16.0)
    assert G.adjacency_edges(seg).tolist() == [[0, 1], [0, 2], [1, 2]]
    Q = G.projection_matrix(seg)
    assert np.array_equal(np.asarray(Q.sum(axis=1)).ravel(), np.ones(6))
    assert np.array_equal((Q.T @ Q).toarray(), np.diag([2, 2, 2]))


def test_node_targets_majority_and_ties():
    seg = G.Segmentation(np.array([[0, 0, 0, 1, 1, 1]]), 2, 16.0)
    labels = np.array([[1, 2, 2, 0, 1, 3]])
    mask = np.ones((1, 6), bool)
    targets, has = G.node_targets(seg, labels, mask, 3)
    assert targets.tolist() == [2, 0] and has.all()
    mask[0, 3:] = False
    targets, has = G.node_targets(seg, labels, mask, 3)
    assert targets.tolist() == [2, 3] and has.tolist() == [True, False]


def test_superpixel_stats(easy_scene, rng):
    seg = G.segment_superpixels(easy_scene, 100)
    feats = rng.standard_normal((64, 64, 57))
    st = G.superpixel_stats(easy_scene, feats, seg, q=8)
    members = seg.pixel_lists()[3]
    C = easy_scene.covariance.reshape(-1, 3, 3)[members]
    assert np.allclose(st.covariance[3], le_mean(C), atol=1e-12)
    assert np.allclose(st.mean_features[3], feats.reshape(-1, 57)[members].mean(0))
    assert st.bases.shape == (seg.count, 57, 8)
    st2 = G.superpixel_stats(easy_scene, 2 * feats, seg, q=8)
    assert np.allclose(st2.mean_features, 2 * st.mean_features)


def test_identical_pixels_give_that_pixel():
    scene = constant_scene(16, 16)
    seg = G.segment_superpixels(scene, 64)
    st = G.superpixel_stats(scene, np.ones((16, 16, 4)), seg, q=2)
    assert np.allclose(st.covariance, np.diag([1.0, 0.4, 0.7]))
    assert np.allclose(st.mean_features, 1.0)


def test_hpd_adjacency(rng):
    covs = random_hpd(rng, size=6)
    covs[1] = covs[0]
    edges = np.array([[0, 1], [0, 2], [1, 3], [2, 4], [3, 5], [4, 5], [1, 2]])
    A, sigma = G.build_adjacency_hpd(covs, edges)
    A = A.toarray()
    assert np.array_equal(A, A.T) and np.all(np.diag(A) == 0)
    assert A[0, 1] == 1.0
    w = A[edges[:, 0], edges[:, 1]]
    # odd edge count: the median edge weight is exactly exp(-1)
    assert np.median(w) == pytest.approx(np.exp(-1), abs=1e-12)
    # weight decreasing in distance
    d = le_distance(covs[edges[:, 0]], covs[edges[:, 1]])
    order = np.argsort(d)
    assert np.all(np.diff(w[order]) <= 0)
    assert np.all((w >= 0) & (w <= 1))


def test_grassmann_adjacency(rng):
    bases = np.stack([np.linalg.qr(rng.standard_normal((10, 3)))[0] for _ in range(4)])
    bases[1] = bases[0]
    edges = np.array([[0, 1], [1, 2], [2, 3]])
    A = G.build_adjacency_grassmann(bases, edges).toarray()
    assert A[0, 1] == pytest.approx(3.0)
    assert A[1, 2] == pytest.approx(grassmann_kernel(bases[1], bases[2]))
    E = np.eye(6)
    orth = np.stack([E[:, :3], E[:, 3:]])
    assert G.build_adjacency_grassmann(orth, np.array([[0, 1]])).toarray()[0, 1] == 0.0


def test_normalize_adjacency_examples():
    assert np.array_equal(G.normalize_adjacency(sparse.csr_matrix((3, 3))).toarray(), np.eye(3))
    A = sparse.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert np.allclose(G.normalize_adjacency(A).toarray(), [[0.5, 0.5], [0.5, 0.5]])


def test_normalized_spectrum(rng):
    W = rng.random((8, 8)) * (rng.random((8, 8)) < 0.4)
    W = np.triu(W, 1)
    W = W + W.T
    An = G.normalize_adjacency(sparse.csr_matrix(W)).toarray()
    assert np.allclose(An, An.T)
    ev = np.linalg.eigvalsh(An)
    assert ev.min() >= -1 - 1e-12 and ev.max() <= 1 + 1e-12


def test_build_graph_and_file_roundtrip(easy_scene, tmp_path):
    field = extract_all(easy_scene)
    seg = G.segment_superpixels(easy_scene, 100)
    g = G.build_graph(easy_scene, field.standardized(), seg)
    assert g.features_hpd.shape == (seg.count, 9)
    assert g.features_grassmann.shape == (seg.count, 57)
    A2 = g.adjacency_grassmann.toarray()
    assert A2.max() <= 8 + 1e-9 and np.allclose(A2, A2.T)
    p = tmp_path / "s.pseg"
    G.write_segmentation(p, seg)
    assert np.array_equal(G.read_segmentation(p).labels, seg.labels)
