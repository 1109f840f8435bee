"""Graph convolutional branches with hand-written reverse-mode gradients.

Each view runs ``H_l = act(A_hat H_{l-1} W_l)`` with ReLU on hidden layers
and a linear last layer, followed by two heads on the final node features:
a softplus evidence head and a softmax auxiliary head.
"""

import json
import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ._binio import FormatError

VIEW_NAMES = ("hpd", "grassmann")


@dataclass(frozen=True, eq=False)
class ViewWeights:
    """Weights of one branch: propagation layers plus heads."""

    layers: tuple
    evidence: np.ndarray
    softmax: np.ndarray

    def arrays(self):
        return list(self.layers) + [self.evidence, self.softmax]

    @classmethod
    def from_arrays(cls, arrays):
        arrays = list(arrays)
        return cls(tuple(arrays[:-2]), arrays[-2], arrays[-1])


@dataclass(frozen=True, eq=False)
class GcnParams:
    """Per-view weights keyed by view name, in a fixed order."""

    views: dict

    def names(self):
        out = []
        for v, w in self.views.items():
            out += [f"{v}.W{l}" for l in range(len(w.layers))]
            out += [f"{v}.evidence", f"{v}.softmax"]
        return out

    def flat(self):
        return [a for w in self.views.values() for a in w.arrays()]

    def with_flat(self, arrays):
        arrays = list(arrays)
        views, i = {}, 0
        for v, w in self.views.items():
            n = len(w.layers) + 2
            views[v] = ViewWeights.from_arrays(arrays[i:i + n])
            i += n
        return GcnParams(views)

    def equal(self, other):
        return self.names() == other.names() and all(
            a.shape == b.shape and np.array_equal(a, b) for a, b in zip(self.flat(), other.flat())
        )


def glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_view(rng, in_dim, hidden, class_count, depth=2):
    dims = [in_dim] + [hidden] * depth
    layers = tuple(glorot(rng, a, b) for a, b in zip(dims[:-1], dims[1:]))
    return ViewWeights(layers, glorot(rng, hidden, class_count), glorot(rng, hidden, class_count))


def init_params(input_dims, hidden=64, class_count=3, seed=0, depth=2):
    """Glorot-uniform weights for each view in ``input_dims`` (name -> width)."""
    rng = np.random.default_rng(seed)
    return GcnParams({v: init_view(rng, d, hidden, class_count, depth) for v, d in input_dims.items()})


# ---------------------------------------------------------------------------
# Forward / backward


def softplus(x):
    return np.logaddexp(0.0, x)


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class ForwardTrace:
    """Everything the backward pass needs for one branch.

    ``propagated[l]`` is ``A_hat H_l`` (input of layer ``l`` after
    propagation), ``pre[l]`` the layer pre-activation and ``acts[l]`` its
    output; ``acts[-1]`` is the final node representation.
    """

    adjacency: object
    inputs: np.ndarray
    weights: ViewWeights
    propagated: tuple
    pre: tuple
    acts: tuple
    evidence_pre: np.ndarray
    evidence: np.ndarray
    logits: np.ndarray
    probs: np.ndarray

    @property
    def output(self):
        return self.acts[-1]


def gcn_forward(A_hat, X, weights, hidden_activation="relu"):
    """Run one branch on normalized adjacency ``A_hat`` and node inputs ``X``."""
    X = np.asarray(X, dtype=float)
    if A_hat.shape != (X.shape[0], X.shape[0]):
        raise ValueError(f"adjacency {A_hat.shape} does not match {X.shape[0]} nodes")
    H = X
    propagated, pre, acts = [], [], []
    n_layers = len(weights.layers)
    for l, W in enumerate(weights.layers):
        if H.shape[1] != W.shape[0]:
            raise ValueError(f"layer {l}: input width {H.shape[1]} vs weight {W.shape}")
        AH = np.asarray(A_hat @ H)
        Z = AH @ W
        last = l == n_layers - 1
        H = Z if last or hidden_activation is None else np.maximum(Z, 0.0)
        propagated.append(AH)
        pre.append(Z)
        acts.append(H)
    E_pre = H @ weights.evidence
    logits = H @ weights.softmax
    return ForwardTrace(
        adjacency=A_hat,
        inputs=X,
        weights=weights,
        propagated=tuple(propagated),
        pre=tuple(pre),
        acts=tuple(acts),
        evidence_pre=E_pre,
        evidence=softplus(E_pre),
        logits=logits,
        probs=softmax(logits),
    )


def gcn_backward(trace, weights, grad_evidence=None, grad_probs=None, grad_output=None,
                 hidden_activation="relu"):
    """Exact gradients of a scalar objective w.r.t. one branch's weights.

    Parameters
    ----------
    trace : ForwardTrace
        Produced by :func:`gcn_forward` with exactly ``weights``.
    grad_evidence, grad_probs, grad_output : ndarray or None
        Upstream gradients w.r.t. evidence, softmax probabilities and the
        final node features; ``None`` means zero.

    Returns
    -------
    ViewWeights
        Gradient arrays with the shapes of ``weights``.
    """
    if trace.weights is not weights:
        raise ValueError("stale trace: weights changed since the forward pass")
    H = trace.output
    C = weights.evidence.shape[1]
    g_ev = np.zeros_like(trace.evidence) if grad_evidence is None else grad_evidence
    g_pr = np.zeros((H.shape[0], C)) if grad_probs is None else grad_probs
    d_epre = g_ev * expit(trace.evidence_pre)
    p = trace.probs
    d_logits = p * (g_pr - np.sum(p * g_pr, axis=-1, keepdims=True))
    g_we = H.T @ d_epre
    g_ws = H.T @ d_logits
    dH = d_epre @ weights.evidence.T + d_logits @ weights.softmax.T
    if grad_output is not None:
        dH = dH + grad_output

    A_T = trace.adjacency.T
    n_layers = len(weights.layers)
    grads = [None] * n_layers
    for l in range(n_layers - 1, -1, -1):
        last = l == n_layers - 1
        dZ = dH if last or hidden_activation is None else dH * (trace.pre[l] > 0)
        grads[l] = trace.propagated[l].T @ dZ
        if l > 0:
            dH = np.asarray(A_T @ (dZ @ weights.layers[l].T))
    return ViewWeights(tuple(grads), g_we, g_ws)


def project_to_pixels(H, Q):
    """Pixel features ``Q H`` for a one-hot membership matrix ``Q``."""
    return np.asarray(Q @ H)


# ---------------------------------------------------------------------------
# Checkpoint

CHECKPOINT_MAGIC = b"PCKPT"


def write_checkpoint(path, params, meta=None, extra=None):
    """Write ``PCKPT | u32 manifest length | JSON manifest | float64 tensors``.

    ``extra`` holds additional named float arrays (e.g. standardization
    statistics) stored after the weights.
    """
    names = params.names()
    arrays = params.flat()
    extra = extra or {}
    for k, v in extra.items():
        names.append(f"extra.{k}")
        arrays.append(np.asarray(v, dtype=float))
    manifest = {
        "views": [[v, len(w.layers)] for v, w in params.views.items()],
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in zip(names, arrays)],
        "meta": meta or {},
    }
    blob = json.dumps(manifest, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def read_checkpoint(path):
    """Return ``(params, meta, extra)`` from a checkpoint file."""
    with open(path, "rb") as fh:
        raw = fh.read()
    n = len(CHECKPOINT_MAGIC)
    if raw[:n] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint file")
    if len(raw) < n + 4:
        raise FormatError(f"{path}: truncated header")
    (mlen,) = struct.unpack("<I", raw[n:n + 4])
    try:
        manifest = json.loads(raw[n + 4:n + 4 + mlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: bad manifest ({exc})") from None
    pos = n + 4 + mlen
    tensors = {}
    for t in manifest["tensors"]:
        shape = tuple(t["shape"])
        size = int(np.prod(shape)) * 8
        if pos + size > len(raw):
            raise FormatError(f"{path}: truncated tensor {t['name']}")
        tensors[t["name"]] = np.frombuffer(raw[pos:pos + size], "<f8").reshape(shape).copy()
        pos += size
    if pos != len(raw):
        raise FormatError(f"{path}: {len(raw) - pos} trailing bytes")
    views = {}
    for v, depth in manifest["views"]:
        layers = tuple(tensors[f"{v}.W{l}"] for l in range(depth))
        views[v] = ViewWeights(layers, tensors[f"{v}.evidence"], tensors[f"{v}.softmax"])
    extra = {k[len("extra."):]: a for k, a in tensors.items() if k.startswith("extra.")}
    return GcnParams(views), manifest["meta"], extra
