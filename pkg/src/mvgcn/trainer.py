"""Data splits, the training loop, pixel-level prediction and metrics."""

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .evidence import fuse_evidence, fuse_evidence_backward, predict_from_alpha
from .features import extract_all
from .gcn import VIEW_NAMES, gcn_backward, gcn_forward, init_params, project_to_pixels
from .graph import build_graph, node_targets, normalize_adjacency, segment_superpixels
from .loss import LossConfig, total_loss

VIEW_MODES = ("both", "hpd", "grassmann")


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or gradient."""


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    epochs: int = 300
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    fractions: tuple = (0.05, 0.01, 0.94)
    delta: float = 100.0
    q: int = 8
    anneal_epochs: int = 50
    hidden: int = 64
    views: str = "both"
    bandwidth: object = "median"

    def __post_init__(self):
        object.__setattr__(self, "fractions", tuple(float(f) for f in self.fractions))
        if len(self.fractions) != 3 or any(f < 0 for f in self.fractions):
            raise ValueError("fractions must be three non-negative numbers")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError(f"fractions must sum to 1, got {sum(self.fractions)}")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.hidden < 1 or self.q < 1:
            raise ValueError("hidden width and q must be >= 1")
        if self.views not in VIEW_MODES:
            raise ValueError(f"views must be one of {VIEW_MODES}")

    def active_views(self):
        return VIEW_NAMES if self.views == "both" else (self.views,)

    def to_dict(self):
        d = asdict(self)
        d["fractions"] = list(self.fractions)
        return d


# ---------------------------------------------------------------------------
# Splits


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def split_samples(labels, class_count, fractions=(0.05, 0.01, 0.94), seed=0):
    """Stratified train/val/test pixel masks over the labeled pixels.

    Per class, ``round(f_train n)`` and ``round(f_val n)`` pixels (at least
    one when the fraction is positive) are drawn without replacement; the
    rest is test.
    """
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    masks = [np.zeros(labels.shape, dtype=bool) for _ in range(3)]
    flat = labels.ravel()
    for c in range(class_count):
        idx = np.flatnonzero(flat == c)
        n = idx.size
        if n == 0:
            continue
        if n < 3:
            raise ValueError(f"class {c} has only {n} labeled pixels; need at least 3")
        perm = rng.permutation(idx)
        counts = []
        for f in fractions[:2]:
            k = _round_half_up(f * n)
            counts.append(max(1, k) if f > 0 else 0)
        n_tr = min(counts[0], n)
        n_va = min(counts[1], n - n_tr)
        parts = (perm[:n_tr], perm[n_tr:n_tr + n_va], perm[n_tr + n_va:])
        for m, p in zip(masks, parts):
            m.ravel()[p] = True
    return tuple(masks)


# ---------------------------------------------------------------------------
# Optimizer


class Adam:
    """Adaptive-moment optimizer over a list of arrays, with bias correction."""

    def __init__(self, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params, grads):
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        out = []
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            mhat = self.m[i] / c1
            vhat = self.v[i] / c2
            out.append(p - self.lr * mhat / (np.sqrt(vhat) + self.eps))
        return out


# ---------------------------------------------------------------------------
# Pipeline


@dataclass(frozen=True, eq=False)
class PreparedScene:
    """Features, superpixel graph and node-level targets for one scene."""

    feature_mean: np.ndarray
    feature_std: np.ndarray
    graph: object
    adjacency: dict
    inputs: dict
    masks: tuple
    node_targets: np.ndarray
    train_nodes: np.ndarray


def prepare(scene, config, masks=None, feature_stats=None):
    """Run everything that precedes optimization.

    ``masks`` defaults to :func:`split_samples` with the config seed;
    ``feature_stats`` overrides the standardization statistics (used when
    predicting with a stored checkpoint).
    """
    if masks is None:
        if scene.labels is None:
            shape = (scene.height, scene.width)
            masks = (np.zeros(shape, bool), np.zeros(shape, bool), np.zeros(shape, bool))
        else:
            masks = split_samples(scene.labels, scene.class_count, config.fractions, config.seed)
    train_mask = masks[0]
    field_ = extract_all(scene, train_mask if train_mask.any() else None)
    mean, std = (field_.mean, field_.std) if feature_stats is None else feature_stats
    standardized = (field_.values - mean) / std
    seg = segment_superpixels(scene, config.delta)
    g = build_graph(scene, standardized, seg, q=config.q, bandwidth=config.bandwidth)
    adjacency = {
        "hpd": normalize_adjacency(g.adjacency_hpd),
        "grassmann": normalize_adjacency(g.adjacency_grassmann),
    }
    inputs = {"hpd": g.features_hpd, "grassmann": g.features_grassmann}
    if scene.labels is not None:
        targets, has = node_targets(seg, scene.labels, train_mask, scene.class_count)
    else:
        targets = np.full(seg.count, scene.class_count)
        has = np.zeros(seg.count, dtype=bool)
    return PreparedScene(mean, std, g, adjacency, inputs, tuple(masks), targets, has)


@dataclass(frozen=True, eq=False)
class ModelOutput:
    """Node-level outputs of all active branches and their fusion."""

    traces: dict
    alpha: np.ndarray
    fused_evidence: np.ndarray


def forward(prepared, params):
    traces = {
        v: gcn_forward(prepared.adjacency[v], prepared.inputs[v], w) for v, w in params.views.items()
    }
    evs = [t.evidence for t in traces.values()]
    fused = fuse_evidence(evs[0], evs[1]) if len(evs) == 2 else evs[0]
    return ModelOutput(traces, fused + 1.0, fused)


def loss_and_grads(prepared, params, output, lam):
    """Objective on the training nodes and gradients for every weight."""
    idx = np.flatnonzero(prepared.train_nodes)
    C = output.alpha.shape[1]
    onehot = np.eye(C)[prepared.node_targets[idx]]
    names = list(params.views)
    traces = [output.traces[v] for v in names]
    fused = len(names) == 2
    breakdown, grads = total_loss(
        output.alpha[idx] if fused else None,
        [t.evidence[idx] + 1.0 for t in traces],
        [t.probs[idx] for t in traces],
        onehot,
        lam,
    )
    n = output.alpha.shape[0]
    g_ev = []
    for k, t in enumerate(traces):
        g = np.zeros((n, C))
        g[idx] = grads["view_alphas"][k]
        g_ev.append(g)
    if fused:
        g_fused = np.zeros((n, C))
        g_fused[idx] = grads["fused_alpha"]
        d1, d2 = fuse_evidence_backward(traces[0].evidence, traces[1].evidence, g_fused)
        g_ev[0] = g_ev[0] + d1
        g_ev[1] = g_ev[1] + d2
    flat = []
    for k, (v, t) in enumerate(zip(names, traces)):
        g_pr = np.zeros((n, C))
        g_pr[idx] = grads["view_probs"][k]
        flat += gcn_backward(t, params.views[v], g_ev[k], g_pr).arrays()
    return breakdown, flat


def predict_pixels(prepared, params):
    """Per-pixel labels, class probabilities and uncertainty ``C / S``."""
    out = forward(prepared, params)
    probs, labels, u = predict_from_alpha(out.alpha)
    Q = prepared.graph.projection
    H, W = prepared.graph.segmentation.labels.shape
    pix_probs = project_to_pixels(probs, Q).reshape(H, W, -1)
    pix_labels = prepared.graph.segmentation.labels.ravel()
    return (
        labels[pix_labels].reshape(H, W),
        pix_probs,
        u[pix_labels].reshape(H, W),
    )


def _oa(pred, labels, mask):
    n = int(mask.sum())
    return float(np.mean(pred[mask] == labels[mask])) if n else float("nan")


@dataclass(frozen=True, eq=False)
class TrainResult:
    params: object
    initial_params: object
    best_epoch: int
    log: list
    prepared: PreparedScene
    config: TrainConfig = field(default_factory=TrainConfig)


LOG_FIELDS = ("epoch", "lambda", "total", "sgcn", "distribution", "train_oa", "val_oa")


def train(scene, config=TrainConfig(), masks=None, prepared=None, log_path=None):
    """Fit both branches and keep the weights with the best validation OA.

    Ties in validation OA go to the later epoch. With no validation pixels
    the final weights are kept.
    """
    if scene.labels is None:
        raise ValueError("training needs a labeled scene")
    if prepared is None:
        prepared = prepare(scene, config, masks)
    if not prepared.train_nodes.any():
        raise ValueError("no superpixel contains a training pixel")
    dims = {v: prepared.inputs[v].shape[1] for v in config.active_views()}
    params = init_params(dims, config.hidden, scene.class_count, config.seed)
    initial = params
    opt = Adam(config.lr, config.beta1, config.beta2, config.adam_eps)
    schedule = LossConfig(config.anneal_epochs)
    train_mask, val_mask = prepared.masks[0], prepared.masks[1]
    best, best_oa, best_epoch = params, -1.0, 0
    log = []
    for epoch in range(1, config.epochs + 1):
        lam = schedule.coefficient(epoch)
        out = forward(prepared, params)
        breakdown, grads = loss_and_grads(prepared, params, out, lam)
        if not math.isfinite(breakdown.total) or not all(np.all(np.isfinite(g)) for g in grads):
            raise DivergenceError(
                f"non-finite objective at epoch {epoch}: total={breakdown.total}, "
                f"sgcn={breakdown.sgcn}, distribution={breakdown.distribution}"
            )
        params = params.with_flat(opt.step(params.flat(), grads))
        pred, _, _ = predict_pixels(prepared, params)
        tr_oa = _oa(pred, scene.labels, train_mask)
        va_oa = _oa(pred, scene.labels, val_mask)
        log.append(
            dict(epoch=epoch, **{"lambda": lam}, total=breakdown.total, sgcn=breakdown.sgcn,
                 distribution=breakdown.distribution, train_oa=tr_oa, val_oa=va_oa)
        )
        score = va_oa if val_mask.any() else float(epoch)
        if score >= best_oa:
            best, best_oa, best_epoch = params, score, epoch
    if log_path is not None:
        write_log(log_path, log)
    return TrainResult(best, initial, best_epoch, log, prepared, config)


def write_log(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(float(r[k])) if k != "epoch" else r[k] for k in LOG_FIELDS})


# ---------------------------------------------------------------------------
# Metrics


@dataclass(frozen=True, eq=False)
class ClassificationReport:
    confusion: np.ndarray
    oa: float
    aa: float
    per_class: np.ndarray
    kappa: float
    weighted_f1: float
    miou: float
    u_correct: float = float("nan")
    u_incorrect: float = float("nan")

    def as_dict(self):
        d = {
            "oa": self.oa,
            "aa": self.aa,
            "kappa": self.kappa,
            "weighted_f1": self.weighted_f1,
            "miou": self.miou,
            "u_correct": self.u_correct,
            "u_incorrect": self.u_incorrect,
        }
        for k, a in enumerate(self.per_class):
            d[f"class_{k}_accuracy"] = float(a)
        return d

    def to_text(self):
        """Human-readable block followed by nothing else; stable formatting."""
        lines = [f"{k} = {v!r}" for k, v in self.as_dict().items()]
        lines.append("confusion = " + ";".join(",".join(str(int(x)) for x in row) for row in self.confusion))
        return "\n".join(lines) + "\n"


def confusion_matrix(true, pred, class_count):
    true = np.asarray(true).ravel()
    pred = np.asarray(pred).ravel()
    cm = np.zeros((class_count, class_count), dtype=np.int64)
    np.add.at(cm, (true, pred), 1)
    return cm


def metrics_from_confusion(cm):
    """OA, AA, per-class recall, Kappa, support-weighted F1 and MIoU.

    Classes without support are left out of AA and MIoU.
    """
    cm = np.asarray(cm, dtype=float)
    total = cm.sum()
    if total == 0:
        raise ValueError("empty confusion matrix")
    diag = np.diag(cm)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    present = support > 0
    recall = np.where(present, diag / np.where(present, support, 1.0), np.nan)
    oa = diag.sum() / total
    aa = float(np.mean(recall[present]))
    pe = float(np.sum(support * predicted)) / total**2
    kappa = (oa - pe) / (1.0 - pe) if pe < 1.0 else 1.0 if oa == 1.0 else 0.0
    precision = np.where(predicted > 0, diag / np.where(predicted > 0, predicted, 1.0), 0.0)
    rec0 = np.nan_to_num(recall)
    denom = precision + rec0
    f1 = np.where(denom > 0, 2 * precision * rec0 / np.where(denom > 0, denom, 1.0), 0.0)
    weighted_f1 = float(np.sum(f1 * support) / support.sum())
    union = support + predicted - diag
    iou = np.where(union > 0, diag / np.where(union > 0, union, 1.0), 0.0)
    miou = float(np.mean(iou[present]))
    return float(oa), aa, recall, float(kappa), weighted_f1, miou


def report_from_predictions(true, pred, class_count, uncertainty=None):
    cm = confusion_matrix(true, pred, class_count)
    oa, aa, recall, kappa, f1, miou = metrics_from_confusion(cm)
    u_ok = u_bad = float("nan")
    if uncertainty is not None:
        correct = np.asarray(true).ravel() == np.asarray(pred).ravel()
        u = np.asarray(uncertainty).ravel()
        if correct.any():
            u_ok = float(u[correct].mean())
        if (~correct).any():
            u_bad = float(u[~correct].mean())
    return ClassificationReport(cm, oa, aa, recall, kappa, f1, miou, u_ok, u_bad)


def evaluate(scene, params, prepared, mask=None):
    """Report over the labeled pixels in ``mask`` (default: the test split)."""
    mask = prepared.masks[2] if mask is None else np.asarray(mask)
    mask = mask & scene.labeled_mask()
    if not mask.any():
        raise ValueError("evaluation mask selects no labeled pixels")
    pred, _, u = predict_pixels(prepared, params)
    return report_from_predictions(scene.labels[mask], pred[mask], scene.class_count, u[mask])
