"""PolSAR scene model, synthetic Wishart scenes and the PSAR file format."""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from ._binio import FormatError

PSAR_MAGIC = b"PSAR"
PSAR_VERSION = 1
_PSAR_HEADER = struct.Struct("<4sHIIHH")
FLAG_LABELS = 0x1


@dataclass(frozen=True)
class ScatteringMatrix:
    """Reciprocal 2x2 scattering matrix (S_vh = S_hv)."""

    s_hh: complex
    s_hv: complex
    s_vv: complex

    def __post_init__(self):
        if not all(np.isfinite(v) for v in (self.s_hh, self.s_hv, self.s_vv)):
            raise ValueError("scattering components must be finite")

    def lexicographic(self):
        """k = [S_hh, sqrt(2) S_hv, S_vv]."""
        return np.array([self.s_hh, np.sqrt(2.0) * self.s_hv, self.s_vv], dtype=complex)

    def covariance(self):
        k = self.lexicographic()
        return np.outer(k, k.conj())


@dataclass(frozen=True, eq=False)
class PolsarScene:
    """Per-pixel 3x3 covariance field with optional class labels.

    ``covariance`` has shape (H, W, 3, 3), complex128. ``labels`` has shape
    (H, W) with values in ``0..class_count``; ``class_count`` marks unlabeled.
    """

    covariance: np.ndarray
    class_count: int
    labels: np.ndarray = None

    def __post_init__(self):
        C = self.covariance
        if C.ndim != 4 or C.shape[2:] != (3, 3):
            raise ValueError(f"covariance field must be (H, W, 3, 3), got {C.shape}")
        if self.class_count < 1:
            raise ValueError("class_count must be >= 1")
        if self.labels is not None:
            if self.labels.shape != C.shape[:2]:
                raise ValueError("label map shape does not match the covariance field")
            if self.labels.min() < 0 or self.labels.max() > self.class_count:
                raise ValueError("labels must lie in 0..class_count")
        self.covariance.setflags(write=False)
        if self.labels is not None:
            self.labels.setflags(write=False)

    @property
    def height(self):
        return self.covariance.shape[0]

    @property
    def width(self):
        return self.covariance.shape[1]

    @property
    def unlabeled(self):
        return self.class_count

    def labeled_mask(self):
        if self.labels is None:
            return np.zeros((self.height, self.width), dtype=bool)
        return self.labels < self.class_count

    def __eq__(self, other):
        if not isinstance(other, PolsarScene):
            return NotImplemented
        same_labels = (self.labels is None and other.labels is None) or (
            self.labels is not None
            and other.labels is not None
            and np.array_equal(self.labels, other.labels)
        )
        return (
            self.class_count == other.class_count
            and self.covariance.shape == other.covariance.shape
            and np.array_equal(self.covariance, other.covariance)
            and same_labels
        )


@dataclass(frozen=True)
class Region:
    """Axis-aligned half-open rectangle ``[row0, row1) x [col0, col1)``."""

    row0: int
    row1: int
    col0: int
    col1: int
    label: int


@dataclass(frozen=True)
class SceneSpec:
    height: int
    width: int
    class_count: int
    scales: np.ndarray  # (class_count, 3, 3)
    looks: int
    regions: tuple
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def validate(self):
        if self.looks < 3:
            raise ValueError(f"need at least 3 looks for full-rank covariances, got {self.looks}")
        scales = np.asarray(self.scales)
        if scales.shape != (self.class_count, 3, 3):
            raise ValueError("scales must have shape (class_count, 3, 3)")
        for k, S in enumerate(scales):
            if np.linalg.norm(S - S.conj().T) > 1e-12 * max(np.linalg.norm(S), 1.0):
                raise ValueError(f"scale matrix {k} is not Hermitian")
            if np.linalg.eigvalsh(0.5 * (S + S.conj().T)).min() <= 0:
                raise ValueError(f"scale matrix {k} is not positive definite")
        cover = np.zeros((self.height, self.width), dtype=int)
        for r in self.regions:
            if not (0 <= r.row0 < r.row1 <= self.height and 0 <= r.col0 < r.col1 <= self.width):
                raise ValueError(f"region {r} lies outside the image")
            if not 0 <= r.label < self.class_count:
                raise ValueError(f"region label {r.label} out of range")
            cover[r.row0:r.row1, r.col0:r.col1] += 1
        if not np.all(cover == 1):
            raise ValueError("regions must tile the image exactly once")

    def label_map(self):
        labels = np.empty((self.height, self.width), dtype=np.int64)
        for r in self.regions:
            labels[r.row0:r.row1, r.col0:r.col1] = r.label
        return labels


def scene_spec_from_dict(d):
    """Build a :class:`SceneSpec` from its JSON form.

    Scale matrices are given either as full 3x3 lists (``[re, im]`` pairs
    allowed for complex entries) or as a 3-list meaning a diagonal.
    """
    known = {"height", "width", "class_count", "scales", "looks", "regions", "seed", "meta"}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown scene spec keys: {sorted(unknown)}")
    scales = []
    for s in d["scales"]:
        arr = np.asarray(s, dtype=float)
        if arr.shape == (3,):
            scales.append(np.diag(arr).astype(complex))
        elif arr.shape == (3, 3):
            scales.append(arr.astype(complex))
        elif arr.shape == (3, 3, 2):
            scales.append(arr[..., 0] + 1j * arr[..., 1])
        else:
            raise ValueError(f"cannot interpret scale matrix of shape {arr.shape}")
    regions = tuple(Region(*map(int, r)) for r in d["regions"])
    spec = SceneSpec(
        height=int(d["height"]),
        width=int(d["width"]),
        class_count=int(d["class_count"]),
        scales=np.stack(scales),
        looks=int(d["looks"]),
        regions=regions,
        seed=int(d.get("seed", 0)),
        meta=dict(d.get("meta", {})),
    )
    spec.validate()
    return spec


def load_scene_spec(path):
    with open(path) as fh:
        return scene_spec_from_dict(json.load(fh))


def synth_scene(spec):
    """Sample a multilook scene from the complex Wishart model.

    Each pixel is ``(1/L) sum_l k_l k_l^H`` with ``k_l ~ CN(0, Sigma_class)``.
    Values are rounded to complex64 so the scene survives a PSAR round trip
    unchanged.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    labels = spec.label_map()
    H, W, L = spec.height, spec.width, spec.looks
    z = (rng.standard_normal((H, W, L, 3)) + 1j * rng.standard_normal((H, W, L, 3))) / np.sqrt(2.0)
    chol = np.linalg.cholesky(np.asarray(spec.scales))
    k = np.einsum("hwij,hwlj->hwli", chol[labels], z)
    C = np.einsum("hwli,hwlj->hwij", k, k.conj()) / L
    C = 0.5 * (C + np.swapaxes(C, -1, -2).conj())
    C = C.astype(np.complex64).astype(np.complex128)
    return PolsarScene(C, spec.class_count, labels)


def scene_stats_by_class(scene):
    """Stack of pixel matrices per labeled class, for diagnostics and tests."""
    out = {}
    for k in range(scene.class_count):
        out[k] = scene.covariance[scene.labels == k]
    return out


# ---------------------------------------------------------------------------
# PSAR files


def write_scene(scene, path):
    H, W = scene.height, scene.width
    flags = FLAG_LABELS if scene.labels is not None else 0
    payload = np.ascontiguousarray(scene.covariance, dtype="<c8")
    with open(path, "wb") as fh:
        fh.write(_PSAR_HEADER.pack(PSAR_MAGIC, PSAR_VERSION, H, W, scene.class_count, flags))
        fh.write(payload.tobytes(order="C"))
        if scene.labels is not None:
            fh.write(np.ascontiguousarray(scene.labels, dtype="<u2").tobytes(order="C"))


def psar_payload_size(height, width):
    """Byte size of the covariance payload declared by a PSAR header."""
    return height * width * 9 * 8


def read_scene(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _PSAR_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, H, W, n_classes, flags = _PSAR_HEADER.unpack_from(raw)
    if magic != PSAR_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != PSAR_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    size = psar_payload_size(H, W)
    label_size = H * W * 2 if flags & FLAG_LABELS else 0
    body = len(raw) - _PSAR_HEADER.size
    if body < size + label_size:
        raise FormatError(f"{path}: truncated payload ({body} of {size + label_size} bytes)")
    if body > size + label_size:
        raise FormatError(f"{path}: {body - size - label_size} trailing bytes (dimension mismatch)")
    off = _PSAR_HEADER.size
    C = np.frombuffer(raw, dtype="<c8", count=H * W * 9, offset=off).reshape(H, W, 3, 3)
    C = C.astype(np.complex128)
    C = 0.5 * (C + np.swapaxes(C, -1, -2).conj())
    labels = None
    if flags & FLAG_LABELS:
        labels = np.frombuffer(raw, dtype="<u2", count=H * W, offset=off + size)
        labels = labels.reshape(H, W).astype(np.int64)
        if labels.max(initial=0) > n_classes:
            raise FormatError(f"{path}: label value exceeds class count")
    return PolsarScene(C, n_classes, labels)


def read_pgm_labels(path, class_count):
    """Read a binary (P5) PGM label map; values >= class_count are unlabeled."""
    with open(path, "rb") as fh:
        raw = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos])
    pos += 1
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval < class_count:
        raise FormatError(f"{path}: maxval {maxval} < class count {class_count}")
    dtype = ">u2" if maxval > 255 else "u1"
    n = width * height * np.dtype(dtype).itemsize
    if len(raw) - pos < n:
        raise FormatError(f"{path}: truncated PGM raster")
    labels = np.frombuffer(raw, dtype=dtype, count=width * height, offset=pos)
    labels = labels.reshape(height, width).astype(np.int64)
    return np.minimum(labels, class_count)


def write_pgm(path, image, maxval=None):
    image = np.asarray(image)
    maxval = int(image.max(initial=0)) if maxval is None else int(maxval)
    maxval = max(maxval, 1)
    dtype = ">u2" if maxval > 255 else "u1"
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n%d\n" % (image.shape[1], image.shape[0], maxval))
        fh.write(np.ascontiguousarray(image, dtype=dtype).tobytes())


# ---------------------------------------------------------------------------
# Pauli RGB


def pauli_powers(C):
    """|S_hh - S_vv|^2, |2 S_hv|^2, |S_hh + S_vv|^2 from covariance entries."""
    C = np.asarray(C)
    c11 = C[..., 0, 0].real
    c22 = C[..., 1, 1].real
    c33 = C[..., 2, 2].real
    re13 = C[..., 0, 2].real
    return np.stack([c11 + c33 - 2 * re13, 2 * c22, c11 + c33 + 2 * re13], axis=-1)


def pauli_rgb(scene, percentile=99.0):
    """Pauli pseudo-colour image in [0, 1], shape (H, W, 3).

    Each channel is divided by its ``percentile``-th value over the image and
    clipped; an all-zero channel stays zero.
    """
    powers = np.maximum(pauli_powers(scene.covariance), 0.0)
    out = np.zeros_like(powers)
    for ch in range(3):
        ref = np.percentile(powers[..., ch], percentile)
        if ref > 0:
            out[..., ch] = np.clip(powers[..., ch] / ref, 0.0, 1.0)
    return out
