"""Toy datasets, IDX ingestion and labeled/unlabeled/validation/test splitting."""

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.datasets import make_moons

from .errors import ConfigError, IdxParseError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
OVERLAP_MODES = ("overlapping", "disjoint-classes")


@dataclass(frozen=True)
class Dataset:
    samples: np.ndarray
    labels: np.ndarray
    n_classes: int
    kind: str = "vector"

    def __post_init__(self):
        if self.kind not in ("vector", "image"):
            raise ConfigError(f"unknown dataset kind {self.kind!r}")
        expected_ndim = 2 if self.kind == "vector" else 3
        if self.samples.ndim != expected_ndim:
            raise ConfigError(f"{self.kind} dataset needs {expected_ndim}-D samples, got {self.samples.shape}")
        if len(self.samples) != len(self.labels):
            raise ConfigError(f"{len(self.samples)} samples but {len(self.labels)} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ConfigError(f"labels must lie in [0, {self.n_classes})")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.samples[idx], self.labels[idx], self.n_classes, self.kind)


@dataclass(frozen=True)
class SslSplit:
    labeled: np.ndarray
    unlabeled: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    overlap_mode: str = "overlapping"
    labeled_classes: tuple = ()

    def sets(self):
        return {"labeled": self.labeled, "unlabeled": self.unlabeled,
                "validation": self.validation, "test": self.test}


def make_two_moons(n, noise=0.1, seed=0):
    """Two interleaved half-circles; class 0 is the upper arc."""
    if n < 2:
        raise ConfigError("two moons needs n >= 2", key="n")
    x, y = make_moons(n_samples=n, noise=noise or None, random_state=seed)
    return Dataset(x.astype(np.float64), y.astype(np.int64), 2, "vector")


# glyph painters on a size x size canvas; (cy, cx) is the jittered centre,
# r the half-extent
def _hbar(yy, xx, cy, cx, r):
    return (np.abs(yy - cy) <= max(1, r // 3)) & (np.abs(xx - cx) <= r)


def _vbar(yy, xx, cy, cx, r):
    return _hbar(xx, yy, cx, cy, r)


def _cross(yy, xx, cy, cx, r):
    return _hbar(yy, xx, cy, cx, r) | _vbar(yy, xx, cy, cx, r)


def _box(yy, xx, cy, cx, r):
    inside = (np.abs(yy - cy) <= r) & (np.abs(xx - cx) <= r)
    core = (np.abs(yy - cy) <= r - 1) & (np.abs(xx - cx) <= r - 1)
    return inside & ~core


def _disk(yy, xx, cy, cx, r):
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def _diagonal(yy, xx, cy, cx, r):
    return (np.abs((yy - cy) - (xx - cx)) <= 1) & (np.abs(yy - cy) <= r)


def _anti_diagonal(yy, xx, cy, cx, r):
    return (np.abs((yy - cy) + (xx - cx)) <= 1) & (np.abs(yy - cy) <= r)


def _corner(yy, xx, cy, cx, r):
    left = (np.abs(xx - (cx - r)) <= 0) & (np.abs(yy - cy) <= r)
    bottom = (np.abs(yy - (cy + r)) <= 0) & (np.abs(xx - cx) <= r)
    return left | bottom


GLYPHS = (_hbar, _vbar, _cross, _box, _disk, _diagonal, _anti_diagonal, _corner)


def make_shapes(n, size=12, classes=4, seed=0):
    """Grayscale glyph images, one glyph family per class, balanced.

    Position, extent and intensity are jittered and low-amplitude noise is
    added; pixel values are clipped to [0, 1].
    """
    if size < 8:
        raise ConfigError(f"size must be >= 8, got {size}", key="size")
    if not 2 <= classes <= len(GLYPHS):
        raise ConfigError(f"classes must lie in [2, {len(GLYPHS)}], got {classes}", key="classes")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % classes)
    yy, xx = np.mgrid[0:size, 0:size]
    images = np.zeros((n, size, size))
    half = size // 2
    for i, c in enumerate(labels):
        r = int(rng.integers(size // 4, size // 3 + 1))
        cy = half + int(rng.integers(-1, 2))
        cx = half + int(rng.integers(-1, 2))
        intensity = rng.uniform(0.6, 1.0)
        images[i] = GLYPHS[c](yy, xx, cy, cx, r) * intensity
    images += rng.normal(0.0, 0.05, size=images.shape)
    return Dataset(np.clip(images, 0.0, 1.0), labels.astype(np.int64), classes, "image")


def _read_bytes(path):
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def _parse_idx(raw, path, magic, ndim):
    if len(raw) < 4:
        raise IdxParseError("file shorter than the magic number", path, 0)
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise IdxParseError(f"bad magic 0x{found:08x}, expected 0x{magic:08x}", path, 0)
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise IdxParseError("truncated dimension header", path, len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header_len])
    count = int(np.prod(dims))
    if len(raw) - header_len < count:
        raise IdxParseError(f"truncated payload: need {count} bytes, have {len(raw) - header_len}",
                            path, len(raw))
    if len(raw) - header_len > count:
        raise IdxParseError("trailing bytes after payload", path, header_len + count)
    data = np.frombuffer(raw, dtype=np.uint8, count=count, offset=header_len)
    return data.reshape(dims)


def load_idx(images_path, labels_path, n_classes=None):
    """Read an IDX image/label pair (optionally gzipped); pixels scaled to [0, 1]."""
    images = _parse_idx(_read_bytes(images_path), images_path, IDX_IMAGES_MAGIC, 3)
    labels = _parse_idx(_read_bytes(labels_path), labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise IdxParseError(f"count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels",
                            labels_path, 4)
    labels = labels.astype(np.int64)
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if labels.size else 1
    return Dataset(images.astype(np.float64) / 255.0, labels, n_classes, "image")


def write_idx(images, labels, images_path, labels_path):
    """Write uint8 images [n x h x w] and labels [n] as an IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def _stratified_take(idx, labels, fraction, rng):
    """Take round(fraction * count) indices from every class."""
    taken = []
    for c in np.unique(labels[idx]):
        members = rng.permutation(idx[labels[idx] == c])
        taken.append(members[:int(round(fraction * members.size))])
    return np.sort(np.concatenate(taken)) if taken else np.zeros(0, dtype=np.int64)


def _quota_pick(pool, labels, classes, n, rng):
    counts = {int(c): int(np.sum(labels[pool] == c)) for c in classes}
    k = len(classes)
    base, extra = divmod(n, k)
    bonus = set(rng.permutation(k)[:extra].tolist())
    quota = {int(c): base + (i in bonus) for i, c in enumerate(classes)}
    short = [c for c in quota if quota[c] > counts[c]]
    if short:
        avail = ", ".join(f"class {c}: {counts[c]} available / {quota[c]} needed" for c in quota)
        raise ConfigError(f"cannot draw {n} stratified labels ({avail})", key="n_labeled")
    picked = []
    for c in classes:
        members = rng.permutation(pool[labels[pool] == c])
        picked.append(members[:quota[int(c)]])
    return np.sort(np.concatenate(picked)) if picked else np.zeros(0, dtype=np.int64)


def split_ssl(ds, n_labeled, overlap_mode="overlapping", seed=0, val_frac=0.1, test_frac=0.0):
    """Carve test and validation sets, then a stratified labeled subset.

    In ``disjoint-classes`` mode the lower half of the class ids forms the
    labeled pool and the upper half the unlabeled pool; labeled-pool samples
    not chosen as labels are dropped.
    """
    if overlap_mode not in OVERLAP_MODES:
        raise ConfigError(f"unknown overlap mode {overlap_mode!r}", key="overlap_mode")
    for name, v in (("val_frac", val_frac), ("test_frac", test_frac)):
        if not 0.0 <= v < 1.0:
            raise ConfigError(f"must lie in [0, 1), got {v}", key=name)
    if n_labeled < 1:
        raise ConfigError("n_labeled must be >= 1", key="n_labeled")
    rng = np.random.default_rng(seed)
    labels = ds.labels
    everything = np.arange(len(ds))
    test = _stratified_take(everything, labels, test_frac, rng)
    rest = np.setdiff1d(everything, test)
    val = _stratified_take(rest, labels, val_frac / (1.0 - test_frac), rng) if val_frac else rest[:0]
    train = np.setdiff1d(rest, val)
    if n_labeled > train.size:
        raise ConfigError(f"n_labeled={n_labeled} exceeds the {train.size} training samples",
                          key="n_labeled")

    all_classes = np.arange(ds.n_classes)
    if overlap_mode == "overlapping":
        present = np.unique(labels[train])
        lab = _quota_pick(train, labels, present, n_labeled, rng)
        unl = np.setdiff1d(train, lab)
        lab_classes = tuple(int(c) for c in present)
    else:
        if ds.n_classes < 4:
            raise ConfigError("disjoint-classes mode needs at least 4 classes", key="overlap_mode")
        lab_pool_classes = all_classes[:ds.n_classes // 2]
        in_lab_pool = np.isin(labels[train], lab_pool_classes)
        lab = _quota_pick(train[in_lab_pool], labels, lab_pool_classes, n_labeled, rng)
        unl = train[~in_lab_pool]
        lab_classes = tuple(int(c) for c in lab_pool_classes)
    return SslSplit(lab, unl, val, test, overlap_mode, lab_classes)
