"""Datasets: synthetic families, MNIST IDX files, embedding CSVs, splits."""

from __future__ import annotations

import csv
import gzip
import json
import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

FAMILIES = ("smooth", "piecewise", "sparse", "oscillatory", "entangled")
TARGET_KINDS = ("class", "ordinal", "regression")

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049


class IdxFormatError(ValueError):
    pass


class CsvFormatError(ValueError):
    pass


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    kind: str = "regression"
    meta: dict = field(default_factory=dict)
    n_classes: int | None = None

    def __post_init__(self):
        if self.kind not in TARGET_KINDS:
            raise ValueError(f"unknown target kind {self.kind!r}")
        if len(self.X) != len(self.y):
            raise ValueError(f"{len(self.X)} rows but {len(self.y)} targets")
        if self.kind == "class" and self.n_classes is not None and len(self.y):
            if self.y.min() < 0 or self.y.max() >= self.n_classes:
                raise ValueError("class label out of range")
        if self.kind == "ordinal" and self.n_classes is not None and len(self.y):
            if self.y.min() < 1 or self.y.max() > self.n_classes:
                raise ValueError("ordinal rating out of range")

    def __len__(self) -> int:
        return len(self.X)

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        return replace(self, X=self.X[idx], y=self.y[idx], meta=dict(self.meta))

    def write_meta(self, path) -> None:
        meta = dict(self.meta, N=len(self), D=self.dim, kind=self.kind)
        with open(path, "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# synthetic families

DEFAULT_FREQ = {"smooth": 0.5, "sparse": 0.5, "oscillatory": 5.0}


@dataclass(frozen=True)
class SyntheticFamily:
    family: str
    D: int = 10
    N: int = 4096
    seed: int = 0
    freq_scale: float | None = None
    active_fraction: float = 0.2
    entangler_width: int = 16
    inner_product: bool = False
    weights: tuple | None = None  # overrides the sampled frequencies when given

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.D < 1 or self.N < 1:
            raise ValueError("D and N must be >= 1")


def n_active_dims(D: int, fraction: float = 0.2) -> int:
    return min(D, max(2, math.ceil(fraction * D - 1e-9)))


def _sin_signal(X: np.ndarray, w: np.ndarray, inner_product: bool) -> np.ndarray:
    if inner_product:
        return np.sin(X @ w)
    return np.sum(np.sin(X * w), axis=1)


def gen_synthetic(spec: SyntheticFamily) -> Dataset:
    """Draw X ~ U[-1, 1]^D and family-specific targets, standardized."""
    rng = np.random.default_rng(spec.seed)
    D, N = spec.D, spec.N
    X = rng.uniform(-1.0, 1.0, size=(N, D))
    meta = {"family": spec.family, "seed": spec.seed, "D": D, "N": N,
            "input_distribution": "uniform[-1,1]"}
    fam = spec.family
    if fam in ("smooth", "oscillatory"):
        scale = spec.freq_scale if spec.freq_scale is not None else DEFAULT_FREQ[fam]
        w = rng.normal(0.0, scale, size=D)
        if spec.weights is not None:
            w = np.asarray(spec.weights, dtype=np.float64)
        y = _sin_signal(X, w, spec.inner_product)
        meta["freq_scale"] = scale
    elif fam == "piecewise":
        tau = rng.uniform(-0.5, 0.5, size=D)
        y = np.sum(np.abs(X - tau), axis=1)
    elif fam == "sparse":
        k = n_active_dims(D, spec.active_fraction)
        active = np.sort(rng.choice(D, size=k, replace=False))
        scale = spec.freq_scale if spec.freq_scale is not None else DEFAULT_FREQ[fam]
        w = rng.normal(0.0, scale, size=k)
        if spec.weights is not None:
            w = np.asarray(spec.weights, dtype=np.float64)
        y = _sin_signal(X[:, active], w, spec.inner_product)
        meta["active_dims"] = [int(i) for i in active]
    else:  # entangled
        H = spec.entangler_width
        V1 = rng.normal(size=(H, D)) / math.sqrt(D)
        V2 = rng.normal(size=H) / math.sqrt(H)
        y = np.tanh(X @ V1.T) @ V2
    y = y - y.mean()
    sd = y.std()
    if sd > 0:
        y = y / sd
    meta["standardized"] = True
    return Dataset(X, y, "regression", meta)


def gen_ordinal_fixture(N: int = 2000, D: int = 16, K: int = 5, noise: float = 0.3,
                        seed: int = 0) -> Dataset:
    """Ratings 1..K whose latent score ``rating + N(0, noise)`` is linearly embedded in D dims."""
    rng = np.random.default_rng(seed)
    ratings = rng.integers(1, K + 1, size=N)
    latent = ratings + rng.normal(0.0, noise, size=N)
    direction = rng.normal(size=D)
    direction /= np.linalg.norm(direction)
    centred = (latent - (K + 1) / 2.0) / ((K - 1) / 2.0)
    X = np.outer(centred, direction) + rng.normal(0.0, 0.05, size=(N, D))
    meta = {"source": "ordinal_fixture", "seed": seed, "noise": noise, "D": D, "N": N}
    return Dataset(X, ratings, "ordinal", meta, n_classes=K)


# ---------------------------------------------------------------------------
# IDX files


def _read_bytes(path) -> bytes:
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as fh:
        return fh.read()


def _idx_header(buf: bytes, magic: int, ndims: int, path) -> tuple[int, ...]:
    need = 4 + 4 * ndims
    if len(buf) < need:
        raise IdxFormatError(f"{path}: truncated header, {len(buf)} bytes at offset 0 (need {need})")
    got = struct.unpack(">I", buf[:4])[0]
    if got != magic:
        raise IdxFormatError(f"{path}: bad magic {got} at offset 0 (expected {magic})")
    return struct.unpack(f">{ndims}I", buf[4:need])


def read_idx_images(path, limit: int | None = None) -> np.ndarray:
    buf = _read_bytes(path)
    n, rows, cols = _idx_header(buf, IDX_IMAGES_MAGIC, 3, path)
    if limit is not None:
        n = min(n, limit)
    size = n * rows * cols
    if len(buf) < 16 + size:
        raise IdxFormatError(f"{path}: truncated pixel data, file ends at offset {len(buf)} "
                             f"(need {16 + size})")
    pixels = np.frombuffer(buf, dtype=np.uint8, count=size, offset=16)
    return pixels.reshape(n, rows * cols)


def read_idx_labels(path, limit: int | None = None) -> np.ndarray:
    buf = _read_bytes(path)
    (n,) = _idx_header(buf, IDX_LABELS_MAGIC, 1, path)
    if limit is not None:
        n = min(n, limit)
    if len(buf) < 8 + n:
        raise IdxFormatError(f"{path}: truncated labels, file ends at offset {len(buf)} "
                             f"(need {8 + n})")
    return np.frombuffer(buf, dtype=np.uint8, count=n, offset=8).astype(np.int64)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path,
              rows: int = 28, cols: int = 28) -> None:
    images = np.asarray(images, dtype=np.uint8).reshape(len(images), rows * cols)
    labels = np.asarray(labels, dtype=np.uint8)
    opener = gzip.open if str(images_path).endswith(".gz") else open
    with opener(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, len(images), rows, cols))
        fh.write(images.tobytes())
    opener = gzip.open if str(labels_path).endswith(".gz") else open
    with opener(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        fh.write(labels.tobytes())


def load_idx(images_path, labels_path, limit: int | None = None) -> Dataset:
    """Load an IDX image/label pair; pixels are scaled to [0, 1]."""
    labels = read_idx_labels(labels_path, limit)
    images = read_idx_images(images_path, limit)
    if len(images) != len(labels):
        raise IdxFormatError(f"{len(images)} images but {len(labels)} labels")
    X = images.astype(np.float64) / 255.0
    meta = {"source": str(images_path), "labels": str(labels_path), "limit": limit}
    return Dataset(X, labels, "class", meta, n_classes=10)


# ---------------------------------------------------------------------------
# embedding CSVs


def load_embedding_csv(path, n_classes: int = 5) -> Dataset:
    """Read ``label,f0,...,f{D-1}`` rows of precomputed document vectors."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(f"{path}: empty file") from None
        D = len(header) - 1
        expected = ["label"] + [f"f{i}" for i in range(D)]
        if D < 1 or [h.strip() for h in header] != expected:
            raise CsvFormatError(f"{path}: header must be label,f0,...,f{{D-1}}")
        labels, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != D + 1:
                raise CsvFormatError(f"{path}:{lineno}: expected {D + 1} cells, got {len(row)}")
            try:
                label = int(row[0])
                feats = [float(c) for c in row[1:]]
            except ValueError as exc:
                raise CsvFormatError(f"{path}:{lineno}: non-numeric cell ({exc})") from None
            if not 1 <= label <= n_classes:
                raise CsvFormatError(f"{path}:{lineno}: label {label} outside 1..{n_classes}")
            labels.append(label)
            rows.append(feats)
    X = np.asarray(rows, dtype=np.float64).reshape(len(rows), D)
    return Dataset(X, np.asarray(labels, dtype=np.int64), "ordinal",
                   {"source": str(path)}, n_classes=n_classes)


def write_embedding_csv(ds: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label"] + [f"f{i}" for i in range(ds.dim)])
        for label, row in zip(ds.y, ds.X):
            w.writerow([int(label)] + [repr(float(v)) for v in row])


# ---------------------------------------------------------------------------
# splits


def split(ds: Dataset, fractions=(0.8, 0.1, 0.1), seed: int = 0):
    """Seeded permutation sliced into contiguous train/val/test blocks."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or min(fractions) <= 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three positive numbers summing to 1, got {fractions}")
    n = len(ds)
    n_train = int(round(n * fractions[0]))
    n_val = int(round(n * fractions[1]))
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) <= 0:
        raise ValueError(f"split of {n} rows gives sizes {n_train}/{n_val}/{n_test}")
    perm = np.random.default_rng(seed).permutation(n)
    parts = (perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:])
    return tuple(ds.subset(p) for p in parts)
