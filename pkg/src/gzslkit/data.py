"""Dataset model for zero-shot learning on precomputed features.

Classes are integer ids 1..S+U.  Ids 1..S are seen (training features exist),
ids S+1..S+U are unseen (descriptors only; features appear only in the unseen
test partition).  A synthetic world factory produces desk-scale benchmarks
whose ground truth is known exactly, so pipeline claims can be checked against
a nearest-class-mean oracle.
"""

import io
import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, MagicMismatch, ShapeError, SplitViolation
from .fileio import atomic_write_bytes, atomic_write_text
from .rng import Stream, stream
from .validation import as_float_matrix, as_label_vector

GZB_MAGIC = b"GZB1"
GZB_VERSION = 1

_CSV_FILES = ("descriptors.csv", "train.csv", "test_seen.csv", "test_unseen.csv")


@dataclass(frozen=True)
class SemanticTable:
    """Per-class semantic descriptors, seen classes first."""

    descriptors: np.ndarray  # (S+U, d_a) float32
    seen_count: int
    unseen_count: int

    def validate(self) -> "SemanticTable":
        desc = as_float_matrix(self.descriptors, "descriptors")
        if self.seen_count < 1 or self.unseen_count < 1:
            raise DomainError(
                f"need at least one seen and one unseen class, got "
                f"{self.seen_count}/{self.unseen_count}"
            )
        if desc.shape[0] != self.seen_count + self.unseen_count:
            raise ShapeError(
                f"descriptor table has {desc.shape[0]} rows, expected "
                f"{self.seen_count + self.unseen_count}"
            )
        if np.unique(desc, axis=0).shape[0] != desc.shape[0]:
            raise DomainError("descriptor table contains duplicate rows")
        return self

    @property
    def n_classes(self) -> int:
        return self.seen_count + self.unseen_count

    @property
    def d_a(self) -> int:
        return self.descriptors.shape[1]

    @property
    def seen_ids(self) -> np.ndarray:
        return np.arange(1, self.seen_count + 1, dtype=np.int64)

    @property
    def unseen_ids(self) -> np.ndarray:
        return np.arange(self.seen_count + 1, self.n_classes + 1, dtype=np.int64)

    def seen_descriptors(self) -> np.ndarray:
        return self.descriptors[: self.seen_count]

    def unseen_descriptors(self) -> np.ndarray:
        return self.descriptors[self.seen_count:]

    def rows_for(self, labels) -> np.ndarray:
        """Descriptor rows for a vector of class ids."""
        y = as_label_vector(labels, "labels")
        if y.size and y.max() > self.n_classes:
            raise SplitViolation(f"class id {y.max()} outside 1..{self.n_classes}")
        return self.descriptors[y - 1]


@dataclass(frozen=True)
class FeatureDataset:
    """Feature partitions plus the semantic table.

    train holds seen-class rows only; test_seen holds held-out seen-class
    rows; test_unseen holds unseen-class rows.  Violations are hard errors,
    not warnings.
    """

    semantic: SemanticTable
    train_x: np.ndarray
    train_y: np.ndarray
    test_seen_x: np.ndarray
    test_seen_y: np.ndarray
    test_unseen_x: np.ndarray
    test_unseen_y: np.ndarray

    def validate(self) -> "FeatureDataset":
        self.semantic.validate()
        s = self.semantic.seen_count
        u = self.semantic.unseen_count
        d_x = self.train_x.shape[1] if self.train_x.ndim == 2 else -1
        for name, x, y in (
            ("train", self.train_x, self.train_y),
            ("test_seen", self.test_seen_x, self.test_seen_y),
            ("test_unseen", self.test_unseen_x, self.test_unseen_y),
        ):
            x = as_float_matrix(x, f"{name}_x")
            y = as_label_vector(y, f"{name}_y", n_rows=x.shape[0])
            if x.shape[1] != d_x:
                raise ShapeError(
                    f"{name}_x has {x.shape[1]} columns, train_x has {d_x}"
                )
            if y.size and y.max() > s + u:
                raise SplitViolation(f"{name}_y references class {y.max()} > {s + u}")
        if self.train_y.size and self.train_y.max() > s:
            raise SplitViolation("train_y contains an unseen class id")
        if self.test_seen_y.size and self.test_seen_y.max() > s:
            raise SplitViolation("test_seen_y contains an unseen class id")
        if self.test_unseen_y.size and self.test_unseen_y.min() <= s:
            raise SplitViolation("test_unseen_y contains a seen class id")
        return self

    @property
    def d_x(self) -> int:
        return self.train_x.shape[1]

    @property
    def n_train(self) -> int:
        return self.train_x.shape[0]


def _as_ds_arrays(semantic, train_x, train_y, test_seen_x, test_seen_y,
                  test_unseen_x, test_unseen_y) -> FeatureDataset:
    d_x = np.asarray(train_x).shape[1]
    return FeatureDataset(
        semantic=semantic,
        train_x=as_float_matrix(train_x, "train_x"),
        train_y=as_label_vector(train_y, "train_y"),
        test_seen_x=as_float_matrix(np.asarray(test_seen_x, dtype=np.float32).reshape(-1, d_x), "test_seen_x"),
        test_seen_y=as_label_vector(test_seen_y, "test_seen_y"),
        test_unseen_x=as_float_matrix(np.asarray(test_unseen_x, dtype=np.float32).reshape(-1, d_x), "test_unseen_x"),
        test_unseen_y=as_label_vector(test_unseen_y, "test_unseen_y"),
    ).validate()


def make_dataset(semantic, train_x, train_y, test_seen_x=None, test_seen_y=None,
                 test_unseen_x=None, test_unseen_y=None) -> FeatureDataset:
    """Convenience constructor; missing test partitions become empty."""
    d_x = np.asarray(train_x).shape[1]
    empty_x = np.zeros((0, d_x), dtype=np.float32)
    empty_y = np.zeros((0,), dtype=np.int64)
    return _as_ds_arrays(
        semantic, train_x, train_y,
        empty_x if test_seen_x is None else test_seen_x,
        empty_y if test_seen_y is None else test_seen_y,
        empty_x if test_unseen_x is None else test_unseen_x,
        empty_y if test_unseen_y is None else test_unseen_y,
    )


# ---------------------------------------------------------------------------
# synthetic world

@dataclass(frozen=True)
class SyntheticWorldSpec:
    """Recipe for a synthetic benchmark with known ground truth.

    Class descriptors are uniform on [0,1]^d_a; each class's feature mean is
    an affine image of its descriptor; instances are mean plus isotropic
    Gaussian noise.  Everything is a pure function of the seed.
    """

    seen_count: int = 7
    unseen_count: int = 3
    d_x: int = 32
    d_a: int = 8
    n_per_class: int = 100
    noise_sigma: float = 0.25
    seed: int = 0
    class_map: tuple | None = None  # (M: d_a x d_x, b: d_x) overriding the seeded draw

    def validate(self) -> "SyntheticWorldSpec":
        if self.seen_count < 1 or self.unseen_count < 1:
            raise DomainError("need at least one seen and one unseen class")
        if not (1 <= self.d_a <= self.d_x):
            raise DomainError(f"need 1 <= d_a <= d_x, got d_a={self.d_a}, d_x={self.d_x}")
        if self.n_per_class < 2:
            raise DomainError("n_per_class must be at least 2 to split train/test")
        if self.noise_sigma < 0:
            raise DomainError("noise_sigma must be nonnegative")
        return self


def _world_map(spec: SyntheticWorldSpec):
    if spec.class_map is not None:
        m, b = spec.class_map
        return as_float_matrix(m, "class_map matrix", n_cols=spec.d_x), \
            np.asarray(b, dtype=np.float32).reshape(-1)
    rng = stream(spec.seed, Stream.WORLD, 1)
    m = rng.normal(0.0, 1.0 / np.sqrt(spec.d_a), size=(spec.d_a, spec.d_x))
    # positive offset keeps feature entries almost surely nonnegative
    b = rng.uniform(1.5, 2.5, size=spec.d_x)
    return m.astype(np.float32), b.astype(np.float32)


def world_descriptors(spec: SyntheticWorldSpec) -> np.ndarray:
    rng = stream(spec.seed, Stream.WORLD, 0)
    return rng.uniform(0.0, 1.0, size=(spec.seen_count + spec.unseen_count, spec.d_a)).astype(np.float32)


def true_class_means(spec: SyntheticWorldSpec) -> np.ndarray:
    """The exact feature mean of every class, rows ordered by class id."""
    spec.validate()
    m, b = _world_map(spec)
    return (world_descriptors(spec).astype(np.float64) @ m.astype(np.float64)
            + b.astype(np.float64)).astype(np.float32)


def make_synthetic_world(spec: SyntheticWorldSpec) -> FeatureDataset:
    """Build the dataset: 80/20 train/test split for seen classes,
    all unseen instances in test_unseen."""
    spec.validate()
    desc = world_descriptors(spec)
    means = true_class_means(spec)
    s, u, n = spec.seen_count, spec.unseen_count, spec.n_per_class
    n_tr = min(max(int(n * 0.8), 1), n - 1)
    train_x, train_y = [], []
    test_seen_x, test_seen_y = [], []
    test_unseen_x, test_unseen_y = [], []
    for c in range(1, s + u + 1):
        rng = stream(spec.seed, Stream.WORLD, 2 + c)
        noise = rng.normal(0.0, 1.0, size=(n, spec.d_x)).astype(np.float32)
        x = means[c - 1][None, :] + np.float32(spec.noise_sigma) * noise
        if c <= s:
            train_x.append(x[:n_tr])
            train_y.append(np.full(n_tr, c, dtype=np.int64))
            test_seen_x.append(x[n_tr:])
            test_seen_y.append(np.full(n - n_tr, c, dtype=np.int64))
        else:
            test_unseen_x.append(x)
            test_unseen_y.append(np.full(n, c, dtype=np.int64))
    semantic = SemanticTable(desc, s, u).validate()
    return _as_ds_arrays(
        semantic,
        np.concatenate(train_x), np.concatenate(train_y),
        np.concatenate(test_seen_x), np.concatenate(test_seen_y),
        np.concatenate(test_unseen_x), np.concatenate(test_unseen_y),
    )


def nearest_mean_top1(x, y, means, class_ids) -> float:
    """Per-class top-1 of the nearest-class-mean rule; the world oracle."""
    x = as_float_matrix(x, "x")
    means = as_float_matrix(means, "means", n_cols=x.shape[1])
    ids = as_label_vector(class_ids, "class_ids", n_rows=means.shape[0])
    d2 = (
        np.sum(x.astype(np.float64) ** 2, axis=1, keepdims=True)
        - 2.0 * x.astype(np.float64) @ means.astype(np.float64).T
        + np.sum(means.astype(np.float64) ** 2, axis=1)[None, :]
    )
    pred = ids[np.argmin(d2, axis=1)]
    return per_class_top1(pred, y, ids)


# ---------------------------------------------------------------------------
# evaluation primitive

def per_class_top1(pred, truth, class_set) -> float:
    """Mean over classes of within-class accuracy.

    Classes in class_set that never occur in truth are excluded from the
    mean; an empty class_set (or no overlap at all) is a domain error.
    """
    pred = as_label_vector(pred, "pred")
    truth = as_label_vector(truth, "truth", n_rows=pred.shape[0])
    classes = np.unique(as_label_vector(np.asarray(class_set).reshape(-1), "class_set"))
    if classes.size == 0:
        raise DomainError("class_set is empty")
    accs = []
    for c in classes:
        mask = truth == c
        if not mask.any():
            continue
        accs.append(float(np.mean(pred[mask] == c)))
    if not accs:
        raise DomainError("no class from class_set occurs in truth")
    return float(np.mean(accs, dtype=np.float64))


# ---------------------------------------------------------------------------
# gzb binary format

def _pack_matrix(x: np.ndarray) -> bytes:
    return np.ascontiguousarray(x, dtype="<f4").tobytes()


def _pack_labels(y: np.ndarray) -> bytes:
    return np.ascontiguousarray(y, dtype="<u4").tobytes()


def dataset_to_gzb_bytes(ds: FeatureDataset) -> bytes:
    ds.validate()
    s, u = ds.semantic.seen_count, ds.semantic.unseen_count
    d_x, d_a = ds.d_x, ds.semantic.d_a
    buf = io.BytesIO()
    buf.write(GZB_MAGIC)
    buf.write(struct.pack(
        "<8I", GZB_VERSION, s, u, d_x, d_a,
        ds.train_x.shape[0], ds.test_seen_x.shape[0], ds.test_unseen_x.shape[0],
    ))
    buf.write(_pack_matrix(ds.semantic.descriptors))
    buf.write(_pack_matrix(ds.train_x))
    buf.write(_pack_labels(ds.train_y))
    buf.write(_pack_matrix(ds.test_seen_x))
    buf.write(_pack_labels(ds.test_seen_y))
    buf.write(_pack_matrix(ds.test_unseen_x))
    buf.write(_pack_labels(ds.test_unseen_y))
    return buf.getvalue()


def dataset_from_gzb_bytes(data: bytes) -> FeatureDataset:
    if len(data) < 4 + 32:
        raise MagicMismatch("file too short for a gzb header")
    if data[:4] != GZB_MAGIC:
        raise MagicMismatch(f"bad magic {data[:4]!r}, expected {GZB_MAGIC!r}")
    version, s, u, d_x, d_a, n_tr, n_ts, n_tu = struct.unpack_from("<8I", data, 4)
    if version != GZB_VERSION:
        raise MagicMismatch(f"unsupported gzb version {version}")
    off = 4 + 32

    def take_matrix(rows, cols, name):
        nonlocal off
        nbytes = rows * cols * 4
        if off + nbytes > len(data):
            raise ShapeError(f"gzb payload truncated while reading {name}")
        arr = np.frombuffer(data, dtype="<f4", count=rows * cols, offset=off).reshape(rows, cols)
        off += nbytes
        return np.ascontiguousarray(arr, dtype=np.float32)

    def take_labels(rows, name):
        nonlocal off
        nbytes = rows * 4
        if off + nbytes > len(data):
            raise ShapeError(f"gzb payload truncated while reading {name}")
        arr = np.frombuffer(data, dtype="<u4", count=rows, offset=off)
        off += nbytes
        return arr.astype(np.int64)

    desc = take_matrix(s + u, d_a, "descriptors")
    train_x = take_matrix(n_tr, d_x, "train_x")
    train_y = take_labels(n_tr, "train_y")
    test_seen_x = take_matrix(n_ts, d_x, "test_seen_x")
    test_seen_y = take_labels(n_ts, "test_seen_y")
    test_unseen_x = take_matrix(n_tu, d_x, "test_unseen_x")
    test_unseen_y = take_labels(n_tu, "test_unseen_y")
    if off != len(data):
        raise ShapeError(f"gzb file has {len(data) - off} trailing bytes")
    semantic = SemanticTable(desc, int(s), int(u))
    return FeatureDataset(
        semantic, train_x, train_y, test_seen_x, test_seen_y, test_unseen_x, test_unseen_y
    ).validate()


# ---------------------------------------------------------------------------
# csv bundle format

def _write_csv(path, ids: np.ndarray, values: np.ndarray):
    lines = []
    for i in range(values.shape[0]):
        cells = [str(int(ids[i]))] + [format(float(v), ".9g") for v in values[i]]
        lines.append(",".join(cells))
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def _read_csv(path, n_cols: int):
    ids, rows = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if len(cells) != n_cols + 1:
                raise ShapeError(f"{path}: expected {n_cols + 1} columns, got {len(cells)}")
            ids.append(int(cells[0]))
            rows.append([float(c) for c in cells[1:]])
    if not rows:
        return np.zeros((0,), dtype=np.int64), np.zeros((0, n_cols), dtype=np.float32)
    return np.asarray(ids, dtype=np.int64), np.asarray(rows, dtype=np.float32)


def save_csv_bundle(ds: FeatureDataset, out_dir):
    ds.validate()
    os.makedirs(out_dir, exist_ok=True)
    meta = {
        "S": ds.semantic.seen_count,
        "U": ds.semantic.unseen_count,
        "d_x": ds.d_x,
        "d_a": ds.semantic.d_a,
    }
    atomic_write_text(os.path.join(out_dir, "meta.json"), json.dumps(meta, sort_keys=True) + "\n")
    class_ids = np.arange(1, ds.semantic.n_classes + 1, dtype=np.int64)
    _write_csv(os.path.join(out_dir, "descriptors.csv"), class_ids, ds.semantic.descriptors)
    _write_csv(os.path.join(out_dir, "train.csv"), ds.train_y, ds.train_x)
    _write_csv(os.path.join(out_dir, "test_seen.csv"), ds.test_seen_y, ds.test_seen_x)
    _write_csv(os.path.join(out_dir, "test_unseen.csv"), ds.test_unseen_y, ds.test_unseen_x)


def load_csv_bundle(in_dir) -> FeatureDataset:
    meta_path = os.path.join(in_dir, "meta.json")
    if not os.path.isfile(meta_path):
        raise MagicMismatch(f"{in_dir} is not a csv bundle (missing meta.json)")
    with open(meta_path, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    for key in ("S", "U", "d_x", "d_a"):
        if key not in meta:
            raise MagicMismatch(f"meta.json missing key {key!r}")
    s, u, d_x, d_a = int(meta["S"]), int(meta["U"]), int(meta["d_x"]), int(meta["d_a"])
    desc_ids, desc = _read_csv(os.path.join(in_dir, "descriptors.csv"), d_a)
    if not np.array_equal(desc_ids, np.arange(1, s + u + 1)):
        raise ShapeError("descriptors.csv must list classes 1..S+U in order")
    train_y, train_x = _read_csv(os.path.join(in_dir, "train.csv"), d_x)
    ts_y, ts_x = _read_csv(os.path.join(in_dir, "test_seen.csv"), d_x)
    tu_y, tu_x = _read_csv(os.path.join(in_dir, "test_unseen.csv"), d_x)
    semantic = SemanticTable(desc, s, u)
    return FeatureDataset(semantic, train_x, train_y, ts_x, ts_y, tu_x, tu_y).validate()


# ---------------------------------------------------------------------------
# dispatchers

def save_dataset(ds: FeatureDataset, path, format: str | None = None):
    fmt = format or ("csv-bundle" if not str(path).endswith(".gzb") else "gzb")
    if fmt == "gzb":
        atomic_write_bytes(path, dataset_to_gzb_bytes(ds))
    elif fmt == "csv-bundle":
        save_csv_bundle(ds, path)
    else:
        raise DomainError(f"unknown dataset format {fmt!r}")


def load_dataset(path, format: str | None = None) -> FeatureDataset:
    fmt = format
    if fmt is None:
        fmt = "csv-bundle" if os.path.isdir(path) else "gzb"
    if fmt == "gzb":
        with open(path, "rb") as fh:
            return dataset_from_gzb_bytes(fh.read())
    if fmt == "csv-bundle":
        return load_csv_bundle(path)
    raise DomainError(f"unknown dataset format {fmt!r}")
