"""Datasets: binary image tasks from MNIST/CIFAR-10 files and a linear Gaussian teacher.

Image files are looked up in ``$EWA_DATA_DIR`` (or an explicit directory):
MNIST as IDX files (``train-images-idx3-ubyte`` etc., optionally ``.gz``),
CIFAR-10 as the binary batches (``data_batch_1.bin`` ... ``test_batch.bin``,
also inside ``cifar-10-batches-bin/``).
"""

import csv
import gzip
import os
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import _gen
from .errors import DataFormatError, DataNotFound, DegenerateData, InsufficientSamples, ShapeMismatch

__all__ = [
    "DatasetSplit",
    "DATA_ENV",
    "read_idx",
    "write_idx",
    "read_cifar_batch",
    "load_mnist",
    "load_cifar10",
    "load_image_task",
    "bilinear_resize",
    "grayscale_resize",
    "standardize",
    "gaussian_teacher",
    "split_to_csv",
]

DATA_ENV = "EWA_DATA_DIR"
IDX_DTYPES = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}
CIFAR_RECORD = 3073


@dataclass
class DatasetSplit:
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    mean: float = 0.0
    std: float = 1.0
    tag: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def P(self):
        return len(self.y_train)

    @property
    def n_in(self):
        return int(np.prod(self.X_train.shape[1:]))


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path):
    """Array stored in an IDX file (magic 0x0000TTDD, big-endian dims)."""
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise DataFormatError(f"{path}: file too short for an IDX header", 0)
    zero, dtype_code, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0 or dtype_code not in IDX_DTYPES:
        raise DataFormatError(f"{path}: bad IDX magic 0x{raw[:4].hex()}", 0)
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise DataFormatError(f"{path}: truncated dimension list", 4)
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    dt = np.dtype(IDX_DTYPES[dtype_code])
    n = int(np.prod(dims)) * dt.itemsize
    if len(raw) - head != n:
        raise DataFormatError(f"{path}: expected {n} data bytes, found {len(raw) - head}", head)
    return np.frombuffer(raw, dtype=dt, offset=head).reshape(dims).astype(dt.newbyteorder("="))


def write_idx(path, arr):
    """Write an unsigned-byte (or other IDX-typed) array as an IDX file."""
    arr = np.asarray(arr)
    codes = {np.dtype(v).newbyteorder("="): k for k, v in IDX_DTYPES.items()}
    code = codes.get(arr.dtype.newbyteorder("="))
    if code is None:
        raise DataFormatError(f"dtype {arr.dtype} has no IDX code")
    head = struct.pack(">HBB", 0, code, arr.ndim) + struct.pack(f">{arr.ndim}I", *arr.shape)
    data = arr.astype(IDX_DTYPES[code]).tobytes()
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(head + data)


def read_cifar_batch(path):
    """Images (n, 32, 32, 3) uint8 and labels from a CIFAR-10 binary batch."""
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) == 0 or len(raw) % CIFAR_RECORD:
        raise DataFormatError(f"{path}: size {len(raw)} is not a multiple of {CIFAR_RECORD}",
                              len(raw) - len(raw) % CIFAR_RECORD)
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise DataFormatError(f"{path}: label {labels[bad[0]]} out of range", int(bad[0]) * CIFAR_RECORD)
    imgs = rec[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    return imgs, labels


def _data_dir(data_dir):
    d = data_dir or os.environ.get(DATA_ENV)
    if not d:
        raise DataNotFound(f"no dataset directory given and ${DATA_ENV} is not set")
    return Path(d)


def _find(d, names):
    for name in names:
        for cand in (d / name, d / (name + ".gz")):
            if cand.exists():
                return cand
    return None


def load_mnist(split="train", data_dir=None):
    """(images (n, 28, 28) uint8, labels) of the MNIST ``train`` or ``test`` files."""
    d = _data_dir(data_dir)
    prefix = "train" if split == "train" else "t10k"
    img = _find(d, [f"{prefix}-images-idx3-ubyte", f"{prefix}-images.idx3-ubyte"])
    lab = _find(d, [f"{prefix}-labels-idx1-ubyte", f"{prefix}-labels.idx1-ubyte"])
    if img is None or lab is None:
        raise DataNotFound(f"MNIST {split} files not found in {d}")
    X, y = read_idx(img), read_idx(lab)
    if X.ndim != 3 or y.ndim != 1 or len(X) != len(y):
        raise DataFormatError(f"MNIST {split} images and labels do not match")
    return X, y.astype(np.int64)


def load_cifar10(split="train", data_dir=None):
    d = _data_dir(data_dir)
    if (d / "cifar-10-batches-bin").is_dir():
        d = d / "cifar-10-batches-bin"
    names = [f"data_batch_{i}.bin" for i in range(1, 6)] if split == "train" else ["test_batch.bin"]
    files = [_find(d, [n]) for n in names]
    files = [f for f in files if f is not None]
    if not files:
        raise DataNotFound(f"CIFAR-10 {split} batches not found in {d}")
    parts = [read_cifar_batch(f) for f in files]
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def _select(X, y, classes, n, rng, skip=0):
    keep = np.flatnonzero(np.isin(y, classes))
    order = keep[_gen(rng).permutation(len(keep))]
    if len(order) < skip + n:
        raise InsufficientSamples(f"need {skip + n} samples of classes {classes}, have {len(order)}")
    idx = order[skip:skip + n]
    return X[idx], (y[idx] == classes[1]).astype(np.float64)


def load_image_task(dataset, classes=(0, 1), P=200, P_t=1000, seed=0, data_dir=None):
    """Unstandardised binary task with labels 0 (first class) and 1 (second).

    Seeded shuffle of each class-filtered pool, then the first P (P_t)
    rows.  The test rows come from the test files; if those are absent the
    remainder of the shuffled training pool is used (disjoint from the
    training rows).  CIFAR images are resized to 28x28 grayscale.
    """
    classes = tuple(int(c) for c in classes)
    if len(classes) != 2 or classes[0] == classes[1]:
        raise ShapeMismatch("need two distinct classes")
    loader = {"mnist": load_mnist, "cifar10": load_cifar10}[dataset]
    Xtr, ytr = loader("train", data_dir)
    s_train, s_test = np.random.SeedSequence(int(seed)).spawn(2)
    X, y = _select(Xtr, ytr, classes, P, np.random.default_rng(s_train))
    try:
        Xte, yte = loader("test", data_dir)
        Xt, yt = _select(Xte, yte, classes, P_t, np.random.default_rng(s_test))
        source = "test"
    except DataNotFound:
        # same shuffle as the training rows, continued past them
        Xt, yt = _select(Xtr, ytr, classes, P_t, np.random.default_rng(s_train), skip=P)
        source = "train-remainder"
    if dataset == "cifar10":
        X, Xt = grayscale_resize(X), grayscale_resize(Xt)
    X = X.reshape(len(X), -1).astype(np.float64)
    Xt = Xt.reshape(len(Xt), -1).astype(np.float64)
    return DatasetSplit(X, y, Xt, yt, tag=f"{dataset}{classes}", meta={"test_source": source})


def _axis_weights(n_in, n_out):
    # half-pixel centres, negative source coordinates clamped to 0
    scale = n_in / n_out
    src = np.maximum((np.arange(n_out) + 0.5) * scale - 0.5, 0.0)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def bilinear_resize(img, size):
    """Bilinear resize of the two leading image axes (align_corners=False, no antialiasing)."""
    img = np.asarray(img, dtype=np.float64)
    (h0, h1, wh), (w0, w1, ww) = _axis_weights(img.shape[-3], size[0]), _axis_weights(img.shape[-2], size[1])
    top = img[..., h0, :, :] * (1 - wh)[:, None, None] + img[..., h1, :, :] * wh[:, None, None]
    return top[..., w0, :] * (1 - ww)[:, None] + top[..., w1, :] * ww[:, None]


def grayscale_resize(images):
    """(..., 32, 32, 3) -> (..., 28, 28, 1): bilinear resize, then channel mean."""
    images = np.asarray(images)
    if images.shape[-3:] != (32, 32, 3):
        raise ShapeMismatch(f"expected 32x32x3 images, got {images.shape}")
    return bilinear_resize(images, (28, 28)).mean(axis=-1, keepdims=True)


def standardize(split: DatasetSplit):
    """Global pixel standardisation of both splits with the training statistics."""
    m = float(np.mean(split.X_train))
    s = float(np.std(split.X_train))
    if not s > 0:
        raise DegenerateData("training inputs have zero variance")
    return replace(split, X_train=(split.X_train - m) / s, X_test=(split.X_test - m) / s,
                   mean=m, std=s)


def gaussian_teacher(N0=300, P=200, P_t=1000, rng=0):
    """x ~ N(0, I_N0), y = x . w with a fixed unit teacher w."""
    g = _gen(rng)
    w = g.standard_normal(N0)
    w /= np.linalg.norm(w)
    X = g.standard_normal((P, N0))
    Xt = g.standard_normal((P_t, N0))
    return DatasetSplit(X, X @ w, Xt, Xt @ w, tag=f"gaussian_teacher(N0={N0})", meta={"teacher": w})


def split_to_csv(split: DatasetSplit, path):
    """One row per pattern: split name, label, then the flattened input."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["split", "y"] + [f"x{i}" for i in range(split.n_in)])
        for name, X, y in (("train", split.X_train, split.y_train), ("test", split.X_test, split.y_test)):
            for xi, yi in zip(X.reshape(len(X), -1), y):
                w.writerow([name, repr(float(yi))] + [repr(float(v)) for v in xi])
