import csv
import gzip

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ewa.data import (
    CIFAR_RECORD,
    DATA_ENV,
    DatasetSplit,
    bilinear_resize,
    gaussian_teacher,
    grayscale_resize,
    load_image_task,
    read_cifar_batch,
    read_idx,
    split_to_csv,
    standardize,
    write_idx,
)
from ewa.errors import DataFormatError, DataNotFound, DegenerateData, InsufficientSamples, ShapeMismatch


def _mnist_dir(d, n=60, test=True, seed=0):
    rng = np.random.default_rng(seed)
    for prefix, m in [("train", n)] + ([("t10k", n // 2)] if test else []):
        imgs = rng.integers(0, 256, (m, 28, 28), dtype=np.uint8)
        labels = (np.arange(m) % 4).astype(np.uint8)
        write_idx(d / f"{prefix}-images-idx3-ubyte", imgs)
        write_idx(d / f"{prefix}-labels-idx1-ubyte.gz", labels)
    return d


def test_idx_roundtrip(tmp_path):
    a = np.arange(24, dtype=np.uint8).reshape(2, 3, 4)
    write_idx(tmp_path / "a.idx", a)
    assert (tmp_path / "a.idx").read_bytes()[:4] == bytes([0, 0, 0x08, 3])
    assert np.array_equal(read_idx(tmp_path / "a.idx"), a)
    f = np.linspace(-1, 1, 6).reshape(2, 3)
    write_idx(tmp_path / "f.idx.gz", f)
    assert np.array_equal(read_idx(tmp_path / "f.idx.gz"), f)


def test_idx_parse_errors(tmp_path):
    p = tmp_path / "bad"
    p.write_bytes(bytes([1, 0, 8, 1, 0, 0, 0, 2, 5, 6]))
    with pytest.raises(DataFormatError) as e:
        read_idx(p)
    assert e.value.offset == 0
    p.write_bytes(bytes([0, 0, 8, 1, 0, 0, 0, 3, 5, 6]))
    with pytest.raises(DataFormatError) as e:
        read_idx(p)
    assert e.value.offset == 8
    p.write_bytes(bytes([0, 0, 8, 2, 0, 0]))
    with pytest.raises(DataFormatError, match="byte offset 4"):
        read_idx(p)


def test_cifar_batch(tmp_path):
    rng = np.random.default_rng(1)
    imgs = rng.integers(0, 256, (3, 3, 32, 32), dtype=np.uint8)
    labels = np.array([2, 0, 9], dtype=np.uint8)
    raw = b"".join(bytes([l]) + im.tobytes() for l, im in zip(labels, imgs))
    p = tmp_path / "data_batch_1.bin"
    p.write_bytes(raw)
    X, y = read_cifar_batch(p)
    assert X.shape == (3, 32, 32, 3) and np.array_equal(y, labels)
    assert np.array_equal(X[1, :, :, 2], imgs[1, 2])
    p.write_bytes(raw[:-1])
    with pytest.raises(DataFormatError) as e:
        read_cifar_batch(p)
    assert e.value.offset == 2 * CIFAR_RECORD
    p.write_bytes(bytes([12]) + raw[1:])
    with pytest.raises(DataFormatError, match="label 12"):
        read_cifar_batch(p)


def test_load_image_task(tmp_path):
    d = _mnist_dir(tmp_path)
    s = load_image_task("mnist", (0, 1), P=4, P_t=6, seed=3, data_dir=d)
    assert s.X_train.shape == (4, 784) and set(np.unique(s.y_train)) <= {0.0, 1.0}
    assert s.meta["test_source"] == "test"
    s2 = load_image_task("mnist", (0, 1), P=4, P_t=6, seed=3, data_dir=d)
    assert np.array_equal(s.X_train, s2.X_train) and np.array_equal(s.X_test, s2.X_test)
    s3 = load_image_task("mnist", (0, 1), P=4, P_t=6, seed=4, data_dir=d)
    assert not np.array_equal(s.X_train, s3.X_train)
    # the second class maps to label 1
    s4 = load_image_task("mnist", (3, 2), P=10, P_t=4, seed=0, data_dir=d)
    raw = read_idx(d / "train-images-idx3-ubyte").reshape(60, -1).astype(float)
    labs = np.arange(60) % 4
    for x, y in zip(s4.X_train, s4.y_train):
        row = np.flatnonzero((raw == x).all(1))[0]
        assert labs[row] == (2 if y == 1 else 3)
    with pytest.raises(InsufficientSamples):
        load_image_task("mnist", (0, 1), P=40, P_t=6, data_dir=d)
    with pytest.raises(ShapeMismatch):
        load_image_task("mnist", (1, 1), data_dir=d)


def test_train_remainder_fallback_is_disjoint(tmp_path):
    d = _mnist_dir(tmp_path, test=False)
    s = load_image_task("mnist", (0, 1), P=10, P_t=15, seed=0, data_dir=d)
    assert s.meta["test_source"] == "train-remainder"
    rows = {x.tobytes() for x in s.X_train}
    assert not any(x.tobytes() in rows for x in s.X_test)


def test_data_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.delenv(DATA_ENV, raising=False)
    with pytest.raises(DataNotFound):
        load_image_task("mnist", P=2, P_t=2)
    monkeypatch.setenv(DATA_ENV, str(_mnist_dir(tmp_path)))
    assert load_image_task("mnist", P=2, P_t=2).P == 2


def test_cifar_task(tmp_path):
    rng = np.random.default_rng(2)
    recs = [bytes([i % 3]) + rng.integers(0, 256, 3072, dtype=np.uint8).tobytes() for i in range(30)]
    (tmp_path / "data_batch_1.bin").write_bytes(b"".join(recs))
    s = load_image_task("cifar10", (1, 2), P=5, P_t=4, data_dir=tmp_path)
    assert s.X_train.shape == (5, 784) and s.X_test.shape == (4, 784)


def _reference_bilinear(img, oh, ow):
    # direct per-pixel evaluation, half-pixel centres, clamped at the borders
    h, w = img.shape[:2]
    out = np.zeros((oh, ow) + img.shape[2:])
    for i in range(oh):
        for j in range(ow):
            y = min(max((i + 0.5) * h / oh - 0.5, 0.0), h - 1)
            x = min(max((j + 0.5) * w / ow - 0.5, 0.0), w - 1)
            y0, x0 = int(np.floor(y)), int(np.floor(x))
            y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
            dy, dx = y - y0, x - x0
            out[i, j] = ((1 - dy) * (1 - dx) * img[y0, x0] + (1 - dy) * dx * img[y0, x1]
                         + dy * (1 - dx) * img[y1, x0] + dy * dx * img[y1, x1])
    return out


def test_grayscale_resize():
    const = np.full((32, 32, 3), 7.0)
    assert np.allclose(grayscale_resize(const), 7.0, rtol=0, atol=1e-13)
    i, j = np.meshgrid(np.arange(32.0), np.arange(32.0), indexing="ij")
    ramp = np.repeat((2.0 + 0.5 * i - 0.25 * j)[..., None], 3, axis=2)
    out = grayscale_resize(ramp)[..., 0]
    s = (np.arange(28) + 0.5) * 32 / 28 - 0.5
    assert np.allclose(out, 2.0 + 0.5 * s[:, None] - 0.25 * s[None, :], atol=1e-12)
    img = np.random.default_rng(3).random((32, 32, 3)) * 255
    ref = _reference_bilinear(img, 28, 28).mean(axis=-1, keepdims=True)
    assert np.allclose(grayscale_resize(img), ref, rtol=0, atol=1e-12)
    assert np.allclose(bilinear_resize(img, (40, 20)), _reference_bilinear(img, 40, 20), atol=1e-12)
    with pytest.raises(ShapeMismatch):
        grayscale_resize(np.zeros((28, 28, 3)))


def test_standardize():
    s = DatasetSplit(np.array([[0.0], [2.0]]), np.zeros(2), np.array([[4.0]]), np.zeros(1))
    z = standardize(s)
    assert np.array_equal(z.X_train[:, 0], [-1.0, 1.0]) and z.X_test[0, 0] == 3.0
    assert (z.mean, z.std) == (1.0, 1.0)
    again = standardize(z)
    assert np.allclose(again.X_train, z.X_train, atol=1e-12) and np.allclose(again.X_test, z.X_test, atol=1e-12)
    with pytest.raises(DegenerateData):
        standardize(DatasetSplit(np.ones((3, 2)), np.zeros(3), np.ones((1, 2)), np.zeros(1)))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_standardisation_ignores_test_set(seed):
    rng = np.random.default_rng(seed)
    X, Xt = rng.random((6, 5)), rng.random((8, 5)) * 10
    a = standardize(DatasetSplit(X, np.zeros(6), Xt, np.zeros(8)))
    perm = rng.permutation(8)
    b = standardize(DatasetSplit(X, np.zeros(6), Xt[perm] * 3 - 1, np.zeros(8)))
    assert (a.mean, a.std) == (b.mean, b.std)
    assert abs(a.X_train.mean()) < 1e-12 and abs(a.X_train.std() - 1) < 1e-12


def test_gaussian_teacher():
    d = gaussian_teacher(N0=300, P=20000, P_t=10, rng=4)
    w = d.meta["teacher"]
    assert np.linalg.norm(w) == pytest.approx(1.0, abs=1e-15)
    assert np.allclose(d.y_train, d.X_train @ w)
    assert abs(np.var(d.y_train) - 1.0) < 4 * np.sqrt(2.0 / 20000)
    assert np.array_equal(gaussian_teacher(N0=300, P=5, P_t=2, rng=4).meta["teacher"], w)


def test_split_to_csv(tmp_path):
    d = gaussian_teacher(N0=3, P=2, P_t=1, rng=5)
    split_to_csv(d, tmp_path / "s.csv")
    rows = list(csv.reader(open(tmp_path / "s.csv")))
    assert rows[0] == ["split", "y", "x0", "x1", "x2"]
    assert [r[0] for r in rows[1:]] == ["train", "train", "test"]
    assert float(rows[3][1]) == d.y_test[0] and float(rows[1][2]) == d.X_train[0, 0]
