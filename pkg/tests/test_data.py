import gzip
import os

import numpy as np
import pytest

from mdpcfl import data
from mdpcfl.errors import BadMagic, TruncatedFile
from mdpcfl.fl_core import LocalData

MNIST_DIR = os.environ.get("MDPCFL_MNIST_DIR", "data/mnist")


def fake_mnist(tmp_path, n_train=12, n_test=5, gz=False):
    rng = np.random.default_rng(0)
    arrays = {
        "train_images": rng.integers(0, 256, (n_train, 28, 28), dtype=np.uint8),
        "train_labels": rng.integers(0, 10, n_train, dtype=np.uint8),
        "test_images": rng.integers(0, 256, (n_test, 28, 28), dtype=np.uint8),
        "test_labels": rng.integers(0, 10, n_test, dtype=np.uint8),
    }
    arrays["train_images"][0, 0, 0] = 255
    for key, arr in arrays.items():
        p = tmp_path / data.MNIST_FILES[key]
        data.write_idx(p, arr)
        if gz:
            with open(p, "rb") as src, gzip.open(str(p) + ".gz", "wb") as dst:
                dst.write(src.read())
            os.remove(p)
    return arrays


def test_idx_header_bytes(tmp_path):
    # hand-built file: magic 0x00000801, one dim of 3, payload 1 2 3
    blob = bytes([0, 0, 8, 1, 0, 0, 0, 3, 1, 2, 3])
    assert data.parse_idx(blob).tolist() == [1, 2, 3]
    data.write_idx(tmp_path / "x", np.array([1, 2, 3], dtype=np.uint8))
    assert (tmp_path / "x").read_bytes() == blob


def test_idx_roundtrip_dtypes(tmp_path):
    for arr in (np.arange(24, dtype=np.uint8).reshape(2, 3, 4), np.array([[1.5, -2.0]], dtype=np.float32), np.arange(5, dtype=np.int32)):
        data.write_idx(tmp_path / "a", arr)
        back = data.read_idx(tmp_path / "a")
        assert back.shape == arr.shape and np.array_equal(back, arr)


def test_idx_errors():
    with pytest.raises(BadMagic):
        data.parse_idx(bytes([1, 0, 8, 1, 0, 0, 0, 1, 0]))
    with pytest.raises(BadMagic):
        data.parse_idx(bytes([0, 0, 0x42, 1, 0, 0, 0, 1, 0]))
    with pytest.raises(TruncatedFile):
        data.parse_idx(bytes([0, 0, 8]))
    with pytest.raises(TruncatedFile):
        data.parse_idx(bytes([0, 0, 8, 1, 0, 0, 0, 4, 1, 2]))


@pytest.mark.parametrize("gz", [False, True])
def test_load_fake_mnist(tmp_path, gz):
    arrays = fake_mnist(tmp_path, gz=gz)
    paths = data.find_mnist(tmp_path)
    assert paths is not None
    xtr, ytr, xte, yte = data.load_mnist(paths)
    assert xtr.shape == (12, 784) and xte.shape == (5, 784)
    assert xtr[0, 0] == 1.0 and xtr.min() >= 0 and xtr.max() <= 1
    assert np.array_equal(ytr, arrays["train_labels"])
    assert np.allclose(xtr * 255, arrays["train_images"].reshape(12, -1))


def test_missing_mnist(tmp_path):
    assert data.find_mnist(tmp_path) is None
    with pytest.raises(FileNotFoundError):
        data.prepare_mnist(tmp_path)


def test_prepare_fake_mnist(tmp_path):
    fake_mnist(tmp_path)
    ds = data.prepare_mnist(tmp_path, d_out=64, gamma=5.0, seed=1)
    assert ds.train.X.shape == (12, 64) and ds.test.Y.shape == (5, 10)
    assert np.all(ds.train.Y.sum(axis=1) == 1)


@pytest.mark.skipif(data.find_mnist(MNIST_DIR) is None, reason="MNIST files not present")
def test_real_mnist_shapes():
    xtr, ytr, xte, yte = data.load_mnist(data.find_mnist(MNIST_DIR))
    assert xtr.shape == (60000, 784) and xte.shape == (10000, 784)
    assert set(np.unique(ytr)) == set(range(10))


def test_one_hot():
    oh = data.one_hot([3, 0])
    assert oh[0].tolist() == [0, 0, 0, 1, 0, 0, 0, 0, 0, 0]
    assert np.all(oh.sum(axis=1) == 1)


def test_rff_bound_and_determinism():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((20, 7))
    z = data.rbf_embed(x, d_out=50, gamma=2.0, seed=3)
    assert np.all(np.abs(z) <= np.sqrt(2 / 50) + 1e-15)
    assert np.array_equal(z, data.rbf_embed(x, d_out=50, gamma=2.0, seed=3, chunk=7))
    assert z.shape[0] == 20


def test_rff_kernel_oracle():
    rng = np.random.default_rng(4)
    x = rng.uniform(0, 1, (30, 10))
    x = data.unit_rows(x) * rng.uniform(0.2, 0.6, (30, 1))
    gamma = 5.0
    z = data.rbf_embed(x, d_out=4000, gamma=gamma, seed=0)
    sq = ((x[:, None, :] - x[None, :, :]) ** 2).sum(-1)
    exact = np.exp(-gamma * sq)
    approx = z @ z.T
    assert np.abs(approx - exact).max() <= 0.05
    assert np.abs(np.diag(approx) - 1).max() <= 0.05


def test_partition():
    x = np.arange(60000, dtype=float)[:, None]
    whole = LocalData(x, x)
    parts = data.partition(whole, 25, seed=0)
    assert [p.n_i for p in parts] == [2400] * 25
    rows = np.sort(np.concatenate([p.X[:, 0] for p in parts]))
    assert np.array_equal(rows, x[:, 0])
    one = data.partition(whole, 1, seed=0)[0]
    assert np.array_equal(np.sort(one.X[:, 0]), x[:, 0])
    with pytest.raises(ValueError):
        data.partition(whole, 0)


def test_synth_realizable_and_deterministic():
    a = data.synth_regression(100, 5, 2, 0.0, seed=1)
    b = data.synth_regression(100, 5, 2, 0.0, seed=1)
    assert np.array_equal(a.train.X, b.train.X) and np.array_equal(a.test.Y, b.test.Y)
    assert a.train.n_i == 80 and a.test.n_i == 20
    assert np.allclose(a.train.X @ a.theta_star, a.train.Y)


def test_synth_least_squares_oracle():
    ds = data.synth_regression(4000, 8, 3, noise_sigma=0.01, seed=2)
    x, y = ds.train.X, ds.train.Y
    theta = np.linalg.solve(x.T @ x, x.T @ y)
    # standard error of each coefficient is sigma * sqrt(diag((X^T X)^-1))
    se = 0.01 * np.sqrt(np.diag(np.linalg.inv(x.T @ x)))[:, None]
    assert np.all(np.abs(theta - ds.theta_star) <= 6 * se)


def test_dataset_container_roundtrip(tmp_path):
    ds = data.synth_regression(50, 4, 2, 0.1, seed=0)
    data.save_dataset(ds, tmp_path / "d.npz")
    back = data.load_dataset(tmp_path / "d.npz")
    assert np.array_equal(back.train.X, ds.train.X) and np.array_equal(back.theta_star, ds.theta_star)
    np.savez(tmp_path / "bad.npz", header=np.frombuffer(b'{"format": "x", "version": 1}', dtype=np.uint8))
    with pytest.raises(BadMagic):
        data.load_dataset(tmp_path / "bad.npz")
