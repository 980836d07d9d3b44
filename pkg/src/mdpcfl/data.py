"""Datasets: MNIST IDX files, random Fourier features, device partitions."""
from __future__ import annotations

import gzip
import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from mdpcfl.errors import BadMagic, DimensionMismatch, TruncatedFile
from mdpcfl.fl_core import LocalData

DATASET_FORMAT = "mdpcfl-dataset"
DATASET_VERSION = 1

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}

_IDX_DTYPES = {
    0x08: np.dtype(np.uint8),
    0x09: np.dtype(np.int8),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


@dataclass
class Dataset:
    train: LocalData
    test: LocalData
    theta_star: np.ndarray | None = None

    @property
    def d(self) -> int:
        return self.train.d

    @property
    def c(self) -> int:
        return self.train.c


def _read_bytes(path) -> bytes:
    path = os.fspath(path)
    opener = gzip.open if path.endswith(".gz") else open
    with opener(path, "rb") as fh:
        return fh.read()


def parse_idx(blob: bytes) -> np.ndarray:
    """Decode one IDX container (big-endian header, row-major payload)."""
    if len(blob) < 4:
        raise TruncatedFile("file shorter than the IDX magic")
    zero, dtype_code, ndim = struct.unpack(">HBB", blob[:4])
    if zero != 0 or dtype_code not in _IDX_DTYPES or ndim == 0:
        raise BadMagic(f"bad IDX magic {blob[:4].hex()}")
    head = 4 + 4 * ndim
    if len(blob) < head:
        raise TruncatedFile("IDX header cut short")
    dims = struct.unpack(f">{ndim}I", blob[4:head])
    dtype = _IDX_DTYPES[dtype_code]
    need = int(np.prod(dims)) * dtype.itemsize
    if len(blob) - head < need:
        raise TruncatedFile(f"payload has {len(blob) - head} bytes, header promises {need}")
    return np.frombuffer(blob, dtype=dtype, count=int(np.prod(dims)), offset=head).reshape(dims)


def read_idx(path) -> np.ndarray:
    return parse_idx(_read_bytes(path))


def write_idx(path, arr) -> None:
    arr = np.ascontiguousarray(arr)
    code = {(v.kind, v.itemsize): k for k, v in _IDX_DTYPES.items()}[(arr.dtype.kind, arr.dtype.itemsize)]
    with open(path, "wb") as fh:
        fh.write(struct.pack(">HBB", 0, code, arr.ndim))
        fh.write(struct.pack(f">{arr.ndim}I", *arr.shape))
        fh.write(arr.astype(arr.dtype.newbyteorder(">")).tobytes())


def find_mnist(directory) -> dict | None:
    """Paths of the four MNIST files under ``directory`` (gzipped or not), or None."""
    if directory is None:
        return None
    found = {}
    for key, stem in MNIST_FILES.items():
        for name in (stem, stem + ".gz", stem.replace("-idx", ".idx"), stem.replace("-idx", ".idx") + ".gz"):
            p = os.path.join(directory, name)
            if os.path.exists(p):
                found[key] = p
                break
        else:
            return None
    return found


def load_mnist(paths: dict):
    """Return ``(x_train, y_train, x_test, y_test)``; pixels scaled to [0, 1]."""
    out = []
    for split in ("train", "test"):
        images = read_idx(paths[f"{split}_images"])
        labels = read_idx(paths[f"{split}_labels"])
        if images.shape[0] != labels.shape[0]:
            raise DimensionMismatch(f"{split}: {images.shape[0]} images vs {labels.shape[0]} labels")
        out.append(images.reshape(images.shape[0], -1).astype(np.float64) / 255.0)
        out.append(labels.astype(np.int64))
    return tuple(out)


def one_hot(labels, classes: int = 10) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def rff_params(d_in: int, d_out: int, gamma: float, seed):
    """W with N(0, 2 gamma) entries and phases b ~ U[0, 2 pi), as in sklearn's RBFSampler."""
    if d_out < 1 or gamma <= 0:
        raise ValueError("need d_out >= 1 and gamma > 0")
    rng = np.random.default_rng(seed)
    w = np.sqrt(2.0 * gamma) * rng.standard_normal((d_in, d_out))
    b = rng.uniform(0.0, 2.0 * np.pi, size=d_out)
    return w, b


def rbf_embed(raw, d_out: int = 2000, gamma: float = 5.0, seed=0, chunk: int = 8192) -> np.ndarray:
    """z(x) = sqrt(2 / d_out) cos(x W + b); approximates exp(-gamma |x - y|^2)."""
    raw = np.asarray(raw, dtype=np.float64)
    w, b = rff_params(raw.shape[1], d_out, gamma, seed)
    out = np.empty((raw.shape[0], d_out))
    scale = np.sqrt(2.0 / d_out)
    for i in range(0, raw.shape[0], chunk):
        out[i : i + chunk] = scale * np.cos(raw[i : i + chunk] @ w + b)
    return out


def unit_rows(x) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(norms > 0, norms, 1.0)


def partition(data: LocalData, n_devices: int, seed=0, balance: str = "equal") -> list:
    """Shuffled disjoint row split; sizes differ by at most one."""
    if n_devices < 1:
        raise ValueError("n_devices must be >= 1")
    if balance != "equal":
        raise ValueError(f"unknown balance policy {balance!r}")
    perm = np.random.default_rng(seed).permutation(data.n_i)
    return [LocalData(data.X[idx], data.Y[idx]) for idx in np.array_split(perm, n_devices)]


def synth_regression(m: int, d: int, c: int, noise_sigma: float = 0.0, seed=0) -> Dataset:
    """Gaussian features, Y = X Theta* + noise, 80/20 train/test split."""
    if min(m, d, c) < 1:
        raise ValueError("m, d, c must be >= 1")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((m, d)) / np.sqrt(d)
    theta = rng.standard_normal((d, c))
    y = x @ theta + noise_sigma * rng.standard_normal((m, c))
    cut = int(round(0.8 * m))
    return Dataset(LocalData(x[:cut], y[:cut]), LocalData(x[cut:], y[cut:]), theta)


def prepare_mnist(directory, d_out: int = 2000, gamma: float = 5.0, seed=0, normalize: str = "unit") -> Dataset:
    paths = find_mnist(directory)
    if paths is None:
        raise FileNotFoundError(f"MNIST IDX files not found under {directory!r}")
    xtr, ytr, xte, yte = load_mnist(paths)
    if normalize == "unit":
        xtr, xte = unit_rows(xtr), unit_rows(xte)
    elif normalize != "none":
        raise ValueError(f"unknown normalisation {normalize!r}")
    ztr = rbf_embed(xtr, d_out, gamma, seed)
    zte = rbf_embed(xte, d_out, gamma, seed)
    return Dataset(LocalData(ztr, one_hot(ytr)), LocalData(zte, one_hot(yte)))


def save_dataset(ds: Dataset, path) -> None:
    header = json.dumps({"format": DATASET_FORMAT, "version": DATASET_VERSION}).encode()
    arrays = dict(
        header=np.frombuffer(header, dtype=np.uint8),
        x_train=ds.train.X, y_train=ds.train.Y, x_test=ds.test.X, y_test=ds.test.Y,
    )
    if ds.theta_star is not None:
        arrays["theta_star"] = ds.theta_star
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_dataset(path) -> Dataset:
    with np.load(path) as z:
        header = json.loads(bytes(z["header"]).decode())
        if header.get("format") != DATASET_FORMAT or header.get("version") != DATASET_VERSION:
            raise BadMagic(f"unsupported dataset container {header}")
        theta = z["theta_star"] if "theta_star" in z.files else None
        return Dataset(LocalData(z["x_train"], z["y_train"]), LocalData(z["x_test"], z["y_test"]), theta)
