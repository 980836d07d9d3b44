"""Real-valued interleaved McEliece encryption over an MDPC code.

Every row of a ciphertext is a codeword plus an error vector, and all rows of
one device's error matrix share a single support. The nonzero block of the
error matrix spans only a beta-dimensional real code, so left-multiplying by a
model update never grows the support.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from mdpcfl.errors import (
    BadMagic,
    DegenerateSpec,
    DimensionMismatch,
    KeyMismatch,
    StoppingSet,
    SupportSizeMismatch,
    TruncatedFile,
)
from mdpcfl.mdpc_code import KeyPair, PeelingSchedule, _run_schedule, plan_peeling

WIRE_MAGIC = b"MCT1"
BITS_PER_REAL = 32


@dataclass
class ErrorCodeSpec:
    t: int
    beta: int
    generator: np.ndarray  # beta x t
    rows_total: int

    @property
    def min_distance(self) -> int:
        """Support weight guaranteed when every beta x beta minor is nonzero."""
        return self.t - self.beta + 1


def make_error_code(t: int, beta: int, rows_total: int, seed: int = 0) -> ErrorCodeSpec:
    """Gaussian beta x t generator; MDS over the reals with probability one."""
    if beta < 1 or beta > t:
        raise DegenerateSpec(f"need 1 <= beta <= t, got beta={beta}, t={t}")
    if beta > rows_total:
        raise DegenerateSpec("beta exceeds the interleaving order")
    g = np.random.default_rng(seed).standard_normal((beta, t))
    return ErrorCodeSpec(t, beta, g, rows_total)


def _full_rank_square(rng, beta):
    while True:
        s = rng.standard_normal((beta, beta))
        if np.linalg.cond(s) < 1e8:
            return s


def error_submatrix(spec: ErrorCodeSpec, seed: int = 0) -> np.ndarray:
    """Stack [G'; S_1 G'; S_2 G'; ...] down to ``rows_total`` rows."""
    if spec.beta > spec.rows_total:
        raise DegenerateSpec("beta exceeds the interleaving order")
    rng = np.random.default_rng(seed)
    blocks = [spec.generator]
    for _ in range(math.ceil(spec.rows_total / spec.beta) - 1):
        blocks.append(_full_rank_square(rng, spec.beta) @ spec.generator)
    return np.vstack(blocks)[: spec.rows_total]


def make_error_matrix(spec: ErrorCodeSpec, support, n: int, seed: int = 0) -> np.ndarray:
    support = np.asarray(support, dtype=np.int64)
    if support.size != spec.t or np.unique(support).size != spec.t:
        raise SupportSizeMismatch(f"support has {np.unique(support).size} positions, spec wants {spec.t}")
    out = np.zeros((spec.rows_total, n))
    out[:, support] = error_submatrix(spec, seed)
    return out


@dataclass
class Ciphertext:
    matrix: np.ndarray
    key_id: str
    padded_supports: frozenset = field(default_factory=frozenset)

    @property
    def shape(self):
        return self.matrix.shape

    @classmethod
    def zeros(cls, d: int, n: int, key_id: str) -> Ciphertext:
        return cls(np.zeros((d, n)), key_id, frozenset())

    def wire_bits(self) -> int:
        return int(self.matrix.size) * BITS_PER_REAL


def encrypt(a, key: KeyPair, err=None, support_id=None) -> Ciphertext:
    """C = A G + E. ``a`` is d x k; ``err`` is d x n (or None for E = 0)."""
    a = np.asarray(a, dtype=np.float64)
    g = key.g.entries
    if a.ndim != 2 or a.shape[1] != g.shape[0]:
        raise DimensionMismatch(f"data has shape {a.shape}, generator is {g.shape}")
    c = a @ g
    padded = frozenset()
    if err is not None:
        err = np.asarray(err, dtype=np.float64)
        if err.shape != c.shape:
            raise DimensionMismatch(f"error matrix {err.shape} vs ciphertext {c.shape}")
        c += err
        if support_id is not None:
            padded = frozenset([support_id])
    return Ciphertext(c, key.key_id, padded)


def add_error(ct: Ciphertext, err, support_id) -> Ciphertext:
    err = np.asarray(err)
    if err.shape != ct.shape:
        raise DimensionMismatch(f"error matrix {err.shape} vs ciphertext {ct.shape}")
    return Ciphertext(ct.matrix + err, ct.key_id, ct.padded_supports | {support_id})


def ct_add(c1: Ciphertext, c2: Ciphertext) -> Ciphertext:
    if c1.key_id != c2.key_id:
        raise KeyMismatch(f"{c1.key_id} != {c2.key_id}")
    if c1.shape != c2.shape:
        raise DimensionMismatch(f"{c1.shape} vs {c2.shape}")
    return Ciphertext(c1.matrix + c2.matrix, c1.key_id, c1.padded_supports | c2.padded_supports)


def ct_left_multiply(theta_t, ct: Ciphertext) -> Ciphertext:
    """theta^T C; the result keeps the nominal support metadata of ``ct``."""
    theta_t = np.asarray(theta_t, dtype=np.float64)
    if theta_t.ndim != 2 or theta_t.shape[1] != ct.shape[0]:
        raise DimensionMismatch(f"left factor {theta_t.shape} vs ciphertext {ct.shape}")
    return Ciphertext(theta_t @ ct.matrix, ct.key_id, ct.padded_supports)


def decrypt(sum_ct, key: KeyPair, erasures, schedule: PeelingSchedule | None = None) -> np.ndarray:
    """Recover the message rows of ``sum_ct`` treating ``erasures`` as unknown.

    ``sum_ct`` may be a Ciphertext or a bare (rows x n) array. Raises
    StoppingSet if peeling cannot resolve the erasures.
    """
    mat = sum_ct.matrix if isinstance(sum_ct, Ciphertext) else np.asarray(sum_ct, dtype=np.float64)
    if mat.shape[-1] != key.h.n:
        raise DimensionMismatch(f"word length {mat.shape[-1]} != n={key.h.n}")
    if schedule is None:
        schedule = plan_peeling(key.h, erasures)
    if not schedule.success:
        raise StoppingSet(f"peeling stalled after {len(schedule.steps)} of {schedule.erasure_set.size} erasures")
    word = np.array(mat, dtype=np.float64)
    word[..., schedule.erasure_set] = 0.0
    word = _run_schedule(schedule, key.h, word)
    return key.g.extract(word)


def relative_error(got, want) -> float:
    want = np.asarray(want)
    scale = np.abs(want).max()
    diff = np.abs(np.asarray(got) - want).max()
    return float(diff / scale) if scale > 0 else float(diff)


# -- wire format -------------------------------------------------------------
# MAGIC | u32 header length | JSON header | row-major float32 payload

def to_wire(ct: Ciphertext) -> bytes:
    header = json.dumps(
        {"key_id": ct.key_id, "padded_supports": sorted(ct.padded_supports), "shape": list(ct.shape)},
        sort_keys=True,
    ).encode()
    payload = np.ascontiguousarray(ct.matrix, dtype="<f4").tobytes()
    return WIRE_MAGIC + struct.pack("<I", len(header)) + header + payload


def from_wire(blob: bytes) -> Ciphertext:
    if blob[:4] != WIRE_MAGIC:
        raise BadMagic("not a ciphertext blob")
    if len(blob) < 8:
        raise TruncatedFile("ciphertext header cut short")
    (hlen,) = struct.unpack("<I", blob[4:8])
    if len(blob) < 8 + hlen:
        raise TruncatedFile("ciphertext header cut short")
    header = json.loads(blob[8 : 8 + hlen])
    rows, cols = header["shape"]
    body = blob[8 + hlen :]
    if len(body) != 4 * rows * cols:
        raise TruncatedFile(f"payload has {len(body)} bytes, expected {4 * rows * cols}")
    mat = np.frombuffer(body, dtype="<f4").astype(np.float64).reshape(rows, cols)
    return Ciphertext(mat, header["key_id"], frozenset(header["padded_supports"]))
