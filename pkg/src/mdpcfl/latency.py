"""Computation and communication delay model.

Compute time is a deterministic MAC term plus an exponential setup time;
every link transfer is repeated until it gets through, so its duration is a
geometric number of attempts times the per-attempt time.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass

import numpy as np

from mdpcfl.errors import ConfigError

BITS_PER_REAL = 32


@dataclass(frozen=True)
class DeviceProfile:
    tau: float  # MAC/s
    setup_mean: float = 0.0  # seconds, fixed part of the exponential mean
    p_fail: float = 0.0
    setup_ratio: float = 0.0  # extra mean, as a fraction of rho / tau

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError("tau must be positive")
        if not 0 <= self.p_fail < 1:
            raise ConfigError("p_fail must lie in [0, 1)")
        if self.setup_mean < 0 or self.setup_ratio < 0:
            raise ConfigError("setup parameters must be nonnegative")

    def mean_setup(self, rho: float) -> float:
        return self.setup_mean + self.setup_ratio * rho / self.tau


@dataclass(frozen=True)
class LinkRates:
    up: float
    down: float
    d2d: float
    overhead_factor: float = 1.0
    p_d2d: float = 0.0

    def __post_init__(self):
        if min(self.up, self.down, self.d2d) <= 0:
            raise ConfigError("link rates must be positive")
        if self.overhead_factor < 1:
            raise ConfigError("overhead_factor must be >= 1")
        if not 0 <= self.p_d2d < 1:
            raise ConfigError("p_d2d must lie in [0, 1)")


def compute_time(rho: float, profile: DeviceProfile, rng: np.random.Generator) -> float:
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    mean = profile.mean_setup(rho)
    setup = rng.exponential(mean) if mean > 0 else 0.0
    return rho / profile.tau + setup


def transfer_time(bits: float, rate: float, p_fail: float, overhead: float, rng: np.random.Generator) -> float:
    if bits < 0:
        raise ValueError("bits must be nonnegative")
    attempts = rng.geometric(1.0 - p_fail) if p_fail > 0 else 1
    return attempts * bits * overhead / rate


def payload_bits(*shape) -> int:
    return math.prod(shape) * BITS_PER_REAL


def mac_count(op: str, **dims) -> int:
    """Closed-form MAC counts.

    gram            n_i * d^2           (full product, symmetry not exploited)
    gradient_step   2 * n_i * d * c     (X Theta, then X^T times the residual)
    baseline_batch  2 * b * d * c       (b = ceil(batch_fraction * n_i))
    encrypt         d * k * n + d * n   (A G, then adding E)
    add_error       d * n
    ct_multiply     c * d * n
    aggregate       parts * rows * cols (server-side summation)
    decode          c * steps * check_degree
    """
    g = dims.get
    if op == "gram":
        return g("n_i") * g("d") ** 2
    if op == "gradient_step":
        return 2 * g("n_i") * g("d") * g("c")
    if op == "baseline_batch":
        b = math.ceil(g("batch_fraction", 1.0) * g("n_i"))
        return 2 * b * g("d") * g("c")
    if op == "encrypt":
        return g("d") * g("k") * g("n") + g("d") * g("n")
    if op == "add_error":
        return g("d") * g("n")
    if op == "ct_multiply":
        return g("c") * g("d") * g("n")
    if op == "aggregate":
        return g("parts") * g("rows") * g("cols")
    if op == "decode":
        return g("c") * g("steps") * g("check_degree")
    raise ValueError(f"unknown op {op!r}")


class Streams:
    """Independent RNG streams keyed by (purpose, device, epoch)."""

    def __init__(self, master_seed: int):
        self.master_seed = int(master_seed)

    def rng(self, purpose: str, *keys: int) -> np.random.Generator:
        tag = zlib.crc32(purpose.encode())
        return np.random.default_rng(np.random.SeedSequence(self.master_seed, spawn_key=(tag, *map(int, keys))))
