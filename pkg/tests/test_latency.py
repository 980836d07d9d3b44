import numpy as np
import pytest

from mdpcfl.errors import ConfigError
from mdpcfl.latency import DeviceProfile, LinkRates, Streams, compute_time, mac_count, payload_bits, transfer_time


def test_compute_time_examples():
    rng = np.random.default_rng(0)
    assert compute_time(0, DeviceProfile(1e6), rng) == 0.0
    assert compute_time(25e6, DeviceProfile(25e6), rng) == 1.0


def test_setup_mean_monte_carlo():
    rng = np.random.default_rng(1)
    prof = DeviceProfile(1e9, setup_mean=0.3)
    draws = np.array([compute_time(0, prof, rng) for _ in range(100_000)])
    assert abs(draws.mean() / 0.3 - 1) < 0.02


def test_setup_ratio_is_half_of_compute_time():
    prof = DeviceProfile(2e6, setup_ratio=0.5)
    assert prof.mean_setup(4e6) == 1.0


def test_transfer_examples():
    rng = np.random.default_rng(0)
    assert transfer_time(0, 1e6, 0.3, 1.1, rng) == 0.0
    assert transfer_time(1e7, 1e7, 0.0, 1.1, rng) == pytest.approx(1.1)


def test_geometric_retries_mean():
    rng = np.random.default_rng(2)
    draws = np.array([transfer_time(1.0, 1.0, 0.1, 1.0, rng) for _ in range(100_000)])
    assert abs(draws.mean() * 0.9 - 1) < 0.02
    assert draws.min() == 1.0


def test_mac_counts():
    assert mac_count("ct_multiply", c=1, d=1, n=1) == 1
    assert mac_count("ct_multiply", c=10, d=2000, n=4000) == 80_000_000
    assert mac_count("gram", n_i=2400, d=2000) == 9_600_000_000
    assert mac_count("baseline_batch", n_i=10, d=2, c=1, batch_fraction=0.25) == 2 * 3 * 2
    with pytest.raises(ValueError):
        mac_count("nope")


def test_payload_bits():
    assert payload_bits(10, 4000) == 1_280_000


def test_monotone_in_rho_and_bits():
    prof = DeviceProfile(1e6, setup_ratio=0.5)
    t = [compute_time(r, prof, Streams(3).rng("c", 0)) for r in (0, 1e5, 1e6, 1e7)]
    assert t == sorted(t)
    b = [transfer_time(x, 1e6, 0.2, 1.1, Streams(3).rng("u", 0)) for x in (0, 1e3, 1e6)]
    assert b == sorted(b)


def test_streams_reproducible_and_independent():
    a = Streams(7).rng("compute", 1, 2).random(5)
    assert np.array_equal(a, Streams(7).rng("compute", 1, 2).random(5))
    assert not np.array_equal(a, Streams(7).rng("compute", 2, 2).random(5))
    assert not np.array_equal(a, Streams(7).rng("upload", 1, 2).random(5))
    assert not np.array_equal(a, Streams(8).rng("compute", 1, 2).random(5))


def test_validation():
    with pytest.raises(ConfigError):
        DeviceProfile(0)
    with pytest.raises(ConfigError):
        DeviceProfile(1, p_fail=1.0)
    with pytest.raises(ConfigError):
        LinkRates(1, 1, 1, overhead_factor=0.9)
    with pytest.raises(ValueError):
        compute_time(-1, DeviceProfile(1), np.random.default_rng())
