import math

import pytest

from mdpcfl import security
from mdpcfl.errors import InvalidParams
from mdpcfl.security import SecurityParams


def test_log2_comb_matches_exact():
    for n in range(61):
        for k in range(n + 1):
            want = math.log2(math.comb(n, k))
            got = security.log2_comb(n, k)
            assert got == pytest.approx(want, rel=1e-10, abs=1e-10)


def test_prange_examples():
    assert security.prange_log2(10, 5, 0) == pytest.approx(math.log2(25 * 10))
    want = math.log2(math.comb(10, 5) / math.comb(8, 5)) + math.log2(25 * 10)
    assert security.prange_log2(10, 5, 2) == pytest.approx(want)
    assert security.prange_log2(10, 5, 2) == pytest.approx(10.14, abs=0.01)
    assert security.prange_log2(4000, 2000, 128) > security.prange_log2(4000, 2000, 64)


def test_doom():
    assert security.doom_adjust(100.0, 1, 4000, 64) == 100.0
    assert security.doom_adjust(100.0, 1024, 4000, 64) == 95.0
    assert security.doom_adjust(100.0, 6, 5, 1) == 100.0


def test_brute_force():
    assert security.brute_force_floor(4, 32) == 128.0
    assert security.brute_force_floor(1, 32) == 32.0
    assert security.brute_force_floor(3, 32) == 96.0


def test_floor_caps_level():
    p = SecurityParams(4000, 2000, 128, nu=2000)
    assert security.security_level(p) <= 128.0


def test_min_semantics():
    p = SecurityParams(4000, 2000, 64, nu=2000)
    costs = security.attack_costs(p)
    assert security.security_level(p) == min(costs.values())


def test_table_levels():
    rows = security.table()
    by_t = {r["t"]: r["security_level"] for r in rows}
    assert abs(by_t[128] - 128) <= 15
    assert abs(by_t[64] - 92) <= 15


def test_monotone_sweeps():
    lv = [security.security_level(SecurityParams(4000, 2000, t, nu=2000)) for t in range(8, 257, 8)]
    assert all(b >= a for a, b in zip(lv, lv[1:]))


def test_beta_sweep_components():
    # Raising beta lifts the brute-force floor but lowers the error-code
    # distance t - beta + 1, so the low-weight search gets cheaper. The level
    # rises with beta only while the floor is the binding attack.
    costs = [security.attack_costs(SecurityParams(4000, 2000, 128, nu=2000, beta=b)) for b in range(1, 9)]
    floor = [c["brute_force"] for c in costs]
    low = [c["low_weight_codeword"] for c in costs]
    assert floor == sorted(floor) and low == sorted(low, reverse=True)
    assert len({round(c["isd_error"], 9) for c in costs}) == 1
    levels = [min(c.values()) for c in costs]
    binding = [lv == c["brute_force"] for lv, c in zip(levels, costs)]
    assert binding[:4] == [True] * 4
    assert levels[:4] == [32.0, 64.0, 96.0, 128.0]


def test_invalid():
    with pytest.raises(InvalidParams):
        SecurityParams(10, 10, 0)
    with pytest.raises(InvalidParams):
        SecurityParams(10, 5, 6)
    with pytest.raises(InvalidParams):
        SecurityParams(10, 5, 1, nu=0)


def test_csv():
    text = security.table_csv(security.table())
    lines = text.strip().split("\n")
    assert lines[0].startswith("q_bits,n,k,beta") and len(lines) == 3
