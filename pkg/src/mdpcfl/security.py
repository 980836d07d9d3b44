"""Security-level estimates (log2 work factors).

Over large alphabets the refined ISD variants cost asymptotically what plain
(Prange) ISD costs, so every attack surface is priced with the Prange model:

    iterations     = C(n, k) / C(n - t, k)
    per iteration  = (n - k)^2 * n      (one Gaussian elimination)

The decoding-one-out-of-many gain sqrt(nu) is always subtracted when its
applicability condition holds, even though it is only established for binary
codes. The error code adds a brute-force floor of beta * log2(q).
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

from mdpcfl.errors import InvalidParams

LN2 = math.log(2.0)


@dataclass(frozen=True)
class SecurityParams:
    n: int
    k: int
    t: int
    q_bits: int = 32
    nu: int = 1
    beta: int = 4
    d_error_code: int | None = None  # defaults to t - beta + 1

    def __post_init__(self):
        if not 0 < self.k < self.n:
            raise InvalidParams("need 0 < k < n")
        if not 0 <= self.t <= self.n - self.k:
            raise InvalidParams("need 0 <= t <= n - k")
        if self.nu < 1:
            raise InvalidParams("nu must be >= 1")
        if self.beta < 1:
            raise InvalidParams("beta must be >= 1")

    @property
    def low_weight(self) -> int:
        return self.d_error_code if self.d_error_code is not None else max(self.t - self.beta + 1, 0)


def log2_comb(n: int, k: int) -> float:
    if k < 0 or k > n:
        return -math.inf
    return (math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)) / LN2


def prange_log2(n: int, k: int, t: int) -> float:
    """log2 of Prange's expected cost for weight-t errors in an [n, k] code."""
    if not 0 < k < n or not 0 <= t <= n - k:
        raise InvalidParams(f"prange outside domain: n={n}, k={k}, t={t}")
    iterations = log2_comb(n, k) - log2_comb(n - t, k)
    return iterations + math.log2((n - k) ** 2 * n)


def prange_workfactor(p: SecurityParams) -> float:
    return prange_log2(p.n, p.k, p.t)


def doom_adjust(wf_log2: float, nu: int, n: int, t: int) -> float:
    if nu < 1:
        raise InvalidParams("nu must be >= 1")
    if math.log2(nu) <= log2_comb(n, t):
        return wf_log2 - 0.5 * math.log2(nu)
    return wf_log2


def brute_force_floor(beta: int, q_bits: int) -> float:
    if beta < 1:
        raise InvalidParams("beta must be >= 1")
    return float(beta * q_bits)


def attack_costs(p: SecurityParams) -> dict:
    """Per-attack log2 work factors; the security level is their minimum."""
    costs = {
        "isd_error": doom_adjust(prange_workfactor(p), p.nu, p.n, p.t),
        "brute_force": brute_force_floor(p.beta, p.q_bits),
    }
    k_ext = p.k + p.beta
    w = p.low_weight
    if k_ext < p.n and 0 <= w <= p.n - k_ext:
        costs["low_weight_codeword"] = doom_adjust(prange_log2(p.n, k_ext, w), p.nu, p.n, w)
    return costs


def security_level(p: SecurityParams) -> float:
    return min(attack_costs(p).values())


TABLE_ROWS = (
    # log2(q), n, k, beta, t_tot, t
    (32, 4000, 2000, 4, 256, 128),
    (32, 4000, 2000, 4, 256, 64),
)


def table(rows=TABLE_ROWS, nu: int = 2000) -> list:
    out = []
    for q_bits, n, k, beta, t_tot, t in rows:
        p = SecurityParams(n=n, k=k, t=t, q_bits=q_bits, nu=nu, beta=beta)
        costs = attack_costs(p)
        out.append({
            "q_bits": q_bits, "n": n, "k": k, "beta": beta, "t_tot": t_tot, "t": t,
            "d_error_code": p.low_weight, "nu": nu,
            "isd_error": round(costs["isd_error"], 3),
            "low_weight_codeword": round(costs.get("low_weight_codeword", math.inf), 3),
            "brute_force": round(costs["brute_force"], 3),
            "security_level": round(min(costs.values()), 3),
        })
    return out


def table_csv(rows) -> str:
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return buf.getvalue()
