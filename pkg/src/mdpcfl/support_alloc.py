"""Error-support allocation.

A support plan draws the global erasure set E uniformly from [n] and carves
out M supports of size t whose pairwise intersections are at most
``lambda_max``. Supports are the incidence sets of a binary constant-weight
code of length |E| and weight t.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np

from mdpcfl.errors import InfeasibleParameters, OddDistance

# Above this many candidate t-subsets the packing falls back to the
# point-by-point greedy.
ENUMERATION_LIMIT = 200_000


@dataclass
class SupportPlan:
    n: int
    t_tot: int
    t: int
    lambda_max: int
    global_set: np.ndarray
    supports: list

    @property
    def M(self) -> int:
        return len(self.supports)

    def local_words(self) -> np.ndarray:
        """M x t_tot incidence words over the positions of E."""
        words = np.zeros((self.M, self.t_tot), dtype=np.int8)
        index = {int(p): i for i, p in enumerate(self.global_set)}
        for u, s in enumerate(self.supports):
            words[u, [index[int(p)] for p in s]] = 1
        return words

    def max_intersection(self) -> int:
        best = 0
        for a, b in itertools.combinations(self.supports, 2):
            best = max(best, np.intersect1d(a, b).size)
        return best

    def to_json(self) -> str:
        return json.dumps(
            {
                "n": self.n,
                "t_tot": self.t_tot,
                "t": self.t,
                "lambda_max": self.lambda_max,
                "global_set": self.global_set.tolist(),
                "supports": [s.tolist() for s in self.supports],
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> SupportPlan:
        d = json.loads(text)
        return cls(
            d["n"], d["t_tot"], d["t"], d["lambda_max"],
            np.asarray(d["global_set"], dtype=np.int64),
            [np.asarray(s, dtype=np.int64) for s in d["supports"]],
        )


def _pack_enumerated(t_tot, t, lam, order_rng):
    # Greedy over all t-subsets in lexicographic order: accept a subset if it
    # meets every accepted one in at most lam points.
    blocks = []
    masks = []
    for combo in itertools.combinations(range(t_tot), t):
        m = 0
        for p in combo:
            m |= 1 << p
        if all((m & o).bit_count() <= lam for o in masks):
            masks.append(m)
            blocks.append(list(combo))
    return blocks


def _pack_greedy(t_tot, t, lam, order_rng, limit=None, restarts=8):
    # Point-by-point greedy: grow each block along a seeded point order,
    # keeping every running intersection with earlier blocks <= lam.
    best = []
    for _ in range(restarts):
        blocks = []
        member = np.zeros((0, t_tot), dtype=bool)
        while True:
            order = order_rng.permutation(t_tot)
            inter = np.zeros(member.shape[0], dtype=np.int64)
            block = []
            for p in order:
                hits = member[:, p]
                if np.any(inter[hits] + 1 > lam):
                    continue
                inter[hits] += 1
                block.append(int(p))
                if len(block) == t:
                    break
            if len(block) < t:
                break
            blocks.append(sorted(block))
            row = np.zeros(t_tot, dtype=bool)
            row[block] = True
            member = np.vstack([member, row])
            if limit is not None and len(blocks) >= limit:
                break
        if len(blocks) > len(best):
            best = blocks
        if lam == 0 or (limit is not None and len(best) >= limit):
            break
    return best


def build_plan(n: int, t_tot: int, t: int, lambda_max: int, seed: int = 0, max_supports: int | None = None) -> SupportPlan:
    """Draw E and a constant-weight packing of supports inside it.

    lambda_max = 0 partitions E into floor(t_tot / t) blocks. Otherwise small
    instances use a lexicographic greedy over all t-subsets and large ones a
    seeded point-by-point greedy with restarts; the achieved M is whatever
    the greedy reaches, optionally truncated to ``max_supports``.
    """
    if not 0 <= t <= t_tot <= n:
        raise InfeasibleParameters(f"need t <= t_tot <= n, got t={t}, t_tot={t_tot}, n={n}")
    if lambda_max < 0:
        raise InfeasibleParameters("lambda_max must be >= 0")
    rng = np.random.default_rng(seed)
    global_set = np.sort(rng.choice(n, t_tot, replace=False))
    if t == 0:
        local = []
    elif lambda_max == 0:
        local = [list(range(i * t, (i + 1) * t)) for i in range(t_tot // t)]
    elif lambda_max >= t:
        local = [sorted(rng.choice(t_tot, t, replace=False).tolist()) for _ in range(max_supports or 1)]
    elif math.comb(t_tot, t) <= ENUMERATION_LIMIT:
        local = _pack_enumerated(t_tot, t, lambda_max, rng)
    else:
        local = _pack_greedy(t_tot, t, lambda_max, rng, max_supports)
    if max_supports is not None:
        local = local[:max_supports]
    # Local labels are shuffled onto E so the packing geometry is not tied to
    # the sorted order of E.
    relabel = rng.permutation(t_tot)
    supports = [np.sort(global_set[relabel[b]]) for b in local]
    return SupportPlan(n, t_tot, t, lambda_max, global_set, supports)


def intersection_from_distance(t: int, d_hamming: int) -> int:
    """|E_i & E_j| for weight-t incidence words at Hamming distance d."""
    if d_hamming % 2:
        raise OddDistance("equal-weight words are always an even distance apart")
    if not 0 <= d_hamming <= 2 * t:
        raise OddDistance(f"distance {d_hamming} impossible for weight {t}")
    return t - d_hamming // 2


def union_size(supports) -> int:
    if not supports:
        return 0
    return int(np.unique(np.concatenate([np.asarray(s, dtype=np.int64).ravel() for s in supports])).size)


def max_supports_bound(t_tot: int, t: int, lambda_max: int) -> int:
    """Largest M not excluded by double counting point-pair incidences.

    Summing |E_i & E_j| over support pairs counts, for every point p,
    C(r_p, 2) where r_p is the number of supports containing p. Convexity
    then bounds that sum from below; M is infeasible once it exceeds
    lambda_max * C(M, 2).
    """
    if t == 0:
        return 0
    m = 1
    while True:
        cand = m + 1
        total = cand * t
        q, rem = divmod(total, t_tot)
        lower = (t_tot - rem) * math.comb(q, 2) + rem * math.comb(q + 1, 2)
        if lower > lambda_max * math.comb(cand, 2):
            return m
        m = cand
        if m > 10 * t_tot:
            return m
