"""MDPC parity-check construction, real generator matrices and peeling.

H has 0/1 entries and all arithmetic is float64, so each peeling step is a
plain negated sum over one check row.
"""
from __future__ import annotations

import heapq
import io
import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from mdpcfl import kernels
from mdpcfl.errors import InfeasibleDegree, InvalidParams, ScheduleMismatch, SingularBlock

KEY_FORMAT = "mdpcfl-key"
KEY_VERSION = 1
PIVOT_THRESHOLD = 1e-12
# The 4-cycle removal pass works on a dense r x r overlap matrix.
REFINE_MAX_CHECKS = 128


@dataclass(eq=False)
class SparseParityCheck:
    """Binary parity-check matrix stored as per-row column index arrays."""

    n: int
    rows: tuple
    check_degree: int | None = None

    def __post_init__(self):
        self.rows = tuple(np.unique(np.asarray(row, dtype=np.int64)) for row in self.rows)
        for row in self.rows:
            if row.size and (row[0] < 0 or row[-1] >= self.n):
                raise InvalidParams("column index out of range")
        if self.check_degree is None:
            weights = {row.size for row in self.rows}
            self.check_degree = weights.pop() if len(weights) == 1 else None

    @classmethod
    def from_dense(cls, mat) -> SparseParityCheck:
        mat = np.asarray(mat)
        return cls(mat.shape[1], tuple(np.flatnonzero(row) for row in mat))

    @property
    def r(self) -> int:
        return len(self.rows)

    @property
    def k(self) -> int:
        return self.n - self.r

    def dense(self, dtype=np.float64) -> np.ndarray:
        out = np.zeros((self.r, self.n), dtype=dtype)
        for c, row in enumerate(self.rows):
            out[c, row] = 1
        return out

    @cached_property
    def csr(self) -> sp.csr_matrix:
        indptr = np.concatenate([[0], np.cumsum([row.size for row in self.rows])])
        indices = np.concatenate(self.rows) if self.rows else np.zeros(0, dtype=np.int64)
        return sp.csr_matrix((np.ones(indices.size), indices, indptr), shape=(self.r, self.n))

    @cached_property
    def adjacency(self):
        """Padded ``(chk_adj, chk_deg, var_adj, var_deg)`` arrays for the kernels."""
        chk_deg = np.array([row.size for row in self.rows], dtype=np.int64)
        chk_adj = -np.ones((self.r, max(1, chk_deg.max(initial=0))), dtype=np.int64)
        for c, row in enumerate(self.rows):
            chk_adj[c, : row.size] = row
        var_deg = np.zeros(self.n, dtype=np.int64)
        np.add.at(var_deg, chk_adj[chk_adj >= 0], 1)
        var_adj = -np.ones((self.n, max(1, var_deg.max(initial=0))), dtype=np.int64)
        fill = np.zeros(self.n, dtype=np.int64)
        for c, row in enumerate(self.rows):
            var_adj[row, fill[row]] = c
            fill[row] += 1
        return chk_adj, chk_deg, var_adj, var_deg

    @cached_property
    def checks_of(self) -> list:
        _, _, var_adj, var_deg = self.adjacency
        return [var_adj[v, : var_deg[v]] for v in range(self.n)]

    def column_degrees(self) -> np.ndarray:
        return self.adjacency[3].copy()

    def rank(self) -> int:
        return int(np.linalg.matrix_rank(self.dense()))

    def validate(self) -> None:
        """Raise InvalidParams unless the regular-row, full-rank, distinct-row invariants hold."""
        if self.check_degree is None or any(row.size != self.check_degree for row in self.rows):
            raise InvalidParams("rows do not share one check degree")
        if len({row.tobytes() for row in self.rows}) != self.r:
            raise InvalidParams("duplicate rows")
        if self.rank() != self.r:
            raise InvalidParams("parity-check matrix is rank deficient")


@dataclass(eq=False)
class GeneratorMatrix:
    """Real k x n generator; ``entries[:, info_positions]`` is the identity."""

    entries: np.ndarray
    info_positions: np.ndarray
    parity_positions: np.ndarray

    @property
    def k(self) -> int:
        return self.entries.shape[0]

    @property
    def n(self) -> int:
        return self.entries.shape[1]

    @property
    def permutation(self) -> np.ndarray:
        """Column order that puts G in ``[I | P]`` form."""
        return np.concatenate([self.info_positions, self.parity_positions])

    def encode(self, msg):
        return np.asarray(msg) @ self.entries

    def extract(self, word):
        return np.asarray(word)[..., self.info_positions]


@dataclass(eq=False)
class KeyPair:
    h: SparseParityCheck
    g: GeneratorMatrix
    seed: int | None = None
    key_id: str = field(default="")

    def __post_init__(self):
        if not self.key_id:
            self.key_id = f"n{self.h.n}-r{self.h.r}-w{self.h.check_degree}-s{self.seed}"


@dataclass
class PeelingSchedule:
    erasure_set: np.ndarray
    steps: list
    success: bool


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

def _variable_degrees(n, r, check_degree):
    total = r * check_degree
    base, extra = divmod(total, n)
    degrees = np.full(n, base, dtype=np.int64)
    if extra:
        degrees[n - extra :] += 1
    return degrees


def peg_construct(
    n: int, r: int, check_degree: int, seed: int = 0, *, backend=None, max_attempts: int = 16, refine: bool = True
) -> SparseParityCheck:
    """Build a check-regular Tanner graph by progressive edge growth.

    Variables are processed in index order, low degree first. Each new edge of
    a variable goes to a check with spare capacity at maximal BFS distance,
    breaking ties by smallest current degree and then by a seeded check
    ranking. If a seed yields a rank-deficient or duplicate-row matrix the
    ranking is redrawn (at most ``max_attempts`` times).

    With the check-degree cap the greedy can paint itself into a corner on
    small graphs where a 4-cycle-free layout exists. ``refine`` then runs a
    degree-preserving edge-swap pass that removes 4-cycles (see
    ``break_four_cycles``).
    """
    if check_degree < 2 or check_degree > n or r * check_degree < n:
        raise InfeasibleDegree(f"cannot build r={r} checks of degree {check_degree} over n={n}")
    if not 0 < r < n:
        raise InvalidParams("need 0 < r < n")
    degrees = _variable_degrees(n, r, check_degree)
    if degrees.max() > r:
        raise InfeasibleDegree("variable degree exceeds number of checks")
    ss = np.random.SeedSequence(seed)
    for attempt in range(max_attempts):
        rng = np.random.default_rng(ss.spawn(1)[0] if attempt else ss)
        prio = rng.permutation(r)
        chk_adj, chk_deg, _, _ = kernels.peg(n, r, check_degree, degrees, prio, backend=backend)
        h = SparseParityCheck(n, tuple(chk_adj[c, : chk_deg[c]] for c in range(r)), check_degree)
        if refine and four_cycle_free_possible(n, r, degrees) and r <= REFINE_MAX_CHECKS:
            h = break_four_cycles(h, rng)
        try:
            h.validate()
        except InvalidParams:
            continue
        return h
    raise InfeasibleDegree(f"no full-rank PEG matrix after {max_attempts} attempts")


def four_cycle_free_possible(n, r, degrees) -> bool:
    """Counting bound: each variable of degree dv occupies C(dv, 2) distinct check pairs."""
    degrees = np.asarray(degrees, dtype=np.int64)
    return int((degrees * (degrees - 1) // 2).sum()) <= r * (r - 1) // 2


def overlap_matrix(h: SparseParityCheck) -> np.ndarray:
    """O[a, b] = number of variables shared by checks a and b (zero diagonal)."""
    o = (h.csr @ h.csr.T).toarray().astype(np.int64)
    np.fill_diagonal(o, 0)
    return o


def four_cycle_excess(o) -> int:
    return int(np.triu(np.maximum(o - 1, 0), 1).sum())


def break_four_cycles(h: SparseParityCheck, rng, max_passes: int | None = None) -> SparseParityCheck:
    """Swap edge endpoints (c1, v), (c3, w) -> (c3, v), (c1, w) while doing so
    strictly lowers the number of excess check-pair overlaps.

    Every accepted swap lowers the excess, so the loop terminates without a
    pass limit; ``max_passes`` only bounds the work.
    """
    rows = [set(map(int, row)) for row in h.rows]
    cols = [set() for _ in range(h.n)]
    for c, row in enumerate(rows):
        for v in row:
            cols[v].add(c)
    o = overlap_matrix(h)

    def excess_delta(v, c1, w, c3):
        change = {}
        for x in cols[v] - {c1}:
            change[(c1, x)] = change.get((c1, x), 0) - 1
            change[(c3, x)] = change.get((c3, x), 0) + 1
        for y in cols[w] - {c3}:
            change[(c3, y)] = change.get((c3, y), 0) - 1
            change[(c1, y)] = change.get((c1, y), 0) + 1
        delta = 0
        for (a, b), dlt in change.items():
            if dlt:
                old = o[a, b]
                delta += max(old + dlt - 1, 0) - max(old - 1, 0)
        return delta, change

    def try_pair(c1, c2):
        for v in sorted(rows[c1] & rows[c2]):
            for c3 in rng.permutation(h.r):
                c3 = int(c3)
                if c3 in cols[v]:
                    continue
                for w in sorted(rows[c3] - rows[c1]):
                    delta, change = excess_delta(v, c1, w, c3)
                    if delta < 0:
                        for (a, b), dlt in change.items():
                            o[a, b] += dlt
                            o[b, a] += dlt
                        rows[c1].remove(v)
                        rows[c1].add(w)
                        rows[c3].remove(w)
                        rows[c3].add(v)
                        cols[v].remove(c1)
                        cols[v].add(c3)
                        cols[w].remove(c3)
                        cols[w].add(c1)
                        return True
        return False

    passes = 0
    while max_passes is None or passes < max_passes:
        passes += 1
        bad = np.argwhere(np.triu(o >= 2, 1))
        improved = False
        for c1, c2 in bad[rng.permutation(len(bad))]:
            if o[c1, c2] >= 2 and try_pair(int(c1), int(c2)):
                improved = True
        if not improved:
            break
    return SparseParityCheck(h.n, tuple(np.array(sorted(row), dtype=np.int64) for row in rows), h.check_degree)


def derive_generator(h: SparseParityCheck) -> GeneratorMatrix:
    """Systematic real generator for the null space of H.

    Parity positions are the first r pivots of a column-pivoted QR of H, which
    picks a well-conditioned invertible block B. With I the remaining columns
    the parity part is ``-(H_B^-1 H_I)^T``.
    """
    dense = h.dense()
    _, rr, piv = sla.qr(dense, mode="economic", pivoting=True)
    diag = np.abs(np.diag(rr))
    if diag.size < h.r or diag[h.r - 1] <= PIVOT_THRESHOLD * max(diag[0], 1.0):
        raise SingularBlock("no invertible r-column block in H")
    parity = np.sort(piv[: h.r])
    info = np.setdiff1d(np.arange(h.n), parity)
    try:
        lu = sla.lu_factor(dense[:, parity], check_finite=False)
    except (ValueError, np.linalg.LinAlgError) as exc:  # pragma: no cover
        raise SingularBlock(str(exc)) from exc
    p = -sla.lu_solve(lu, dense[:, info], check_finite=False).T
    entries = np.zeros((info.size, h.n))
    entries[:, info] = np.eye(info.size)
    entries[:, parity] = p
    return GeneratorMatrix(entries, info, parity)


def keygen(n: int, k: int, check_degree: int, seed: int = 0, *, backend=None) -> KeyPair:
    h = peg_construct(n, n - k, check_degree, seed, backend=backend)
    return KeyPair(h, derive_generator(h), seed)


def generator_residual(g: GeneratorMatrix, h: SparseParityCheck) -> float:
    """max|G H^T| / max|G|."""
    res = np.abs(h.csr @ g.entries.T).max() if h.r else 0.0
    return float(res / np.abs(g.entries).max())


# ---------------------------------------------------------------------------
# peeling
# ---------------------------------------------------------------------------

def plan_peeling(h: SparseParityCheck, erasures) -> PeelingSchedule:
    """Greedy peeling order; always takes the lowest-index check with one unknown."""
    erased = np.unique(np.asarray(list(erasures) if not isinstance(erasures, np.ndarray) else erasures, dtype=np.int64))
    if erased.size and (erased[0] < 0 or erased[-1] >= h.n):
        raise InvalidParams("erasure position out of range")
    unknown = np.zeros(h.n, dtype=bool)
    unknown[erased] = True
    count = np.zeros(h.r, dtype=np.int64)
    checks_of = h.checks_of
    for v in erased:
        count[checks_of[v]] += 1
    heap = [int(c) for c in np.flatnonzero(count == 1)]
    heapq.heapify(heap)
    steps = []
    while heap:
        c = heapq.heappop(heap)
        if count[c] != 1:
            continue
        row = h.rows[c]
        pos = int(row[unknown[row]][0])
        unknown[pos] = False
        steps.append((c, pos))
        for c2 in checks_of[pos]:
            count[c2] -= 1
            if count[c2] == 1:
                heapq.heappush(heap, int(c2))
    return PeelingSchedule(erased, steps, len(steps) == erased.size)


def _run_schedule(schedule: PeelingSchedule, h: SparseParityCheck, word: np.ndarray) -> np.ndarray:
    # word: (..., n) with erased entries already zeroed
    for c, pos in schedule.steps:
        word[..., pos] = -word[..., h.rows[c]].sum(axis=-1)
    return word


def apply_peeling(schedule: PeelingSchedule, h: SparseParityCheck, word) -> np.ndarray:
    """Fill the NaN-marked erased entries of ``word`` (1-D or row-stacked)."""
    word = np.array(word, dtype=np.float64)
    missing = np.isnan(word)
    cols = np.flatnonzero(missing.any(axis=tuple(range(word.ndim - 1))))
    if word.ndim > 1 and not np.array_equal(missing, np.broadcast_to(missing.any(axis=0), missing.shape)):
        raise ScheduleMismatch("rows carry different erasure sets")
    if not np.array_equal(cols, schedule.erasure_set):
        raise ScheduleMismatch("word erasures differ from the schedule's erasure set")
    if not schedule.success:
        raise ScheduleMismatch("schedule did not succeed")
    word[missing] = 0.0
    return _run_schedule(schedule, h, word)


def erasure_patterns(n: int, t_tot: int, trials: int, seed: int, start: int = 0) -> np.ndarray:
    """Uniform t_tot-subsets of [n]; trial i uses stream (seed, i)."""
    out = np.empty((trials, t_tot), dtype=np.int64)
    for j in range(trials):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(start + j,)))
        out[j] = rng.choice(n, t_tot, replace=False)
    return out


def count_peeling_failures(h: SparseParityCheck, t_tot: int, trials: int, seed: int = 0, *, chunk: int = 20000, backend=None, n_jobs: int = 1) -> int:
    if trials < 1:
        raise InvalidParams("trials must be >= 1")
    if not 0 <= t_tot <= h.n:
        raise InvalidParams("need 0 <= t_tot <= n")
    if t_tot == 0:
        return 0
    adj = h.adjacency
    starts = range(0, trials, chunk)

    def one(start):
        pats = erasure_patterns(h.n, t_tot, min(chunk, trials - start), seed, start)
        return int(kernels.peel_failures(*adj, pats, backend=backend).sum())

    if n_jobs == 1:
        return sum(one(s) for s in starts)
    from joblib import Parallel, delayed

    return sum(Parallel(n_jobs=n_jobs, prefer="threads")(delayed(one)(s) for s in starts))


def estimate_fer(h: SparseParityCheck, t_tot: int, trials: int, seed: int = 0, **kw) -> float:
    return count_peeling_failures(h, t_tot, trials, seed, **kw) / trials


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def save_key(key: KeyPair, path) -> None:
    """Write an ``.npz`` container: JSON header, flat H rows, G (float64), info positions."""
    header = {
        "format": KEY_FORMAT,
        "version": KEY_VERSION,
        "key_id": key.key_id,
        "n": key.h.n,
        "r": key.h.r,
        "check_degree": key.h.check_degree,
        "seed": key.seed,
    }
    row_lengths = np.array([row.size for row in key.h.rows], dtype=np.int64)
    if hasattr(path, "write"):
        _write_key(path, header, row_lengths, key)
    else:
        with open(path, "wb") as fh:
            _write_key(fh, header, row_lengths, key)


def _write_key(fh, header, row_lengths, key):
    np.savez(
        fh,
        header=np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8),
        h_indices=np.concatenate(key.h.rows),
        h_row_lengths=row_lengths,
        g=key.g.entries,
        info_positions=key.g.info_positions,
    )


def load_key(path) -> KeyPair:
    with np.load(path) as z:
        header = json.loads(bytes(z["header"]).decode())
        if header.get("format") != KEY_FORMAT or header.get("version") != KEY_VERSION:
            raise InvalidParams(f"unsupported key container {header.get('format')!r} v{header.get('version')}")
        rows = np.split(z["h_indices"], np.cumsum(z["h_row_lengths"])[:-1])
        h = SparseParityCheck(header["n"], tuple(rows), header["check_degree"])
        info = z["info_positions"]
        g = GeneratorMatrix(z["g"], info, np.setdiff1d(np.arange(h.n), info))
    return KeyPair(h, g, header["seed"], header["key_id"])


def key_bytes(key: KeyPair) -> bytes:
    buf = io.BytesIO()
    save_key(key, buf)
    return buf.getvalue()
