"""Epoch-level simulation of the coded scheme and of mini-batch FL."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from mdpcfl import crypto, data as datamod, fl_core, protocol
from mdpcfl.config import ExperimentConfig
from mdpcfl.errors import ConfigError, StoppingSet
from mdpcfl.latency import Streams, compute_time, mac_count, payload_bits, transfer_time
from mdpcfl.mdpc_code import keygen, load_key, plan_peeling, save_key
from mdpcfl.support_alloc import build_plan

log = logging.getLogger(__name__)

CSV_COLUMNS = ("epoch", "sim_time_s", "accuracy", "loss", "K", "transfers")


@dataclass
class EpochRecord:
    epoch: int
    sim_time_s: float
    accuracy: float
    loss: float
    K: int
    transfers: int
    decoded: bool = True
    L: int = 0
    epoch_time_s: float = 0.0
    sharing_time_s: float = 0.0


@dataclass
class SimTimeline:
    name: str
    records: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    aggregates: list = field(default_factory=list)  # (epoch, R, oracle) when recorded
    thetas: list = field(default_factory=list)
    targets: tuple = (0.95,)

    def time_to(self, target: float):
        for r in self.records:
            if r.accuracy >= target:
                return r.sim_time_s
        return None

    def summary(self, baseline: SimTimeline | None = None) -> dict:
        out = {
            "name": self.name,
            "epochs": len(self.records),
            "final_accuracy": self.records[-1].accuracy if self.records else None,
            "final_time_s": self.records[-1].sim_time_s if self.records else None,
            "time_to_target": {f"{t:g}": self.time_to(t) for t in self.targets},
        }
        if baseline is not None:
            out["speedup"] = {f"{t:g}": speedup(baseline.time_to(t), self.time_to(t)) for t in self.targets}
        return out


def speedup(baseline_time, coded_time):
    if baseline_time is None or coded_time is None or coded_time <= 0:
        return None
    return baseline_time / coded_time


class GramOperator:
    """A_v = X^T X without materialising it until an explicit copy is needed."""

    __array_ufunc__ = None  # make ndarray @ GramOperator defer to __rmatmul__

    def __init__(self, x, k):
        self.x = x
        self.k = k
        self.shape = (x.shape[1], k)

    def __rmatmul__(self, left):
        # (left A_v) padded with zero columns up to k
        out = np.zeros((left.shape[0], self.k))
        out[:, : self.x.shape[1]] = (left @ self.x.T) @ self.x
        return out

    def dense(self):
        out = np.zeros(self.shape)
        out[:, : self.x.shape[1]] = self.x.T @ self.x
        return out


@dataclass
class World:
    cfg: ExperimentConfig
    dataset: datamod.Dataset
    parts: list
    profiles: list
    key: object = None
    plan: object = None
    error_blocks: dict = field(default_factory=dict)  # support id -> d x t block

    @property
    def m(self) -> int:
        return sum(p.n_i for p in self.parts)

    @property
    def support_positions(self) -> dict:
        return {u: s for u, s in enumerate(self.plan.supports)}

    def error_matrix(self, sid: int) -> np.ndarray:
        out = np.zeros((self.dataset.d, self.key.h.n))
        out[:, self.plan.supports[sid]] = self.error_blocks[sid]
        return out


def load_data(cfg: ExperimentConfig) -> datamod.Dataset:
    dc = cfg.data
    if dc.kind == "synthetic":
        return datamod.synth_regression(dc.m, dc.d, dc.c, dc.noise_sigma, seed=cfg.seed)
    if dc.mnist_dir and os.path.exists(str(dc.mnist_dir)) and str(dc.mnist_dir).endswith(".npz"):
        return datamod.load_dataset(dc.mnist_dir)
    return datamod.prepare_mnist(dc.mnist_dir, dc.d_out, dc.gamma, seed=cfg.seed, normalize=dc.normalize)


def get_key(cfg: ExperimentConfig):
    c = cfg.code
    if c.key_path and os.path.exists(c.key_path):
        key = load_key(c.key_path)
        if (key.h.n, key.g.k, key.h.check_degree) != (c.n, c.k, c.check_degree):
            raise ConfigError(f"cached key {c.key_path} does not match the configured code")
        return key
    key = keygen(c.n, c.k, c.check_degree, seed=c.key_seed)
    if c.key_path:
        save_key(key, c.key_path)
    return key


def build_world(cfg: ExperimentConfig, *, with_crypto: bool = True, dataset=None) -> World:
    cfg.validate()
    ds = dataset if dataset is not None else load_data(cfg)
    parts = datamod.partition(ds.train, cfg.devices.n_devices, seed=cfg.seed)
    world = World(cfg, ds, parts, cfg.devices.profiles())
    if not with_crypto:
        return world
    key = get_key(cfg)
    if ds.d > key.g.k:
        raise ConfigError(f"feature dimension {ds.d} exceeds code dimension {key.g.k}")
    s = cfg.support
    # Draw E until peeling succeeds on it; any subset of E then peels too.
    for attempt in range(s.max_redraws):
        plan = build_plan(key.h.n, s.t_tot, s.t, s.lambda_max, seed=(cfg.seed, attempt), max_supports=s.max_supports)
        if plan_peeling(key.h, plan.global_set).success:
            break
        log.warning("global erasure set %d is a stopping set; redrawing", attempt)
    else:
        raise StoppingSet(f"no peelable global set in {s.max_redraws} draws")
    world.key, world.plan = key, plan
    streams = Streams(cfg.seed)
    for u in range(plan.M):
        spec = crypto.make_error_code(s.t, s.beta, ds.d, seed=streams.rng("errcode", u))
        world.error_blocks[u] = crypto.error_submatrix(spec, seed=streams.rng("errmix", u))
    return world


def _forced(cfg: ExperimentConfig) -> dict:
    out = {}
    for fd in cfg.forced_delays:
        out[(fd.epoch, fd.device)] = out.get((fd.epoch, fd.device), 0.0) + fd.seconds
    return out


def _evaluate(model, ds):
    loss, acc = fl_core.evaluate(model, ds.test)
    return loss, acc


def run_simulation(cfg: ExperimentConfig, world: World | None = None) -> SimTimeline:
    """Coded scheme with adaptive straggler-driven data sharing."""
    w = world or build_world(cfg)
    ds, key, links = w.dataset, w.key, cfg.links.rates()
    n_dev, d, c, n = len(w.parts), ds.d, ds.c, key.h.n
    streams = Streams(cfg.seed)
    forced = _forced(cfg)
    lc = cfg.learning
    tl = SimTimeline(cfg.name + "-coded", targets=tuple(lc.targets))
    model = fl_core.ModelState.zeros(d, c, mu=lc.mu, lam=lc.lam, schedule=tuple(map(tuple, lc.schedule)))
    grad1 = sum(fl_core.first_gradient(p) for p in w.parts)
    grams = {v: GramOperator(p.X, key.g.k) for v, p in enumerate(w.parts)}
    states = {v: protocol.DeviceState(v) for v in range(n_dev)}
    ledger = protocol.PartitionLedger(n_dev)
    unused = list(range(w.plan.M))
    positions = w.support_positions
    schedules = {}
    rho = mac_count("ct_multiply", c=c, d=d, n=n)
    server_tau = cfg.devices.server_tau
    now = 0.0
    for e in range(1, lc.epochs + 1):
        active = [v for v in range(n_dev) if states[v].active]
        finish, report = {}, {}
        for v in active:
            prof = w.profiles[v]
            comp = compute_time(rho, prof, streams.rng("compute", v, e)) + forced.get((e, v), 0.0)
            if e == 1:
                up = transfer_time(payload_bits(d, c), links.up, prof.p_fail, links.overhead_factor, streams.rng("up", v, e))
                finish[v], report[v] = up, comp
            else:
                down = transfer_time(payload_bits(d, c), links.down, prof.p_fail, links.overhead_factor, streams.rng("down", v, e))
                up = transfer_time(payload_bits(c, n), links.up, prof.p_fail, links.overhead_factor, streams.rng("up", v, e))
                finish[v] = report[v] = down + comp + up
        if e == 1:
            server_macs = mac_count("aggregate", parts=len(active), rows=d, cols=c)
            model = fl_core.update_from_aggregate(grad1 / w.m, model)
        else:
            vartheta = model.vartheta
            # E was checked to peel at setup, so every subset of it peels too.
            r_mat, erasures = protocol.epoch_compute_and_aggregate(states, vartheta, key, positions, grams, schedules)
            if not set(erasures.tolist()) <= set(w.plan.global_set.tolist()):
                raise AssertionError("aggregate error support escapes the global erasure set")
            steps = len(schedules[erasures.tobytes()].steps)
            server_macs = mac_count("aggregate", parts=len(active), rows=c, cols=n) + mac_count(
                "decode", c=c, steps=steps, check_degree=key.h.check_degree
            )
            if cfg.record_aggregates:
                oracle = vartheta.T @ sum(p.X.T @ p.X for p in w.parts)
                tl.aggregates.append((e, r_mat, oracle))
            model = fl_core.update_from_aggregate((grad1 + r_mat.T) / w.m, model)
        epoch_time = max(finish.values()) + server_macs / server_tau
        now += epoch_time

        for v in active:
            states[v].response_time = report[v]
        straggling = protocol.detect_stragglers(report, cfg.delta)
        plan = protocol.plan_epoch_sharing(states, straggling, len(unused), e, unused)
        sharing = 0.0
        if plan.transfers:
            sharing = _share(plan, states, ledger, w, streams, e)
        unused = unused[plan.remaining_before - plan.remaining_after :]
        now += sharing
        tl.trace.append(plan.to_dict())

        loss, acc = _evaluate(model, ds)
        if cfg.record_aggregates:
            tl.thetas.append(model.Theta.copy())
        tl.records.append(EpochRecord(e, now, acc, loss, len(active), len(plan.transfers), True, len(unused), epoch_time, sharing))
    return tl


def _share(plan, states, ledger, w: World, streams: Streams, e: int) -> float:
    """Perform the plan's D2D transfers; returns the phase duration (transfers run in parallel)."""
    key, links = w.key, w.cfg.links.rates()
    d, n = w.dataset.d, key.h.n
    bits = payload_bits(d, n)
    grams = _DenseGrams(w)
    arrive = {}

    def make_payload(snd, t):
        ct = snd.ciphertext
        if ct is None:
            # A_u G is precomputed offline
            ct = crypto.encrypt(grams[snd.id], key)
        prep = 0.0
        if t.adds_new_error:
            ct = crypto.add_error(ct, w.error_matrix(t.support_id), t.support_id)
            prep = compute_time(mac_count("add_error", d=d, n=n), w.profiles[snd.id], streams.rng("prep", snd.id, e))
        hop = transfer_time(bits, links.d2d, links.p_d2d, links.overhead_factor, streams.rng("d2d", snd.id, e))
        arrive.setdefault(t.recipient, []).append(prep + hop)
        return ct

    def encode_own(rcv):
        return crypto.encrypt(grams[rcv.id], key)

    protocol.apply_transfers(plan, states, ledger, make_payload, encode_own)
    done = []
    for r, times in arrive.items():
        merge = compute_time(len(times) * mac_count("add_error", d=d, n=n), w.profiles[r], streams.rng("merge", r, e))
        done.append(max(times) + merge)
    return max(done)


class _DenseGrams:
    def __init__(self, w: World):
        self.w = w

    def __getitem__(self, v):
        return GramOperator(self.w.parts[v].X, self.w.key.g.k).dense()


def run_baseline(cfg: ExperimentConfig, world: World | None = None) -> SimTimeline:
    """Mini-batch FL: every device uploads a batch gradient each epoch."""
    w = world or build_world(cfg, with_crypto=False)
    ds, links = w.dataset, cfg.links.rates()
    n_dev, d, c = len(w.parts), ds.d, ds.c
    streams = Streams(cfg.seed)
    forced = _forced(cfg)
    lc = cfg.learning
    tl = SimTimeline(cfg.name + "-baseline", targets=tuple(lc.targets))
    model = fl_core.ModelState.zeros(d, c, mu=lc.mu, lam=lc.lam, schedule=tuple(map(tuple, lc.schedule)))
    server = mac_count("aggregate", parts=n_dev, rows=d, cols=c) / cfg.devices.server_tau
    now = 0.0
    for e in range(1, lc.epochs + 1):
        finish = {}
        grads = []
        for v, part in enumerate(w.parts):
            prof = w.profiles[v]
            up = transfer_time(payload_bits(d, c), links.up, prof.p_fail, links.overhead_factor, streams.rng("up", v, e))
            if e == 1:
                finish[v] = up
                grads.append(fl_core.first_gradient(part))
                continue
            rho = mac_count("baseline_batch", n_i=part.n_i, d=d, c=c, batch_fraction=lc.batch_fraction)
            comp = compute_time(rho, prof, streams.rng("compute", v, e)) + forced.get((e, v), 0.0)
            down = transfer_time(payload_bits(d, c), links.down, prof.p_fail, links.overhead_factor, streams.rng("down", v, e))
            finish[v] = down + comp + up
            grads.append(fl_core.minibatch_baseline_step(part, model.Theta, lc.batch_fraction, streams.rng("batch", v, e)))
        model = fl_core.aggregate_and_update(grads, model, w.m)
        epoch_time = max(finish.values()) + server
        now += epoch_time
        loss, acc = _evaluate(model, ds)
        if cfg.record_aggregates:
            tl.thetas.append(model.Theta.copy())
        tl.records.append(EpochRecord(e, now, acc, loss, n_dev, 0, True, 0, epoch_time, 0.0))
    return tl


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def _num(x):
    return repr(float(x))


def timeline_csv(tl: SimTimeline) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(CSV_COLUMNS)
    for r in tl.records:
        wr.writerow([r.epoch, _num(r.sim_time_s), _num(r.accuracy), _num(r.loss), r.K, r.transfers])
    return buf.getvalue()


def parse_csv(text: str) -> list:
    rows = list(csv.DictReader(io.StringIO(text)))
    return [
        {"epoch": int(r["epoch"]), "sim_time_s": float(r["sim_time_s"]), "accuracy": float(r["accuracy"]),
         "loss": float(r["loss"]), "K": int(r["K"]), "transfers": int(r["transfers"])}
        for r in rows
    ]


def timeline_json(tl: SimTimeline, baseline: SimTimeline | None = None, cfg: ExperimentConfig | None = None) -> str:
    doc = {
        "summary": tl.summary(baseline),
        "records": [asdict(r) for r in tl.records],
    }
    if cfg is not None:
        doc["config"] = cfg.to_dict()
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def emit_results(tl: SimTimeline, fmt: str, path, baseline: SimTimeline | None = None, cfg=None) -> None:
    if fmt == "csv":
        text = timeline_csv(tl)
    elif fmt == "json":
        text = timeline_json(tl, baseline, cfg)
    elif fmt == "trace":
        text = json.dumps(tl.trace, indent=2, sort_keys=True) + "\n"
    else:
        raise ValueError(f"unknown format {fmt!r}")
    with open(path, "w", newline="") as fh:
        fh.write(text)


def report(coded: dict, baseline: dict, targets=None) -> dict:
    """Compare two emitted JSON summaries."""
    targets = targets or sorted(set(coded["summary"]["time_to_target"]) | set(baseline["summary"]["time_to_target"]))
    out = {"coded": coded["summary"]["name"], "baseline": baseline["summary"]["name"], "targets": {}}
    for t in targets:
        tb = baseline["summary"]["time_to_target"].get(t)
        tc = coded["summary"]["time_to_target"].get(t)
        out["targets"][t] = {"baseline_s": tb, "coded_s": tc, "speedup": speedup(tb, tc)}
    return out


def average_speedup(values) -> float | None:
    vals = [v for v in values if v is not None and math.isfinite(v)]
    return float(np.mean(vals)) if vals else None
