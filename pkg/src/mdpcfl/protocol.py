"""Server-driven adaptive data sharing.

Stragglers hand their (encrypted) data to faster devices and drop out. The
server keeps a ledger of which active device holds which data partition so
every partition enters each epoch's aggregate exactly once.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from mdpcfl import crypto
from mdpcfl.errors import ConservationViolation, DimensionMismatch


@dataclass
class DeviceState:
    id: int
    held: set = field(default_factory=set)  # partition ids, own id included
    padded: set = field(default_factory=set)  # support ids whose error matrices were added
    was_recipient: bool = False
    active: bool = True
    response_time: float = 0.0
    ciphertext: crypto.Ciphertext | None = None

    def __post_init__(self):
        self.held = set(self.held) or {self.id}


@dataclass(frozen=True)
class Transfer:
    sender: int
    recipient: int
    adds_new_error: bool
    support_id: int | None = None


@dataclass
class EpochPlan:
    epoch: int
    active: list
    stragglers: list
    s_r: list = field(default_factory=list)
    s_nr: list = field(default_factory=list)
    s_nr_selected: list = field(default_factory=list)
    f_r: list = field(default_factory=list)
    f_nr: list = field(default_factory=list)
    remaining_before: int = 0
    remaining_after: int = 0
    transfers: list = field(default_factory=list)
    skipped: list = field(default_factory=list)  # stragglers left active this epoch

    @property
    def K(self) -> int:
        return len(self.active)

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "active": sorted(self.active),
            "stragglers": sorted(self.stragglers),
            "s_r": self.s_r,
            "s_nr": self.s_nr,
            "s_nr_selected": self.s_nr_selected,
            "f_r": self.f_r,
            "f_nr": self.f_nr,
            "L_before": self.remaining_before,
            "L_after": self.remaining_after,
            "skipped": self.skipped,
            "transfers": [
                {"sender": t.sender, "recipient": t.recipient, "new_error": t.adds_new_error, "support": t.support_id}
                for t in self.transfers
            ],
        }


class PartitionLedger:
    """partition id -> active device currently responsible for it."""

    def __init__(self, n_partitions: int):
        self.holder = {p: p for p in range(n_partitions)}

    def move(self, partitions, recipient: int) -> None:
        for p in partitions:
            self.holder[p] = recipient

    def audit(self, states) -> None:
        seen = {}
        for s in states:
            if not s.active:
                continue
            for p in s.held:
                if p in seen:
                    raise ConservationViolation(f"partition {p} held by devices {seen[p]} and {s.id}")
                seen[p] = s.id
        if set(seen) != set(self.holder):
            missing = sorted(set(self.holder) - set(seen))
            raise ConservationViolation(f"partitions {missing} are not held by any active device")
        for p, dev in seen.items():
            if self.holder[p] != dev:
                raise ConservationViolation(f"ledger says partition {p} is on {self.holder[p]}, state says {dev}")


def detect_stragglers(response_times: dict, delta: float) -> set:
    if not response_times:
        raise ValueError("no active device responded")
    fastest = min(response_times.values())
    return {v for v, t in response_times.items() if t > fastest + delta}


def _fastest_first(ids, times):
    return sorted(ids, key=lambda v: (times[v], v))


def _slowest_first(ids, times):
    return sorted(ids, key=lambda v: (-times[v], v))


def _pick_recipients(count, nonstragglers, states, times, avoid=()):
    """Slowest never-recipient non-stragglers first, then the fastest past recipients."""
    if count <= 0:
        return []
    pool = [v for v in nonstragglers if v not in avoid] or list(nonstragglers)
    if count >= len(pool):
        return _slowest_first(pool, times)
    fresh = _slowest_first([v for v in pool if not states[v].was_recipient], times)
    used = _fastest_first([v for v in pool if states[v].was_recipient], times)
    return (fresh + used)[:count]


def plan_epoch_sharing(states: dict, stragglers, L: int, epoch: int, unused_supports=None) -> EpochPlan:
    """Decide this epoch's D2D transfers.

    ``states`` maps device id -> DeviceState (its ``response_time`` is this
    epoch's). ``unused_supports`` is the ordered pool of undispensed support
    ids; by default ids are counted down from L.
    """
    active = sorted(v for v, s in states.items() if s.active)
    stragglers = sorted(set(stragglers))
    if not set(stragglers) <= set(active):
        raise ValueError("stragglers must be active")
    pool = list(unused_supports) if unused_supports is not None else list(range(L))
    if len(pool) < L:
        raise ValueError("fewer unused supports than L")
    plan = EpochPlan(epoch, active, stragglers, remaining_before=L, remaining_after=L)
    if not stragglers:
        return plan
    times = {v: states[v].response_time for v in active}
    nonstr = [v for v in active if v not in set(stragglers)]
    if not nonstr:
        plan.skipped = stragglers
        return plan
    next_support = iter(pool)
    left = L

    plan.s_r = _slowest_first([v for v in stragglers if states[v].was_recipient], times)
    plan.s_nr = _slowest_first([v for v in stragglers if not states[v].was_recipient], times)

    # Past recipients forward what they hold. Those already carrying two
    # supports need no new error; anyone else gets a fresh support or waits.
    forwarders = []
    for v in plan.s_r:
        if len(states[v].padded) >= 2:
            forwarders.append((v, None))
        elif left > 0:
            forwarders.append((v, next(next_support)))
            left -= 1
        else:
            plan.skipped.append(v)
    plan.f_r = _pick_recipients(len(forwarders), nonstr, states, times)
    for i, (v, sid) in enumerate(forwarders):
        plan.transfers.append(Transfer(v, plan.f_r[i % len(plan.f_r)], sid is not None, sid))

    # Fresh stragglers send pairwise, each with a newly dispensed support.
    if left > 0 and plan.s_nr:
        take = min(len(plan.s_nr), left)
        plan.s_nr_selected = plan.s_nr[:take]
        plan.f_nr = _pick_recipients(math.ceil(take / 2), nonstr, states, times, avoid=set(plan.f_r))
        for i, v in enumerate(plan.s_nr_selected):
            sid = next(next_support)
            plan.transfers.append(Transfer(v, plan.f_nr[(i // 2) % len(plan.f_nr)], True, sid))
        left -= take
        plan.skipped.extend(plan.s_nr[take:])
    else:
        plan.skipped.extend(plan.s_nr)
    plan.remaining_after = left
    return plan


def apply_transfers(plan: EpochPlan, states: dict, ledger: PartitionLedger, make_payload, encode_own) -> None:
    """Move data along ``plan.transfers``.

    ``make_payload(sender_state, transfer)`` returns the Ciphertext the sender
    puts on the link; ``encode_own(recipient_state)`` returns a recipient's own
    encoded ciphertext the first time it receives.
    """
    payloads = [(t, make_payload(states[t.sender], t)) for t in plan.transfers]
    for t, _ in payloads:
        if not states[t.sender].active or not states[t.recipient].active:
            raise ConservationViolation(f"transfer {t} involves an inactive device")
        if t.sender == t.recipient:
            raise ConservationViolation("device cannot send to itself")
    for t, payload in payloads:
        snd, rcv = states[t.sender], states[t.recipient]
        if rcv.ciphertext is None:
            rcv.ciphertext = encode_own(rcv)
        rcv.ciphertext = crypto.ct_add(rcv.ciphertext, payload)
        moved = set(snd.held)
        rcv.held |= moved
        rcv.padded |= payload.padded_supports
        rcv.was_recipient = True
        ledger.move(moved, rcv.id)
        snd.held = set()
        snd.active = False
        snd.ciphertext = None
    ledger.audit(states.values())


def device_contribution(state: DeviceState, vartheta_t, key, own_message) -> crypto.Ciphertext:
    """T_v for one active device: theta^T times its (encoded or encrypted) data."""
    if state.ciphertext is not None:
        return crypto.ct_left_multiply(vartheta_t, state.ciphertext)
    # A device that never received anything holds only its own data; by
    # linearity theta^T (A_v G) = (theta^T A_v) G.
    return crypto.Ciphertext(key.g.encode(vartheta_t @ own_message), key.key_id, frozenset())


def epoch_compute_and_aggregate(states: dict, vartheta, key, support_positions: dict, own_messages: dict, schedule_cache=None):
    """Return ``(R, erasures)`` with R = theta^T sum_i A_i (c x d).

    ``own_messages[v]`` is device v's Gram matrix padded to d x k.
    ``support_positions`` maps support id -> code positions.
    """
    d = vartheta.shape[0]
    if d > key.g.k:
        raise DimensionMismatch(f"feature dimension {d} exceeds code dimension {key.g.k}")
    vt = vartheta.T
    total = None
    padded = set()
    for v in sorted(states):
        s = states[v]
        if not s.active:
            continue
        contrib = device_contribution(s, vt, key, own_messages[v])
        padded |= contrib.padded_supports
        total = contrib.matrix if total is None else total + contrib.matrix
    if padded:
        erasures = np.unique(np.concatenate([support_positions[sid] for sid in padded]))
    else:
        erasures = np.zeros(0, dtype=np.int64)
    schedule = None
    if schedule_cache is not None:
        key_e = erasures.tobytes()
        schedule = schedule_cache.get(key_e)
        if schedule is None:
            from mdpcfl.mdpc_code import plan_peeling

            schedule = schedule_cache[key_e] = plan_peeling(key.h, erasures)
    msg = crypto.decrypt(total, key, erasures, schedule)
    return msg[:, :d], erasures


def support_union_ok(states: dict, support_positions: dict, global_set) -> bool:
    union = set()
    for s in states.values():
        if s.active:
            for sid in s.padded:
                union.update(int(p) for p in support_positions[sid])
    return union <= set(int(p) for p in global_set)
