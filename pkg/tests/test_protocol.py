import math

import numpy as np
import pytest

from mdpcfl import crypto, protocol
from mdpcfl.errors import ConservationViolation
from mdpcfl.protocol import DeviceState, PartitionLedger


def make_states(times, recipients=(), padded=None):
    padded = padded or {}
    return {
        v: DeviceState(v, response_time=t, was_recipient=v in recipients, padded=set(padded.get(v, ())))
        for v, t in enumerate(times)
    }


def dummy_payload(state, tr):
    sup = set(state.padded)
    if tr.adds_new_error:
        sup.add(tr.support_id)
    return crypto.Ciphertext(np.zeros((1, 4)), "k", frozenset(sup))


def dummy_own(state):
    return crypto.Ciphertext(np.zeros((1, 4)), "k", frozenset())


def test_detect_stragglers():
    assert protocol.detect_stragglers({0: 2.0, 1: 2.0, 2: 2.0}, 0.0) == set()
    assert protocol.detect_stragglers({0: 1.0, 1: 3.5, 2: 5.0}, 3.0) == {2}
    assert protocol.detect_stragglers({0: 1.0, 1: 1e9}, math.inf) == set()
    with pytest.raises(ValueError):
        protocol.detect_stragglers({}, 1.0)


def test_no_stragglers_is_empty_plan():
    states = make_states([1.0, 2.0, 3.0])
    plan = protocol.plan_epoch_sharing(states, set(), 4, 2)
    assert plan.transfers == [] and plan.remaining_after == 4


def test_first_straggler_epoch_pairs():
    # devices 0..3; 2 and 3 straggle and have never received
    states = make_states([1.0, 1.2, 9.0, 8.0])
    plan = protocol.plan_epoch_sharing(states, {2, 3}, 4, 3)
    assert plan.s_nr == [2, 3] and plan.s_nr_selected == [2, 3]
    # recipient: the slowest never-recipient non-straggler
    assert plan.f_nr == [1]
    assert [(t.sender, t.recipient, t.adds_new_error) for t in plan.transfers] == [(2, 1, True), (3, 1, True)]
    assert {t.support_id for t in plan.transfers} == {0, 1}
    assert plan.remaining_after == 2
    ledger = PartitionLedger(4)
    protocol.apply_transfers(plan, states, ledger, dummy_payload, dummy_own)
    assert states[1].padded == {0, 1} and states[1].held == {1, 2, 3}
    assert not states[2].active and not states[3].active
    assert ledger.holder == {0: 0, 1: 1, 2: 1, 3: 1}


def test_odd_case_three_senders():
    states = make_states([1.0, 1.1, 1.2, 7.0, 8.0, 9.0])
    plan = protocol.plan_epoch_sharing(states, {3, 4, 5}, 4, 2)
    assert plan.s_nr_selected == [5, 4, 3]
    assert len(plan.f_nr) == 2 == math.ceil(3 / 2)
    recips = [t.recipient for t in plan.transfers]
    assert recips[0] == recips[1] != recips[2]
    assert plan.remaining_after == 1


def test_support_cap():
    states = make_states([1.0, 1.1, 1.2, 7.0, 8.0, 9.0])
    plan = protocol.plan_epoch_sharing(states, {3, 4, 5}, 2, 2)
    assert plan.s_nr_selected == [5, 4] and plan.skipped == [3]
    assert plan.remaining_after == 0


def test_zero_supports_skip():
    states = make_states([1.0, 1.1, 5.0])
    plan = protocol.plan_epoch_sharing(states, {2}, 0, 5)
    assert plan.transfers == [] and plan.skipped == [2]


def test_past_recipient_forwards_without_error():
    states = make_states([1.0, 1.5, 9.0], recipients={0, 2}, padded={2: {0, 1}})
    plan = protocol.plan_epoch_sharing(states, {2}, 0, 7)
    assert plan.s_r == [2]
    # device 1 has never received, so it is preferred over the faster device 0
    assert [(t.sender, t.recipient, t.adds_new_error) for t in plan.transfers] == [(2, 1, False)]


def test_past_recipient_with_one_support_needs_fresh_error():
    states = make_states([1.0, 9.0], recipients={1}, padded={1: {0}})
    plan = protocol.plan_epoch_sharing(states, {1}, 1, 7, unused_supports=[5])
    assert plan.transfers == [protocol.Transfer(1, 0, True, 5)]
    plan0 = protocol.plan_epoch_sharing(states, {1}, 0, 7)
    assert plan0.transfers == [] and plan0.skipped == [1]


def test_fallback_to_fastest_past_recipient():
    states = make_states([1.0, 1.5, 2.0, 9.0, 9.5], recipients={0, 1, 2})
    plan = protocol.plan_epoch_sharing(states, {3, 4}, 4, 4)
    # 1 recipient needed, all non-stragglers were recipients -> fastest
    assert plan.f_nr == [0]


def test_ties_break_by_id():
    states = make_states([1.0, 1.0, 1.0, 5.0, 5.0])
    plan = protocol.plan_epoch_sharing(states, {3, 4}, 2, 2)
    assert plan.s_nr_selected == [3, 4]
    assert plan.f_nr == [0]


def test_all_stragglers_leaves_plan_empty():
    states = make_states([5.0, 5.0])
    plan = protocol.plan_epoch_sharing(states, {0, 1}, 2, 2)
    assert plan.transfers == [] and plan.skipped == [0, 1]


def test_ledger_detects_double_count():
    states = make_states([1.0, 2.0])
    states[0].held = {0, 1}
    with pytest.raises(ConservationViolation):
        PartitionLedger(2).audit(states.values())
    states[0].held = {0}
    states[1].held = set()
    with pytest.raises(ConservationViolation):
        PartitionLedger(2).audit(states.values())


def test_single_transfer_bookkeeping():
    states = make_states([1.0, 1.0, 1.0, 7.0])
    plan = protocol.plan_epoch_sharing(states, {3}, 4, 2)
    ledger = PartitionLedger(4)
    protocol.apply_transfers(plan, states, ledger, dummy_payload, dummy_own)
    # equal response times: the lowest id wins the tie
    assert ledger.holder[3] == 0 and not states[3].active


def test_randomized_run_invariants():
    rng = np.random.default_rng(0)
    for trial in range(20):
        n_dev = int(rng.integers(3, 12))
        states = make_states([0.0] * n_dev)
        ledger = PartitionLedger(n_dev)
        pool = list(range(int(rng.integers(0, 10))))
        L = len(pool)
        k_prev, l_prev = n_dev, L
        dispensed = set()
        for epoch in range(2, 52):
            for s in states.values():
                s.response_time = float(rng.exponential(1.0))
            times = {v: s.response_time for v, s in states.items() if s.active}
            strag = protocol.detect_stragglers(times, 1.0)
            plan = protocol.plan_epoch_sharing(states, strag, L, epoch, unused_supports=pool[len(pool) - L:])
            for t in plan.transfers:
                # privacy bookkeeping: a fresh support, or a sender with >= 2 supports
                if t.adds_new_error:
                    assert t.support_id not in dispensed and t.support_id not in states[t.recipient].padded
                    dispensed.add(t.support_id)
                else:
                    assert len(states[t.sender].padded) >= 2
            assert l_prev - plan.remaining_after == sum(t.adds_new_error for t in plan.transfers)
            protocol.apply_transfers(plan, states, ledger, dummy_payload, dummy_own)
            L = plan.remaining_after
            k = sum(s.active for s in states.values())
            assert k <= k_prev and L <= l_prev and k >= 1
            k_prev, l_prev = k, L
        held = sorted(p for s in states.values() if s.active for p in s.held)
        assert held == list(range(n_dev))


def test_recipients_of_fresh_pairs_hold_two_supports():
    states = make_states([1.0, 1.1, 1.2, 1.3, 8, 8.5, 9, 9.5])
    plan = protocol.plan_epoch_sharing(states, {4, 5, 6, 7}, 8, 2)
    protocol.apply_transfers(plan, states, PartitionLedger(8), dummy_payload, dummy_own)
    for r in plan.f_nr:
        assert len(states[r].padded) >= 2


def test_single_device_aggregate_exact(toy_key, rng):
    d, c = 5, 3
    x = rng.standard_normal((7, d))
    a = x.T @ x
    own = np.zeros((d, 50))
    own[:, :d] = a
    vartheta = rng.standard_normal((d, c))
    states = {0: DeviceState(0)}
    r, erasures = protocol.epoch_compute_and_aggregate(states, vartheta, toy_key, {}, {0: own})
    assert erasures.size == 0
    assert np.allclose(r, vartheta.T @ a, rtol=0, atol=1e-9 * np.abs(vartheta.T @ a).max())


def test_three_device_sharing_matches_plaintext(toy_key, toy_plan, rng):
    d, c = 6, 2
    grams, own = [], {}
    for v in range(3):
        x = rng.standard_normal((10, d))
        grams.append(x.T @ x)
        own[v] = np.zeros((d, 50))
        own[v][:, :d] = grams[-1]
    states = make_states([1.0, 1.2, 9.0])
    positions = {i: s for i, s in enumerate(toy_plan.supports)}
    plan = protocol.plan_epoch_sharing(states, {2}, toy_plan.M, 2)
    spec = crypto.make_error_code(toy_plan.t, 4, d, seed=0)

    def payload(state, tr):
        ct = crypto.encrypt(own[state.id], toy_key)
        e = crypto.make_error_matrix(spec, positions[tr.support_id], 100, seed=tr.support_id)
        return crypto.add_error(ct, e, tr.support_id)

    protocol.apply_transfers(plan, states, PartitionLedger(3), payload, lambda s: crypto.encrypt(own[s.id], toy_key))
    assert protocol.support_union_ok(states, positions, toy_plan.global_set)
    vartheta = rng.standard_normal((d, c))
    r, erasures = protocol.epoch_compute_and_aggregate(states, vartheta, toy_key, positions, own)
    want = vartheta.T @ sum(grams)
    assert set(erasures.tolist()) == set(positions[plan.transfers[0].support_id].tolist())
    assert np.linalg.norm(r - want) <= 1e-6 * np.linalg.norm(want)
