import json
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from s4sagin import ledger as lg
from s4sagin.trading import AccountBook, ResourceState, ServiceKind, TradeRecord, propose_trade

from conftest import make_sr, make_topology

KEYS = {i: bytes([i + 1]) * 32 for i in range(16)}


def mk(dag, issuer, parents, iteration, weights=None, status=lg.Status.VERIFIED, payload=None):
    payload = payload or TradeRecord(len(dag.transactions), issuer, (issuer + 1) % 10,
                                     ServiceKind.COMPUTING, 1.0, 1.0, iteration)
    tx_id = lg.compute_tx_id(payload, parents, issuer, iteration)
    tx = lg.Transaction(tx_id, issuer, payload, tuple(parents), lg.sign(KEYS[issuer], tx_id), iteration)
    tx.issued_weights.update(weights or {})
    dag.attach(tx, check_acyclic=True)
    dag.set_status(tx.tx_id, status)
    return tx


@pytest.fixture
def dag():
    return lg.DagState(lg.make_genesis(0))


def test_genesis_convention(dag):
    g = dag.transactions[dag.genesis]
    assert g.parents == () and g.payload is None and g.status is lg.Status.VERIFIED
    assert dag.tips == {dag.genesis}


def test_create_has_two_parents_and_valid_signature(dag, rng):
    tx = lg.create_transaction(3, propose_trade(3, 4, ServiceKind.RELAYING, 1e6, 0), dag, rng, KEYS, 0)
    assert len(tx.parents) == 2 and tx.parents == (dag.genesis, dag.genesis)
    assert tx.status is lg.Status.PENDING
    assert lg.verify_transaction(dag, tx, None, None, KEYS) == (lg.Status.VERIFIED, None)


def test_tx_id_deterministic():
    p = propose_trade(1, 2, ServiceKind.RELAYING, 1e6, 0)
    assert lg.compute_tx_id(p, ("a", "b"), 1, 0) == lg.compute_tx_id(p, ("a", "b"), 1, 0)
    assert lg.compute_tx_id(p, ("a", "b"), 1, 0) != lg.compute_tx_id(p, ("a", "b"), 1, 1)


def test_unregistered_issuer(dag, rng):
    with pytest.raises(lg.AuthError):
        lg.create_transaction(42, propose_trade(1, 2, ServiceKind.RELAYING, 1e6, 0), dag, rng, KEYS, 0)


def test_select_tips_single_tip(dag, rng):
    assert lg.select_tips(dag, rng) == (dag.genesis, dag.genesis)


def test_select_tips_weight_proportional(dag):
    a = mk(dag, 1, [dag.genesis] * 2, 1)
    b = mk(dag, 2, [dag.genesis] * 2, 1)
    weights = {1: 0.0, 2: 9.0}
    rng = np.random.default_rng(0)
    draws = [lg.select_tips(dag, rng, weight_of=weights.get) for _ in range(4000)]
    share = np.mean([t == b.tx_id for d in draws for t in d])
    n = 2 * len(draws)
    p = 10 / 11
    assert abs(share - p) < 3 * np.sqrt(p * (1 - p) / n)
    assert {t for d in draws for t in d} == {a.tx_id, b.tx_id}


def test_select_tips_never_rejected(dag, rng):
    good = mk(dag, 1, [dag.genesis] * 2, 1)
    bad = mk(dag, 2, [dag.genesis] * 2, 1, status=lg.Status.REJECTED)
    tips = {good.tx_id, bad.tx_id}
    assert all(bad.tx_id not in lg.select_tips(dag, rng, tips=tips) for _ in range(200))


def test_select_tips_empty_raises(dag, rng):
    with pytest.raises(lg.LedgerStateError):
        lg.select_tips(dag, rng, tips=set())


def test_verify_corrupted_signature(dag, rng):
    tx = lg.create_transaction(1, propose_trade(1, 2, ServiceKind.RELAYING, 1e6, 0), dag, rng, KEYS, 0)
    bad = lg.inject_fault(tx, rng, lg.FaultMode.BAD_SIGNATURE)
    assert bad.signature != tx.signature
    assert lg.verify_transaction(dag, bad, None, None, KEYS) == (lg.Status.REJECTED, lg.RejectReason.BAD_SIGNATURE)


@pytest.fixture
def trade_world():
    topo = make_topology([make_sr(0, x=0), make_sr(1, x=150)], ue_xy=[(100, 0)])
    state = ResourceState.fresh(topo, np.array([1]))
    book = AccountBook.uniform([0, 1], 100.0)
    keys = {0: KEYS[0], 1: KEYS[1]}
    return state, book, keys


def test_verify_payload_over_budget(dag, rng, trade_world):
    state, book, keys = trade_world
    tx = lg.create_transaction(0, propose_trade(0, 1, ServiceKind.RELAYING, 30e6, 0), dag, rng, keys, 0)
    assert lg.verify_transaction(dag, tx, state, book, keys) == (lg.Status.REJECTED, lg.RejectReason.INVALID_PAYLOAD)


def test_verify_happy_path(dag, rng, trade_world):
    state, book, keys = trade_world
    tx = lg.create_transaction(0, propose_trade(0, 1, ServiceKind.RELAYING, 5e6, 0), dag, rng, keys, 0)
    assert lg.verify_transaction(dag, tx, state, book, keys) == (lg.Status.VERIFIED, None)


def test_verify_missing_parent_is_pending(dag, rng):
    tx = lg.create_transaction(1, propose_trade(1, 2, ServiceKind.RELAYING, 1e6, 0), dag, rng, KEYS, 0)
    status, _ = lg.verify_transaction(dag, tx, None, None, KEYS, known=lambda t: False)
    assert status is lg.Status.PENDING


def test_inflated_amount_budget_tight(dag, rng, trade_world):
    state, book, keys = trade_world
    tx = lg.create_transaction(0, propose_trade(0, 1, ServiceKind.RELAYING, 15e6, 0), dag, rng, keys, 0)
    fake = lg.inject_fault(tx, rng, lg.FaultMode.INFLATED_AMOUNT)
    assert fake.payload.amount == pytest.approx(150e6)
    status, _ = lg.verify_transaction(dag, fake, state, book, keys)
    assert status is lg.Status.REJECTED


def test_trust_weight_formula(dag):
    tx = mk(dag, 1, [dag.genesis] * 2, 1)
    assert lg.issue_trust_weight(5, tx, (2, 3)) == 5
    assert lg.issue_trust_weight(6, tx, (0, 0)) == 0
    lg.issue_trust_weight(7, tx, (1, 1))
    assert tx.total_weight == 7


def test_trust_weight_debits_and_runs_dry(dag):
    topo = make_topology([make_sr(0, compute=3.0, energy=3.0)])
    state = ResourceState.fresh(topo)
    tx = mk(dag, 1, [dag.genesis] * 2, 1)
    assert lg.issue_trust_weight(0, tx, (2, 2), state) == 4
    assert state.remaining["compute"][0] == 1.0
    assert lg.issue_trust_weight(0, tx, (2, 2), state) == 0.0
    assert tx.issued_weights[0] == 0.0


def test_cumulative_weight(dag):
    assert lg.cumulative_weight(dag, 4) == 0
    a = mk(dag, 4, [dag.genesis] * 2, 1, {1: 3.0})
    mk(dag, 4, [a.tx_id] * 2, 2, {2: 4.0})
    assert lg.cumulative_weight(dag, 4) == 7


def test_rejecting_only_tx_zeroes_weight(dag):
    a = mk(dag, 4, [dag.genesis] * 2, 1, {1: 3.0})
    dag.set_status(a.tx_id, lg.Status.REJECTED)
    assert lg.cumulative_weight(dag, 4) == 0


def test_tips_are_childless_verified(dag):
    a = mk(dag, 1, [dag.genesis] * 2, 1)
    b = mk(dag, 2, [a.tx_id, dag.genesis], 2)
    assert dag.tips == {b.tx_id}


# --------------------------------------------------------------------- gossip

def _views(n, genesis):
    return {i: lg.NodeLedgerView.bootstrap(i, genesis) for i in range(n)}


def _always(tx, view):
    return lg.Status.VERIFIED, None


def test_gossip_empty_outboxes(dag):
    views = _views(3, dag.genesis)
    before = {i: dict(v.status) for i, v in views.items()}
    lg.gossip_round(views, {0: (1, 2), 1: (0,), 2: (0,)}, dag, _always)
    assert {i: v.status for i, v in views.items()} == before


def test_gossip_star_two_rounds(dag):
    graph = {0: (1, 2, 3, 4), 1: (0,), 2: (0,), 3: (0,), 4: (0,)}
    views = _views(5, dag.genesis)
    tx = mk(dag, 1, [dag.genesis] * 2, 1)
    views[1].record(tx, lg.Status.VERIFIED)
    views[1].outbox.append(tx.tx_id)
    lg.gossip_round(views, graph, dag, _always)
    assert [v.knows(tx.tx_id) for v in views.values()] == [True, True, False, False, False]
    lg.gossip_round(views, graph, dag, _always)
    assert all(v.knows(tx.tx_id) for v in views.values())


def test_gossip_rejected_not_forwarded(dag):
    graph = {0: (1,), 1: (0, 2), 2: (1,)}
    views = _views(3, dag.genesis)
    tx = mk(dag, 0, [dag.genesis] * 2, 1)
    views[0].record(tx, lg.Status.VERIFIED)
    views[0].outbox.append(tx.tx_id)
    reject = lambda tx, view: (lg.Status.REJECTED, lg.RejectReason.BAD_SIGNATURE)  # noqa: E731
    for _ in range(3):
        lg.gossip_round(views, graph, dag, reject)
    assert views[1].status[tx.tx_id] is lg.Status.REJECTED
    assert not views[2].knows(tx.tx_id)


def test_gossip_orphan_after_max_rounds(dag):
    views = _views(2, dag.genesis)
    tx = mk(dag, 0, [dag.genesis] * 2, 1)
    views[0].record(tx, lg.Status.VERIFIED)
    views[0].outbox.append(tx.tx_id)
    pending = lambda tx, view: (lg.Status.PENDING, None)  # noqa: E731
    for _ in range(5):
        stats = lg.gossip_round(views, {0: (1,), 1: (0,)}, dag, pending, orphan_rounds=3)
    assert views[1].status[tx.tx_id] is lg.Status.REJECTED


def _diameter(graph):
    best = 0
    for s in graph:
        dist = {s: 0}
        q = deque([s])
        while q:
            u = q.popleft()
            for v in graph[u]:
                if v not in dist:
                    dist[v] = dist[u] + 1
                    q.append(v)
        best = max(best, max(dist.values()))
    return best


@given(st.integers(2, 12), st.lists(st.tuples(st.integers(0, 11), st.integers(0, 11)), max_size=15),
       st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_gossip_converges_within_diameter(n, extra, seed):
    rng = np.random.default_rng(seed)
    adj = {i: set() for i in range(n)}
    for i in range(1, n):  # random spanning tree keeps it connected
        j = int(rng.integers(i))
        adj[i].add(j)
        adj[j].add(i)
    for a, b in extra:
        if a < n and b < n and a != b:
            adj[a].add(b)
            adj[b].add(a)
    graph = {i: tuple(sorted(v)) for i, v in adj.items()}
    dag = lg.DagState(lg.make_genesis(0))
    views = _views(n, dag.genesis)
    for issuer in rng.choice(n, size=min(3, n), replace=False):
        tx = mk(dag, int(issuer), [dag.genesis] * 2, 1)
        views[int(issuer)].record(tx, lg.Status.VERIFIED)
        views[int(issuer)].outbox.append(tx.tx_id)
    for _ in range(_diameter(graph)):
        lg.gossip_round(views, graph, dag, _always)
    sets = {v.verified_set() for v in views.values()}
    assert len(sets) == 1


# -------------------------------------------------------------------- pruning

def test_prune_linear_chain(dag):
    prev = dag.genesis
    for it in range(1, 15):
        prev = mk(dag, it % 5, [prev, prev], it, {9: 1.0}).tx_id
    assert lg.prune(dag, 3, 20) == []


def test_prune_light_fork(dag):
    a = mk(dag, 1, [dag.genesis] * 2, 1, {5: 1.0})
    b = mk(dag, 2, [a.tx_id] * 2, 2, {5: 4.0})
    c = mk(dag, 3, [a.tx_id] * 2, 2, {})
    d = mk(dag, 4, [b.tx_id] * 2, 3, {5: 4.0})
    assert lg.heaviest_tip(dag) == d.tx_id
    assert lg.prune(dag, 1, 3) == []  # cutoff 2: the fork is still young
    assert lg.prune(dag, 1, 5) == [c.tx_id]
    assert c.status is lg.Status.PRUNED
    assert all(dag.transactions[t].status is lg.Status.VERIFIED for t in (a.tx_id, b.tx_id, d.tx_id))


def test_prune_rejected_when_old(dag):
    a = mk(dag, 1, [dag.genesis] * 2, 1)
    r = mk(dag, 2, [a.tx_id] * 2, 1, status=lg.Status.REJECTED)
    assert lg.prune(dag, 2, 2) == []
    assert lg.prune(dag, 2, 4) == [r.tx_id]


def test_prune_referenced_mode_keeps_all_verified(dag):
    a = mk(dag, 1, [dag.genesis] * 2, 1, {5: 5.0})
    mk(dag, 2, [dag.genesis] * 2, 1, {})
    assert lg.prune(dag, 1, 10, mode="referenced") == []
    assert a.status is lg.Status.VERIFIED


def test_prune_bad_depth(dag):
    with pytest.raises(ValueError):
        lg.prune(dag, 0, 1)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=20, deadline=None)
def test_random_dag_acyclic_and_weights_match_bruteforce(seed):
    rng = np.random.default_rng(seed)
    dag = lg.DagState(lg.make_genesis(0))
    for i in range(150):
        it = i // 10
        issuer = int(rng.integers(10))
        tx = lg.create_transaction(issuer, TradeRecord(i, issuer, (issuer + 1) % 10, ServiceKind.COMPUTING,
                                                       1.0, 1.0, it), dag, rng, KEYS, it)
        dag.attach(tx)
        status = lg.Status.VERIFIED if rng.uniform() < 0.9 else lg.Status.REJECTED
        for v in rng.choice(10, size=3, replace=False):
            if status is lg.Status.VERIFIED:
                lg.issue_trust_weight(int(v), tx, (1, 1))
        dag.set_status(tx.tx_id, status)
        if i % 10 == 9:
            lg.prune(dag, 3, it)
    assert lg.is_acyclic(dag)
    for sr in range(10):
        brute = sum(sum(t.issued_weights.values()) for t in dag.transactions.values()
                    if t.issuer == sr and t.status is lg.Status.VERIFIED and t.payload is not None)
        assert lg.cumulative_weight(dag, sr) == pytest.approx(brute)


def test_honest_weight_monotone_under_referenced_pruning(rng):
    dag = lg.DagState(lg.make_genesis(0))
    history = []
    for i in range(200):
        it = i // 5
        issuer = i % 4
        tx = lg.create_transaction(issuer, TradeRecord(i, issuer, 9, ServiceKind.COMPUTING, 1.0, 1.0, it),
                                   dag, rng, KEYS, it)
        dag.attach(tx)
        lg.issue_trust_weight(8, tx, (1, 1))
        dag.set_status(tx.tx_id, lg.Status.VERIFIED)
        lg.prune(dag, 2, it, mode="referenced")
        history.append([lg.cumulative_weight(dag, s) for s in range(4)])
    h = np.array(history)
    assert (np.diff(h, axis=0) >= 0).all()


def test_snapshot_lines_field_order(dag):
    mk(dag, 1, [dag.genesis] * 2, 1, {2: 2.0})
    lines = lg.snapshot_lines(dag).splitlines()
    assert len(lines) == 2
    rec = json.loads(lines[1])
    assert list(rec) == list(lg.LEDGER_SNAPSHOT_FIELDS)
    assert rec["total_weight"] == 2.0
