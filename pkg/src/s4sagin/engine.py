"""The coevolution loop: initialise, trade and verify, share and update.

One environment iteration samples fresh UE demands, associates UEs to
serving entities, lets every SR pick a trading action, records trades as
ledger transactions (plus injected fake ones), gossips and verifies them,
prunes the DAG, settles and applies the verified trades and finally serves
the UEs and scores every SR.  Every ``env_steps_per_update`` iterations the
agents exchange policies with creditable neighbours and run PPO; those
blocks are the "training iterations" reported in the metrics.
"""
from __future__ import annotations

import dataclasses
import enum
import json
import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import ledger as lg
from .config import ScenarioConfig
from .marl import (ACTION_COUNT, Agent, actor_forward, critic_forward, decode_action,
                   exchange_policies, init_agent, ppo_update, sample_action,
                   select_creditable_neighbors)
from .rng import derive_seed, stream
from .topology import (SPEED_OF_LIGHT, ServiceRequest, SrKind, Topology, associate,
                       build_topology, experienced_quality, neighbors, sample_demands)
from .trading import (AccountBook, ProtocolError, Rejection, ResourceState, ServiceKind,
                      TradeRecord, apply_trades, classify_relationship, propose_trade, settle,
                      validate_trade)

logger = logging.getLogger(__name__)

SNAPSHOT_VERSION = 1


class Scheme(enum.Enum):
    S4 = "S4"
    NON_SC = "NonSC"
    NON_BLOCKCHAIN = "NonBlockchain"
    NON_ML = "NonML"

    @classmethod
    def parse(cls, name: str) -> "Scheme":
        for s in cls:
            if s.value.lower() == name.lower() or s.name.lower() == name.lower():
                return s
        raise ValueError(f"unknown scheme {name!r}; valid schemes: {', '.join(s.value for s in cls)}")

    @property
    def learns(self) -> bool:
        return self in (Scheme.S4, Scheme.NON_BLOCKCHAIN)

    @property
    def verifies(self) -> bool:
        return self is not Scheme.NON_BLOCKCHAIN


def satisfaction(request: ServiceRequest, experienced: tuple[float, float] | None) -> float:
    """Equal-weight average of the rate and latency ratios, each capped at 1.
    ``None`` (or zero rate) marks an unserved UE."""
    if experienced is None:
        return 0.0
    rate, latency = experienced
    if rate <= 0.0:
        return 0.0
    return 0.5 * min(1.0, rate / request.rate_req) + 0.5 * min(1.0, request.latency_req / latency)


def water_fill(capacity: float, needs: np.ndarray) -> np.ndarray:
    """Max-min fair split of ``capacity`` with each share capped at its need."""
    needs = np.asarray(needs, dtype=float)
    alloc = np.zeros_like(needs)
    if capacity <= 0 or needs.size == 0:
        return alloc
    order = np.argsort(needs, kind="stable")
    left, n = float(capacity), needs.size
    for k, i in enumerate(order):
        level = left / (n - k)
        give = min(needs[i], level)
        alloc[i] = give
        left -= give
    return alloc


@dataclass
class EpisodeMetrics:
    scheme: str
    seed: int
    rewards: list[float] = field(default_factory=list)  # per training iteration, mean over SRs
    ue_rewards: list[float] = field(default_factory=list)  # per training iteration, mean over UEs
    env_rewards: list[float] = field(default_factory=list)  # per environment iteration
    satisfaction: list[float] = field(default_factory=list)  # per UE, last iteration
    ledger: list[dict] = field(default_factory=list)  # per environment iteration
    trades_by_service: Counter = field(default_factory=Counter)
    trades_by_relationship: Counter = field(default_factory=Counter)
    eval_satisfaction: float | None = None


@dataclass
class IterationOutcome:
    iteration: int
    rewards: np.ndarray
    ue_satisfaction: np.ndarray
    trades: list[tuple[TradeRecord, bool]]
    settled: list[TradeRecord]
    ledger: dict
    resources: ResourceState


@dataclass
class SimState:
    config: ScenarioConfig
    scheme: Scheme
    seed: int
    topology: Topology
    keys: dict[int, bytes]
    agents: dict[int, Agent]
    dag: lg.DagState
    views: dict[int, lg.NodeLedgerView]
    accounts: AccountBook
    neighbor_lists: dict[int, list[int]]
    prev_reward: np.ndarray
    prev_satisfaction: np.ndarray
    iteration: int = 0
    trade_counter: int = 0
    tx_seq: int = 0
    weights: np.ndarray | None = None
    frozen: bool = False
    trade_log: list[tuple[TradeRecord, bool]] = field(default_factory=list)
    recent: dict[int, list[str]] = field(default_factory=dict)  # iteration -> tx ids still in views


def step_initialize(config: ScenarioConfig, seed: int, scheme: Scheme = Scheme.S4) -> SimState:
    """Build the topology, register keys, bootstrap the ledger and the agents.

    All SRs receive the same model architecture, but each agent's weights
    come from its own seed.
    """
    config.validate()
    topo = build_topology(config, seed)
    n = len(topo.srs)
    keys = {s.id: s.key for s in topo.srs}
    genesis = lg.make_genesis(issuer=topo.sat_id)
    dag = lg.DagState(genesis)
    views = {s.id: lg.NodeLedgerView.bootstrap(s.id, genesis.tx_id) for s in topo.srs}
    agent_seed = derive_seed(seed, "agents")
    agents = {s.id: init_agent(s.id, ACTION_COUNT, agent_seed, hidden=config.learning.hidden)
              for s in topo.srs}
    accounts = AccountBook.uniform([s.id for s in topo.srs], config.trading.initial_balance)
    k = config.topology.neighbor_count
    nbrs = {s.id: neighbors(topo, s.id, min(k, n - 1)) for s in topo.srs} if n > 1 else {s.id: [] for s in topo.srs}
    return SimState(config=config, scheme=scheme, seed=seed, topology=topo, keys=keys,
                    agents=agents, dag=dag, views=views, accounts=accounts, neighbor_lists=nbrs,
                    prev_reward=np.zeros(n), prev_satisfaction=np.zeros(len(topo.ues)),
                    weights=np.zeros(n))


# ---------------------------------------------------------------- environment

@dataclass
class _Context:
    demands: list[ServiceRequest]
    req: np.ndarray
    association: np.ndarray
    entity_need: dict[int, float]
    entity_capacity: dict[int, float]
    spare: np.ndarray  # per SR, Hz
    load: np.ndarray  # per SR, entity demand / capacity (unclipped)


def _context(state: SimState, iteration: int) -> _Context:
    topo = state.topology
    demands = sample_demands(topo, iteration, stream(state.seed, "demand", iteration))
    req = np.array([d.rate_req for d in demands]) if demands else np.zeros(0)
    capacity = {e: topo.entity_bandwidth(e) for e in topo.entities}
    assoc = associate(topo, capacity)
    need, spare, load = {}, np.zeros(len(topo.srs)), np.zeros(len(topo.srs))
    for e in topo.entities:
        ues = np.flatnonzero(assoc == e)
        need[e] = float(req[ues].sum() / topo.spectral_efficiency(e)) if ues.size else 0.0
        frac = max(0.0, 1.0 - need[e] / capacity[e])
        for m in topo.members(e):
            spare[m] = topo.srs[m].bandwidth * frac
            load[m] = need[e] / capacity[e]
    return _Context(demands, req, assoc, need, capacity, spare, load)


def observe(state: SimState, ctx: _Context, sr_id: int) -> np.ndarray:
    """The 8 observation features, each clipped to [0, 1]."""
    topo = state.topology
    me = topo.srs[sr_id]
    nb = state.neighbor_lists[sr_id]
    covered = np.flatnonzero(topo.coverage[sr_id])
    p = topo.params
    if covered.size:
        ent = ctx.association[covered]
        unsat = np.mean([e < 0 or ctx.load[e] > 1.0 for e in ent])
        demand = float(np.mean((ctx.req[covered] - p.rate_min) / max(p.rate_max - p.rate_min, 1e-12)))
    else:
        unsat, demand = 0.0, 0.0
    w = state.weights if state.weights is not None else np.zeros(len(topo.srs))
    wmax = float(w.max()) if w.size else 0.0
    obs = np.array([
        min(1.0, ctx.load[sr_id]),
        ctx.spare[sr_id] / me.bandwidth,
        float(np.mean([min(1.0, ctx.load[n]) for n in nb])) if nb else 0.0,
        float(np.mean([ctx.spare[n] / topo.srs[n].bandwidth for n in nb])) if nb else 0.0,
        unsat,
        demand,
        w[sr_id] / wmax if wmax > 0 else 0.0,
        state.prev_reward[sr_id],
    ])
    return np.clip(obs, 0.0, 1.0)


def _issuer_tips(state: SimState, sr_id: int) -> list[str]:
    """Verified tips of the issuer's view, falling back to the canonical head."""
    txs = state.dag.transactions
    tips = [t for t in state.views[sr_id].tips if t in txs and txs[t].status is lg.Status.VERIFIED]
    return tips or [lg.heaviest_tip(state.dag)]


def _service_for(topo: Topology, res: ResourceState, provider: int, consumer: int) -> ServiceKind:
    """Transferring when the provider can take over every UE of the consumer."""
    ues = res.associated_ues(consumer)
    if ues.size and topo.coverage[provider, ues].all():
        return ServiceKind.TRANSFERRING
    return ServiceKind.RELAYING


def _heuristic_action(state: SimState, ctx: _Context, sr_id: int):
    """Max-level lease of spare bandwidth to the neighbour with unmet demand
    and the highest cumulative weight (ties by id)."""
    if ctx.spare[sr_id] <= 0:
        return None
    own_entity = state.topology.entity_of(sr_id)
    cands = [n for n in state.neighbor_lists[sr_id]
             if ctx.load[n] > 1.0 and state.topology.entity_of(n) != own_entity]
    if not cands:
        return None
    w = state.weights
    target = sorted(cands, key=lambda n: (-w[n], n))[0]
    return target, 0.75


def _decode(state: SimState, sr_id: int, action: int):
    dec = decode_action(action)
    if dec is None:
        return None
    rank, level = dec
    nb = state.neighbor_lists[sr_id]
    if rank > len(nb):
        return None
    return nb[rank - 1], level


def _fake_trade(state: SimState, faker: int, iteration: int, rng) -> TradeRecord | None:
    """A fabricated lease claiming a neighbour's bandwidth for the faker."""
    nb = [n for n in state.neighbor_lists[faker]
          if state.topology.entity_of(n) != state.topology.entity_of(faker)]
    if not nb:
        return None
    provider = nb[int(rng.integers(len(nb)))]
    amount = 0.75 * state.topology.srs[provider].bandwidth
    state.trade_counter += 1
    return propose_trade(provider, faker, ServiceKind.RELAYING, amount, iteration,
                         state.trade_counter, state.config.trading)


def serve(topo: Topology, res: ResourceState, demands: list[ServiceRequest], equal_split: bool = False):
    """Per-UE (rate, latency, satisfaction) plus the UEs each lease reached.

    An entity's own pool is shared among its UEs (equal split, or max-min
    fair capped at need); each lease then serves the consumer's UEs inside
    the provider's coverage.  Provider capacity that was over-booked by
    unverified leases is scaled down proportionally for every claimant.
    """
    p = topo.params
    n_ue = len(topo.ues)
    rate = np.zeros(n_ue)
    latency = np.full(n_ue, np.inf)
    if n_ue == 0:
        return rate, latency, np.zeros(0), {}
    req = np.array([d.rate_req for d in demands])
    lreq = np.array([d.latency_req for d in demands])
    scale = {sr: topo.srs[sr].bandwidth / (topo.srs[sr].bandwidth + ob)
             for sr, ob in res.overbooked.items()}
    own_rate = np.zeros(n_ue)
    own_lat = np.full(n_ue, np.inf)
    for e in topo.entities:
        ues = np.flatnonzero(res.association == e)
        if ues.size == 0:
            continue
        pool = sum(res.remaining["bandwidth"][m] * scale.get(m, 1.0) for m in topo.members(e))
        se = topo.spectral_efficiency(e)
        needs = req[ues] / se
        alloc = np.full(ues.size, pool / ues.size) if equal_split else water_fill(pool, needs)
        rho = min(p.max_load_ratio, needs.sum() / pool) if pool > 0 else 1.0
        for u, bw in zip(ues, alloc):
            r, lat = experienced_quality(topo, e, int(u), float(bw), rho)
            own_rate[u], own_lat[u] = r, lat
    rate[:] = own_rate
    lease_rate = np.zeros(n_ue)
    lease_lat = np.full(n_ue, np.inf)
    reached: dict[int, np.ndarray] = {}
    for lease in sorted(res.leases, key=lambda l: l.trade_id):
        if lease.service.resource != "bandwidth":
            continue
        consumer_ues = res.associated_ues(lease.consumer)
        eligible = consumer_ues[topo.coverage[lease.provider, consumer_ues]]
        reached[lease.trade_id] = eligible
        if eligible.size == 0:
            continue
        bw = lease.amount * scale.get(lease.provider, 1.0)
        se = topo.spectral_efficiency(lease.provider)
        residual = np.maximum(req[eligible] - rate[eligible], 0.0) / se
        alloc = water_fill(bw, residual)
        rho = min(p.max_load_ratio, residual.sum() / bw) if bw > 0 else 1.0
        hops = 1 if lease.service is ServiceKind.TRANSFERRING else 2
        hop_delay = 0.0
        if hops == 2:
            a = np.array(topo.srs[lease.provider].position)
            b = np.array(topo.srs[lease.consumer].position)
            hop_delay = float(np.linalg.norm(a - b)) / SPEED_OF_LIGHT * 1e3
        for u, share in zip(eligible, alloc):
            if share <= 0:
                continue
            r, lat = experienced_quality(topo, lease.provider, int(u), float(share), rho, hops=hops)
            rate[u] += r
            lease_rate[u] += r
            lease_lat[u] = min(lease_lat[u], lat + hop_delay)
    # the path carrying most of a UE's traffic sets its latency
    latency = np.where(lease_rate > own_rate, lease_lat, own_lat)
    sat = np.zeros(n_ue)
    served = rate > 0
    sat[served] = (0.5 * np.minimum(1.0, rate[served] / req[served])
                   + 0.5 * np.minimum(1.0, lreq[served] / latency[served]))
    return rate, latency, sat, reached


def reward_function(topo: Topology, res: ResourceState, ue_satisfaction: np.ndarray,
                    reached: dict[int, np.ndarray], sr_id: int) -> float:
    """Mean satisfaction over the UEs an SR touched: those of its serving
    entity plus those reached through leases it provided."""
    touched = set(res.associated_ues(sr_id).tolist())
    for lease in res.leases:
        if lease.provider == sr_id:
            touched.update(reached.get(lease.trade_id, np.zeros(0, dtype=int)).tolist())
    if not touched:
        return 0.0
    return float(np.mean(ue_satisfaction[sorted(touched)]))


# ------------------------------------------------------------------- protocol

def step_trade_and_verify(state: SimState, iteration: int | None = None, learn: bool = True) -> IterationOutcome:
    """One environment iteration of trading, verification and service."""
    it = state.iteration if iteration is None else iteration
    cfg, topo, scheme = state.config, state.topology, state.scheme
    ctx = _context(state, it)
    base = ResourceState.fresh(topo, ctx.association)
    n = len(topo.srs)

    # 2.a: decisions
    obs, decisions = {}, {}
    act_rng = stream(state.seed, "act", it)
    for sr in range(n):
        o = observe(state, ctx, sr)
        obs[sr] = o
        if scheme is Scheme.NON_SC:
            decisions[sr] = None
        elif scheme is Scheme.NON_ML:
            decisions[sr] = _heuristic_action(state, ctx, sr)
        else:
            agent = state.agents[sr]
            probs = actor_forward(agent, o)
            a, logp = sample_action(probs, act_rng)
            if learn and not state.frozen:
                agent.store(o, a, logp, 0.0, critic_forward(agent, o))
            decisions[sr] = _decode(state, sr, a)

    # 2.b: trades through the contract, then transactions (+ faults)
    trades: list[TradeRecord] = []
    contract_rejections = Counter()
    for sr in range(n):
        d = decisions[sr]
        if d is None:
            continue
        target, level = d
        amount = level * ctx.spare[sr]
        if amount <= 0 or target == sr:
            continue
        service = _service_for(topo, base, sr, target)
        state.trade_counter += 1
        trade = propose_trade(sr, target, service, amount, it, state.trade_counter, cfg.trading)
        why = validate_trade(base, state.accounts, trade)
        if why is not None:
            contract_rejections[why.value] += 1
            continue
        rel = classify_relationship(topo, trade, base, ctx.req)
        trades.append(dataclasses.replace(trade, relationship=rel))

    fault_rng = stream(state.seed, "fault", it)
    fakes: list[tuple[TradeRecord, lg.FaultMode]] = []
    draws = fault_rng.uniform(size=n)
    modes = fault_rng.integers(0, 2, size=n)
    for sr in range(n):
        if draws[sr] < cfg.ledger.p_fault:
            fake = _fake_trade(state, sr, it, fault_rng)
            if fake is not None:
                mode = lg.FaultMode.BAD_SIGNATURE if modes[sr] == 0 else lg.FaultMode.INFLATED_AMOUNT
                fakes.append((fake, mode))

    # 2.c: ledger
    ledger_rng = stream(state.seed, "ledger", it)
    res = base.copy()
    weight_cache = {}

    def weight_of(sr_id):
        if sr_id not in weight_cache:
            weight_cache[sr_id] = lg.cumulative_weight(state.dag, sr_id)
        return weight_cache[sr_id]

    new_txs: list[tuple[lg.Transaction, TradeRecord | None]] = []
    for trade in trades:
        state.tx_seq += 1
        tx = lg.create_transaction(trade.provider, trade, state.dag, ledger_rng, state.keys, it,
                                   seq=state.tx_seq, tips=_issuer_tips(state, trade.provider),
                                   weight_of=weight_of)
        new_txs.append((tx, trade))
    for fake, mode in fakes:
        state.tx_seq += 1
        tx = lg.create_transaction(fake.consumer, fake, state.dag, ledger_rng, state.keys, it,
                                   seq=state.tx_seq, tips=_issuer_tips(state, fake.consumer),
                                   weight_of=weight_of)
        tx = lg.inject_fault(tx, fault_rng, mode, cfg.ledger.inflate_factor)
        new_txs.append((tx, None))

    verdicts: dict[str, tuple] = {}

    settled_before = it - cfg.ledger.confirmation_depth

    def verify(tx, view):
        # history older than the confirmation depth is common knowledge
        if any(not view.knows(p) and state.dag.transactions[p].iteration > settled_before
               for p in tx.parents):
            return lg.Status.PENDING, None
        if tx.tx_id not in verdicts:
            if scheme.verifies:
                verdicts[tx.tx_id] = lg.verify_transaction(state.dag, tx, base, state.accounts, state.keys)
            else:
                verdicts[tx.tx_id] = (lg.Status.VERIFIED, None)
        return verdicts[tx.tx_id]

    verify_cost = (cfg.ledger.verify_compute_cost, cfg.ledger.verify_energy_cost)

    def on_verified(verifier, tx):
        lg.issue_trust_weight(verifier, tx, verify_cost, res, cfg.ledger.trust_kappa)

    for tx, _ in new_txs:
        state.dag.attach(tx)
        status, _ = verify(tx, state.views[tx.issuer])
        state.views[tx.issuer].record(tx, status)
        state.views[tx.issuer].outbox.append(tx.tx_id)
    gstats = lg.GossipStats()
    for _ in range(cfg.ledger.gossip_rounds):
        s = lg.gossip_round(state.views, topo.interaction_graph, state.dag, verify, on_verified,
                            cfg.ledger.orphan_rounds)
        gstats.deliveries += s.deliveries
        gstats.verified += s.verified
        gstats.rejected += s.rejected
    for view in state.views.values():
        view.outbox.clear()
    for tx, _ in new_txs:
        status, reason = verdicts.get(tx.tx_id, (lg.Status.REJECTED, lg.RejectReason.ORPHAN))
        state.dag.set_status(tx.tx_id, status, reason)

    # 2.d: prune, then propagate to the local views
    pruned = lg.prune(state.dag, cfg.ledger.confirmation_depth, it, cfg.ledger.prune_mode)
    stale = set(pruned) | set(state.recent.pop(settled_before, ()))
    state.recent[it] = [tx.tx_id for tx, _ in new_txs]
    # views keep only the retention window; old tips stay usable as parents
    for view in state.views.values():
        for t in stale:
            view.status.pop(t, None)
        for t in pruned:
            view.tips.discard(t)

    # settlement and leases
    accepted = []
    for tx, honest in sorted(new_txs, key=lambda p: p[0].payload.trade_id):
        if tx.status is not lg.Status.VERIFIED:
            continue
        trade = tx.payload
        if state.accounts.balances[trade.consumer] < trade.price:
            contract_rejections[Rejection.INSUFFICIENT_BALANCE.value] += 1
            continue
        settle(state.accounts, trade, verified=True)
        accepted.append(trade)
    res = apply_trades(res, accepted, overbook=not scheme.verifies)
    accepted_ids = {t.trade_id for t in accepted} - set(res.dropped)
    settled = [t for t in accepted if t.trade_id in accepted_ids]

    rate, latency, ue_sat, reached = serve(topo, res, ctx.demands, equal_split=scheme is Scheme.NON_SC)
    rewards = np.array([reward_function(topo, res, ue_sat, reached, sr) for sr in range(n)])

    if scheme.learns and learn and not state.frozen:
        for sr in range(n):
            state.agents[sr].buffer["reward"][-1] = float(rewards[sr])

    n_faults = len(fakes)
    fake_ids = {tx.tx_id for tx, honest in new_txs if honest is None}
    detected = sum(1 for t in fake_ids if state.dag.transactions[t].status is not lg.Status.VERIFIED
                   and verdicts.get(t, (None,))[0] is lg.Status.REJECTED)
    lstats = {
        "iteration": it,
        "created": len(new_txs),
        "verified": sum(1 for tx, _ in new_txs if verdicts.get(tx.tx_id, (None,))[0] is lg.Status.VERIFIED),
        "rejected": sum(1 for tx, _ in new_txs if verdicts.get(tx.tx_id, (None,))[0] is lg.Status.REJECTED),
        "pruned": len(pruned),
        "faults": n_faults,
        "faults_detected": detected,
        "contract_rejections": sum(contract_rejections.values()),
        "dropped": len(res.dropped),
    }
    log_rows = [(tx.payload, tx.status is lg.Status.VERIFIED) for tx, _ in new_txs]
    state.trade_log.extend(log_rows)
    state.prev_reward = rewards
    state.prev_satisfaction = ue_sat
    state.weights = state.dag.cumulative_weights(n)
    state.iteration = it + 1
    if __debug__:
        if scheme.verifies:
            for t in settled:
                txs = [tx for tx, _ in new_txs if tx.payload.trade_id == t.trade_id]
                if not txs or txs[0].status is not lg.Status.VERIFIED:
                    raise ProtocolError(f"trade {t.trade_id} settled without verification")
        state.accounts.check()
    return IterationOutcome(it, rewards, ue_sat, log_rows, settled, lstats, res)


def step_share_and_update(state: SimState) -> dict:
    """Policy exchange with creditable neighbours, then one PPO update per agent."""
    if not state.scheme.learns or state.frozen:
        return {}
    n = len(state.topology.srs)
    weights = state.dag.cumulative_weights(n)
    creditable = {sr: select_creditable_neighbors(weights, state.neighbor_lists[sr],
                                                  state.config.learning.creditable_k)
                  for sr in range(n)}
    exchange_policies(state.agents, creditable, version=state.iteration)
    reports = {}
    for sr in range(n):
        reports[sr] = ppo_update(state.agents[sr], cfg=state.config.learning)
    return {"creditable": creditable, "reports": reports}


def run_experiment(config: ScenarioConfig, scheme: Scheme | str, iterations: int | None = None,
                   seed: int | None = None, eval_iterations: int = 0,
                   state_out: list | None = None) -> EpisodeMetrics:
    """Run ``iterations`` training iterations (each ``env_steps_per_update``
    environment iterations) and optionally a frozen-policy evaluation."""
    scheme = Scheme.parse(scheme) if isinstance(scheme, str) else scheme
    seed = config.run.seed if seed is None else seed
    iterations = config.run.iterations if iterations is None else iterations
    state = step_initialize(config, seed, scheme)
    metrics = EpisodeMetrics(scheme=scheme.value, seed=seed)
    T = config.learning.env_steps_per_update
    for _ in range(iterations):
        block, block_ue = [], []
        for _ in range(T):
            out = step_trade_and_verify(state)
            _record(metrics, out, state)
            block.append(float(out.rewards.mean()))
            block_ue.append(float(out.ue_satisfaction.mean()) if out.ue_satisfaction.size else 1.0)
        step_share_and_update(state)
        metrics.rewards.append(float(np.mean(block)))
        metrics.ue_rewards.append(float(np.mean(block_ue)))
    if eval_iterations:
        state.frozen = True
        sats = []
        for _ in range(eval_iterations):
            out = step_trade_and_verify(state, learn=False)
            _record(metrics, out, state)
            sats.append(float(out.ue_satisfaction.mean()) if out.ue_satisfaction.size else 1.0)
        metrics.eval_satisfaction = float(np.mean(sats))
    if state_out is not None:
        state_out.append(state)
    return metrics


def _record(metrics: EpisodeMetrics, out: IterationOutcome, state: SimState) -> None:
    metrics.env_rewards.append(float(out.rewards.mean()))
    metrics.satisfaction = out.ue_satisfaction.tolist()
    metrics.ledger.append(out.ledger)
    for t in out.settled:
        metrics.trades_by_service[t.service.value] += 1
        if t.relationship is not None:
            metrics.trades_by_relationship[t.relationship.value] += 1


def write_snapshot(state: SimState, metrics: EpisodeMetrics, path) -> None:
    """End-of-run snapshot (JSON, versioned, fixed key order)."""
    n = len(state.topology.srs)
    doc = {
        "version": SNAPSHOT_VERSION,
        "scheme": state.scheme.value,
        "seed": state.seed,
        "env_iterations": state.iteration,
        "balances": [round(state.accounts.balances[i], 6) for i in range(n)],
        "cumulative_weights": [round(float(w), 6) for w in state.dag.cumulative_weights(n)],
        "ledger_size": len(state.dag.transactions),
        "rewards": [round(r, 6) for r in metrics.rewards],
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
