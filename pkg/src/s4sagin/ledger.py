"""Tangle-style DAG ledger with gossip dissemination and trust weights.

Every new transaction references two existing tips.  Signatures are
simulated as HMAC-SHA256 over the transaction id with the issuer's 32-byte
key; the id itself is the SHA-256 of the canonical payload, the parent ids,
the issuer and the iteration.  Tampering with the payload therefore breaks
the id and, with it, the signature.

A ``DagState`` is the authoritative union of everything broadcast; each SR
additionally owns a ``NodeLedgerView`` holding its local statuses, its tips
and an outbox.  Views share the immutable transaction objects.
"""
from __future__ import annotations

import enum
import hashlib
import hmac
import json
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .trading import AccountBook, ResourceState, TradeRecord, validate_trade

logger = logging.getLogger(__name__)


class AuthError(PermissionError):
    """The issuer has no registered signing key."""


class LedgerStateError(RuntimeError):
    pass


class Status(enum.Enum):
    PENDING = "pending"
    VERIFIED = "verified"
    REJECTED = "rejected"
    PRUNED = "pruned"


class RejectReason(enum.Enum):
    BAD_SIGNATURE = "bad_signature"
    INVALID_PAYLOAD = "invalid_payload"
    ORPHAN = "orphan"


class FaultMode(enum.Enum):
    BAD_SIGNATURE = "bad_signature"
    INFLATED_AMOUNT = "inflated_amount"


@dataclass(frozen=True)
class ObservationDigest:
    sr_id: int
    values: tuple[float, ...]

    def canonical(self) -> dict:
        return {"sr_id": self.sr_id, "values": [repr(float(v)) for v in self.values]}


@dataclass(eq=False)
class Transaction:
    tx_id: str
    issuer: int
    payload: TradeRecord | ObservationDigest | None
    parents: tuple[str, ...]
    signature: bytes
    iteration: int
    seq: int = 0
    status: Status = Status.PENDING
    reason: RejectReason | None = None
    issued_weights: dict[int, float] = field(default_factory=dict)

    @property
    def total_weight(self) -> float:
        return sum(self.issued_weights.values())


def canonical_bytes(payload, parents, issuer: int, iteration: int) -> bytes:
    body = {
        "payload": None if payload is None else payload.canonical(),
        "kind": type(payload).__name__,
        "parents": list(parents),
        "issuer": int(issuer),
        "iteration": int(iteration),
    }
    return json.dumps(body, sort_keys=True, separators=(",", ":")).encode("utf-8")


def compute_tx_id(payload, parents, issuer: int, iteration: int) -> str:
    return hashlib.sha256(canonical_bytes(payload, parents, issuer, iteration)).hexdigest()


def sign(key: bytes, tx_id: str) -> bytes:
    return hmac.new(key, tx_id.encode("ascii"), hashlib.sha256).digest()


class DagState:
    """Authoritative DAG: all transactions, children, tips and per-SR index."""

    def __init__(self, genesis: Transaction):
        self.transactions: dict[str, Transaction] = {genesis.tx_id: genesis}
        self.children: dict[str, list[str]] = {genesis.tx_id: []}
        self.tips: set[str] = {genesis.tx_id}
        self.genesis = genesis.tx_id
        self.by_issuer: dict[int, list[str]] = {}
        self.path_weight: dict[str, float] = {genesis.tx_id: 0.0}
        self.order: list[str] = [genesis.tx_id]  # insertion (topological) order

    def __contains__(self, tx_id: str) -> bool:
        return tx_id in self.transactions

    def attach(self, tx: Transaction, check_acyclic: bool = False) -> None:
        if tx.tx_id in self.transactions:
            return
        for p in tx.parents:
            if p not in self.transactions:
                raise LedgerStateError(f"parent {p[:12]} of {tx.tx_id[:12]} unknown")
        self.transactions[tx.tx_id] = tx
        self.children[tx.tx_id] = []
        self.order.append(tx.tx_id)
        self.by_issuer.setdefault(tx.issuer, []).append(tx.tx_id)
        for p in set(tx.parents):
            self.children[p].append(tx.tx_id)
        if check_acyclic and not is_acyclic(self):
            raise LedgerStateError("attach created a cycle")

    def set_status(self, tx_id: str, status: Status, reason: RejectReason | None = None) -> None:
        tx = self.transactions[tx_id]
        tx.status, tx.reason = status, reason
        if status is Status.VERIFIED:
            self.tips.add(tx_id)
            for p in tx.parents:
                self.tips.discard(p)
        else:
            self.tips.discard(tx_id)

    def cumulative_weights(self, n: int) -> np.ndarray:
        out = np.zeros(n)
        for sr, ids in self.by_issuer.items():
            if 0 <= sr < n:
                out[sr] = cumulative_weight(self, sr)
        return out


def is_acyclic(dag: DagState) -> bool:
    """Kahn's algorithm over the parent relation."""
    indeg = {t: len(set(tx.parents)) for t, tx in dag.transactions.items()}
    queue = [t for t, d in indeg.items() if d == 0]
    seen = 0
    while queue:
        t = queue.pop()
        seen += 1
        for c in dag.children[t]:
            indeg[c] -= 1
            if indeg[c] == 0:
                queue.append(c)
    return seen == len(dag.transactions)


def make_genesis(issuer: int = 0) -> Transaction:
    tx_id = compute_tx_id(None, (), issuer, 0)
    return Transaction(tx_id=tx_id, issuer=issuer, payload=None, parents=(),
                       signature=b"\x00" * 32, iteration=0, status=Status.VERIFIED)


@dataclass
class NodeLedgerView:
    """One SR's local copy of the ledger."""
    owner: int
    status: dict[str, Status]
    tips: set[str]
    outbox: list[str] = field(default_factory=list)
    pending: dict[str, int] = field(default_factory=dict)  # tx_id -> rounds waited
    honest: bool = True

    @classmethod
    def bootstrap(cls, owner: int, genesis: str) -> "NodeLedgerView":
        return cls(owner=owner, status={genesis: Status.VERIFIED}, tips={genesis})

    def knows(self, tx_id: str) -> bool:
        return tx_id in self.status

    def verified_set(self) -> frozenset[str]:
        return frozenset(t for t, s in self.status.items() if s is Status.VERIFIED)

    def record(self, tx: Transaction, status: Status) -> None:
        self.status[tx.tx_id] = status
        if status is Status.VERIFIED:
            self.tips.add(tx.tx_id)
            for p in tx.parents:
                self.tips.discard(p)


def select_tips(dag: DagState, rng: np.random.Generator, tips=None,
                weight_of: Callable[[int], float] | None = None) -> tuple[str, str]:
    """Two parents drawn with replacement, each with probability
    proportional to ``1 + cumulative weight`` of the tip's issuer.  Only
    verified tips are eligible."""
    pool = sorted(t for t in (dag.tips if tips is None else tips)
                  if t in dag.transactions and dag.transactions[t].status is Status.VERIFIED)
    if not pool:
        raise LedgerStateError("no verified tip to reference")
    if len(pool) == 1:
        return pool[0], pool[0]
    if weight_of is None:
        weight_of = lambda sr: cumulative_weight(dag, sr)  # noqa: E731
    w = np.array([1.0 + weight_of(dag.transactions[t].issuer) for t in pool])
    idx = rng.choice(len(pool), size=2, replace=True, p=w / w.sum())
    return pool[int(idx[0])], pool[int(idx[1])]


def create_transaction(issuer: int, payload, dag: DagState, rng: np.random.Generator,
                       keys: dict[int, bytes], iteration: int, seq: int = 0, tips=None,
                       weight_of=None) -> Transaction:
    if issuer not in keys:
        raise AuthError(f"SR {issuer} has no registered signing key")
    parents = select_tips(dag, rng, tips=tips, weight_of=weight_of)
    tx_id = compute_tx_id(payload, parents, issuer, iteration)
    return Transaction(tx_id=tx_id, issuer=issuer, payload=payload, parents=parents,
                       signature=sign(keys[issuer], tx_id), iteration=iteration, seq=seq)


def verify_transaction(dag: DagState, tx: Transaction, resource_state: ResourceState | None,
                       account_book: AccountBook | None, keys: dict[int, bytes],
                       known: Callable[[str], bool] | None = None):
    """Return ``(Status, reason)``; ``Status.PENDING`` when a parent is missing."""
    known = known or dag.__contains__
    if any(not known(p) for p in tx.parents):
        return Status.PENDING, None
    key = keys.get(tx.issuer)
    recomputed = compute_tx_id(tx.payload, tx.parents, tx.issuer, tx.iteration)
    if key is None or recomputed != tx.tx_id or not hmac.compare_digest(sign(key, recomputed), tx.signature):
        return Status.REJECTED, RejectReason.BAD_SIGNATURE
    if isinstance(tx.payload, TradeRecord) and resource_state is not None:
        if tx.payload.provider != tx.issuer and tx.payload.consumer != tx.issuer:
            return Status.REJECTED, RejectReason.INVALID_PAYLOAD
        try:
            if validate_trade(resource_state, account_book, tx.payload) is not None:
                return Status.REJECTED, RejectReason.INVALID_PAYLOAD
        except (LookupError, KeyError):
            return Status.REJECTED, RejectReason.INVALID_PAYLOAD
    return Status.VERIFIED, None


def issue_trust_weight(verifier: int, tx: Transaction, verify_cost: tuple[float, float],
                       resource_state: ResourceState | None = None, kappa: float = 1.0) -> float:
    """Weight proportional to the compute and energy spent verifying ``tx``.

    The cost is debited from the verifier's per-iteration budget; a verifier
    that cannot pay issues weight 0 (its verification still counts).
    """
    compute, energy = verify_cost
    if resource_state is not None:
        rc, re_ = resource_state.remaining["compute"], resource_state.remaining["energy"]
        if rc[verifier] < compute or re_[verifier] < energy:
            tx.issued_weights[verifier] = 0.0
            return 0.0
        rc[verifier] -= compute
        re_[verifier] -= energy
        if resource_state.spent:
            resource_state.spent["compute"][verifier] += compute
            resource_state.spent["energy"][verifier] += energy
    weight = kappa * (compute + energy)
    tx.issued_weights[verifier] = tx.issued_weights.get(verifier, 0.0) + weight
    return weight


def cumulative_weight(dag: DagState, sr_id: int) -> float:
    total = 0.0
    for t in dag.by_issuer.get(sr_id, ()):
        tx = dag.transactions[t]
        if tx.status is Status.VERIFIED:
            total += tx.total_weight
    return total


def inject_fault(tx: Transaction, rng: np.random.Generator, mode: FaultMode,
                 inflate_factor: float = 10.0) -> Transaction:
    """A corrupted copy of ``tx``.  Neither corruption re-signs."""
    if not isinstance(tx.payload, TradeRecord):
        raise ValueError("only trade transactions can be corrupted")
    if mode is FaultMode.BAD_SIGNATURE:
        sig = bytearray(tx.signature)
        pos = int(rng.integers(len(sig)))
        sig[pos] ^= 1 << int(rng.integers(8))
        return Transaction(tx.tx_id, tx.issuer, tx.payload, tx.parents, bytes(sig),
                           tx.iteration, tx.seq)
    p = tx.payload
    inflated = TradeRecord(p.trade_id, p.provider, p.consumer, p.service, p.amount * inflate_factor,
                           p.price, p.iteration, p.relationship)
    return Transaction(tx.tx_id, tx.issuer, inflated, tx.parents, tx.signature, tx.iteration, tx.seq)


@dataclass
class GossipStats:
    deliveries: int = 0
    verified: int = 0
    rejected: int = 0
    orphaned: int = 0


def gossip_round(views: dict[int, NodeLedgerView], interaction_graph: dict[int, tuple[int, ...]],
                 dag: DagState, verify: Callable[[Transaction, NodeLedgerView], tuple],
                 on_verified: Callable[[int, Transaction], None] | None = None,
                 orphan_rounds: int = 3) -> GossipStats:
    """Forward every outbox to all graph neighbours, then let each receiver
    process its inbox in (iteration, issuer, sequence) order.

    ``verify(tx, view)`` returns ``(Status, reason)``.  Verified transactions
    enter the receiver's outbox for the next round; rejected ones are kept
    locally but not forwarded.
    """
    stats = GossipStats()
    inbox: dict[int, dict[str, Transaction]] = {}
    for sender in sorted(views):
        view = views[sender]
        if not view.outbox:
            continue
        for tx_id in view.outbox:
            tx = dag.transactions[tx_id]
            for n in interaction_graph.get(sender, ()):
                if n in views and not views[n].knows(tx_id):
                    inbox.setdefault(n, {})[tx_id] = tx
                    stats.deliveries += 1
        view.outbox = []
    for receiver in sorted(set(inbox) | {r for r, v in views.items() if v.pending}):
        view = views[receiver]
        batch = dict(inbox.get(receiver, {}))
        for tx_id in view.pending:
            batch.setdefault(tx_id, dag.transactions[tx_id])
        for tx in sorted(batch.values(), key=lambda t: (t.iteration, t.issuer, t.seq, t.tx_id)):
            if view.knows(tx.tx_id):
                continue
            status, reason = verify(tx, view)
            if status is Status.PENDING:
                waited = view.pending.get(tx.tx_id, 0) + 1
                if waited > orphan_rounds:
                    view.pending.pop(tx.tx_id, None)
                    view.record(tx, Status.REJECTED)
                    stats.orphaned += 1
                else:
                    view.pending[tx.tx_id] = waited
                continue
            view.pending.pop(tx.tx_id, None)
            view.record(tx, status)
            if status is Status.VERIFIED:
                stats.verified += 1
                view.outbox.append(tx.tx_id)
                if on_verified is not None:
                    on_verified(receiver, tx)
            else:
                stats.rejected += 1
    return stats


def heaviest_tip(dag: DagState) -> str:
    best, best_w = dag.genesis, -1.0
    for t in sorted(dag.tips):
        w = dag.path_weight.get(t)
        if w is None:
            w = refresh_path_weight(dag, t)
        if w > best_w:
            best, best_w = t, w
    return best


def refresh_path_weight(dag: DagState, tx_id: str) -> float:
    """Weight of the heaviest genesis-to-``tx_id`` path (issued weights summed)."""
    stack = [tx_id]
    while stack:
        t = stack[-1]
        tx = dag.transactions[t]
        todo = [p for p in tx.parents if p not in dag.path_weight]
        if todo:
            stack.extend(todo)
            continue
        stack.pop()
        if t in dag.path_weight:
            continue
        own = tx.total_weight if tx.status is Status.VERIFIED else 0.0
        dag.path_weight[t] = own + max((dag.path_weight[p] for p in tx.parents), default=0.0)
    return dag.path_weight[tx_id]


def ancestors(dag: DagState, roots) -> set[str]:
    seen: set[str] = set()
    stack = list(roots)
    while stack:
        t = stack.pop()
        if t in seen:
            continue
        seen.add(t)
        stack.extend(dag.transactions[t].parents)
    return seen


def prune(dag: DagState, confirmation_depth: int, current_iteration: int,
          mode: str = "heaviest") -> list[str]:
    """Mark old transactions off the retained sub-DAG as pruned.

    ``heaviest`` keeps the ancestors of the tip ending the heaviest path;
    ``referenced`` keeps everything reachable from any tip.  Rejected
    transactions older than the depth are always pruned.  Returns the ids
    pruned by this call.
    """
    if confirmation_depth < 1:
        raise ValueError("confirmation_depth must be >= 1")
    cutoff = current_iteration - confirmation_depth
    if mode == "heaviest":
        keep = ancestors(dag, [heaviest_tip(dag)])
    elif mode == "referenced":
        keep = ancestors(dag, dag.tips)
    else:
        raise ValueError(f"unknown prune mode {mode!r}")
    pruned = []
    for t in dag.order:
        tx = dag.transactions[t]
        if tx.iteration >= cutoff or t == dag.genesis:
            continue
        if tx.status is Status.REJECTED or (tx.status is Status.VERIFIED and t not in keep):
            dag.set_status(t, Status.PRUNED)
            pruned.append(t)
    return pruned


LEDGER_SNAPSHOT_FIELDS = ("tx_id", "issuer", "parents", "status", "total_weight", "iteration")


def snapshot_lines(dag: DagState) -> str:
    """One JSON object per line, fixed field order, in attach order."""
    lines = []
    for t in dag.order:
        tx = dag.transactions[t]
        rec = {"tx_id": tx.tx_id, "issuer": tx.issuer, "parents": list(tx.parents),
               "status": tx.status.value, "total_weight": round(tx.total_weight, 6),
               "iteration": tx.iteration}
        lines.append(json.dumps(rec, separators=(",", ":")))
    return "\n".join(lines) + "\n"
