"""Symbiotic services, the smart-contract account book and resource leases.

Leases last one iteration.  Spectrum-backed services (relaying,
transferring) move bandwidth from the provider's pool into a lease that
only serves the consumer's associated UEs inside the provider's coverage;
computing and power-supply services move abstract units.
"""
from __future__ import annotations

import copy
import csv
import enum
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .config import TradingConfig
from .topology import SrKind, Topology

logger = logging.getLogger(__name__)

MHZ = 1.0e6


class TradeValidationError(ValueError):
    pass


class ProtocolError(RuntimeError):
    """A protocol invariant was violated (e.g. settling an unverified trade)."""


class ServiceKind(enum.Enum):
    RELAYING = "relaying"
    TRANSFERRING = "transferring"
    COMPUTING = "computing"
    POWER_SUPPLY = "power_supply"

    @property
    def resource(self) -> str:
        return {
            ServiceKind.RELAYING: "bandwidth",
            ServiceKind.TRANSFERRING: "bandwidth",
            ServiceKind.COMPUTING: "compute",
            ServiceKind.POWER_SUPPLY: "energy",
        }[self]


class Relationship(enum.Enum):
    OBLIGATE = "obligate"
    FACULTATIVE = "facultative"


class Rejection(enum.Enum):
    INSUFFICIENT_RESOURCE = "insufficient_resource"
    INSUFFICIENT_BALANCE = "insufficient_balance"
    NO_COVERAGE_OVERLAP = "no_coverage_overlap"


@dataclass(frozen=True)
class TradeRecord:
    trade_id: int
    provider: int
    consumer: int
    service: ServiceKind
    amount: float  # Hz for spectrum services, otherwise compute/energy units
    price: float
    iteration: int
    relationship: Relationship | None = None

    def canonical(self) -> dict:
        """Fields covered by the ledger hash (the relationship label is derived)."""
        return {
            "trade_id": self.trade_id, "provider": self.provider, "consumer": self.consumer,
            "service": self.service.value, "amount": repr(float(self.amount)),
            "price": repr(float(self.price)), "iteration": self.iteration,
        }


def unit_price(service: ServiceKind, prices: TradingConfig) -> float:
    """Credits per resource unit (MHz for spectrum services)."""
    return {
        ServiceKind.RELAYING: prices.price_relaying / MHZ,
        ServiceKind.TRANSFERRING: prices.price_transferring / MHZ,
        ServiceKind.COMPUTING: prices.price_computing,
        ServiceKind.POWER_SUPPLY: prices.price_power_supply,
    }[service]


def propose_trade(provider: int, consumer: int, service: ServiceKind, amount: float,
                  iteration: int, trade_id: int = 0,
                  prices: TradingConfig | None = None) -> TradeRecord:
    if provider == consumer:
        raise TradeValidationError(f"self-trade by SR {provider}")
    if not amount > 0:
        raise TradeValidationError(f"trade amount must be positive, got {amount}")
    prices = prices or TradingConfig()
    return TradeRecord(trade_id, provider, consumer, service, float(amount),
                       float(amount) * unit_price(service, prices), iteration)


@dataclass
class AccountBook:
    balances: dict[int, float]
    total_supply: float = 0.0

    @classmethod
    def uniform(cls, ids, balance: float) -> "AccountBook":
        balances = {int(i): float(balance) for i in ids}
        return cls(balances, float(balance) * len(balances))

    def copy(self) -> "AccountBook":
        return AccountBook(dict(self.balances), self.total_supply)

    def check(self, tol: float = 1e-6) -> None:
        if any(b < -tol for b in self.balances.values()):
            raise ProtocolError("negative account balance")
        if abs(sum(self.balances.values()) - self.total_supply) > tol * max(1.0, self.total_supply):
            raise ProtocolError("credit supply not conserved")


@dataclass
class Lease:
    trade_id: int
    provider: int
    consumer: int
    service: ServiceKind
    amount: float  # booked amount (may exceed what the provider physically had)
    overbooked: float = 0.0  # part of ``amount`` not backed by the provider's pool


@dataclass
class ResourceState:
    """Per-iteration resource books.

    For every SR and resource ``remaining + leased_out + spent == owned``,
    where ``spent`` is what the SR consumed itself (ledger verification).
    Units received through leases are kept in ``leased_in`` and never count
    towards the receiver's own pool.
    """
    topology: Topology
    association: np.ndarray  # UE -> serving entity id (-1 if uncovered)
    owned: dict[str, dict[int, float]]
    remaining: dict[str, dict[int, float]]
    leased_out: dict[str, dict[int, float]]
    leased_in: dict[str, dict[int, float]]
    leases: list[Lease] = field(default_factory=list)
    dropped: list[int] = field(default_factory=list)
    overbooked: dict[int, float] = field(default_factory=dict)
    spent: dict[str, dict[int, float]] = field(default_factory=dict)

    @classmethod
    def fresh(cls, topology: Topology, association=None) -> "ResourceState":
        ids = [s.id for s in topology.srs]
        owned = {
            "bandwidth": {s.id: s.bandwidth for s in topology.srs},
            "compute": {s.id: s.compute_capacity for s in topology.srs},
            "energy": {s.id: s.energy_budget for s in topology.srs},
        }
        if association is None:
            association = np.full(len(topology.ues), -1, dtype=int)
        return cls(
            topology=topology, association=np.asarray(association, dtype=int),
            owned=owned, remaining={r: dict(v) for r, v in owned.items()},
            leased_out={r: {i: 0.0 for i in ids} for r in owned},
            leased_in={r: {i: 0.0 for i in ids} for r in owned},
            spent={r: {i: 0.0 for i in ids} for r in owned},
        )

    def copy(self) -> "ResourceState":
        return ResourceState(
            topology=self.topology, association=self.association.copy(),
            owned=self.owned, remaining=copy.deepcopy(self.remaining),
            leased_out=copy.deepcopy(self.leased_out), leased_in=copy.deepcopy(self.leased_in),
            leases=list(self.leases), dropped=list(self.dropped), overbooked=dict(self.overbooked),
            spent=copy.deepcopy(self.spent),
        )

    def associated_ues(self, sr_id: int) -> np.ndarray:
        """UEs associated to the serving entity ``sr_id`` belongs to."""
        return np.flatnonzero(self.association == self.topology.entity_of(sr_id))

    def conservation_violations(self, tol: float = 1e-6) -> list[tuple[str, int]]:
        bad = []
        for res, owned in self.owned.items():
            for i, o in owned.items():
                r, lo = self.remaining[res][i], self.leased_out[res][i]
                used = self.spent.get(res, {}).get(i, 0.0)
                if r < -tol or abs(r + lo + used - o) > tol * max(1.0, o):
                    bad.append((res, i))
        return bad


def _check_ids(state: ResourceState, trade: TradeRecord) -> None:
    n = len(state.topology.srs)
    for sr in (trade.provider, trade.consumer):
        if not 0 <= sr < n:
            raise LookupError(f"unknown SR id {sr}")


def validate_trade(resource_state: ResourceState, account_book: AccountBook,
                   trade: TradeRecord) -> Rejection | None:
    """``None`` when the trade is acceptable, otherwise the rejection reason."""
    _check_ids(resource_state, trade)
    if trade.consumer not in account_book.balances or trade.provider not in account_book.balances:
        raise LookupError("trade party has no account")
    res = trade.service.resource
    if resource_state.remaining[res][trade.provider] < trade.amount - 1e-9:
        return Rejection.INSUFFICIENT_RESOURCE
    if account_book.balances[trade.consumer] < trade.price - 1e-12:
        return Rejection.INSUFFICIENT_BALANCE
    if res == "bandwidth":
        ues = resource_state.associated_ues(trade.consumer)
        if not resource_state.topology.coverage[trade.provider, ues].any():
            return Rejection.NO_COVERAGE_OVERLAP
    return None


def settle(account_book: AccountBook, trade: TradeRecord, verified: bool) -> AccountBook:
    """Move ``trade.price`` credits from consumer to provider (in place)."""
    if not verified:
        raise ProtocolError(f"trade {trade.trade_id} settled without a verified transaction")
    if account_book.balances[trade.consumer] < trade.price - 1e-12:
        raise ProtocolError(f"trade {trade.trade_id}: consumer cannot pay {trade.price}")
    if trade.price:
        account_book.balances[trade.consumer] -= trade.price
        account_book.balances[trade.provider] += trade.price
    return account_book


def apply_trades(resource_state: ResourceState, accepted_trades, overbook: bool = False) -> ResourceState:
    """Return a copy of the state with the trades applied in ascending trade_id.

    A trade that would lease more than the provider has left is dropped and
    logged.  With ``overbook=True`` (no ledger to consult) the excess is
    booked instead and recorded as unbacked capacity on the provider.
    """
    state = resource_state.copy()
    for trade in sorted(accepted_trades, key=lambda t: t.trade_id):
        _check_ids(state, trade)
        res = trade.service.resource
        have = state.remaining[res][trade.provider]
        backed = trade.amount
        excess = 0.0
        if trade.amount > have + 1e-9:
            if not overbook:
                logger.info("dropping over-lease trade %d (%.4g > %.4g)", trade.trade_id, trade.amount, have)
                state.dropped.append(trade.trade_id)
                continue
            backed, excess = have, trade.amount - have
        state.remaining[res][trade.provider] = have - backed
        state.leased_out[res][trade.provider] += backed
        state.leased_in[res][trade.consumer] += trade.amount
        if excess:
            state.overbooked[trade.provider] = state.overbooked.get(trade.provider, 0.0) + excess
        state.leases.append(Lease(trade.trade_id, trade.provider, trade.consumer,
                                  trade.service, trade.amount, excess))
    return state


def _needs(state: ResourceState, demands_bps: np.ndarray, ues: np.ndarray, sr_id: int) -> np.ndarray:
    return demands_bps[ues] / state.topology.spectral_efficiency(sr_id)


def classify_relationship(topology: Topology, trade: TradeRecord, resource_state: ResourceState,
                          demands_bps: np.ndarray | None = None) -> Relationship:
    """Obligate when the consumer could not serve any of its UEs on its own."""
    consumer = topology.sr(trade.consumer)
    provider = topology.sr(trade.provider)
    if consumer.kind is SrKind.SAT and provider.kind is SrKind.UAV and trade.service is ServiceKind.RELAYING:
        return Relationship.OBLIGATE
    res = trade.service.resource
    entity = topology.entity_of(trade.consumer)
    own = sum(resource_state.remaining[res][m] for m in topology.members(entity))
    if own <= 0:
        return Relationship.OBLIGATE
    if res == "bandwidth" and demands_bps is not None:
        ues = resource_state.associated_ues(trade.consumer)
        if len(ues) and _needs(resource_state, demands_bps, ues, entity).min() > own:
            return Relationship.OBLIGATE
    return Relationship.FACULTATIVE


TRADE_LOG_FIELDS = ("trade_id", "iteration", "provider", "consumer", "service",
                    "amount", "price", "relationship", "verified")


def trade_log_csv(rows) -> str:
    """``rows`` are ``(TradeRecord, verified)`` pairs."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRADE_LOG_FIELDS)
    for trade, verified in rows:
        w.writerow([trade.trade_id, trade.iteration, trade.provider, trade.consumer,
                    trade.service.value, f"{trade.amount:.6g}", f"{trade.price:.6g}",
                    trade.relationship.value if trade.relationship else "",
                    "true" if verified else "false"])
    return buf.getvalue()
