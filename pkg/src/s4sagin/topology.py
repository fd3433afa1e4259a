"""SAGIN geometry: base stations, UAV clusters, one satellite and ground UEs.

Node ids are dense: BSs first, then UAVs cluster by cluster, then the SAT.
A UAV cluster serves UEs as a single entity anchored at its first UAV (the
"cluster head"); its coverage disc is centred on the cluster centre with
radius flight + transmission distance.  Every other SR serves on its own.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .config import ConfigError, ScenarioConfig, TopologyConfig
from .rng import stream

SPEED_OF_LIGHT = 3.0e8  # m/s


class CoverageError(LookupError):
    """The UE is not inside the serving SR's coverage disc."""


class SrKind(enum.Enum):
    SAT = "sat"
    UAV = "uav"
    BS = "bs"


@dataclass(frozen=True)
class SymbioticRadio:
    id: int
    kind: SrKind
    position: tuple[float, float, float]
    coverage_radius: float
    bandwidth: float
    compute_capacity: float
    energy_budget: float
    account_balance: float
    key: bytes
    cluster: int | None = None  # cluster index for UAVs
    coverage_center: tuple[float, float] | None = None  # ground point the disc is measured from

    def __post_init__(self):
        if self.coverage_radius <= 0:
            raise ConfigError(f"SR {self.id}: coverage_radius must be > 0")
        if self.bandwidth <= 0:
            raise ConfigError(f"SR {self.id}: bandwidth must be > 0")
        if self.compute_capacity < 0 or self.energy_budget < 0:
            raise ConfigError(f"SR {self.id}: resource budgets must be >= 0")
        if len(self.key) != 32:
            raise ConfigError(f"SR {self.id}: signing key must be 32 bytes")

    @property
    def ground_center(self) -> tuple[float, float]:
        if self.coverage_center is not None:
            return self.coverage_center
        return (self.position[0], self.position[1])


@dataclass(frozen=True)
class UserEquipment:
    id: int
    position: tuple[float, float]
    hot_spot_member: bool


@dataclass(frozen=True)
class ServiceRequest:
    ue_id: int
    rate_req: float  # bps
    latency_req: float  # ms


@dataclass(eq=False)
class Topology:
    srs: list[SymbioticRadio]
    ues: list[UserEquipment]
    interaction_graph: dict[int, tuple[int, ...]]
    area: tuple[float, float]
    params: TopologyConfig = field(default_factory=TopologyConfig)
    clusters: list[list[int]] = field(default_factory=list)
    hot_spots: list[tuple[float, float]] = field(default_factory=list)

    def __eq__(self, other):
        if not isinstance(other, Topology):
            return NotImplemented
        return (self.srs == other.srs and self.ues == other.ues
                and self.interaction_graph == other.interaction_graph
                and self.area == other.area and self.clusters == other.clusters)

    def __hash__(self):
        return id(self)

    def sr(self, sr_id: int) -> SymbioticRadio:
        if not isinstance(sr_id, (int, np.integer)) or not 0 <= sr_id < len(self.srs):
            raise LookupError(f"unknown SR id {sr_id!r}")
        return self.srs[sr_id]

    def ids_of(self, kind: SrKind) -> list[int]:
        return [s.id for s in self.srs if s.kind is kind]

    @cached_property
    def sat_id(self) -> int | None:
        sats = self.ids_of(SrKind.SAT)
        return sats[0] if sats else None

    @cached_property
    def positions(self) -> np.ndarray:
        return np.array([s.position for s in self.srs], dtype=float).reshape(-1, 3)

    @cached_property
    def ue_positions(self) -> np.ndarray:
        return np.array([u.position for u in self.ues], dtype=float).reshape(-1, 2)

    @cached_property
    def coverage(self) -> np.ndarray:
        """Boolean matrix ``[sr, ue]``; closed discs on the ground plane."""
        cov = np.zeros((len(self.srs), len(self.ues)), dtype=bool)
        if not self.ues:
            return cov
        for s in self.srs:
            if s.kind is SrKind.SAT:
                cov[s.id] = True
                continue
            cx, cy = s.ground_center
            d = np.hypot(self.ue_positions[:, 0] - cx, self.ue_positions[:, 1] - cy)
            cov[s.id] = d <= s.coverage_radius
        return cov

    # serving entities: BSs, the SAT and one per UAV cluster
    def entity_of(self, sr_id: int) -> int:
        s = self.sr(sr_id)
        if s.kind is SrKind.UAV:
            return self.clusters[s.cluster][0]
        return sr_id

    def members(self, entity: int) -> list[int]:
        s = self.sr(entity)
        if s.kind is SrKind.UAV:
            return list(self.clusters[s.cluster])
        return [entity]

    @cached_property
    def entities(self) -> list[int]:
        return sorted({self.entity_of(s.id) for s in self.srs})

    def entity_bandwidth(self, entity: int) -> float:
        return sum(self.srs[m].bandwidth for m in self.members(entity))

    def spectral_efficiency(self, sr_id: int) -> float:
        p = self.params
        return {SrKind.BS: p.se_bs, SrKind.UAV: p.se_uav, SrKind.SAT: p.se_sat}[self.sr(sr_id).kind]


def _key(seed: int, sr_id: int) -> bytes:
    return stream(seed, "keys", sr_id).bytes(32)


def build_topology(config: ScenarioConfig | TopologyConfig, seed: int) -> Topology:
    """Place BSs on a jittered grid, UAV clusters and hot spots uniformly, the
    SAT above the area centre, then scatter UEs (hot-spot share Gaussian)."""
    p = config.topology if isinstance(config, ScenarioConfig) else config
    if p.bs_count <= 0 or p.uav_cluster_count <= 0 or p.uavs_per_cluster <= 0 or p.sat_count != 1:
        raise ConfigError("SR counts must be positive (exactly one SAT)")
    if p.ue_count < 0:
        raise ConfigError("ue_count must be >= 0")
    if p.area_width <= 0 or p.area_height <= 0:
        raise ConfigError("area must have positive width and height")
    balance = config.trading.initial_balance if isinstance(config, ScenarioConfig) else 100.0
    W, H = p.area_width, p.area_height
    rng = stream(seed, "topology")

    # jittered grid for base stations
    cols = max(1, math.ceil(math.sqrt(p.bs_count * W / H)))
    rows = math.ceil(p.bs_count / cols)
    dx, dy = W / cols, H / rows
    if min(dx, dy) < p.bs_radius:
        raise ConfigError(
            f"area too small: grid spacing {min(dx, dy):.1f} m below BS radius {p.bs_radius} m"
        )
    cells = np.round(np.linspace(0, rows * cols - 1, p.bs_count)).astype(int)
    srs: list[SymbioticRadio] = []
    for cell in cells:
        r, c = divmod(int(cell), cols)
        jx, jy = rng.uniform(-p.bs_jitter, p.bs_jitter, size=2)
        x = float(np.clip((c + 0.5 + jx) * dx, 0.0, W))
        y = float(np.clip((r + 0.5 + jy) * dy, 0.0, H))
        srs.append(SymbioticRadio(
            id=len(srs), kind=SrKind.BS, position=(x, y, p.bs_height),
            coverage_radius=p.bs_radius, bandwidth=p.bs_bandwidth,
            compute_capacity=p.compute_capacity, energy_budget=p.energy_budget,
            account_balance=balance, key=_key(seed, len(srs)),
        ))

    clusters: list[list[int]] = []
    margin = p.uav_flight_radius
    for ci in range(p.uav_cluster_count):
        cx = float(rng.uniform(margin, W - margin)) if W > 2 * margin else W / 2
        cy = float(rng.uniform(margin, H - margin)) if H > 2 * margin else H / 2
        ids = []
        for _ in range(p.uavs_per_cluster):
            rad = p.uav_flight_radius * math.sqrt(rng.uniform())
            ang = rng.uniform(0.0, 2 * math.pi)
            pos = (cx + rad * math.cos(ang), cy + rad * math.sin(ang), p.uav_altitude)
            ids.append(len(srs))
            srs.append(SymbioticRadio(
                id=len(srs), kind=SrKind.UAV, position=pos,
                coverage_radius=p.uav_flight_radius + p.uav_transmission_radius,
                bandwidth=p.uav_bandwidth, compute_capacity=p.compute_capacity,
                energy_budget=p.energy_budget, account_balance=balance,
                key=_key(seed, len(srs)), cluster=ci, coverage_center=(cx, cy),
            ))
        clusters.append(ids)

    srs.append(SymbioticRadio(
        id=len(srs), kind=SrKind.SAT, position=(W / 2, H / 2, p.sat_altitude),
        coverage_radius=math.hypot(W, H), bandwidth=p.sat_bandwidth,
        compute_capacity=p.compute_capacity, energy_budget=p.energy_budget,
        account_balance=balance, key=_key(seed, len(srs)),
    ))

    hot_spots = []
    hm = min(2 * p.hot_spot_sigma, W / 4, H / 4)
    for _ in range(p.hot_spot_count):
        hot_spots.append((float(rng.uniform(hm, W - hm)), float(rng.uniform(hm, H - hm))))
    n_hot = int(round(p.hot_spot_fraction * p.ue_count)) if hot_spots else 0
    ues = []
    for i in range(p.ue_count):
        if i < n_hot:
            hx, hy = hot_spots[i % len(hot_spots)]
            x, y = rng.normal((hx, hy), p.hot_spot_sigma)
            x, y = float(np.clip(x, 0.0, W)), float(np.clip(y, 0.0, H))
        else:
            x, y = float(rng.uniform(0.0, W)), float(rng.uniform(0.0, H))
        ues.append(UserEquipment(id=i, position=(x, y), hot_spot_member=i < n_hot))

    topo = Topology(srs=srs, ues=ues, interaction_graph={}, area=(W, H), params=p,
                    clusters=clusters, hot_spots=hot_spots)
    topo.interaction_graph = _interaction_graph(topo, p.neighbor_count)
    return topo


def _interaction_graph(topo: Topology, k: int) -> dict[int, tuple[int, ...]]:
    """Symmetrised k-nearest-neighbour graph plus SAT hub edges to every SR."""
    adj: dict[int, set[int]] = {s.id: set() for s in topo.srs}
    for s in topo.srs:
        for n in neighbors(topo, s.id, k):
            adj[s.id].add(n)
            adj[n].add(s.id)
    sat = topo.sat_id
    if sat is not None:
        for s in topo.srs:
            if s.id != sat:
                adj[s.id].add(sat)
                adj[sat].add(s.id)
    return {i: tuple(sorted(v)) for i, v in adj.items()}


def neighbors(topology: Topology, sr_id: int, k: int) -> list[int]:
    """The ``k`` nearest SRs by 3-D distance, ties by ascending id.

    The SAT is always among a UAV's neighbours (it takes the last slot when
    it would not otherwise make the cut).
    """
    me = topology.sr(sr_id)
    if k < 1:
        raise ValueError("k must be >= 1")
    d = np.linalg.norm(topology.positions - topology.positions[sr_id], axis=1)
    order = [int(i) for i in np.lexsort((np.arange(len(d)), d)) if i != sr_id]
    picked = order[:k]
    sat = topology.sat_id
    if me.kind is SrKind.UAV and sat is not None and sat not in picked:
        picked = order[: k - 1] + [sat]
    return picked


def coverage_set(topology: Topology, sr_id: int) -> frozenset[int]:
    """UE ids inside the SR's closed coverage disc (SAT: the whole area)."""
    topology.sr(sr_id)
    return frozenset(int(u) for u in np.flatnonzero(topology.coverage[sr_id]))


def sample_demands(topology: Topology, iteration: int, rng: np.random.Generator) -> list[ServiceRequest]:
    """One request per UE: rate and latency uniform over the configured ranges,
    with hot-spot UEs drawing their rate from the upper part of the range."""
    p = topology.params
    n = len(topology.ues)
    hot = np.array([u.hot_spot_member for u in topology.ues], dtype=bool)
    lo = np.where(hot, p.rate_min + p.hot_spot_rate_quantile * (p.rate_max - p.rate_min), p.rate_min)
    rates = lo + rng.uniform(size=n) * (p.rate_max - lo)
    lats = p.latency_min + rng.uniform(size=n) * (p.latency_max - p.latency_min)
    rates = np.clip(rates, p.rate_min, p.rate_max)
    lats = np.clip(lats, p.latency_min, p.latency_max)
    return [ServiceRequest(i, float(r), float(l)) for i, r, l in zip(range(n), rates, lats)]


def queueing_delay(load_ratio: float, clamp_ms: float) -> float:
    if load_ratio >= 1.0:
        return clamp_ms
    return min(2.0 * load_ratio / (1.0 - load_ratio), clamp_ms)


def experienced_quality(topology: Topology, sr_id: int, ue_id: int, allocated_bandwidth: float,
                        load_ratio: float, hops: int = 1) -> tuple[float, float]:
    """(rate in bps, latency in ms) seen by a UE served by ``sr_id``.

    Rate is bandwidth times the kind's spectral efficiency.  Latency adds
    3-D propagation delay, a fixed processing delay per serving hop and an
    M/M/1-style queueing term saturating at the configured clamp.
    """
    if not topology.coverage[topology.sr(sr_id).id, ue_id]:
        raise CoverageError(f"UE {ue_id} outside coverage of SR {sr_id}")
    if allocated_bandwidth < 0:
        raise ValueError("allocated_bandwidth must be >= 0")
    p = topology.params
    rate = allocated_bandwidth * topology.spectral_efficiency(sr_id)
    sx, sy, sz = topology.srs[sr_id].position
    ux, uy = topology.ues[ue_id].position
    dist = math.sqrt((sx - ux) ** 2 + (sy - uy) ** 2 + sz ** 2)
    latency = dist / SPEED_OF_LIGHT * 1e3 + p.processing_ms * hops
    latency += queueing_delay(max(load_ratio, 0.0), p.queue_clamp_ms)
    return rate, latency


def associate(topology: Topology, available: dict[int, float]) -> np.ndarray:
    """Assign each UE (ascending id) to the covering serving entity with the
    largest available bandwidth per UE after the assignment; ties go to the
    smallest entity id.  Returns entity id per UE, -1 when uncovered."""
    entities = topology.entities
    counts = {e: 0 for e in entities}
    out = np.full(len(topology.ues), -1, dtype=int)
    cov = topology.coverage
    for u in range(len(topology.ues)):
        best, best_score = -1, -1.0
        for e in entities:
            if not cov[e, u]:
                continue
            score = available.get(e, 0.0) / (counts[e] + 1)
            if score > best_score:
                best, best_score = e, score
        if best >= 0:
            counts[best] += 1
        out[u] = best
    return out
