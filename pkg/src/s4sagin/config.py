"""Scenario configuration and its sectioned ``key = value`` text format.

The text format has five sections, ``[topology]``, ``[trading]``,
``[ledger]``, ``[learning]`` and ``[run]``.  Blank lines and ``#`` comments
are ignored.  Keys that are missing keep their defaults; unknown keys are
rejected.  Defaults reproduce the case-study settings (45 BSs, 4 UAV
clusters of 10, one SAT 1000 km up, 200 UEs around two hot spots, 20/10/500
MHz bandwidths, learning rate 3e-4, minibatch 16).
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Any


class ConfigError(ValueError):
    """Raised for malformed or out-of-range configuration."""


@dataclass
class TopologyConfig:
    bs_count: int = 45
    uav_cluster_count: int = 4
    uavs_per_cluster: int = 10
    sat_count: int = 1
    ue_count: int = 200
    area_width: float = 3000.0  # m
    area_height: float = 3000.0  # m
    bs_radius: float = 200.0  # m
    bs_jitter: float = 0.2  # fraction of grid spacing
    bs_height: float = 25.0  # m
    uav_flight_radius: float = 100.0  # m
    uav_transmission_radius: float = 150.0  # m
    uav_altitude: float = 100.0  # m
    sat_altitude: float = 1.0e6  # m
    bs_bandwidth: float = 20.0e6  # Hz
    uav_bandwidth: float = 10.0e6  # Hz
    sat_bandwidth: float = 500.0e6  # Hz
    se_bs: float = 4.0  # bps/Hz
    se_uav: float = 3.0
    se_sat: float = 1.5
    compute_capacity: float = 200.0  # per iteration
    energy_budget: float = 200.0  # per iteration
    hot_spot_count: int = 2
    hot_spot_fraction: float = 0.6
    hot_spot_sigma: float = 150.0  # m
    rate_min: float = 10.0e6  # bps
    rate_max: float = 1000.0e6  # bps
    latency_min: float = 1.0  # ms
    latency_max: float = 100.0  # ms
    hot_spot_rate_quantile: float = 0.5  # hot-spot UEs draw from the upper part of the rate range
    processing_ms: float = 1.0
    queue_clamp_ms: float = 500.0
    max_load_ratio: float = 0.95
    neighbor_count: int = 4


@dataclass
class TradingConfig:
    initial_balance: float = 100.0
    price_relaying: float = 1.0  # credits per MHz
    price_transferring: float = 1.0  # credits per MHz
    price_computing: float = 1.0  # credits per compute unit
    price_power_supply: float = 1.0  # credits per energy unit


@dataclass
class LedgerConfig:
    p_fault: float = 0.05
    gossip_rounds: int = 3
    orphan_rounds: int = 3
    confirmation_depth: int = 10
    trust_kappa: float = 1.0
    verify_compute_cost: float = 1.0
    verify_energy_cost: float = 1.0
    prune_mode: str = "heaviest"  # or "referenced"
    inflate_factor: float = 10.0


@dataclass
class LearningConfig:
    hidden: int = 256
    lr: float = 3.0e-4
    minibatch: int = 16
    epochs: int = 4
    clip_eps: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    kl_beta: float = 0.01
    optimizer: str = "adam"  # or "sgd"
    env_steps_per_update: int = 8
    creditable_k: int = 3
    eval_iterations: int = 20


@dataclass
class RunConfig:
    iterations: int = 60  # training iterations
    seed: int = 7


@dataclass
class ScenarioConfig:
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    trading: TradingConfig = field(default_factory=TradingConfig)
    ledger: LedgerConfig = field(default_factory=LedgerConfig)
    learning: LearningConfig = field(default_factory=LearningConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def validate(self) -> "ScenarioConfig":
        for section, key, value in _items(self):
            check = _RANGES.get(key)
            if check is not None and not check(value):
                raise ConfigError(f"value out of range for {key!r}: {value!r}")
        t = self.topology
        if t.rate_min > t.rate_max or t.latency_min > t.latency_max:
            raise ConfigError("demand ranges must satisfy min <= max")
        return self

    def replace(self, **sections: dict) -> "ScenarioConfig":
        """Copy with per-section overrides, e.g. ``replace(ledger={"p_fault": 0})``."""
        kwargs = {}
        for f in dataclasses.fields(self):
            current = getattr(self, f.name)
            kwargs[f.name] = dataclasses.replace(current, **sections.get(f.name, {}))
        unknown = set(sections) - set(kwargs)
        if unknown:
            raise ConfigError(f"unknown sections: {sorted(unknown)}")
        return ScenarioConfig(**kwargs).validate()


SECTIONS = ("topology", "trading", "ledger", "learning", "run")

_pos = lambda v: v > 0  # noqa: E731
_nonneg = lambda v: v >= 0  # noqa: E731
_prob = lambda v: 0.0 <= v <= 1.0  # noqa: E731

_RANGES = {
    "bs_count": _pos, "uav_cluster_count": _pos, "uavs_per_cluster": _pos,
    "sat_count": lambda v: v == 1, "ue_count": _nonneg,
    "area_width": _pos, "area_height": _pos, "bs_radius": _pos,
    "bs_jitter": lambda v: 0.0 <= v < 0.5, "bs_height": _nonneg,
    "uav_flight_radius": _nonneg, "uav_transmission_radius": _pos,
    "uav_altitude": _nonneg, "sat_altitude": _pos,
    "bs_bandwidth": _pos, "uav_bandwidth": _pos, "sat_bandwidth": _pos,
    "se_bs": _pos, "se_uav": _pos, "se_sat": _pos,
    "compute_capacity": _nonneg, "energy_budget": _nonneg,
    "hot_spot_count": _nonneg, "hot_spot_fraction": _prob, "hot_spot_sigma": _nonneg,
    "rate_min": _pos, "rate_max": _pos, "latency_min": _pos, "latency_max": _pos,
    "hot_spot_rate_quantile": lambda v: 0.0 <= v < 1.0,
    "processing_ms": _nonneg, "queue_clamp_ms": _pos,
    "max_load_ratio": lambda v: 0.0 <= v < 1.0, "neighbor_count": _pos,
    "initial_balance": _nonneg, "price_relaying": _nonneg,
    "price_transferring": _nonneg, "price_computing": _nonneg,
    "price_power_supply": _nonneg,
    "p_fault": _prob, "gossip_rounds": _pos, "orphan_rounds": _pos,
    "confirmation_depth": _pos, "trust_kappa": _nonneg,
    "verify_compute_cost": _nonneg, "verify_energy_cost": _nonneg,
    "prune_mode": lambda v: v in ("heaviest", "referenced"),
    "inflate_factor": lambda v: v > 1.0,
    "hidden": _pos, "lr": _pos, "minibatch": _pos, "epochs": _pos,
    "clip_eps": lambda v: 0.0 < v < 1.0, "gamma": _prob, "gae_lambda": _prob,
    "entropy_coef": _nonneg, "value_coef": _nonneg, "kl_beta": _nonneg,
    "optimizer": lambda v: v in ("adam", "sgd"),
    "env_steps_per_update": _pos, "creditable_k": _pos, "eval_iterations": _nonneg,
    "iterations": _nonneg, "seed": _nonneg,
}


def _items(cfg: ScenarioConfig):
    for name in SECTIONS:
        sec = getattr(cfg, name)
        for f in dataclasses.fields(sec):
            yield name, f.name, getattr(sec, f.name)


def _coerce(raw: str, default: Any, key: str, lineno: int) -> Any:
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false"):
                raise ValueError(raw)
            return raw.lower() == "true"
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            value = float(raw)
            if not math.isfinite(value):
                raise ValueError(raw)
            return value
        return raw.strip().strip('"')
    except ValueError:
        raise ConfigError(
            f"line {lineno}: cannot parse {raw!r} as {type(default).__name__} for key {key!r}"
        ) from None


def parse_config(text: str) -> ScenarioConfig:
    """Parse the sectioned text format into a validated ScenarioConfig."""
    cfg = ScenarioConfig()
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"line {lineno}: malformed section header {line!r}")
            section = line[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        if section is None:
            raise ConfigError(f"line {lineno}: key outside of any section")
        key, raw = (s.strip() for s in line.split("=", 1))
        sec = getattr(cfg, section)
        if not hasattr(sec, key):
            raise ConfigError(f"line {lineno}: unknown key {key!r} in [{section}]")
        setattr(sec, key, _coerce(raw, getattr(sec, key), key, lineno))
    return cfg.validate()


def serialize_config(cfg: ScenarioConfig) -> str:
    """Render every field; ``parse_config(serialize_config(c)) == c``."""
    lines = []
    for name in SECTIONS:
        lines.append(f"[{name}]")
        sec = getattr(cfg, name)
        for f in dataclasses.fields(sec):
            value = getattr(sec, f.name)
            lines.append(f"{f.name} = {value!r}" if isinstance(value, float) else f"{f.name} = {value}")
        lines.append("")
    return "\n".join(lines)


def reference_text() -> str:
    """The documented defaults, as a commented config file."""
    return "# s4sagin scenario defaults (generated)\n" + serialize_config(ScenarioConfig())


def load_config(path) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
