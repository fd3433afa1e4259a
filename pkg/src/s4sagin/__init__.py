"""Symbiotic radios trading services in a space-air-ground network, with a
DAG ledger for trust and policy-sharing PPO agents."""
from .config import ConfigError, ScenarioConfig, load_config, parse_config
from .engine import EpisodeMetrics, Scheme, run_experiment, step_initialize, step_trade_and_verify
from .topology import SrKind, Topology, build_topology

__all__ = [
    "ConfigError", "EpisodeMetrics", "ScenarioConfig", "Scheme", "SrKind", "Topology",
    "build_topology", "load_config", "parse_config", "run_experiment", "step_initialize",
    "step_trade_and_verify",
]
__version__ = "0.1.0"
