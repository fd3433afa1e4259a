import numpy as np
import pytest

from s4sagin.config import ScenarioConfig, TopologyConfig
from s4sagin.topology import SrKind, SymbioticRadio, Topology, UserEquipment, _interaction_graph

BW = {SrKind.BS: 20e6, SrKind.UAV: 10e6, SrKind.SAT: 500e6}
RADIUS = {SrKind.BS: 200.0, SrKind.UAV: 250.0, SrKind.SAT: 1e9}


def make_sr(i, kind=SrKind.BS, x=0.0, y=0.0, z=None, radius=None, bandwidth=None,
            cluster=None, center=None, compute=200.0, energy=200.0):
    z = {SrKind.BS: 25.0, SrKind.UAV: 100.0, SrKind.SAT: 1e6}[kind] if z is None else z
    return SymbioticRadio(
        id=i, kind=kind, position=(float(x), float(y), float(z)),
        coverage_radius=RADIUS[kind] if radius is None else radius,
        bandwidth=BW[kind] if bandwidth is None else bandwidth,
        compute_capacity=compute, energy_budget=energy, account_balance=100.0,
        key=bytes([i % 256]) * 32, cluster=cluster, coverage_center=center,
    )


def make_topology(srs, ue_xy=(), hot=None, k=4, clusters=None):
    ues = [UserEquipment(i, (float(x), float(y)), bool(hot[i]) if hot else False)
           for i, (x, y) in enumerate(ue_xy)]
    topo = Topology(srs=list(srs), ues=ues, interaction_graph={}, area=(3000.0, 3000.0),
                    params=TopologyConfig(), clusters=clusters or [])
    topo.interaction_graph = _interaction_graph(topo, min(k, max(1, len(srs) - 1)))
    return topo


@pytest.fixture
def small_config():
    """A scaled-down scenario that keeps every code path alive."""
    return ScenarioConfig().replace(
        topology={"bs_count": 9, "uav_cluster_count": 1, "uavs_per_cluster": 3, "ue_count": 30,
                  "area_width": 1200.0, "area_height": 1200.0},
        learning={"hidden": 16},
        run={"iterations": 2},
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# One verdict line per acceptance criterion, echoed after the run.
ACCEPTANCE_LINES: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES, key=lambda k: int(k)):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
