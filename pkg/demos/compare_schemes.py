"""Train the four schemes on a reduced network and print their reward curves.

    python demos/compare_schemes.py [iterations]
"""
import sys

from s4sagin import ScenarioConfig, Scheme, run_experiment

cfg = ScenarioConfig().replace(
    topology={"bs_count": 16, "uav_cluster_count": 2, "uavs_per_cluster": 4, "ue_count": 80,
              "area_width": 1800.0, "area_height": 1800.0},
    learning={"hidden": 64},
)
iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 10

for scheme in Scheme:
    m = run_experiment(cfg, scheme, iterations=iterations, seed=0)
    curve = " ".join(f"{r:.3f}" for r in m.rewards)
    trades = sum(m.trades_by_service.values())
    print(f"{scheme.value:>13}: {curve}  (settled trades {trades})")
