"""Inject fake transactions and show who catches them.

S4 verifies every transaction before settlement; NonBlockchain accepts
everything, so the same fakes overbook providers and drag rewards down.

    python demos/fault_detection.py [p_fault]
"""
import sys

from s4sagin import ScenarioConfig, Scheme, run_experiment

p_fault = float(sys.argv[1]) if len(sys.argv) > 1 else 0.2
cfg = ScenarioConfig().replace(
    topology={"bs_count": 16, "uav_cluster_count": 2, "uavs_per_cluster": 4, "ue_count": 80,
              "area_width": 1800.0, "area_height": 1800.0},
    learning={"hidden": 64},
    ledger={"p_fault": p_fault},
)

for scheme in (Scheme.S4, Scheme.NON_BLOCKCHAIN):
    m = run_experiment(cfg, scheme, iterations=3, seed=0)
    faults = sum(r["faults"] for r in m.ledger)
    caught = sum(r["faults_detected"] for r in m.ledger)
    rejected = sum(r["rejected"] for r in m.ledger)
    print(f"{scheme.value:>13}: faults {faults}, detected {caught}, rejected {rejected}, "
          f"mean reward {sum(m.rewards) / len(m.rewards):.4f}")
