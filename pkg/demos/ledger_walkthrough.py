"""Step the protocol by hand and watch the ledger grow."""
from s4sagin import ScenarioConfig, Scheme, step_initialize, step_trade_and_verify
from s4sagin.engine import step_share_and_update

cfg = ScenarioConfig().replace(
    topology={"bs_count": 9, "uav_cluster_count": 1, "uavs_per_cluster": 3, "ue_count": 30,
              "area_width": 1200.0, "area_height": 1200.0},
    learning={"hidden": 16},
    ledger={"p_fault": 0.1},
)
state = step_initialize(cfg, seed=1, scheme=Scheme.S4)
for _ in range(cfg.learning.env_steps_per_update):
    out = step_trade_and_verify(state)
    s = out.ledger
    print(f"iteration {s['iteration']:2d}: created {s['created']:3d} verified {s['verified']:3d} "
          f"rejected {s['rejected']:2d} pruned {s['pruned']:3d} mean reward {out.rewards.mean():.3f}")
share = step_share_and_update(state)
print("creditable neighbours of SR 0:", share["creditable"].get(0))
print("ledger size:", len(state.dag.transactions))
