import pytest
from hypothesis import given
from hypothesis import strategies as st

from s4sagin.config import ConfigError, ScenarioConfig, parse_config, reference_text, serialize_config


def test_empty_text_gives_defaults():
    cfg = parse_config("")
    assert cfg == ScenarioConfig()
    assert cfg.topology.bs_count == 45
    assert cfg.topology.sat_bandwidth == 500e6
    assert cfg.learning.lr == 0.0003
    assert cfg.learning.minibatch == 16
    assert cfg.topology.uav_flight_radius + cfg.topology.uav_transmission_radius == 250.0


def test_comments_and_overrides():
    cfg = parse_config("# scenario\n[ledger]\np_fault = 0.1  # more faults\n[run]\nseed = 3\n")
    assert cfg.ledger.p_fault == 0.1 and cfg.run.seed == 3


def test_range_error_names_key():
    with pytest.raises(ConfigError, match="bs_count"):
        parse_config("[topology]\nbs_count = -1\n")


@pytest.mark.parametrize("text, fragment", [
    ("[topology]\nwhat = 1\n", "unknown key"),
    ("[nowhere]\n", "unknown section"),
    ("[run]\nseed 3\n", "line 2"),
    ("seed = 3\n", "outside of any section"),
    ("[run]\nseed = x\n", "line 2"),
    ("[ledger\n", "line 1"),
])
def test_syntax_errors_carry_context(text, fragment):
    with pytest.raises(ConfigError, match=fragment):
        parse_config(text)


def test_reference_text_parses_to_defaults():
    assert parse_config(reference_text()) == ScenarioConfig()


@given(st.floats(0, 1), st.integers(1, 50), st.floats(1e-6, 1e-2), st.sampled_from(["heaviest", "referenced"]))
def test_round_trip(p_fault, depth, lr, mode):
    cfg = ScenarioConfig().replace(ledger={"p_fault": p_fault, "confirmation_depth": depth, "prune_mode": mode},
                                   learning={"lr": lr})
    assert parse_config(serialize_config(cfg)) == cfg


def test_replace_rejects_unknown_section():
    with pytest.raises(ConfigError):
        ScenarioConfig().replace(bogus={})
