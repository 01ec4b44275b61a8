"""Scenario file parsing: defaults, strict unknown-key rejection, bundles."""

import pytest

from pouwsim.scenario import (
    ScenarioError,
    bundled_scenario_names,
    load_bundled_scenario,
    parse_scenario,
    resolve_scenario,
)

MINIMAL = """
[scenario]
seed = 7
rounds = 3

[miners:honest]
behavior = honest
count = 2
"""


def test_parse_minimal_with_defaults():
    cfg = parse_scenario(MINIMAL)
    assert cfg.seed == 7
    assert cfg.rounds == 3
    assert cfg.strategy == "decoy"
    assert len(cfg.miners) == 1
    assert cfg.miners[0].count == 2


def test_unknown_section_rejected():
    with pytest.raises(ScenarioError, match="unknown section"):
        parse_scenario(MINIMAL + "\n[surprise]\nx = 1\n")


def test_unknown_key_rejected():
    with pytest.raises(ScenarioError, match="unknown key"):
        parse_scenario("[scenario]\nrounds = 3\nbogus = 1\n[miners:h]\ncount = 1\n")
    with pytest.raises(ScenarioError, match="unknown key"):
        parse_scenario(MINIMAL.replace("count = 2", "count = 2\nhat = tall"))


def test_bad_values_rejected():
    with pytest.raises(ScenarioError):
        parse_scenario(MINIMAL.replace("rounds = 3", "rounds = 0"))
    with pytest.raises(ScenarioError):
        parse_scenario(MINIMAL.replace("seed = 7", "seed = 7\nstrategy = wishful"))
    with pytest.raises(ScenarioError):
        parse_scenario(MINIMAL.replace("behavior = honest", "behavior = trickster"))
    with pytest.raises(ScenarioError, match="drop_rate"):
        parse_scenario(MINIMAL + "\n[network]\ndrop_rate = 1.0\n")


def test_partition_validation():
    good = MINIMAL + "\n[partition:p]\nnodes = honest-0\nstart = 5\nend = 9\n"
    cfg = parse_scenario(good)
    assert cfg.partitions[0].nodes == ("honest-0",)
    with pytest.raises(ScenarioError, match="unknown node"):
        parse_scenario(MINIMAL + "\n[partition:p]\nnodes = martian-0\nstart = 5\nend = 9\n")
    with pytest.raises(ScenarioError, match="window"):
        parse_scenario(MINIMAL + "\n[partition:p]\nnodes = honest-0\nstart = 9\nend = 9\n")


def test_reference_strategy_needs_layers():
    text = MINIMAL + "\n[work]\nn_layers = 2\n"
    with pytest.raises(ScenarioError, match="n_layers"):
        parse_scenario(text.replace("seed = 7", "seed = 7\nstrategy = reference"))


def test_k_correct_bounds():
    text = MINIMAL.replace(
        "behavior = honest", "behavior = partial_fabricate\nk_correct = 11"
    )
    with pytest.raises(ScenarioError, match="k_correct"):
        parse_scenario(text)


def test_bundled_scenarios_parse(tmp_path):
    names = bundled_scenario_names()
    assert "default" in names
    assert "fairness" in names
    for name in names:
        cfg = load_bundled_scenario(name)
        cfg.validate()
    with pytest.raises(ScenarioError):
        load_bundled_scenario("no_such_scenario")
    with pytest.raises(ScenarioError):
        resolve_scenario(tmp_path / "missing.scn")
