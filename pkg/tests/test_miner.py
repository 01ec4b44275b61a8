"""Miner nodes: work scheduling, behavior policies, block sync."""

import math

import pytest

from pouwsim.chain import (
    GENESIS_PARAMS,
    ROOT_ADDRESS,
    ZERO_DIGEST,
    Block,
    address_for,
    auth_key_for,
    block_hash,
)
from pouwsim.miner import (
    BEHAVIOR_FABRICATE_ALL,
    BEHAVIOR_HONEST,
    BEHAVIOR_PARTIAL_FABRICATE,
    BEHAVIOR_REFERENCE_CHEAT,
    BEHAVIOR_SYBIL,
    BEHAVIOR_WRONG_PARAMS,
    MinerBehavior,
    MinerNode,
)
from pouwsim.work import estimate_cost, make_parameters, run_pipeline


def _node(name, behavior=None, speed=1.0):
    return MinerNode(name, address_for(name), auth_key_for(name), behavior, speed=speed)


def _params(seed=9090, n_configs=3):
    return make_parameters(
        seed,
        n_events=6,
        beam_energy=4.0,
        energy_cut=1.0,
        n_layers=5,
        n_configs=n_configs,
        smear_sigma=0.02,
        split_scale=6.0,
    )


def test_work_delay_scales_with_speed():
    params = _params()
    slow = _node("slow", speed=1.0)
    fast = _node("fast", speed=2.0)
    cost = estimate_cost(params)
    assert slow.work_delay(params) == max(1, math.ceil(cost))
    assert fast.work_delay(params) == max(1, math.ceil(cost / 2.0))


def test_fabricators_submit_instantly():
    params = _params()
    for kind in (BEHAVIOR_FABRICATE_ALL, BEHAVIOR_SYBIL, BEHAVIOR_WRONG_PARAMS, BEHAVIOR_REFERENCE_CHEAT):
        assert _node(kind, MinerBehavior(kind, group_seed=1)).work_delay(params) == 1


def test_partial_fabricator_pays_for_its_real_share():
    params = _params()
    partial = _node("p", MinerBehavior(BEHAVIOR_PARTIAL_FABRICATE, k_correct=1, group_seed=3))
    honest = _node("h")
    assert partial.work_delay(params) < honest.work_delay(params)


def test_honest_submission_matches_authority_pipeline():
    params = _params()
    node = _node("honest")
    sub = node.compute_solution(params, 1)
    assert sub.result.digest == run_pipeline(params).digest
    assert sub.params_echo == params
    assert sub.block_number == 1
    assert sub.miner == node.address


def test_colluders_share_digests_across_members():
    params = _params()
    a = _node("a", MinerBehavior(BEHAVIOR_SYBIL, group_seed=99))
    b = _node("b", MinerBehavior(BEHAVIOR_SYBIL, group_seed=99))
    c = _node("c", MinerBehavior(BEHAVIOR_SYBIL, group_seed=100))
    da = a.compute_solution(params, 1).result.digest
    db = b.compute_solution(params, 1).result.digest
    dc = c.compute_solution(params, 1).result.digest
    assert da == db
    assert da != dc
    assert da != run_pipeline(params).digest


def test_fabricate_all_unique_per_miner():
    params = _params()
    a = _node("fa1", MinerBehavior(BEHAVIOR_FABRICATE_ALL))
    b = _node("fa2", MinerBehavior(BEHAVIOR_FABRICATE_ALL))
    assert a.compute_solution(params, 1).result.digest != b.compute_solution(params, 1).result.digest


def test_partial_fabricate_k_equals_c_is_honest():
    params = _params(n_configs=3)
    partial = _node("pk", MinerBehavior(BEHAVIOR_PARTIAL_FABRICATE, k_correct=3, group_seed=5))
    assert partial.compute_solution(params, 1).result == run_pipeline(params)


def test_wrong_params_mutates_echo():
    params = _params()
    node = _node("wp", MinerBehavior(BEHAVIOR_WRONG_PARAMS))
    sub = node.compute_solution(params, 1)
    assert sub.params_echo != params
    assert sub.params_echo.energy_cut == params.energy_cut * 2.0


def test_behavior_fabrication_classification():
    assert not MinerBehavior(BEHAVIOR_HONEST).fabricates(4)
    assert MinerBehavior(BEHAVIOR_SYBIL).fabricates(4)
    assert MinerBehavior(BEHAVIOR_PARTIAL_FABRICATE, k_correct=3).fabricates(4)
    assert not MinerBehavior(BEHAVIOR_PARTIAL_FABRICATE, k_correct=4).fabricates(4)


def test_on_block_applies_and_rejects():
    node = _node("syncer")
    tip = node.chain.tip
    good = Block(
        number=1,
        timestamp=1,
        prev_hash=block_hash(tip),
        transactions=(),
        winner=address_for("w"),
        sim_params=GENESIS_PARAMS,
        sim_data_hash=ZERO_DIGEST,
    )
    assert node.on_block(good, ROOT_ADDRESS)
    assert node.chain.height == 1

    # same block again: stale height, rejected, chain unchanged
    assert not node.on_block(good, ROOT_ADDRESS)
    assert node.chain.height == 1

    impostor = Block(
        number=2,
        timestamp=2,
        prev_hash=block_hash(node.chain.tip),
        transactions=(),
        winner=address_for("w"),
        sim_params=GENESIS_PARAMS,
        sim_data_hash=ZERO_DIGEST,
    )
    assert not node.on_block(impostor, sender=address_for("not-root"))
    assert node.chain.height == 1
    assert node.rejected_blocks == 2


def test_speed_must_be_positive():
    with pytest.raises(ValueError):
        _node("bad", speed=0.0)
