"""Simulated miner nodes: the honest policy plus the adversary families.

Behaviors:

* honest — runs the full pipeline on the issued parameters.
* fabricate_all — well-typed junk results, unique per miner per round.
* partial_fabricate — colludes on a group seed: a uniformly drawn k-subset
  of configs is computed honestly, the rest fabricated; every group member
  produces a byte-identical submission. k = C degenerates to honest.
* sybil — the whole result is group-shared fabrication, so the group forms
  one cluster large enough to beat replication quorums.
* wrong_params — echoes mutated parameters; rejected at intake.
* reference_cheat — has oracle access to the round's reference dataset and
  resamples tracks (with matching measurement noise) from it, demonstrating
  that reference verification cannot stop an adversary who holds the
  reference data itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .chain import Block, ChainState, ROOT_ADDRESS, apply_block, validate_block
from .rng import Splitmix64, stream_seed
from .verification import ReferenceDataset, Submission
from .work import (
    DEFAULT_PITCH,
    ConfigResult,
    SimulationParameters,
    SimulationResult,
    TrackRecord,
    build_result,
    estimate_cost,
    fit_line,
    run_config,
    run_pipeline,
)
from .verification import measurement_variance

BEHAVIOR_HONEST = "honest"
BEHAVIOR_FABRICATE_ALL = "fabricate_all"
BEHAVIOR_PARTIAL_FABRICATE = "partial_fabricate"
BEHAVIOR_SYBIL = "sybil"
BEHAVIOR_WRONG_PARAMS = "wrong_params"
BEHAVIOR_REFERENCE_CHEAT = "reference_cheat"

BEHAVIOR_KINDS = (
    BEHAVIOR_HONEST,
    BEHAVIOR_FABRICATE_ALL,
    BEHAVIOR_PARTIAL_FABRICATE,
    BEHAVIOR_SYBIL,
    BEHAVIOR_WRONG_PARAMS,
    BEHAVIOR_REFERENCE_CHEAT,
)

_TAG_SUBSET = 11
_TAG_FAB = 12
_TAG_CHEAT = 13
_TAG_ENTRY = 14


@dataclass(frozen=True)
class MinerBehavior:
    kind: str = BEHAVIOR_HONEST
    k_correct: int = 0
    group_seed: int = 0

    def fabricates(self, n_configs: int) -> bool:
        """True when this behavior can put a non-honest result on the chain.
        A partial fabricator with k = C produces the honest result bit for
        bit, so it does not count."""
        if self.kind in (BEHAVIOR_FABRICATE_ALL, BEHAVIOR_SYBIL, BEHAVIOR_REFERENCE_CHEAT):
            return True
        if self.kind == BEHAVIOR_PARTIAL_FABRICATE:
            return self.k_correct < n_configs
        return False


def _sorted_entry(
    index: int,
    tracks: list[TrackRecord],
    hits: list[tuple[tuple[int, float], ...]],
    step_count: int,
) -> ConfigResult:
    order = sorted(range(len(tracks)), key=lambda i: (tracks[i].b, tracks[i].a, hits[i]))
    return ConfigResult(
        index=index,
        tracks=tuple(tracks[i] for i in order),
        track_hits=tuple(hits[i] for i in order),
        step_count=step_count,
    )


def fabricated_config_entry(seed: int, index: int, n_layers: int) -> ConfigResult:
    """Junk shaped like a real per-config entry. Hit positions are drawn
    independently of the claimed track line, so innovation checks explode."""
    rng = Splitmix64(seed)
    n_tracks = 1 + rng.next_below(4)
    tracks: list[TrackRecord] = []
    hits: list[tuple[tuple[int, float], ...]] = []
    for _ in range(n_tracks):
        a = 2.0 * rng.next_unit() - 1.0
        b = 2.0 * rng.next_unit() - 1.0
        if n_layers <= 3:
            n_hits = min(n_layers, 3) if n_layers >= 3 else 2
        else:
            n_hits = 3 + rng.next_below(n_layers - 2)
        track_hits = tuple((plane, 4.0 * rng.next_unit() - 2.0) for plane in range(1, n_hits + 1))
        tracks.append(TrackRecord(a=a, b=b, adc_sum=rng.next_below(40), n_hits=n_hits))
        hits.append(track_hits)
    step_count = 10 + rng.next_below(200)
    return _sorted_entry(index, tracks, hits, step_count)


def fabricate_result(seed: int, params: SimulationParameters) -> SimulationResult:
    entries = [
        fabricated_config_entry(stream_seed(seed, c.index, _TAG_ENTRY), c.index, params.n_layers)
        for c in params.configs
    ]
    return build_result(entries)


def choose_subset(group_seed: int, work_seed: int, k: int, n_configs: int) -> set[int]:
    """Uniform k-subset of configs, shared by everyone who knows the group
    seed, redrawn per round via the work seed."""
    rng = Splitmix64(stream_seed(group_seed, work_seed, _TAG_SUBSET))
    order = list(range(n_configs))
    for i in range(n_configs - 1, 0, -1):
        j = rng.next_below(i + 1)
        order[i], order[j] = order[j], order[i]
    return set(order[:k])


def resample_reference_result(
    seed: int,
    params: SimulationParameters,
    reference: ReferenceDataset,
    pitch: float = DEFAULT_PITCH,
) -> SimulationResult:
    """Fabricate a submission by resampling the reference statistics: slopes
    from the reference histogram, measurements with matched noise."""
    rng = Splitmix64(seed)
    n_configs = len(params.configs)
    total = reference.track_count
    hist_total = sum(reference.histogram)
    entries: list[ConfigResult] = []
    for config in params.configs:
        count = total // n_configs + (1 if config.index < total % n_configs else 0)
        sigma = math.sqrt(measurement_variance(config.smear_sigma, pitch))
        tracks: list[TrackRecord] = []
        hits: list[tuple[tuple[int, float], ...]] = []
        for _ in range(count):
            if hist_total > 0:
                pick = rng.next_below(hist_total)
                acc = 0
                idx = 0
                for idx, n in enumerate(reference.histogram):
                    acc += n
                    if pick < acc:
                        break
                width = 2.0 / reference.bins
                b = -1.0 + (idx + rng.next_unit()) * width
            else:
                b = 2.0 * rng.next_unit() - 1.0
            a = 0.02 * (2.0 * rng.next_unit() - 1.0)
            track_hits = tuple(
                (plane, a + b * plane + sigma * rng.next_gauss())
                for plane in range(1, params.n_layers + 1)
            )
            a_fit, b_fit = fit_line(track_hits)
            tracks.append(
                TrackRecord(a=a_fit, b=b_fit, adc_sum=rng.next_below(40), n_hits=params.n_layers)
            )
            hits.append(track_hits)
        step_count = count * params.n_layers
        entries.append(_sorted_entry(config.index, tracks, hits, step_count))
    return build_result(entries)


class MinerNode:
    """One simulated miner: a behavior policy plus a synced local chain."""

    def __init__(
        self,
        name: str,
        address: bytes,
        auth_key: bytes,
        behavior: MinerBehavior | None = None,
        speed: float = 1.0,
        offline: bool = False,
        block_reward: int = 1,
        tx_cap: int | None = None,
    ):
        if speed <= 0:
            raise ValueError("compute speed must be > 0")
        self.name = name
        self.address = address
        self.auth_key = auth_key
        self.behavior = behavior or MinerBehavior()
        self.speed = speed
        self.offline = offline
        self.chain = ChainState.bootstrap(block_reward, tx_cap)
        self.next_tx_nonce = 0
        self.rejected_blocks = 0

    def work_delay(self, params: SimulationParameters) -> int:
        """Ticks until this node's solution is ready. Honest work scales with
        the cost estimate; fabrication is nearly free."""
        kind = self.behavior.kind
        if kind in (BEHAVIOR_FABRICATE_ALL, BEHAVIOR_SYBIL, BEHAVIOR_WRONG_PARAMS, BEHAVIOR_REFERENCE_CHEAT):
            return 1
        cost = estimate_cost(params)
        if kind == BEHAVIOR_PARTIAL_FABRICATE and len(params.configs) > 0:
            cost *= self.behavior.k_correct / len(params.configs)
        return max(1, math.ceil(cost / self.speed))

    def compute_solution(
        self,
        params: SimulationParameters,
        round_number: int,
        config_compute=None,
        full_compute=None,
        reference: ReferenceDataset | None = None,
    ) -> Submission:
        """Produce this node's submission for the round. ``config_compute``
        and ``full_compute`` are optional pure-computation caches supplied by
        the runner; results are identical without them."""
        behavior = self.behavior
        seed_self = stream_seed(
            int.from_bytes(self.address[:8], "big"), params.work_seed, _TAG_FAB
        )
        echo = params
        if behavior.kind == BEHAVIOR_HONEST:
            result = full_compute(params) if full_compute else run_pipeline(params)
        elif behavior.kind == BEHAVIOR_PARTIAL_FABRICATE:
            k = behavior.k_correct
            subset = choose_subset(behavior.group_seed, params.work_seed, k, len(params.configs))
            entries = []
            for config in params.configs:
                if config.index in subset:
                    entry = (
                        config_compute(params, config.index)
                        if config_compute
                        else run_config(params, config)
                    )
                else:
                    entry = fabricated_config_entry(
                        stream_seed(behavior.group_seed, params.work_seed, _TAG_FAB, config.index),
                        config.index,
                        params.n_layers,
                    )
                entries.append(entry)
            result = build_result(entries)
        elif behavior.kind == BEHAVIOR_SYBIL:
            result = fabricate_result(
                stream_seed(behavior.group_seed, params.work_seed, _TAG_FAB), params
            )
        elif behavior.kind == BEHAVIOR_FABRICATE_ALL:
            result = fabricate_result(seed_self, params)
        elif behavior.kind == BEHAVIOR_WRONG_PARAMS:
            echo = replace(params, energy_cut=params.energy_cut * 2.0)
            result = fabricate_result(seed_self, params)
        elif behavior.kind == BEHAVIOR_REFERENCE_CHEAT:
            if reference is None:
                result = fabricate_result(seed_self, params)
            else:
                result = resample_reference_result(
                    stream_seed(seed_self, _TAG_CHEAT), params, reference
                )
        else:
            raise ValueError(f"unknown behavior {behavior.kind!r}")
        return Submission(
            miner=self.address, block_number=round_number, params_echo=echo, result=result
        )

    def on_block(self, block: Block, sender: bytes = ROOT_ADDRESS) -> bool:
        """Validate and apply a broadcast block to the local chain. Blocks
        not announced by the root authority are rejected outright."""
        if sender != ROOT_ADDRESS:
            self.rejected_blocks += 1
            return False
        report = validate_block(block, self.chain)
        if not report.ok:
            self.rejected_blocks += 1
            return False
        apply_block(self.chain, block)
        return True
