"""Result-verification strategies and the anomaly fallback policy.

Three strategies are implemented:

* replication — cluster submissions by result digest and accept the largest
  cluster when it reaches the quorum. Cheap, but a colluding group that
  outnumbers honest miners and reaches the quorum wins.
* decoy — the authority recomputes one secret configuration itself and
  filters out every submission whose entry for that configuration does not
  match, then clusters the survivors. A full fabricator never survives; a
  group that fabricated all but k of C configurations survives a round with
  probability k / C.
* reference — each submission is compared against a reference dataset built
  from an independent truth run: a slope-histogram chi-square plus a Kalman
  innovation consistency band. Fabricated results fail regardless of how
  many identities collude (unless the fabricator has oracle access to the
  reference data itself, which the miner module models deliberately).

When a strategy accepts nobody the round escalates along
reference -> decoy -> replication -> authority self-compute, so every round
terminates with a block.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .chain import ROOT_ADDRESS
from .work import (
    DEFAULT_PITCH,
    ConfigResult,
    SimulationParameters,
    SimulationResult,
    TrackRecord,
    config_entry_digest,
    run_pipeline,
)

# rejection / failure reasons recorded in verdicts
NO_QUORUM = "NoQuorum"
NOT_IN_WINNING_CLUSTER = "NotInWinningCluster"
DECOY_MISMATCH = "DecoyMismatch"
HISTOGRAM_MISMATCH = "HistogramMismatch"
INNOVATION_MISMATCH = "InnovationMismatch"
EMPTY_SUBMISSION = "EmptySubmission"

STRATEGY_REPLICATION = "replication"
STRATEGY_DECOY = "decoy"
STRATEGY_REFERENCE = "reference"
STRATEGY_SELF_COMPUTE = "self_compute"

ESCALATION_CHAIN = (
    STRATEGY_REFERENCE,
    STRATEGY_DECOY,
    STRATEGY_REPLICATION,
    STRATEGY_SELF_COMPUTE,
)

_INNOVATION_FLOOR = 1e-12


@dataclass(frozen=True)
class Submission:
    """A miner's proposed solution for one block."""

    miner: bytes
    block_number: int
    params_echo: SimulationParameters
    result: SimulationResult


@dataclass
class Verdict:
    """Outcome of validating one round's submissions."""

    strategy_used: str
    accepted: tuple[bytes, ...]
    winning_digest: bytes | None
    rejected: tuple[tuple[bytes, str], ...]


@dataclass(frozen=True)
class ReplicationConfig:
    min_quorum: int
    target_nresults: int

    def validate(self) -> None:
        if self.min_quorum < 1:
            raise ValueError("min_quorum must be >= 1")
        if self.target_nresults < self.min_quorum:
            raise ValueError("target_nresults must be >= min_quorum")


@dataclass(frozen=True)
class DecoySpec:
    """The secret spot-check: one config index and the authority's own
    entry for it, computed fresh this round (the seed depends on the
    previous block, so decoys cannot be precalculated)."""

    decoy_index: int
    decoy_result: ConfigResult


@dataclass(frozen=True)
class ReferenceDataset:
    """Statistics from a trusted truth run of the round's parameters."""

    tracks: tuple[TrackRecord, ...]
    hit_sequences: tuple[tuple[tuple[int, float], ...], ...]
    histogram: tuple[int, ...]
    bins: int
    mean_innovation: float  # pooled innovation chi2 per degree of freedom
    track_count: int


@dataclass(frozen=True)
class KalmanConfig:
    """Static-line Kalman filter settings: measurement variance r, process
    noise q (0 reduces the filter to least squares), prior covariance p0."""

    r: float
    q: float = 0.0
    p0: float = 1e8  # large enough to be uninformative, small enough to
    # keep the covariance update far from catastrophic cancellation

    def validate(self) -> None:
        if self.r <= 0:
            raise ValueError("measurement variance r must be > 0")
        if self.p0 <= 0:
            raise ValueError("initial covariance p0 must be > 0")
        if self.q < 0:
            raise ValueError("process noise q must be >= 0")


def measurement_variance(smear_sigma: float, pitch: float = DEFAULT_PITCH) -> float:
    """Detector resolution plus pitch-quantization variance."""
    return smear_sigma * smear_sigma + pitch * pitch / 12.0


def kalman_filter_track(
    hits: Sequence[tuple[float, float]], cfg: KalmanConfig
) -> tuple[tuple[float, float], float]:
    """Filter (plane, position) measurements with the static state (a, b) and
    measurement model u = a + b * plane.

    Returns the final state and the innovation chi-square, summed over the
    terms after the two burn-in measurements (the state is underdetermined
    until two planes have been seen, and with a large p0 those terms carry no
    information). With q = 0 the final state equals the least-squares fit.
    """
    cfg.validate()
    if len(hits) < 2:
        raise ValueError("need at least 2 measurements")
    a = 0.0
    b = 0.0
    p00 = cfg.p0
    p01 = 0.0
    p11 = cfg.p0
    chi2 = 0.0
    for i, (x, u) in enumerate(hits):
        p00 += cfg.q
        p11 += cfg.q
        c0 = p00 + x * p01
        c1 = p01 + x * p11
        s = c0 + x * c1 + cfg.r
        innovation = u - (a + b * x)
        if i >= 2:
            chi2 += innovation * innovation / s
        k0 = c0 / s
        k1 = c1 / s
        a += k0 * innovation
        b += k1 * innovation
        # P' = P - c c^T / s keeps the covariance symmetric by construction
        p00 -= k0 * c0
        p01 -= k0 * c1
        p11 -= k1 * c1
    return (a, b), chi2


def slope_histogram(slopes: Sequence[float], bins: int) -> tuple[int, ...]:
    """Counts of track slopes in ``bins`` equal bins over [-1, 1]; out-of-range
    values land in the edge bins so totals are preserved."""
    counts = [0] * bins
    for b in slopes:
        idx = int((b + 1.0) / 2.0 * bins)
        if idx < 0:
            idx = 0
        elif idx >= bins:
            idx = bins - 1
        counts[idx] += 1
    return tuple(counts)


def histogram_chi2(sim: Sequence[int], ref: Sequence[int]) -> float:
    """Per-bin (n_sim - n_ref)^2 / (n_sim + n_ref + 1), averaged over bins."""
    if len(sim) != len(ref):
        raise ValueError("histogram bin counts differ")
    total = 0.0
    for s, r in zip(sim, ref):
        d = s - r
        total += d * d / (s + r + 1)
    return total / len(sim)


def _pooled_innovation(
    entries: Sequence[ConfigResult],
    params: SimulationParameters,
    pitch: float,
) -> float | None:
    """Innovation chi2 per dof pooled over all tracks with >= 3 measurements;
    None when no track contributes a degree of freedom."""
    chi_total = 0.0
    dof_total = 0
    for entry in entries:
        cfg = KalmanConfig(r=measurement_variance(params.configs[entry.index].smear_sigma, pitch))
        for hits in entry.track_hits:
            if len(hits) < 3:
                continue
            _, chi2 = kalman_filter_track(hits, cfg)
            chi_total += chi2
            dof_total += len(hits) - 2
    if dof_total == 0:
        return None
    return chi_total / dof_total


def build_reference(
    params: SimulationParameters,
    truth_seed: int,
    bins: int = 16,
    pitch: float = DEFAULT_PITCH,
    workers: int = 1,
) -> ReferenceDataset:
    """Run the trusted oracle with an independent truth seed and extract the
    statistics used for reference verification."""
    if bins < 8:
        raise ValueError("need at least 8 histogram bins")
    from dataclasses import replace

    truth = replace(params, work_seed=truth_seed)
    result = run_pipeline(truth, workers=workers)
    tracks: list[TrackRecord] = []
    hit_sequences: list[tuple[tuple[int, float], ...]] = []
    for entry in result.per_config:
        tracks.extend(entry.tracks)
        hit_sequences.extend(entry.track_hits)
    histogram = slope_histogram([t.b for t in tracks], bins)
    mean_innovation = _pooled_innovation(result.per_config, truth, pitch)
    return ReferenceDataset(
        tracks=tuple(tracks),
        hit_sequences=tuple(hit_sequences),
        histogram=histogram,
        bins=bins,
        mean_innovation=mean_innovation if mean_innovation is not None else 0.0,
        track_count=len(tracks),
    )


def _best_cluster(groups: dict[bytes, list[bytes]]) -> tuple[bytes, list[bytes]]:
    # largest cluster wins; ties broken by lexicographically smallest digest
    return sorted(groups.items(), key=lambda kv: (-len(kv[1]), kv[0]))[0]


def verify_replication(subs: Sequence[Submission], cfg: ReplicationConfig) -> Verdict:
    """Accept the most common result when it reaches the quorum."""
    cfg.validate()
    if not subs:
        return Verdict(STRATEGY_REPLICATION, (), None, ())
    groups: dict[bytes, list[bytes]] = {}
    for sub in subs:
        groups.setdefault(sub.result.digest, []).append(sub.miner)
    digest, members = _best_cluster(groups)
    if len(members) < cfg.min_quorum:
        rejected = tuple((s.miner, NO_QUORUM) for s in sorted(subs, key=lambda s: s.miner))
        return Verdict(STRATEGY_REPLICATION, (), None, rejected)
    accepted = tuple(sorted(members))
    rejected = tuple(
        (s.miner, NOT_IN_WINNING_CLUSTER)
        for s in sorted(subs, key=lambda s: s.miner)
        if s.miner not in members
    )
    return Verdict(STRATEGY_REPLICATION, accepted, digest, rejected)


def verify_decoy(subs: Sequence[Submission], decoy: DecoySpec) -> Verdict:
    """Filter by the secret recomputed configuration, then cluster survivors
    by full-result digest and accept the most common cluster."""
    want = config_entry_digest(decoy.decoy_result)
    survivors: list[Submission] = []
    rejected: list[tuple[bytes, str]] = []
    for sub in sorted(subs, key=lambda s: s.miner):
        entries = sub.result.per_config
        if decoy.decoy_index >= len(entries) or config_entry_digest(entries[decoy.decoy_index]) != want:
            rejected.append((sub.miner, DECOY_MISMATCH))
        else:
            survivors.append(sub)
    if not survivors:
        return Verdict(STRATEGY_DECOY, (), None, tuple(rejected))
    groups: dict[bytes, list[bytes]] = {}
    for sub in survivors:
        groups.setdefault(sub.result.digest, []).append(sub.miner)
    digest, members = _best_cluster(groups)
    accepted = tuple(sorted(members))
    for sub in survivors:
        if sub.miner not in members:
            rejected.append((sub.miner, NOT_IN_WINNING_CLUSTER))
    rejected.sort()
    return Verdict(STRATEGY_DECOY, accepted, digest, tuple(rejected))


def verify_reference(
    sub: Submission,
    ref: ReferenceDataset,
    chi2_threshold: float = 3.0,
    pitch: float = DEFAULT_PITCH,
) -> tuple[bool, str | None]:
    """Check one submission against the reference dataset.

    Accept iff (1) the slope-histogram chi2 per dof stays within the
    threshold, and (2) the pooled Kalman innovation chi2/dof lies in the
    [ref/threshold, ref*threshold] band around the reference's own value.
    """
    slopes = [t.b for entry in sub.result.per_config for t in entry.tracks]
    if not slopes:
        return False, EMPTY_SUBMISSION
    sim_hist = slope_histogram(slopes, ref.bins)
    if histogram_chi2(sim_hist, ref.histogram) > chi2_threshold:
        return False, HISTOGRAM_MISMATCH
    mean = _pooled_innovation(sub.result.per_config, sub.params_echo, pitch)
    if mean is not None:
        anchor = max(ref.mean_innovation, _INNOVATION_FLOOR)
        if not (anchor / chi2_threshold <= mean <= anchor * chi2_threshold):
            return False, INNOVATION_MISMATCH
    return True, None


def verify_reference_all(
    subs: Sequence[Submission],
    ref: ReferenceDataset,
    chi2_threshold: float = 3.0,
    pitch: float = DEFAULT_PITCH,
) -> Verdict:
    """Apply the reference check to every submission; verdicts are cached per
    result digest since identical results verify identically."""
    accepted: list[bytes] = []
    rejected: list[tuple[bytes, str]] = []
    cache: dict[bytes, tuple[bool, str | None]] = {}
    for sub in sorted(subs, key=lambda s: s.miner):
        got = cache.get(sub.result.digest)
        if got is None:
            got = verify_reference(sub, ref, chi2_threshold, pitch)
            cache[sub.result.digest] = got
        ok, reason = got
        if ok:
            accepted.append(sub.miner)
        else:
            rejected.append((sub.miner, reason or "rejected"))
    return Verdict(STRATEGY_REFERENCE, tuple(accepted), None, tuple(rejected))


def fallback_escalate(strategy: str) -> str:
    """Next stage after ``strategy`` accepted nobody. Self-compute is the
    terminal stage: the authority runs the pipeline itself and the round
    still produces a block (winner = the root address)."""
    if strategy not in ESCALATION_CHAIN:
        raise ValueError(f"unknown strategy {strategy!r}")
    i = ESCALATION_CHAIN.index(strategy)
    return ESCALATION_CHAIN[min(i + 1, len(ESCALATION_CHAIN) - 1)]


__all__ = [
    "Submission",
    "Verdict",
    "ReplicationConfig",
    "DecoySpec",
    "ReferenceDataset",
    "KalmanConfig",
    "ROOT_ADDRESS",
    "measurement_variance",
    "kalman_filter_track",
    "slope_histogram",
    "histogram_chi2",
    "build_reference",
    "verify_replication",
    "verify_decoy",
    "verify_reference",
    "verify_reference_all",
    "fallback_escalate",
    "ESCALATION_CHAIN",
    "STRATEGY_REPLICATION",
    "STRATEGY_DECOY",
    "STRATEGY_REFERENCE",
    "STRATEGY_SELF_COMPUTE",
    "NO_QUORUM",
    "NOT_IN_WINNING_CLUSTER",
    "DECOY_MISMATCH",
    "HISTOGRAM_MISMATCH",
    "INNOVATION_MISMATCH",
    "EMPTY_SUBMISSION",
]
