"""Root-authority actor: identity registry, round lifecycle, submission
intake, verdict orchestration, winner selection, block assembly, data store,
and difficulty control.

The authority is the sole block producer. It issues fresh work parameters
per round (seed derived from the previous block hash), collects at most one
submission per registered miner, validates them with the configured strategy
(escalating on anomaies), draws the winner with a round-seeded RNG so the
whole round is auditable, and assembles the next block from the transaction
pool.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable

from .chain import (
    ROOT_ADDRESS,
    Block,
    ChainState,
    Transaction,
    apply_block,
    block_hash,
    derive_work_seed,
    transaction_tag,
)
from .rng import Splitmix64, stream_seed
from .verification import (
    DECOY_MISMATCH,
    STRATEGY_DECOY,
    STRATEGY_REFERENCE,
    STRATEGY_REPLICATION,
    STRATEGY_SELF_COMPUTE,
    DecoySpec,
    ReferenceDataset,
    ReplicationConfig,
    Submission,
    Verdict,
    build_reference,
    fallback_escalate,
    verify_decoy,
    verify_reference_all,
    verify_replication,
)
from .work import (
    DEFAULT_ADC_GAIN,
    DEFAULT_PITCH,
    ConfigResult,
    SimulationParameters,
    SimulationResult,
    make_parameters,
    run_config,
    run_pipeline,
)

# substream tags for per-round authority randomness
_TAG_DECOY = 21
_TAG_TRUTH = 22
_TAG_WINNER = 23

# submission intake outcomes
ACCEPTED = "accepted"
UNREGISTERED = "unregistered"
BANNED = "banned"
LATE = "late"
WRONG_PARAMS = "wrong_params"
DUPLICATE_SUBMISSION = "duplicate_submission"

# transaction intake outcomes
TX_QUEUED = "queued"
TX_REJECTED = "rejected"


class RegistryError(Exception):
    pass


class DuplicateIdentity(RegistryError):
    pass


class DuplicateAddress(RegistryError):
    pass


class UnknownAddress(RegistryError):
    pass


class DataUnavailable(Exception):
    """Raised by serve_data when serving is disabled (Denied)."""


class UnknownDigest(Exception):
    """Raised by serve_data when the digest has no stored entry."""


@dataclass
class RegistryEntry:
    real_id: str
    auth_key: bytes
    banned: bool = False
    strikes: int = 0
    ban_reason: str = ""


class MinerRegistry:
    """Identity registry: one address per verified real-world identity."""

    def __init__(self) -> None:
        self.entries: dict[bytes, RegistryEntry] = {}
        self._ids: set[str] = set()

    def register(self, real_id: str, address: bytes, auth_key: bytes) -> None:
        if real_id in self._ids:
            raise DuplicateIdentity(real_id)
        if address in self.entries:
            raise DuplicateAddress(address.hex())
        self.entries[address] = RegistryEntry(real_id=real_id, auth_key=auth_key)
        self._ids.add(real_id)

    def ban(self, address: bytes, reason: str) -> None:
        entry = self.entries.get(address)
        if entry is None:
            raise UnknownAddress(address.hex())
        entry.banned = True
        entry.ban_reason = reason

    def strike(self, address: bytes, reason: str, threshold: int) -> bool:
        """Record a provable protocol violation; ban at the threshold.
        A threshold <= 0 disables banning. Returns True when this strike
        triggered the ban."""
        entry = self.entries.get(address)
        if entry is None:
            raise UnknownAddress(address.hex())
        entry.strikes += 1
        if threshold > 0 and not entry.banned and entry.strikes >= threshold:
            self.ban(address, reason)
            return True
        return False

    def is_registered(self, address: bytes) -> bool:
        return address in self.entries

    def is_banned(self, address: bytes) -> bool:
        entry = self.entries.get(address)
        return entry is not None and entry.banned

    def verify_transaction_tag(self, tx: Transaction) -> bool:
        entry = self.entries.get(tx.sender)
        if entry is None:
            return False
        expected = transaction_tag(entry.auth_key, tx.sender, tx.recipient, tx.amount, tx.nonce)
        return expected == tx.auth_tag


class DataStore:
    """{digest: result} store for verified simulation data. Serving can be
    disabled for request-spam protection; lookups are by digest only."""

    def __init__(self, serving_enabled: bool = True):
        self.entries: dict[bytes, SimulationResult] = {}
        self.serving_enabled = serving_enabled

    def put(self, result: SimulationResult) -> None:
        self.entries[result.digest] = result

    def get(self, digest: bytes) -> SimulationResult:
        if not self.serving_enabled:
            raise DataUnavailable("data serving is disabled")
        result = self.entries.get(digest)
        if result is None:
            raise UnknownDigest(digest.hex())
        return result


@dataclass
class TxPool:
    """FIFO transaction pool; overflow beyond the cap stays queued intact
    for the next block."""

    cap: int | None = None
    pending: deque = field(default_factory=deque)

    def add(self, tx: Transaction) -> None:
        self.pending.append(tx)

    def drain(self) -> list[Transaction]:
        take = len(self.pending) if self.cap is None else min(self.cap, len(self.pending))
        return [self.pending.popleft() for _ in range(take)]


@dataclass
class DifficultyController:
    """Multiplicative energy-cut controller targeting an expected step count.
    Cost falls as the cut rises, so the cut scales with observed/target."""

    target_cost: float
    energy_cut: float
    window: int = 1
    samples: deque = field(default_factory=deque)

    def record(self, cost: float) -> None:
        self.samples.append(cost)
        while len(self.samples) > self.window:
            self.samples.popleft()

    def window_mean(self) -> float | None:
        if not self.samples:
            return None
        return sum(self.samples) / len(self.samples)


def adjust_difficulty(controller: DifficultyController, observed_mean: float) -> float:
    """energy_cut <- energy_cut * clamp(observed / target, 0.5, 2.0)."""
    ratio = observed_mean / controller.target_cost
    if ratio < 0.5:
        ratio = 0.5
    elif ratio > 2.0:
        ratio = 2.0
    controller.energy_cut *= ratio
    return controller.energy_cut


@dataclass
class RoundState:
    number: int
    params: SimulationParameters
    opened_at: int
    deadline: int
    submissions: dict[bytes, Submission] = field(default_factory=dict)
    decoy: DecoySpec | None = None
    reference: ReferenceDataset | None = None


@dataclass
class RoundOutcome:
    block: Block
    verdict: Verdict
    escalation_depth: int
    round: RoundState
    cost_sample: float
    winner_result: SimulationResult


@dataclass
class AuthorityConfig:
    strategy: str = STRATEGY_DECOY
    replication: ReplicationConfig = field(default_factory=lambda: ReplicationConfig(2, 3))
    chi2_threshold: float = 3.0
    histogram_bins: int = 16
    n_configs: int = 4
    n_events: int = 16
    beam_energy: float = 6.0
    energy_cut: float = 1.0
    n_layers: int = 6
    smear_sigma: float = 0.02
    split_scale: float = 8.0
    block_reward: int = 1
    tx_cap: int | None = None
    ban_threshold: int = 2
    reference_skew: float = 1.0
    target_cost: float | None = None
    difficulty_window: int = 1
    workers: int = 1
    pitch: float = DEFAULT_PITCH
    adc_gain: float = DEFAULT_ADC_GAIN


class RootAuthority:
    """Single logical actor; all state mutation happens in its handlers."""

    def __init__(self, registry: MinerRegistry, config: AuthorityConfig | None = None):
        self.registry = registry
        self.config = config or AuthorityConfig()
        self.address = ROOT_ADDRESS
        self.chain = ChainState.bootstrap(self.config.block_reward, self.config.tx_cap)
        self.store = DataStore()
        self.pool = TxPool(cap=self.config.tx_cap)
        self.controller: DifficultyController | None = None
        if self.config.target_cost is not None:
            self.controller = DifficultyController(
                target_cost=self.config.target_cost,
                energy_cut=self.config.energy_cut,
                window=self.config.difficulty_window,
            )
        self.round: RoundState | None = None
        # optional per-round compute cache installed by the scenario runner;
        # falls back to direct pipeline runs when absent
        self.full_compute: Callable[[SimulationParameters], SimulationResult] | None = None
        self.config_compute: Callable[[SimulationParameters, int], ConfigResult] | None = None

    # -- identity ----------------------------------------------------------

    def register_miner(self, real_id: str, address: bytes, auth_key: bytes) -> None:
        self.registry.register(real_id, address, auth_key)

    def ban_miner(self, address: bytes, reason: str) -> None:
        self.registry.ban(address, reason)

    # -- round lifecycle ----------------------------------------------------

    def current_energy_cut(self) -> float:
        if self.controller is not None:
            return self.controller.energy_cut
        return self.config.energy_cut

    def issue_parameters(self) -> SimulationParameters:
        """Parameters for the next round, derived from the public chain tip;
        idempotent for a fixed tip."""
        tip = self.chain.tip
        work_seed = derive_work_seed(block_hash(tip), tip.number + 1)
        return make_parameters(
            work_seed,
            n_events=self.config.n_events,
            beam_energy=self.config.beam_energy,
            energy_cut=self.current_energy_cut(),
            n_layers=self.config.n_layers,
            n_configs=self.config.n_configs,
            smear_sigma=self.config.smear_sigma,
            split_scale=self.config.split_scale,
        )

    def open_round(self, now: int, deadline: int) -> RoundState:
        if self.round is not None:
            raise RuntimeError("previous round still open")
        params = self.issue_parameters()
        self.round = RoundState(
            number=self.chain.height + 1,
            params=params,
            opened_at=now,
            deadline=deadline,
        )
        return self.round

    # -- intake --------------------------------------------------------------

    def accept_submission(self, sub: Submission, now: int) -> str:
        rnd = self.round
        if rnd is None or sub.block_number != rnd.number or now >= rnd.deadline:
            return LATE
        if not self.registry.is_registered(sub.miner):
            return UNREGISTERED
        if self.registry.is_banned(sub.miner):
            return BANNED
        if sub.params_echo != rnd.params:
            self.registry.strike(sub.miner, WRONG_PARAMS, self.config.ban_threshold)
            return WRONG_PARAMS
        if sub.miner in rnd.submissions:
            return DUPLICATE_SUBMISSION
        rnd.submissions[sub.miner] = sub
        return ACCEPTED

    def submit_transaction(self, tx: Transaction) -> str:
        if not self.registry.is_registered(tx.sender):
            return TX_REJECTED
        if self.registry.is_banned(tx.sender):
            return TX_REJECTED
        if tx.amount < 1 or not self.registry.verify_transaction_tag(tx):
            return TX_REJECTED
        self.pool.add(tx)
        return TX_QUEUED

    # -- verification artifacts ----------------------------------------------

    def _compute_full(self, params: SimulationParameters) -> SimulationResult:
        if self.full_compute is not None:
            return self.full_compute(params)
        return run_pipeline(params, workers=self.config.workers)

    def _compute_config(self, params: SimulationParameters, index: int) -> ConfigResult:
        if self.config_compute is not None:
            return self.config_compute(params, index)
        return run_config(params, params.configs[index], self.config.pitch, self.config.adc_gain)

    def ensure_decoy(self) -> DecoySpec:
        rnd = self.round
        if rnd.decoy is None:
            rng = Splitmix64(stream_seed(rnd.params.work_seed, _TAG_DECOY))
            index = rng.next_below(len(rnd.params.configs))
            rnd.decoy = DecoySpec(index, self._compute_config(rnd.params, index))
        return rnd.decoy

    def ensure_reference(self) -> ReferenceDataset:
        """Reference data for this round. reference_skew != 1 scales the
        truth run's event count, modeling reality diverging from the issued
        simulation model (an intensity excess the model does not predict)."""
        rnd = self.round
        if rnd.reference is None:
            truth_seed = stream_seed(rnd.params.work_seed, _TAG_TRUTH)
            truth_params = rnd.params
            if self.config.reference_skew != 1.0:
                truth_params = replace(
                    rnd.params,
                    n_events=max(0, round(rnd.params.n_events * self.config.reference_skew)),
                )
            rnd.reference = build_reference(
                truth_params,
                truth_seed,
                bins=self.config.histogram_bins,
                pitch=self.config.pitch,
                workers=self.config.workers,
            )
        return rnd.reference

    # -- close ----------------------------------------------------------------

    def close_round(self, now: int) -> RoundOutcome:
        """Validate submissions (escalating on anomalies), pick the winner
        with a round-seeded RNG, assemble and apply the next block."""
        rnd = self.round
        if rnd is None:
            raise RuntimeError("no open round")
        subs = [rnd.submissions[a] for a in sorted(rnd.submissions)]
        strategy = self.config.strategy
        depth = 0
        verdict: Verdict | None = None
        self_result: SimulationResult | None = None
        while True:
            if strategy == STRATEGY_REFERENCE:
                verdict = verify_reference_all(
                    subs, self.ensure_reference(), self.config.chi2_threshold, self.config.pitch
                )
            elif strategy == STRATEGY_DECOY:
                verdict = verify_decoy(subs, self.ensure_decoy())
                if self.config.ban_threshold > 0:
                    for addr, reason in verdict.rejected:
                        if reason == DECOY_MISMATCH:
                            self.registry.strike(addr, DECOY_MISMATCH, self.config.ban_threshold)
            elif strategy == STRATEGY_REPLICATION:
                verdict = verify_replication(subs, self.config.replication)
            else:  # terminal: the authority provides the solution itself
                self_result = self._compute_full(rnd.params)
                verdict = Verdict(STRATEGY_SELF_COMPUTE, (self.address,), self_result.digest, ())
                break
            if verdict.accepted:
                break
            strategy = fallback_escalate(strategy)
            depth += 1

        rng = Splitmix64(stream_seed(rnd.params.work_seed, rnd.number, _TAG_WINNER))
        if self_result is not None:
            winner = self.address
            winner_result = self_result
            costs = [sum(e.step_count for e in self_result.per_config)]
            self.store.put(self_result)
        else:
            winner = verdict.accepted[rng.next_below(len(verdict.accepted))]
            winner_result = rnd.submissions[winner].result
            costs = []
            for addr in verdict.accepted:
                result = rnd.submissions[addr].result
                self.store.put(result)
                costs.append(sum(e.step_count for e in result.per_config))
        verdict.winning_digest = winner_result.digest

        block = Block(
            number=rnd.number,
            timestamp=now,
            prev_hash=block_hash(self.chain.tip),
            transactions=tuple(self._assemble_transactions(winner)),
            winner=winner,
            sim_params=rnd.params,
            sim_data_hash=winner_result.digest,
        )
        apply_block(self.chain, block, self.registry)

        cost_sample = sum(costs) / len(costs)
        if self.controller is not None:
            self.controller.record(cost_sample)
            mean = self.controller.window_mean()
            if mean is not None:
                adjust_difficulty(self.controller, mean)

        self.round = None
        return RoundOutcome(
            block=block,
            verdict=verdict,
            escalation_depth=depth,
            round=rnd,
            cost_sample=cost_sample,
            winner_result=winner_result,
        )

    def _assemble_transactions(self, winner: bytes) -> list[Transaction]:
        """Drain up to the cap, keeping FIFO order; transactions that cannot
        execute against the resulting state are dropped, not deferred."""
        candidates = self.pool.drain()
        balances: dict[bytes, int] = {winner: self.chain.balance(winner) + self.chain.block_reward}
        nonces: dict[bytes, int] = {}
        chosen: list[Transaction] = []
        for tx in candidates:
            floor = nonces.get(tx.sender, self.chain.next_nonce.get(tx.sender, 0))
            balance = balances.get(tx.sender, self.chain.balance(tx.sender))
            if tx.amount < 1 or tx.nonce < floor or balance < tx.amount:
                continue
            if not self.registry.verify_transaction_tag(tx):
                continue
            balances[tx.sender] = balance - tx.amount
            balances[tx.recipient] = balances.get(tx.recipient, self.chain.balance(tx.recipient)) + tx.amount
            nonces[tx.sender] = tx.nonce + 1
            chosen.append(tx)
        return chosen

    # -- queries ---------------------------------------------------------------

    def serve_data(self, digest: bytes) -> SimulationResult:
        return self.store.get(digest)

    def answer_balance_query(self, address: bytes) -> int:
        return self.chain.balance(address)
