"""Deterministic discrete-event network and scenario runner.

Time is integer ticks. Events are ordered by (tick, sequence id); the
sequence id increases in scheduling order, so same-tick events run in a
stable order and a (config, seed) pair fully determines every emitted byte.

Messages between a fixed sender/recipient pair are delivered FIFO: the
runner clamps delivery ticks to be monotone per pair even under jitter.
Dropped messages and partition windows model lossy networks; after the final
round the authority re-announces its tip (under the same loss model) until
every node has caught up, which stands in for the retry loop a real protocol
would run while quiescent.
"""

from __future__ import annotations

import csv
import heapq
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .authority import MinerRegistry, RootAuthority
from .chain import (
    ROOT_ADDRESS,
    Block,
    ChainState,
    address_for,
    auth_key_for,
    block_hash,
    make_transaction,
    replay_chain,
)
from .miner import MinerBehavior, MinerNode, BEHAVIOR_REFERENCE_CHEAT
from .rng import Splitmix64, stream_seed
from .scenario import ScenarioConfig
from .verification import STRATEGY_REFERENCE, Submission
from .work import ConfigResult, SimulationParameters, SimulationResult, run_config, run_pipeline

# message kinds
KIND_PARAMS = "params_broadcast"
KIND_SUBMISSION = "solution_submission"
KIND_BLOCK = "block_broadcast"
KIND_TX = "transaction"
KIND_BALANCE_QUERY = "balance_query"
KIND_BALANCE_REPLY = "balance_reply"
KIND_DATA_REQUEST = "data_request"
KIND_DATA_REPLY = "data_reply"
KIND_SYNC_REQUEST = "sync_request"
KIND_SYNC_REPLY = "sync_reply"

_TAG_NET = 31
_TAG_WORKLOAD = 32

METRICS_COLUMNS = (
    "height",
    "strategy",
    "escalation_depth",
    "submissions",
    "accepted",
    "winner",
    "fabrication_accepted",
    "mean_step_count",
    "energy_cut",
    "round_ticks",
)


@dataclass(frozen=True)
class Partition:
    nodes: frozenset[bytes]
    start: int
    end: int


@dataclass(frozen=True)
class LatencyModel:
    base: int = 1
    jitter: int = 0
    drop_rate: float = 0.0
    partitions: tuple[Partition, ...] = ()


@dataclass
class MessageEnvelope:
    sender: bytes
    recipient: bytes
    kind: str
    payload: Any
    send_tick: int
    deliver_tick: int = -1


def deliver(envelope: MessageEnvelope, model: LatencyModel, rng: Splitmix64) -> int | None:
    """Decide delivery for one envelope: None when dropped, otherwise the
    delivery tick send + base + jitter. Pairs split by an active partition
    window are always dropped (no randomness consumed)."""
    for part in model.partitions:
        if part.start <= envelope.send_tick < part.end:
            if (envelope.sender in part.nodes) != (envelope.recipient in part.nodes):
                return None
    if model.drop_rate > 0.0 and rng.next_unit() < model.drop_rate:
        return None
    jitter = rng.next_below(model.jitter + 1) if model.jitter > 0 else 0
    return envelope.send_tick + model.base + jitter


class WorkCache:
    """Per-round memo for pure pipeline computations. Honest results are
    identical across miners by determinism, so recomputing them per node
    would only burn time without changing a single byte."""

    def __init__(self, workers: int = 1):
        self.workers = workers
        self._full: dict[int, SimulationResult] = {}
        self._configs: dict[tuple[int, int], ConfigResult] = {}

    def full(self, params: SimulationParameters) -> SimulationResult:
        result = self._full.get(params.work_seed)
        if result is None:
            result = run_pipeline(params, workers=self.workers)
            self._full[params.work_seed] = result
            for entry in result.per_config:
                self._configs[(params.work_seed, entry.index)] = entry
        return result

    def config(self, params: SimulationParameters, index: int) -> ConfigResult:
        key = (params.work_seed, index)
        entry = self._configs.get(key)
        if entry is None:
            entry = run_config(params, params.configs[index])
            self._configs[key] = entry
        return entry

    def reset(self) -> None:
        self._full.clear()
        self._configs.clear()


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    state: ChainState
    metrics: list[dict]
    summary: dict
    authority: RootAuthority
    miners: dict[str, MinerNode]
    registry: MinerRegistry
    message_log: list[tuple[int, str, str, str]] = field(default_factory=list)


class _EventQueue:
    def __init__(self) -> None:
        self._heap: list[tuple[int, int, str, Any]] = []
        self._seq = 0

    def push(self, tick: int, kind: str, payload: Any) -> None:
        heapq.heappush(self._heap, (tick, self._seq, kind, payload))
        self._seq += 1

    def pop(self) -> tuple[int, int, str, Any]:
        return heapq.heappop(self._heap)

    def __bool__(self) -> bool:
        return bool(self._heap)


class ScenarioRunner:
    def __init__(self, cfg: ScenarioConfig):
        cfg.validate()
        self.cfg = cfg
        self.registry = MinerRegistry()
        self.authority = RootAuthority(self.registry, cfg.authority_config())
        self.cache = WorkCache(workers=cfg.workers)
        self.authority.full_compute = self.cache.full
        self.authority.config_compute = self.cache.config

        self.miners: dict[str, MinerNode] = {}
        self.by_address: dict[bytes, MinerNode] = {}
        for group in cfg.miners:
            behavior = MinerBehavior(
                kind=group.behavior,
                k_correct=group.k_correct,
                group_seed=stream_seed(
                    int.from_bytes(address_for("group:" + group.group)[:8], "big")
                ),
            )
            for i in range(group.count):
                name = f"{group.name}-{i}"
                node = MinerNode(
                    name=name,
                    address=address_for(name),
                    auth_key=auth_key_for(name),
                    behavior=behavior,
                    speed=group.speed,
                    offline=group.offline,
                    block_reward=cfg.block_reward,
                    tx_cap=cfg.tx_cap,
                )
                self.miners[name] = node
                self.by_address[node.address] = node
                self.registry.register(name, node.address, node.auth_key)
        self.miner_names = sorted(self.miners)
        self.name_of = {ROOT_ADDRESS: "authority"}
        self.name_of.update({m.address: name for name, m in self.miners.items()})

        self.latency = LatencyModel(
            base=cfg.base_latency,
            jitter=cfg.jitter,
            drop_rate=cfg.drop_rate,
            partitions=tuple(
                Partition(
                    nodes=frozenset(
                        ROOT_ADDRESS if n == "authority" else self.miners[n].address
                        for n in p.nodes
                    ),
                    start=p.start,
                    end=p.end,
                )
                for p in cfg.partitions
            ),
        )
        self.net_rng = Splitmix64(stream_seed(cfg.seed, _TAG_NET))
        self.workload_rng = Splitmix64(stream_seed(cfg.seed, _TAG_WORKLOAD))
        self.queue = _EventQueue()
        self._pair_last: dict[tuple[bytes, bytes], int] = {}

        self.metrics: list[dict] = []
        self.rounds_done = 0
        self.now = 0
        self.dropped = 0
        self.delivered = 0
        self.round_open_tick = 0
        self.round_arrivals = 0
        self.outcome_counts: dict[str, int] = {}
        self.behavior_submitted: dict[str, int] = {}
        self.behavior_accepted: dict[str, int] = {}
        self.wins: dict[str, int] = {}
        self.message_log: list[tuple[int, str, str, str]] = []
        self.balance_replies: list[tuple[bytes, int]] = []
        self.data_replies: list[Any] = []

    # -- messaging -----------------------------------------------------------

    def send(self, sender: bytes, recipient: bytes, kind: str, payload: Any, now: int) -> None:
        env = MessageEnvelope(sender, recipient, kind, payload, send_tick=now)
        tick = deliver(env, self.latency, self.net_rng)
        if tick is None:
            self.dropped += 1
            return
        pair = (sender, recipient)
        last = self._pair_last.get(pair, tick)
        tick = max(tick, last)  # per-pair FIFO under jitter
        self._pair_last[pair] = tick
        env.deliver_tick = tick
        self.queue.push(tick, "deliver", env)

    # -- round flow ------------------------------------------------------------

    def _open_round(self, now: int) -> None:
        self.cache.reset()
        rnd = self.authority.open_round(now, deadline=now + self.cfg.round_interval)
        self.round_open_tick = now
        self.round_arrivals = 0
        if self.cfg.strategy == STRATEGY_REFERENCE or self._has_cheat():
            self.authority.ensure_reference()
        payload = {"params": rnd.params, "number": rnd.number}
        for name in self.miner_names:
            self.send(ROOT_ADDRESS, self.miners[name].address, KIND_PARAMS, payload, now)
        if self.cfg.txs_per_round > 0:
            self.queue.push(now + 1, "emit_txs", None)
        self.queue.push(rnd.deadline, "close_round", None)

    def _has_cheat(self) -> bool:
        return any(m.behavior.kind == BEHAVIOR_REFERENCE_CHEAT for m in self.miners.values())

    def _on_params(self, miner: MinerNode, payload: dict, now: int) -> None:
        if miner.offline:
            return
        params: SimulationParameters = payload["params"]
        self.queue.push(now + miner.work_delay(params), "work_done", (miner, payload))

    def _on_work_done(self, miner: MinerNode, payload: dict, now: int) -> None:
        params: SimulationParameters = payload["params"]
        reference = None
        if miner.behavior.kind == BEHAVIOR_REFERENCE_CHEAT and self.authority.round is not None:
            reference = self.authority.round.reference
        sub = miner.compute_solution(
            params,
            payload["number"],
            config_compute=self.cache.config,
            full_compute=self.cache.full,
            reference=reference,
        )
        self.behavior_submitted[miner.behavior.kind] = (
            self.behavior_submitted.get(miner.behavior.kind, 0) + 1
        )
        self.send(miner.address, ROOT_ADDRESS, KIND_SUBMISSION, sub, now)

    def _on_submission(self, sub: Submission, now: int) -> None:
        outcome = self.authority.accept_submission(sub, now)
        self.round_arrivals += 1
        self.outcome_counts[outcome] = self.outcome_counts.get(outcome, 0) + 1

    def _on_close(self, now: int) -> None:
        outcome = self.authority.close_round(now)
        verdict = outcome.verdict
        fabrication = False
        for addr in verdict.accepted:
            node = self.by_address.get(addr)
            if node is not None:
                self.behavior_accepted[node.behavior.kind] = (
                    self.behavior_accepted.get(node.behavior.kind, 0) + 1
                )
                if node.behavior.fabricates(self.cfg.n_configs):
                    fabrication = True
        winner_name = self.name_of.get(outcome.block.winner, outcome.block.winner.hex())
        self.wins[winner_name] = self.wins.get(winner_name, 0) + 1
        self.metrics.append(
            {
                "height": outcome.block.number,
                "strategy": verdict.strategy_used,
                "escalation_depth": outcome.escalation_depth,
                "submissions": self.round_arrivals,
                "accepted": len(verdict.accepted) if verdict.strategy_used != "self_compute" else 0,
                "winner": outcome.block.winner.hex(),
                "fabrication_accepted": int(fabrication),
                "mean_step_count": outcome.cost_sample,
                "energy_cut": outcome.round.params.energy_cut,
                "round_ticks": now - self.round_open_tick,
            }
        )
        for name in self.miner_names:
            self.send(ROOT_ADDRESS, self.miners[name].address, KIND_BLOCK, outcome.block, now)
        self.rounds_done += 1
        if self.rounds_done < self.cfg.rounds:
            self._open_round(now)

    def _on_block(self, miner: MinerNode, block: Block, sender: bytes, now: int) -> None:
        applied = miner.on_block(block, sender)
        if not applied and block.number > miner.chain.height + 1:
            self.send(miner.address, ROOT_ADDRESS, KIND_SYNC_REQUEST, miner.chain.height, now)

    def _on_emit_txs(self, now: int) -> None:
        eligible = [
            name
            for name in self.miner_names
            if not self.registry.is_banned(self.miners[name].address)
            and self.miners[name].chain.balance(self.miners[name].address) >= self.cfg.tx_amount
        ]
        if not eligible:
            return
        for _ in range(self.cfg.txs_per_round):
            sender = self.miners[eligible[self.workload_rng.next_below(len(eligible))]]
            idx = self.miner_names.index(sender.name)
            recipient = self.miners[self.miner_names[(idx + 1) % len(self.miner_names)]]
            if recipient.address == sender.address:
                continue
            tx = make_transaction(
                sender.auth_key,
                sender.address,
                recipient.address,
                self.cfg.tx_amount,
                sender.next_tx_nonce,
            )
            sender.next_tx_nonce += 1
            self.send(sender.address, ROOT_ADDRESS, KIND_TX, tx, now)

    # -- auxiliary message handlers ---------------------------------------------

    def _route(self, env: MessageEnvelope, now: int) -> None:
        self.delivered += 1
        self.message_log.append(
            (now, self.name_of.get(env.sender, "?"), self.name_of.get(env.recipient, "?"), env.kind)
        )
        kind = env.kind
        if kind == KIND_PARAMS:
            self._on_params(self.by_address[env.recipient], env.payload, now)
        elif kind == KIND_SUBMISSION:
            self._on_submission(env.payload, now)
        elif kind == KIND_BLOCK:
            self._on_block(self.by_address[env.recipient], env.payload, env.sender, now)
        elif kind == KIND_TX:
            self.authority.submit_transaction(env.payload)
        elif kind == KIND_SYNC_REQUEST:
            blocks = tuple(self.authority.chain.blocks[env.payload + 1 :])
            if blocks:
                self.send(ROOT_ADDRESS, env.sender, KIND_SYNC_REPLY, blocks, now)
        elif kind == KIND_SYNC_REPLY:
            miner = self.by_address[env.recipient]
            for block in env.payload:
                if block.number == miner.chain.height + 1:
                    miner.on_block(block, env.sender)
        elif kind == KIND_BALANCE_QUERY:
            balance = self.authority.answer_balance_query(env.payload)
            self.send(ROOT_ADDRESS, env.sender, KIND_BALANCE_REPLY, (env.payload, balance), now)
        elif kind == KIND_BALANCE_REPLY:
            self.balance_replies.append(env.payload)
        elif kind == KIND_DATA_REQUEST:
            try:
                result = self.authority.serve_data(env.payload)
                self.send(ROOT_ADDRESS, env.sender, KIND_DATA_REPLY, result, now)
            except Exception as exc:
                self.send(ROOT_ADDRESS, env.sender, KIND_DATA_REPLY, exc, now)
        elif kind == KIND_DATA_REPLY:
            self.data_replies.append(env.payload)
        else:
            raise RuntimeError(f"unrouted message kind {kind!r}")

    # -- main loop -----------------------------------------------------------------

    def _drain(self) -> None:
        while self.queue:
            tick, _, kind, payload = self.queue.pop()
            if tick < self.now:
                raise RuntimeError("event scheduled in the past")
            self.now = tick
            if kind == "deliver":
                self._route(payload, tick)
            elif kind == "work_done":
                miner, round_payload = payload
                self._on_work_done(miner, round_payload, tick)
            elif kind == "close_round":
                self._on_close(tick)
            elif kind == "emit_txs":
                self._on_emit_txs(tick)
            else:
                raise RuntimeError(f"unknown event kind {kind!r}")

    def _end_sync(self) -> None:
        """Re-announce the tip until every node converges; models the retry
        loop of a quiescent sync protocol, under the same loss model."""
        tip_hash = block_hash(self.authority.chain.tip)
        for _ in range(64):
            lagging = [
                name
                for name in self.miner_names
                if block_hash(self.miners[name].chain.tip) != tip_hash
            ]
            if not lagging:
                return
            self.now += 1
            for name in lagging:
                miner = self.miners[name]
                blocks = tuple(self.authority.chain.blocks[miner.chain.height + 1 :])
                self.send(ROOT_ADDRESS, miner.address, KIND_SYNC_REPLY, blocks, self.now)
            self._drain()

    def run(self) -> ScenarioResult:
        self._open_round(0)
        self._drain()
        self._end_sync()
        state = self.authority.chain

        # replay audit: the exported block list must reproduce the
        # incrementally maintained state exactly, every run
        replayed = replay_chain(
            list(state.blocks), self.registry, state.block_reward, state.tx_cap
        )
        if (
            replayed.balances != state.balances
            or replayed.next_nonce != state.next_nonce
            or replayed.total_supply != state.total_supply
        ):
            raise RuntimeError("replayed chain state diverged from incremental state")

        tip_hash = block_hash(state.tip)
        diverged = sorted(
            name
            for name in self.miner_names
            if block_hash(self.miners[name].chain.tip) != tip_hash
        )
        behaviors = sorted(set(self.behavior_submitted) | set(self.behavior_accepted))
        summary = {
            "rounds": self.cfg.rounds,
            "blocks": state.height,
            "total_supply": state.total_supply,
            "block_reward": state.block_reward,
            "final_height": state.height,
            "tip_hash": tip_hash.hex(),
            "fabrication_accepted_rounds": sum(r["fabrication_accepted"] for r in self.metrics),
            "escalated_rounds": sum(1 for r in self.metrics if r["escalation_depth"] > 0),
            "self_compute_rounds": sum(1 for r in self.metrics if r["strategy"] == "self_compute"),
            "submission_outcomes": {k: self.outcome_counts[k] for k in sorted(self.outcome_counts)},
            "acceptance_by_behavior": {
                kind: {
                    "submitted": self.behavior_submitted.get(kind, 0),
                    "accepted": self.behavior_accepted.get(kind, 0),
                    "rate": (
                        self.behavior_accepted.get(kind, 0) / self.behavior_submitted[kind]
                        if self.behavior_submitted.get(kind)
                        else 0.0
                    ),
                }
                for kind in behaviors
            },
            "wins": {k: self.wins[k] for k in sorted(self.wins)},
            "bans": sorted(
                (self.name_of.get(addr, addr.hex()), entry.ban_reason)
                for addr, entry in self.registry.entries.items()
                if entry.banned
            ),
            "messages_delivered": self.delivered,
            "messages_dropped": self.dropped,
            "diverged_nodes": diverged,
            "converged": not diverged,
            "replay_consistent": True,
        }
        return ScenarioResult(
            config=self.cfg,
            state=state,
            metrics=self.metrics,
            summary=summary,
            authority=self.authority,
            miners=self.miners,
            registry=self.registry,
            message_log=self.message_log,
        )


def run_scenario(cfg: ScenarioConfig) -> ScenarioResult:
    """Run a scenario to completion; (cfg, seed) determines every byte."""
    return ScenarioRunner(cfg).run()


def metrics_csv(metrics: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_COLUMNS)
    for row in metrics:
        writer.writerow([row[c] for c in METRICS_COLUMNS])
    return buf.getvalue()


def summary_json(summary: dict) -> str:
    return json.dumps(summary, sort_keys=True, indent=2) + "\n"


def emit_metrics(result: ScenarioResult, out_dir: str | Path) -> tuple[Path, Path]:
    """Write the per-round metrics table and the totals summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / "metrics.csv"
    summary_path = out / "summary.json"
    metrics_path.write_text(metrics_csv(result.metrics), encoding="utf-8")
    summary_path.write_text(summary_json(result.summary), encoding="utf-8")
    return metrics_path, summary_path
