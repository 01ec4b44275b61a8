"""Scenario configuration: a strict, human-editable key-value format.

Files use INI sections. ``[scenario]``, ``[work]``, ``[validation]``,
``[difficulty]`` and ``[network]`` hold scalar knobs; each ``[miners:<name>]``
section declares a miner group; ``[partition:<name>]`` sections declare
network partition windows. Unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .authority import AuthorityConfig
from .miner import BEHAVIOR_KINDS, BEHAVIOR_PARTIAL_FABRICATE, BEHAVIOR_REFERENCE_CHEAT
from .verification import (
    ReplicationConfig,
    STRATEGY_DECOY,
    STRATEGY_REFERENCE,
    STRATEGY_REPLICATION,
)

STRATEGIES = (STRATEGY_REPLICATION, STRATEGY_DECOY, STRATEGY_REFERENCE)


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class MinerGroup:
    name: str
    behavior: str = "honest"
    count: int = 1
    speed: float = 1.0
    k_correct: int = 0
    group: str = ""
    offline: bool = False


@dataclass(frozen=True)
class PartitionWindow:
    name: str
    nodes: tuple[str, ...]  # miner names; "authority" addresses the root
    start: int
    end: int


@dataclass
class ScenarioConfig:
    seed: int = 1
    rounds: int = 10
    round_interval: int = 1000
    strategy: str = STRATEGY_DECOY
    block_reward: int = 1
    tx_cap: int | None = None
    txs_per_round: int = 0
    tx_amount: int = 1
    ban_threshold: int = 2

    n_configs: int = 4
    n_events: int = 16
    beam_energy: float = 6.0
    energy_cut: float = 1.0
    n_layers: int = 6
    smear_sigma: float = 0.02
    split_scale: float = 8.0
    workers: int = 1

    min_quorum: int = 2
    target_nresults: int = 3
    chi2_threshold: float = 3.0
    histogram_bins: int = 16
    reference_skew: float = 1.0

    target_cost: float | None = None
    difficulty_window: int = 1

    base_latency: int = 1
    jitter: int = 0
    drop_rate: float = 0.0

    miners: tuple[MinerGroup, ...] = ()
    partitions: tuple[PartitionWindow, ...] = field(default_factory=tuple)

    def validate(self) -> None:
        if self.rounds < 1:
            raise ScenarioError("rounds must be >= 1")
        if self.round_interval < 2:
            raise ScenarioError("round_interval must be >= 2")
        if self.strategy not in STRATEGIES:
            raise ScenarioError(f"strategy must be one of {STRATEGIES}")
        if self.block_reward < 1:
            raise ScenarioError("block_reward must be >= 1")
        if self.tx_cap is not None and self.tx_cap < 0:
            raise ScenarioError("tx_cap must be >= 0")
        if self.tx_amount < 1:
            raise ScenarioError("tx_amount must be >= 1")
        if self.n_configs < 1:
            raise ScenarioError("n_configs must be >= 1")
        if self.n_events < 0:
            raise ScenarioError("n_events must be >= 0")
        if self.beam_energy <= 0 or self.energy_cut <= 0 or self.split_scale <= 0:
            raise ScenarioError("beam_energy, energy_cut and split_scale must be > 0")
        if self.n_layers < 2:
            raise ScenarioError("n_layers must be >= 2")
        if self.smear_sigma < 0:
            raise ScenarioError("smear_sigma must be >= 0")
        if self.min_quorum < 1 or self.target_nresults < self.min_quorum:
            raise ScenarioError("need target_nresults >= min_quorum >= 1")
        if self.histogram_bins < 8:
            raise ScenarioError("histogram_bins must be >= 8")
        if self.chi2_threshold <= 1:
            raise ScenarioError("chi2_threshold must be > 1")
        if self.reference_skew <= 0:
            raise ScenarioError("reference_skew must be > 0")
        if self.base_latency < 1:
            raise ScenarioError("base_latency must be >= 1")
        if self.jitter < 0:
            raise ScenarioError("jitter must be >= 0")
        if not (0.0 <= self.drop_rate < 1.0):
            raise ScenarioError("drop_rate must be in [0, 1)")
        if self.target_cost is not None and self.target_cost <= 0:
            raise ScenarioError("target_cost must be > 0")
        if self.difficulty_window < 1:
            raise ScenarioError("difficulty_window must be >= 1")
        if self.workers < 1:
            raise ScenarioError("workers must be >= 1")
        names = set()
        uses_reference = self.strategy == STRATEGY_REFERENCE
        for group in self.miners:
            if group.name in names:
                raise ScenarioError(f"duplicate miner group {group.name!r}")
            names.add(group.name)
            if group.behavior not in BEHAVIOR_KINDS:
                raise ScenarioError(f"unknown behavior {group.behavior!r}")
            if group.count < 0:
                raise ScenarioError("miner count must be >= 0")
            if group.speed <= 0:
                raise ScenarioError("miner speed must be > 0")
            if group.behavior == BEHAVIOR_PARTIAL_FABRICATE and not (
                0 <= group.k_correct <= self.n_configs
            ):
                raise ScenarioError("k_correct must be in 0..n_configs")
            if group.behavior == BEHAVIOR_REFERENCE_CHEAT:
                uses_reference = True
        if uses_reference and self.n_layers < 3:
            raise ScenarioError("reference verification needs n_layers >= 3")
        miner_names = {f"{g.name}-{i}" for g in self.miners for i in range(g.count)}
        miner_names.add("authority")
        for part in self.partitions:
            if part.end <= part.start or part.start < 0:
                raise ScenarioError(f"partition {part.name!r} window is empty")
            for node in part.nodes:
                if node not in miner_names:
                    raise ScenarioError(f"partition {part.name!r} names unknown node {node!r}")

    def authority_config(self) -> AuthorityConfig:
        return AuthorityConfig(
            strategy=self.strategy,
            replication=ReplicationConfig(self.min_quorum, self.target_nresults),
            chi2_threshold=self.chi2_threshold,
            histogram_bins=self.histogram_bins,
            n_configs=self.n_configs,
            n_events=self.n_events,
            beam_energy=self.beam_energy,
            energy_cut=self.energy_cut,
            n_layers=self.n_layers,
            smear_sigma=self.smear_sigma,
            split_scale=self.split_scale,
            block_reward=self.block_reward,
            tx_cap=self.tx_cap,
            ban_threshold=self.ban_threshold,
            reference_skew=self.reference_skew,
            target_cost=self.target_cost,
            difficulty_window=self.difficulty_window,
            workers=self.workers,
        )


_SECTION_KEYS = {
    "scenario": {
        "seed": ("seed", int),
        "rounds": ("rounds", int),
        "round_interval": ("round_interval", int),
        "strategy": ("strategy", str),
        "block_reward": ("block_reward", int),
        "tx_cap": ("tx_cap", int),
        "txs_per_round": ("txs_per_round", int),
        "tx_amount": ("tx_amount", int),
        "ban_threshold": ("ban_threshold", int),
    },
    "work": {
        "n_configs": ("n_configs", int),
        "n_events": ("n_events", int),
        "beam_energy": ("beam_energy", float),
        "energy_cut": ("energy_cut", float),
        "n_layers": ("n_layers", int),
        "smear_sigma": ("smear_sigma", float),
        "split_scale": ("split_scale", float),
        "workers": ("workers", int),
    },
    "validation": {
        "min_quorum": ("min_quorum", int),
        "target_nresults": ("target_nresults", int),
        "chi2_threshold": ("chi2_threshold", float),
        "histogram_bins": ("histogram_bins", int),
        "reference_skew": ("reference_skew", float),
    },
    "difficulty": {
        "target_cost": ("target_cost", float),
        "window": ("difficulty_window", int),
    },
    "network": {
        "base_latency": ("base_latency", int),
        "jitter": ("jitter", int),
        "drop_rate": ("drop_rate", float),
    },
}

_MINER_KEYS = {"behavior", "count", "speed", "k_correct", "group", "offline"}
_PARTITION_KEYS = {"nodes", "start", "end"}

_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def _parse_bool(raw: str, where: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in _BOOL_TRUE:
        return True
    if lowered in _BOOL_FALSE:
        return False
    raise ScenarioError(f"{where}: not a boolean: {raw!r}")


def parse_scenario(text: str) -> ScenarioConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ScenarioError(f"malformed scenario file: {exc}") from exc

    cfg = ScenarioConfig()
    miners: list[MinerGroup] = []
    partitions: list[PartitionWindow] = []

    for section in parser.sections():
        items = dict(parser.items(section))
        if section in _SECTION_KEYS:
            schema = _SECTION_KEYS[section]
            for key, raw in items.items():
                if key not in schema:
                    raise ScenarioError(f"unknown key {key!r} in section [{section}]")
                attr, conv = schema[key]
                try:
                    value = conv(raw)
                except ValueError as exc:
                    raise ScenarioError(f"[{section}] {key}: {exc}") from exc
                if attr == "tx_cap" and value < 0:
                    raise ScenarioError("tx_cap must be >= 0")
                setattr(cfg, attr, value)
            continue
        if section.startswith("miners:"):
            name = section.split(":", 1)[1].strip()
            if not name:
                raise ScenarioError("miner section needs a name: [miners:<name>]")
            unknown = set(items) - _MINER_KEYS
            if unknown:
                raise ScenarioError(f"unknown key {sorted(unknown)[0]!r} in section [{section}]")
            try:
                miners.append(
                    MinerGroup(
                        name=name,
                        behavior=items.get("behavior", "honest"),
                        count=int(items.get("count", "1")),
                        speed=float(items.get("speed", "1.0")),
                        k_correct=int(items.get("k_correct", "0")),
                        group=items.get("group", name),
                        offline=_parse_bool(items.get("offline", "false"), section),
                    )
                )
            except ValueError as exc:
                raise ScenarioError(f"[{section}]: {exc}") from exc
            continue
        if section.startswith("partition:"):
            name = section.split(":", 1)[1].strip()
            unknown = set(items) - _PARTITION_KEYS
            if unknown:
                raise ScenarioError(f"unknown key {sorted(unknown)[0]!r} in section [{section}]")
            if "nodes" not in items or "start" not in items or "end" not in items:
                raise ScenarioError(f"[{section}] needs nodes, start and end")
            nodes = tuple(n.strip() for n in items["nodes"].split(",") if n.strip())
            try:
                partitions.append(
                    PartitionWindow(name=name, nodes=nodes, start=int(items["start"]), end=int(items["end"]))
                )
            except ValueError as exc:
                raise ScenarioError(f"[{section}]: {exc}") from exc
            continue
        raise ScenarioError(f"unknown section [{section}]")

    cfg.miners = tuple(miners)
    cfg.partitions = tuple(partitions)
    cfg.validate()
    return cfg


def load_scenario(path: str | Path) -> ScenarioConfig:
    return parse_scenario(Path(path).read_text(encoding="utf-8"))


def bundled_scenario_names() -> list[str]:
    root = resources.files("pouwsim") / "scenarios"
    return sorted(p.name[: -len(".scn")] for p in root.iterdir() if p.name.endswith(".scn"))


def load_bundled_scenario(name: str) -> ScenarioConfig:
    root = resources.files("pouwsim") / "scenarios"
    candidate = root / f"{name}.scn"
    if not candidate.is_file():
        raise ScenarioError(f"no bundled scenario named {name!r}; have {bundled_scenario_names()}")
    return parse_scenario(candidate.read_text(encoding="utf-8"))


def resolve_scenario(spec: str | Path) -> ScenarioConfig:
    """Accept either a filesystem path or a bundled scenario name."""
    path = Path(spec)
    if path.is_file():
        return load_scenario(path)
    if isinstance(spec, str) and "/" not in spec and "\\" not in spec:
        return load_bundled_scenario(spec.removesuffix(".scn"))
    raise ScenarioError(f"scenario file not found: {spec}")
