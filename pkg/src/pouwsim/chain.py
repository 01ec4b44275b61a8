"""Blocks, transactions, canonical hashing, work-seed derivation, and ledger
state with full-replay auditing.

Canonical block serialization (all integers big-endian, fixed width):

    number      u64
    timestamp   u64 (simulated ticks)
    prev_hash   32 bytes
    tx count    u32, then per transaction:
        sender    32 bytes
        recipient 32 bytes
        amount    u64
        nonce     u64
        auth_tag  32 bytes
    winner      32 bytes
    work parameters (see work.params_bytes)
    sim_data_hash 32 bytes

The genesis block is fixed: number 0, timestamp 0, all-zero prev_hash, no
transactions, winner = the root authority address, placeholder parameters
(seed 0, 0 events, beam 1.0, cut 1.0, 2 layers, one config with smear 0.0
and split scale 1.0), all-zero data hash. Its hash is a frozen test vector.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterable

from .work import ConfigFlag, SimulationParameters, params_bytes

if TYPE_CHECKING:  # only for type hints; avoids a runtime cycle
    from .authority import MinerRegistry

DIGEST_SIZE = 32
ZERO_DIGEST = b"\x00" * DIGEST_SIZE

ROOT_ADDRESS = hashlib.sha256(b"pouwsim/root-authority").digest()
ROOT_AUTH_KEY = hashlib.sha256(b"pouwsim/root-authority-key").digest()

GENESIS_PARAMS = SimulationParameters(
    work_seed=0,
    n_events=0,
    beam_energy=1.0,
    energy_cut=1.0,
    n_layers=2,
    configs=(ConfigFlag(0, 0.0, 1.0),),
)

# validation rule identifiers, reported on the first violated rule
BAD_HEIGHT = "BadHeight"
LINK_BROKEN = "LinkBroken"
BAD_TIMESTAMP = "BadTimestamp"
CAP_EXCEEDED = "CapExceeded"
BAD_AMOUNT = "BadAmount"
BAD_NONCE = "BadNonce"
BAD_AUTH = "BadAuthTag"
OVERSPEND = "Overspend"
BAD_GENESIS = "BadGenesis"


def address_for(label: str) -> bytes:
    """Deterministic 32-byte address for a named node."""
    return hashlib.sha256(b"pouwsim/node:" + label.encode()).digest()


def auth_key_for(label: str) -> bytes:
    """Deterministic signing key material for a named node (toy model)."""
    return hashlib.sha256(b"pouwsim/key:" + label.encode()).digest()


@dataclass(frozen=True)
class Transaction:
    sender: bytes
    recipient: bytes
    amount: int
    nonce: int
    auth_tag: bytes

    def core_bytes(self) -> bytes:
        return self.sender + self.recipient + struct.pack(">QQ", self.amount, self.nonce)


def transaction_tag(auth_key: bytes, sender: bytes, recipient: bytes, amount: int, nonce: int) -> bytes:
    """Keyed authenticity witness standing in for a signature."""
    core = sender + recipient + struct.pack(">QQ", amount, nonce)
    return hashlib.sha256(b"pouwsim/tx-tag" + auth_key + core).digest()


def make_transaction(auth_key: bytes, sender: bytes, recipient: bytes, amount: int, nonce: int) -> Transaction:
    tag = transaction_tag(auth_key, sender, recipient, amount, nonce)
    return Transaction(sender, recipient, amount, nonce, tag)


@dataclass(frozen=True)
class Block:
    number: int
    timestamp: int
    prev_hash: bytes
    transactions: tuple[Transaction, ...]
    winner: bytes
    sim_params: SimulationParameters
    sim_data_hash: bytes


def block_bytes(block: Block) -> bytes:
    head = struct.pack(">QQ", block.number, block.timestamp) + block.prev_hash
    txs = struct.pack(">I", len(block.transactions)) + b"".join(
        tx.core_bytes() + tx.auth_tag for tx in block.transactions
    )
    return head + txs + block.winner + params_bytes(block.sim_params) + block.sim_data_hash


def block_hash(block: Block) -> bytes:
    return hashlib.sha256(block_bytes(block)).digest()


def derive_work_seed(prev_hash: bytes, number: int) -> int:
    """First 8 bytes, big-endian, of SHA-256(prev_hash || number as u64 BE)."""
    digest = hashlib.sha256(prev_hash + struct.pack(">Q", number)).digest()
    return int.from_bytes(digest[:8], "big")


def genesis_block() -> Block:
    return Block(
        number=0,
        timestamp=0,
        prev_hash=ZERO_DIGEST,
        transactions=(),
        winner=ROOT_ADDRESS,
        sim_params=GENESIS_PARAMS,
        sim_data_hash=ZERO_DIGEST,
    )


@dataclass
class ValidationReport:
    ok: bool
    rule: str | None = None
    height: int | None = None
    detail: str = ""


class ChainError(Exception):
    pass


class InvalidBlockError(ChainError):
    def __init__(self, report: ValidationReport):
        super().__init__(f"invalid block at height {report.height}: {report.rule} {report.detail}".strip())
        self.report = report


class InvalidChainError(ChainError):
    def __init__(self, height: int, rule: str, detail: str = ""):
        super().__init__(f"invalid block at height {height}: {rule} {detail}".strip())
        self.height = height
        self.rule = rule


@dataclass
class ChainState:
    """Ledger state: block list plus derived balances and nonces.

    Mutated only by ``apply_block``; ``replay_chain`` rebuilds the same state
    from the block list alone, which is the audit path.
    """

    blocks: list[Block]
    balances: dict[bytes, int] = field(default_factory=dict)
    next_nonce: dict[bytes, int] = field(default_factory=dict)
    total_supply: int = 0
    block_reward: int = 1
    tx_cap: int | None = None

    @classmethod
    def bootstrap(cls, block_reward: int = 1, tx_cap: int | None = None) -> "ChainState":
        return cls(blocks=[genesis_block()], block_reward=block_reward, tx_cap=tx_cap)

    @property
    def tip(self) -> Block:
        return self.blocks[-1]

    @property
    def height(self) -> int:
        return self.tip.number

    def balance(self, address: bytes) -> int:
        return self.balances.get(address, 0)

    def copy(self) -> "ChainState":
        return ChainState(
            blocks=list(self.blocks),
            balances=dict(self.balances),
            next_nonce=dict(self.next_nonce),
            total_supply=self.total_supply,
            block_reward=self.block_reward,
            tx_cap=self.tx_cap,
        )


def validate_block(
    candidate: Block,
    state: ChainState,
    registry: "MinerRegistry | None" = None,
) -> ValidationReport:
    """Check a candidate successor against the current state.

    Reports the first violated rule. Auth tags are only checkable when a
    registry is supplied (chain exports carry no key material).
    """
    parent = state.tip
    height = candidate.number

    def fail(rule: str, detail: str = "") -> ValidationReport:
        return ValidationReport(ok=False, rule=rule, height=height, detail=detail)

    if candidate.number != parent.number + 1:
        return fail(BAD_HEIGHT, f"expected {parent.number + 1}")
    if candidate.prev_hash != block_hash(parent):
        return fail(LINK_BROKEN)
    if candidate.timestamp <= parent.timestamp:
        return fail(BAD_TIMESTAMP, f"{candidate.timestamp} <= {parent.timestamp}")
    if state.tx_cap is not None and len(candidate.transactions) > state.tx_cap:
        return fail(CAP_EXCEEDED, f"{len(candidate.transactions)} > {state.tx_cap}")

    # winner reward is credited before transactions execute
    balances: dict[bytes, int] = {candidate.winner: state.balance(candidate.winner) + state.block_reward}
    nonces: dict[bytes, int] = {}
    for tx in candidate.transactions:
        if tx.amount < 1:
            return fail(BAD_AMOUNT, f"amount {tx.amount}")
        floor = nonces.get(tx.sender, state.next_nonce.get(tx.sender, 0))
        if tx.nonce < floor:
            return fail(BAD_NONCE, f"nonce {tx.nonce} < {floor}")
        if registry is not None and not registry.verify_transaction_tag(tx):
            return fail(BAD_AUTH)
        sender_balance = balances.get(tx.sender, state.balance(tx.sender))
        if sender_balance < tx.amount:
            return fail(OVERSPEND, f"balance {sender_balance} < {tx.amount}")
        balances[tx.sender] = sender_balance - tx.amount
        balances[tx.recipient] = balances.get(tx.recipient, state.balance(tx.recipient)) + tx.amount
        nonces[tx.sender] = tx.nonce + 1
    return ValidationReport(ok=True, height=height)


def apply_block(
    state: ChainState,
    block: Block,
    registry: "MinerRegistry | None" = None,
) -> ChainState:
    """Validate then apply: credit the winner, execute transactions, advance
    nonces, grow supply by exactly one block reward."""
    report = validate_block(block, state, registry)
    if not report.ok:
        raise InvalidBlockError(report)
    state.balances[block.winner] = state.balance(block.winner) + state.block_reward
    for tx in block.transactions:
        state.balances[tx.sender] -= tx.amount
        state.balances[tx.recipient] = state.balance(tx.recipient) + tx.amount
        state.next_nonce[tx.sender] = tx.nonce + 1
    state.total_supply += state.block_reward
    state.blocks.append(block)
    return state


def replay_chain(
    blocks: Iterable[Block],
    registry: "MinerRegistry | None" = None,
    block_reward: int = 1,
    tx_cap: int | None = None,
) -> ChainState:
    """Rebuild state from genesis by folding validate + apply.

    Raises InvalidChainError naming the height of the first bad block.
    """
    block_list = list(blocks)
    if not block_list:
        raise InvalidChainError(0, BAD_GENESIS, "empty chain")
    if block_list[0] != genesis_block():
        raise InvalidChainError(0, BAD_GENESIS, "genesis does not match the canonical genesis block")
    state = ChainState(blocks=[block_list[0]], block_reward=block_reward, tx_cap=tx_cap)
    for block in block_list[1:]:
        try:
            apply_block(state, block, registry)
        except InvalidBlockError as exc:
            raise InvalidChainError(block.number, exc.report.rule or "invalid", exc.report.detail) from exc
    return state


# ---------------------------------------------------------------------------
# Chain export: one JSON object per line, digests and addresses in hex
# ---------------------------------------------------------------------------

def block_to_record(block: Block) -> dict:
    return {
        "number": block.number,
        "timestamp": block.timestamp,
        "prev_hash": block.prev_hash.hex(),
        "transactions": [
            {
                "from": tx.sender.hex(),
                "to": tx.recipient.hex(),
                "amount": tx.amount,
                "nonce": tx.nonce,
                "tag": tx.auth_tag.hex(),
            }
            for tx in block.transactions
        ],
        "winner": block.winner.hex(),
        "params": {
            "work_seed": block.sim_params.work_seed,
            "n_events": block.sim_params.n_events,
            "beam_energy": block.sim_params.beam_energy,
            "energy_cut": block.sim_params.energy_cut,
            "n_layers": block.sim_params.n_layers,
            "configs": [
                {"index": c.index, "smear_sigma": c.smear_sigma, "split_scale": c.split_scale}
                for c in block.sim_params.configs
            ],
        },
        "data_hash": block.sim_data_hash.hex(),
    }


def block_from_record(record: dict) -> Block:
    p = record["params"]
    params = SimulationParameters(
        work_seed=p["work_seed"],
        n_events=p["n_events"],
        beam_energy=p["beam_energy"],
        energy_cut=p["energy_cut"],
        n_layers=p["n_layers"],
        configs=tuple(
            ConfigFlag(c["index"], c["smear_sigma"], c["split_scale"]) for c in p["configs"]
        ),
    )
    return Block(
        number=record["number"],
        timestamp=record["timestamp"],
        prev_hash=bytes.fromhex(record["prev_hash"]),
        transactions=tuple(
            Transaction(
                sender=bytes.fromhex(t["from"]),
                recipient=bytes.fromhex(t["to"]),
                amount=t["amount"],
                nonce=t["nonce"],
                auth_tag=bytes.fromhex(t["tag"]),
            )
            for t in record["transactions"]
        ),
        winner=bytes.fromhex(record["winner"]),
        sim_params=params,
        sim_data_hash=bytes.fromhex(record["data_hash"]),
    )


def chain_lines(blocks: Iterable[Block]) -> str:
    return "".join(
        json.dumps(block_to_record(b), sort_keys=True, separators=(",", ":")) + "\n" for b in blocks
    )


def export_chain(blocks: Iterable[Block], path: str | Path) -> None:
    Path(path).write_text(chain_lines(blocks), encoding="utf-8")


def import_chain(path: str | Path) -> list[Block]:
    blocks = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line:
            blocks.append(block_from_record(json.loads(line)))
    return blocks
