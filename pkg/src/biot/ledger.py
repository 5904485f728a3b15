"""Deterministic simulated ledger.

Blocks are produced at a fixed interval on a virtual clock that the caller
drives. A transaction submitted at time ``t`` is included in the first block
whose timestamp is strictly greater than ``t``. Transactions in a block run in
submission order against the hosted contract; gas comes from the contract's
gas schedule. A rejected call is recorded as ``Reverted``, still pays the
revert gas, and emits nothing.

Persistence is an append-only record file: for each block a 4-byte big-endian
length followed by the block's canonical serialization (see
:meth:`Block.serialize`).
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Iterator

from biot import codec
from biot.errors import BIoTError, ClockRegression, ContractError, LedgerCorrupt, LedgerError, NotReadOnly, UnknownSender

ZERO_DIGEST = bytes(32)


@dataclass(frozen=True, order=True)
class Address:
    raw: bytes

    def __post_init__(self):
        if not isinstance(self.raw, bytes) or len(self.raw) != 20:
            raise ValueError("Address must be exactly 20 bytes")

    @classmethod
    def from_label(cls, label: str) -> "Address":
        """Deterministic account address for a human-readable name."""
        return cls(hashlib.sha256(b"account:" + label.encode()).digest()[:20])

    @classmethod
    def from_hex(cls, text: str) -> "Address":
        return cls(bytes.fromhex(text.lower().removeprefix("0x")))

    def __str__(self) -> str:
        return "0x" + self.raw.hex()

    def __repr__(self) -> str:
        return f"Address({self})"


class TxStatus(str, Enum):
    PENDING = "Pending"
    INCLUDED = "Included"
    REVERTED = "Reverted"


_STATUS_CODE = {TxStatus.PENDING: 0, TxStatus.INCLUDED: 1, TxStatus.REVERTED: 2}
_CODE_STATUS = {v: k for k, v in _STATUS_CODE.items()}


@dataclass
class Transaction:
    sender: Address
    function: str
    args: bytes
    submitted_at: float
    gas_used: int = 0
    status: TxStatus = TxStatus.PENDING
    nonce: int = -1
    block_index: int | None = None
    error: str | None = None

    def serialize(self) -> bytes:
        return b"".join([
            self.sender.raw,
            codec.lp(self.function.encode()),
            codec.lp(self.args),
            codec.u64(self.nonce),
            codec.i64(codec.time_ms(self.submitted_at)),
            codec.u64(self.gas_used),
            bytes([_STATUS_CODE[self.status]]),
            codec.lp((self.error or "").encode()),
        ])

    @classmethod
    def read(cls, r: codec.Reader, block_index: int | None = None) -> "Transaction":
        sender = Address(r.take(20))
        function = r.lp().decode()
        args = r.lp()
        nonce = r.u64()
        submitted = r.i64() / 1000
        gas = r.u64()
        status = _CODE_STATUS[r.u8()]
        error = r.lp().decode() or None
        return cls(sender, function, args, submitted, gas, status, nonce, block_index, error)

    def to_dict(self) -> dict:
        return {
            "nonce": self.nonce,
            "sender": str(self.sender),
            "function": self.function,
            "args": self.args.hex(),
            "submitted_at": self.submitted_at,
            "gas_used": self.gas_used,
            "status": self.status.value,
            "block_index": self.block_index,
            "error": self.error,
        }


@dataclass
class Block:
    index: int
    timestamp: float
    parent_digest: bytes
    transactions: list[Transaction]
    digest: bytes = b""

    def body(self) -> bytes:
        parts = [self.parent_digest, codec.u64(self.index), codec.i64(codec.time_ms(self.timestamp)),
                 codec.u64(len(self.transactions))]
        parts.extend(codec.lp(tx.serialize()) for tx in self.transactions)
        return b"".join(parts)

    def compute_digest(self) -> bytes:
        return hashlib.sha256(self.body()).digest()

    def serialize(self) -> bytes:
        return self.body() + self.digest

    @classmethod
    def deserialize(cls, data: bytes) -> "Block":
        r = codec.Reader(data)
        parent = r.take(32)
        index = r.u64()
        ts = r.i64() / 1000
        txs = [Transaction.read(codec.Reader(r.lp()), index) for _ in range(r.u64())]
        digest = r.take(32)
        if not r.exhausted:
            raise LedgerCorrupt("trailing bytes in block record")
        return cls(index, ts, parent, txs, digest)

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "timestamp": self.timestamp,
            "parent_digest": self.parent_digest.hex(),
            "digest": self.digest.hex(),
            "transactions": [tx.to_dict() for tx in self.transactions],
        }


@dataclass(frozen=True)
class Event:
    name: str
    device_id: "object"  # contract.DeviceId
    payload: bytes
    block_index: int
    tx_nonce: int
    sequence: int
    timestamp: float

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "device_id": self.device_id.hex(),
            "payload": self.payload.hex(),
            "block_index": self.block_index,
            "tx_nonce": self.tx_nonce,
            "sequence": self.sequence,
            "timestamp": self.timestamp,
        }


@dataclass(frozen=True)
class LatencyModel:
    block_interval: float = 15
    confirmations: int = 1

    def __post_init__(self):
        if self.block_interval <= 0:
            raise ValueError("block_interval must be positive")
        if self.confirmations < 1:
            raise ValueError("confirmations must be >= 1")


class Receipt:
    """Handle returned by :meth:`Ledger.submit`; resolves once the transaction
    is included and has the configured number of confirmations."""

    def __init__(self, tx: Transaction, confirmations: int):
        self.tx = tx
        self.confirmations = confirmations
        self.resolved_at: float | None = None
        self._callbacks: list[Callable[["Receipt"], None]] = []

    @property
    def done(self) -> bool:
        return self.resolved_at is not None

    @property
    def status(self) -> TxStatus:
        return self.tx.status

    @property
    def gas_used(self) -> int:
        return self.tx.gas_used

    @property
    def block_index(self) -> int | None:
        return self.tx.block_index

    @property
    def wait(self) -> float | None:
        return None if self.resolved_at is None else self.resolved_at - self.tx.submitted_at

    def add_done_callback(self, fn: Callable[["Receipt"], None]) -> None:
        if self.done:
            fn(self)
        else:
            self._callbacks.append(fn)

    def _resolve(self, at: float) -> None:
        self.resolved_at = at
        callbacks, self._callbacks = self._callbacks, []
        for fn in callbacks:
            fn(self)


class Subscription:
    def __init__(self, name: str, device_id=None, callback: Callable[[Event], None] | None = None):
        self.name = name
        self.device_id = device_id
        self.callback = callback
        self.events: list[Event] = []
        self.active = True

    def matches(self, event: Event) -> bool:
        return self.active and event.name == self.name and (
            self.device_id is None or event.device_id == self.device_id)

    def __iter__(self) -> Iterator[Event]:
        return iter(self.events)

    def unsubscribe(self) -> None:
        self.active = False


class Ledger:
    def __init__(self, contract=None, latency: LatencyModel | None = None, genesis_time: float = 0):
        if contract is None:
            from biot.contract import BIoTContract
            contract = BIoTContract()
        self.contract = contract
        self.latency = latency or LatencyModel()
        self.accounts: set[Address] = set()
        self.blocks: list[Block] = [self._genesis(genesis_time)]
        self.events: list[Event] = []
        self._pending: list[tuple[Transaction, Receipt]] = []
        self._awaiting: list[Receipt] = []
        self._subscriptions: list[Subscription] = []
        self._nonce = 0
        self._lock = threading.RLock()

    @staticmethod
    def _genesis(t: float) -> Block:
        block = Block(0, t, ZERO_DIGEST, [])
        block.digest = block.compute_digest()
        return block

    # -- accounts & submission -------------------------------------------

    def create_account(self, who: str | Address) -> Address:
        addr = who if isinstance(who, Address) else Address.from_label(who)
        with self._lock:
            self.accounts.add(addr)
        return addr

    def submit(self, tx: Transaction) -> Receipt:
        if tx.status is not TxStatus.PENDING:
            raise LedgerError("only pending transactions can be submitted")
        with self._lock:
            if tx.sender not in self.accounts:
                raise UnknownSender(str(tx.sender))
            tx.nonce = self._nonce
            self._nonce += 1
            receipt = Receipt(tx, self.latency.confirmations)
            self._pending.append((tx, receipt))
            return receipt

    def submit_call(self, sender: Address, call: tuple[str, bytes], now: float) -> Receipt:
        function, args = call
        return self.submit(Transaction(sender, function, args, now))

    @property
    def pending(self) -> list[Transaction]:
        with self._lock:
            return [tx for tx, _ in self._pending]

    @property
    def head(self) -> Block:
        return self.blocks[-1]

    @property
    def next_block_time(self) -> float:
        return self.head.timestamp + self.latency.block_interval

    @property
    def settled(self) -> bool:
        """No queued transactions and every receipt resolved."""
        with self._lock:
            return not self._pending and not self._awaiting

    # -- block production ------------------------------------------------

    def produce_block(self, now: float) -> Block:
        with self._lock:
            if now <= self.head.timestamp:
                raise ClockRegression(f"block time {now} <= previous {self.head.timestamp}")
            if now != self.next_block_time:
                raise LedgerError(f"block time {now} is not previous + {self.latency.block_interval}")

            # strictly-after rule: anything submitted at `now` waits for the next block
            ready = [(tx, r) for tx, r in self._pending if tx.submitted_at < now]
            self._pending = [(tx, r) for tx, r in self._pending if tx.submitted_at >= now]

            index = self.head.index + 1
            emitted: list[Event] = []
            for tx, receipt in ready:
                emitted.extend(self._execute(tx, index, now))
                self._awaiting.append(receipt)

            block = Block(index, now, self.head.digest, [tx for tx, _ in ready])
            block.digest = block.compute_digest()
            self.blocks.append(block)
            self.events.extend(emitted)

            resolved = [r for r in self._awaiting if index - r.tx.block_index + 1 >= r.confirmations]
            self._awaiting = [r for r in self._awaiting if r not in resolved]

        for event in emitted:
            for sub in list(self._subscriptions):
                if sub.matches(event):
                    sub.events.append(event)
                    if sub.callback is not None:
                        sub.callback(event)
        for receipt in resolved:
            receipt._resolve(now)
        return block

    def _execute(self, tx: Transaction, index: int, now: float) -> list[Event]:
        contract = self.contract
        try:
            out = contract.execute(tx.sender, tx.function, tx.args)
        except ContractError as exc:
            tx.status = TxStatus.REVERTED
            tx.gas_used = contract.schedule.revert_gas
            tx.error = exc.code
            out = []
        else:
            tx.status = TxStatus.INCLUDED
            tx.gas_used = contract.gas_for(tx.function, tx.args)
        tx.block_index = index
        return [Event(name, dev, payload, index, tx.nonce, seq, now) for name, dev, payload, seq in out]

    def advance_to(self, t: float) -> list[Block]:
        """Produce every block due at or before ``t``."""
        out = []
        while self.next_block_time <= t:
            out.append(self.produce_block(self.next_block_time))
        return out

    def run_until_settled(self, max_blocks: int = 10_000) -> list[Block]:
        out = []
        while not self.settled:
            if len(out) >= max_blocks:
                raise LedgerError("ledger did not settle")
            out.append(self.produce_block(self.next_block_time))
        return out

    # -- reads -----------------------------------------------------------

    def call(self, function: str, args: bytes, sender: Address | None = None) -> bytes:
        """Read-only call: zero gas, no block, no event, no time advance."""
        if function not in self.contract.READ_ONLY:
            raise NotReadOnly(function)
        with self._lock:
            return self.contract.query(sender, function, args)

    def subscribe_events(self, name: str, device_id=None,
                         callback: Callable[[Event], None] | None = None) -> Subscription:
        sub = Subscription(name, device_id, callback)
        with self._lock:
            self._subscriptions.append(sub)
        return sub

    def state_digest(self) -> bytes:
        with self._lock:
            return self.contract.state.digest()

    @property
    def transactions(self) -> Iterator[Transaction]:
        for block in self.blocks:
            yield from block.transactions

    def find_transaction(self, nonce: int) -> Transaction | None:
        for tx in self.transactions:
            if tx.nonce == nonce:
                return tx
        return None

    def verify_chain(self) -> bool:
        return verify_chain(self.blocks)

    # -- persistence -----------------------------------------------------

    def save(self, path: str | Path) -> None:
        write_blocks(path, self.blocks)

    def export_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps([b.to_dict() for b in self.blocks], indent=1) + "\n")


def verify_chain(blocks: list[Block]) -> bool:
    prev = None
    for block in blocks:
        if block.compute_digest() != block.digest:
            return False
        if prev is None:
            if block.parent_digest != ZERO_DIGEST:
                return False
        elif block.parent_digest != prev.digest or block.index != prev.index + 1 \
                or block.timestamp <= prev.timestamp:
            return False
        prev = block
    return True


def write_blocks(path: str | Path, blocks: Iterable[Block]) -> None:
    with open(path, "wb") as fh:
        for block in blocks:
            fh.write(codec.lp(block.serialize()))


def append_block(path: str | Path, block: Block) -> None:
    with open(path, "ab") as fh:
        fh.write(codec.lp(block.serialize()))


def read_blocks(path: str | Path) -> list[Block]:
    data = Path(path).read_bytes()
    r = codec.Reader(data)
    blocks = []
    try:
        while not r.exhausted:
            blocks.append(Block.deserialize(r.lp()))
    except (ValueError, KeyError) as exc:
        raise LedgerCorrupt(f"{path}: {exc}") from None
    if not verify_chain(blocks):
        raise LedgerCorrupt(f"{path}: chain does not verify")
    return blocks


def replay(blocks: list[Block], contract=None, latency: LatencyModel | None = None) -> Ledger:
    """Re-execute a persisted submission log on a fresh contract.

    The returned ledger reproduces every block digest only if execution is
    deterministic; callers compare digests to check that.
    """
    if not blocks:
        raise LedgerError("nothing to replay")
    if latency is None:
        interval = blocks[1].timestamp - blocks[0].timestamp if len(blocks) > 1 else 15
        latency = LatencyModel(interval)
    ledger = Ledger(contract, latency, genesis_time=blocks[0].timestamp)
    logged = sorted((tx for b in blocks for tx in b.transactions), key=lambda tx: tx.nonce)
    for tx in logged:
        ledger.create_account(tx.sender)
        ledger.submit(Transaction(tx.sender, tx.function, tx.args, tx.submitted_at))
    try:
        ledger.advance_to(blocks[-1].timestamp)
    except BIoTError as exc:
        raise LedgerCorrupt(f"replay diverged: {exc}") from None
    return ledger
