"""Storage schemes for device data: full on-chain, digest anchoring and
windowed Merkle trees.

Merkle convention
-----------------
* leaf digest  = SHA-256(0x00 || payload)
* inner node   = SHA-256(0x01 || left || right)
* an unpaired node at the end of a level is promoted unchanged

A window's root is anchored through ``sendResponseFromDevice`` with the
``ROOT`` encoding. Window ids count up from 0 per device, so window ``k`` of a
device is the ``k``-th included root anchor for that device on the ledger.

Off-chain store file
--------------------
UTF-8 text, one tab-separated record per line, never rewritten::

    R <device hex> <sequence> <payload base64> <sha256(payload) hex>
    S <device hex> <sequence> <window id> <leaf index>

``R`` lines add a record, ``S`` lines seal an earlier record into a closed
window. Sequences are per device and start at 1.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable

from biot import contract as C
from biot.contract import DeviceId, Encoding
from biot.economics import Scheme
from biot.errors import EmptyWindow, IndexOutOfRange, MalformedProof, PayloadTooLarge, StoreUnavailable
from biot.ledger import Address, Block, Ledger, Receipt, TxStatus

LEAF_PREFIX = b"\x00"
NODE_PREFIX = b"\x01"


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def leaf_hash(payload: bytes) -> bytes:
    return sha256(LEAF_PREFIX + payload)


def node_hash(left: bytes, right: bytes) -> bytes:
    return sha256(NODE_PREFIX + left + right)


class Side(str, Enum):
    LEFT = "L"
    RIGHT = "R"


@dataclass(frozen=True)
class MerkleTree:
    levels: tuple[tuple[bytes, ...], ...]

    @property
    def leaves(self) -> tuple[bytes, ...]:
        return self.levels[0]

    @property
    def root(self) -> bytes:
        return self.levels[-1][0]

    def __len__(self) -> int:
        return len(self.levels[0])


def build_tree(leaves: Iterable[bytes]) -> MerkleTree:
    level = tuple(leaves)
    if not level:
        raise EmptyWindow("cannot build a tree without leaves")
    levels = [level]
    while len(level) > 1:
        nxt = [node_hash(level[i], level[i + 1]) for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            nxt.append(level[-1])
        level = tuple(nxt)
        levels.append(level)
    return MerkleTree(tuple(levels))


@dataclass
class InclusionProof:
    leaf_index: int
    siblings: list[tuple[bytes, Side]]
    window_id: int = 0
    device_id: DeviceId | None = None

    def to_dict(self) -> dict:
        return {
            "device_id": self.device_id.hex() if self.device_id else None,
            "window_id": self.window_id,
            "leaf_index": self.leaf_index,
            "siblings": [{"digest": d.hex(), "side": s.value} for d, s in self.siblings],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InclusionProof":
        try:
            siblings = []
            for s in d["siblings"]:
                digest = bytes.fromhex(s["digest"])
                if len(digest) != 32:
                    raise ValueError("sibling digest must be 32 bytes")
                siblings.append((digest, Side(s["side"])))
            dev = d.get("device_id")
            leaf_index, window_id = d["leaf_index"], d["window_id"]
            if not isinstance(leaf_index, int) or not isinstance(window_id, int) \
                    or leaf_index < 0 or window_id < 0:
                raise ValueError("indices must be non-negative integers")
            return cls(leaf_index, siblings, window_id, DeviceId.from_hex(dev) if dev else None)
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedProof(str(exc)) from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "InclusionProof":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise MalformedProof(str(exc)) from None
        if not isinstance(data, dict):
            raise MalformedProof("proof must be a JSON object")
        return cls.from_dict(data)


def prove_inclusion(tree: MerkleTree, leaf_index: int, window_id: int = 0,
                    device_id: DeviceId | None = None) -> InclusionProof:
    if not 0 <= leaf_index < len(tree):
        raise IndexOutOfRange(f"leaf {leaf_index} not in tree of {len(tree)}")
    siblings = []
    i = leaf_index
    for level in tree.levels[:-1]:
        if i % 2:
            siblings.append((level[i - 1], Side.LEFT))
        elif i + 1 < len(level):
            siblings.append((level[i + 1], Side.RIGHT))
        # else: promoted, no sibling at this level
        i //= 2
    return InclusionProof(leaf_index, siblings, window_id, device_id)


def fold_proof(leaf_digest: bytes, proof: InclusionProof) -> bytes:
    acc = leaf_digest
    for digest, side in proof.siblings:
        acc = node_hash(digest, acc) if side is Side.LEFT else node_hash(acc, digest)
    return acc


def verify_digest_inclusion(root: bytes, leaf_digest: bytes, proof: InclusionProof) -> bool:
    return fold_proof(leaf_digest, proof) == root


def verify_inclusion(root: bytes, payload: bytes, proof: InclusionProof) -> bool:
    return verify_digest_inclusion(root, leaf_hash(payload), proof)


def aggregate_roots(roots: Iterable[bytes]) -> bytes:
    """Meta-root over window roots (e.g. one per gateway).

    The roots are used as leaves directly, so ``build_tree(roots)`` gives the
    tree for proofs from a window root up to the meta-root.
    """
    return build_tree(roots).root


@dataclass(frozen=True)
class WindowPolicy:
    duration: float = 86_400
    max_leaves: int | None = None

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("window duration must be positive")
        if self.max_leaves is not None and self.max_leaves < 1:
            raise ValueError("max_leaves must be >= 1")


@dataclass
class OffchainRecord:
    device_id: DeviceId
    sequence: int
    payload: bytes
    digest: bytes
    window_id: int | None = None
    leaf_index: int | None = None

    @property
    def intact(self) -> bool:
        return sha256(self.payload) == self.digest


class OffchainStore:
    """Append-only record store with an in-memory index.

    ``path=None`` keeps everything in memory. Setting ``available = False``
    simulates an outage: every write raises :class:`StoreUnavailable`.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self.available = True
        self._records: dict[tuple[DeviceId, int], OffchainRecord] = {}
        self._by_digest: dict[bytes, OffchainRecord] = {}
        self._next_seq: dict[DeviceId, int] = {}
        if self.path is not None and self.path.exists():
            self._load()

    def _write(self, line: str) -> None:
        if not self.available:
            raise StoreUnavailable("off-chain store is unavailable")
        if self.path is None:
            return
        try:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")
        except OSError as exc:
            raise StoreUnavailable(str(exc)) from None

    def _load(self) -> None:
        for n, line in enumerate(self.path.read_text(encoding="utf-8").splitlines(), 1):
            parts = line.split("\t")
            if parts[0] == "R" and len(parts) == 5:
                rec = OffchainRecord(DeviceId.from_hex(parts[1]), int(parts[2]),
                                     base64.b64decode(parts[3]), bytes.fromhex(parts[4]))
                self._index(rec)
            elif parts[0] == "S" and len(parts) == 5:
                rec = self._records[(DeviceId.from_hex(parts[1]), int(parts[2]))]
                rec.window_id, rec.leaf_index = int(parts[3]), int(parts[4])
            else:
                raise ValueError(f"{self.path}:{n}: bad record line")

    def _index(self, rec: OffchainRecord) -> None:
        self._records[(rec.device_id, rec.sequence)] = rec
        self._by_digest.setdefault(rec.digest, rec)
        self._next_seq[rec.device_id] = max(self._next_seq.get(rec.device_id, 1), rec.sequence + 1)

    def put(self, device_id: DeviceId, payload: bytes) -> OffchainRecord:
        seq = self._next_seq.get(device_id, 1)
        rec = OffchainRecord(device_id, seq, payload, sha256(payload))
        self._write("\t".join(["R", device_id.hex(), str(seq),
                               base64.b64encode(payload).decode(), rec.digest.hex()]))
        self._index(rec)
        return rec

    def seal(self, rec: OffchainRecord, window_id: int, leaf_index: int) -> None:
        self._write("\t".join(["S", rec.device_id.hex(), str(rec.sequence), str(window_id), str(leaf_index)]))
        rec.window_id, rec.leaf_index = window_id, leaf_index

    def get(self, device_id: DeviceId, sequence: int) -> OffchainRecord | None:
        return self._records.get((device_id, sequence))

    def by_digest(self, digest: bytes) -> OffchainRecord | None:
        return self._by_digest.get(digest)

    def records(self, device_id: DeviceId | None = None) -> list[OffchainRecord]:
        return [r for (d, _), r in self._records.items() if device_id is None or d == device_id]

    def discard(self, records: Iterable[OffchainRecord]) -> None:
        """Forget records from the index, as if the holder had lost them."""
        for rec in records:
            self._records.pop((rec.device_id, rec.sequence), None)
            if self._by_digest.get(rec.digest) is rec:
                del self._by_digest[rec.digest]

    def __len__(self) -> int:
        return len(self._records)


@dataclass
class Window:
    window_id: int
    device_id: DeviceId
    opened_at: float
    records: list[OffchainRecord] = field(default_factory=list)

    def deadline(self, policy: WindowPolicy) -> float:
        return self.opened_at + policy.duration


@dataclass
class ClosedWindow:
    window_id: int
    device_id: DeviceId
    opened_at: float
    closed_at: float
    tree: MerkleTree
    receipt: Receipt


class Anchorer:
    """Anchoring front-end used by a gateway.

    ``direction`` picks the contract function for full-payload and digest
    anchors: ``sendMessageToDevice`` for data travelling to the device,
    ``sendResponseFromDevice`` for data coming from it.
    """

    def __init__(self, ledger: Ledger, sender: Address, store: OffchainStore | None = None,
                 scheme: Scheme = Scheme.MERKLE_TREE, policy: WindowPolicy | None = None):
        self.ledger = ledger
        self.sender = sender
        self.store = store if store is not None else OffchainStore()
        self.scheme = Scheme(scheme)
        self.policy = policy or WindowPolicy()
        self.windows: dict[DeviceId, Window] = {}
        self.closed: dict[tuple[DeviceId, int], ClosedWindow] = {}
        self._next_window: dict[DeviceId, int] = {}
        self.on_window_opened: Callable[[Window], None] | None = None

    @property
    def max_payload(self) -> int:
        return getattr(self.ledger.contract, "max_payload", C.DEFAULT_MAX_PAYLOAD)

    def _submit(self, call, now: float) -> Receipt:
        return self.ledger.submit_call(self.sender, call, now)

    @staticmethod
    def _call(direction: str, device_id: DeviceId, message: bytes, encoding: Encoding):
        if direction == C.SEND_MESSAGE:
            return C.call_send_message(device_id, message, encoding)
        if direction == C.SEND_RESPONSE:
            return C.call_send_response(device_id, message, encoding)
        raise ValueError(f"unknown direction {direction!r}")

    def anchor_full_on_chain(self, device_id: DeviceId, payload: bytes, now: float,
                             direction: str = C.SEND_RESPONSE) -> Receipt:
        if len(payload) > self.max_payload:
            raise PayloadTooLarge(f"{len(payload)} > {self.max_payload} bytes")
        return self._submit(self._call(direction, device_id, payload, Encoding.FULL), now)

    def anchor_digest(self, device_id: DeviceId, payload: bytes, now: float,
                      direction: str = C.SEND_RESPONSE) -> tuple[Receipt, OffchainRecord]:
        rec = self.store.put(device_id, payload)  # raises before anything is submitted
        receipt = self._submit(self._call(direction, device_id, rec.digest, Encoding.DIGEST), now)
        return receipt, rec

    def append_to_window(self, device_id: DeviceId, payload: bytes, now: float) -> OffchainRecord:
        window = self.windows.get(device_id)
        if window is not None and now >= window.deadline(self.policy):
            self.close_window(device_id, now)
            window = None
        rec = self.store.put(device_id, payload)
        if window is None:
            wid = self._next_window.get(device_id, 0)
            self._next_window[device_id] = wid + 1
            window = self.windows[device_id] = Window(wid, device_id, now)
            if self.on_window_opened is not None:
                self.on_window_opened(window)
        window.records.append(rec)
        if self.policy.max_leaves is not None and len(window.records) >= self.policy.max_leaves:
            self.close_window(device_id, now)
        return rec

    def close_window(self, device_id: DeviceId, now: float) -> tuple[MerkleTree, Receipt]:
        window = self.windows.get(device_id)
        if window is None or not window.records:
            raise EmptyWindow("no open window with leaves")
        tree = build_tree(leaf_hash(r.payload) for r in window.records)
        receipt = self._submit(C.call_send_response(device_id, tree.root, Encoding.ROOT), now)
        for i, rec in enumerate(window.records):
            self.store.seal(rec, window.window_id, i)
        del self.windows[device_id]
        self.closed[(device_id, window.window_id)] = ClosedWindow(
            window.window_id, device_id, window.opened_at, now, tree, receipt)
        return tree, receipt

    def close_expired(self, now: float) -> list[tuple[MerkleTree, Receipt]]:
        due = [d for d, w in sorted(self.windows.items()) if now >= w.deadline(self.policy)]
        return [self.close_window(d, now) for d in due]

    def close_all(self, now: float) -> list[tuple[MerkleTree, Receipt]]:
        return [self.close_window(d, now) for d in sorted(self.windows) if self.windows[d].records]

    def anchor(self, device_id: DeviceId, payload: bytes, now: float,
               direction: str = C.SEND_RESPONSE) -> Receipt | None:
        """Anchor per the active scheme. Merkle appends return ``None``:
        nothing reaches the chain until the window closes."""
        if self.scheme is Scheme.FULL_ON_CHAIN:
            return self.anchor_full_on_chain(device_id, payload, now, direction)
        if self.scheme is Scheme.DATA_HASHING:
            return self.anchor_digest(device_id, payload, now, direction)[0]
        self.append_to_window(device_id, payload, now)
        return None

    def proof_for(self, device_id: DeviceId, sequence: int) -> InclusionProof:
        rec = self.store.get(device_id, sequence)
        if rec is None or rec.window_id is None:
            raise IndexOutOfRange(f"record {sequence} is not in a closed window")
        tree = self.closed[(device_id, rec.window_id)].tree
        return prove_inclusion(tree, rec.leaf_index, rec.window_id, device_id)


def anchored_roots(blocks: Iterable[Block], device_id: DeviceId) -> list[bytes]:
    """Window roots anchored for ``device_id``, in window-id order."""
    from biot.codec import decode_args

    roots = []
    for block in blocks:
        for tx in block.transactions:
            if tx.function != C.SEND_RESPONSE or tx.status is not TxStatus.INCLUDED:
                continue
            dev, message, enc = decode_args(tx.args)
            if dev == device_id.raw and enc == bytes([Encoding.ROOT]):
                roots.append(message)
    return roots


def anchored_root(blocks: Iterable[Block], device_id: DeviceId, window_id: int) -> bytes | None:
    roots = anchored_roots(blocks, device_id)
    return roots[window_id] if 0 <= window_id < len(roots) else None
