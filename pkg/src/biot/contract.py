"""The BIoT smart contract as an access-controlled state machine.

Five functions, each keyed by a fixed function-name token:

==========================  ============================================
token                        canonical arguments (length-prefixed each)
==========================  ============================================
``deploy``                   (none)
``registerGateway``          gatewayAddr (20 B)
``registerDevice``           deviceID (16 B), gatewayAddr (20 B)
``sendMessageToDevice``      deviceID (16 B), message, encoding (1 B)
``sendResponseFromDevice``   deviceID (16 B), message, encoding (1 B)
``getMessagesFromDevice``    deviceID (16 B), afterSequence (u64)
==========================  ============================================

``encoding`` tells the gas meter what the message is: the payload itself
(``FULL``), a 32-byte payload digest (``DIGEST``) or a 32-byte Merkle window
root (``ROOT``). Only ``getMessagesFromDevice`` is read-only.

Every mutating function validates completely before touching state, so a
rejected call never leaves a partial write behind.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from enum import Enum, IntEnum

from biot import codec
from biot.economics import GasSchedule, Scheme, gas_for_payload
from biot.errors import (
    AlreadyDeployed,
    BadArguments,
    ContractError,
    NotDeployed,
    PayloadTooLarge,
    Unauthorized,
    UnknownDevice,
    UnknownFunction,
    UnknownGateway,
)
from biot.ledger import Address

DEPLOY = "deploy"
REGISTER_GATEWAY = "registerGateway"
REGISTER_DEVICE = "registerDevice"
SEND_MESSAGE = "sendMessageToDevice"
SEND_RESPONSE = "sendResponseFromDevice"
GET_MESSAGES = "getMessagesFromDevice"

MESSAGE_SENT = "messageSentToDevice"
RESPONSE_SENT = "responseSentFromDevice"

DEFAULT_MAX_PAYLOAD = 4096
DIGEST_SIZE = 32


@dataclass(frozen=True, order=True)
class DeviceId:
    raw: bytes

    def __post_init__(self):
        if not isinstance(self.raw, bytes) or len(self.raw) != 16:
            raise ValueError("DeviceId must be exactly 16 bytes")

    @classmethod
    def from_label(cls, label: str) -> "DeviceId":
        return cls(hashlib.sha256(b"device:" + label.encode()).digest()[:16])

    @classmethod
    def from_hex(cls, text: str) -> "DeviceId":
        return cls(bytes.fromhex(text.removeprefix("0x")))

    def hex(self) -> str:
        return self.raw.hex()

    def __str__(self) -> str:
        return self.raw.hex()


class Role(str, Enum):
    ADMINISTRATOR = "Administrator"
    GATEWAY = "Gateway"
    CLIENT = "Client"


@dataclass(frozen=True)
class CallerContext:
    caller: Address
    role: Role


class Encoding(IntEnum):
    FULL = 0
    DIGEST = 1
    ROOT = 2


@dataclass
class ContractState:
    admin: Address | None = None
    gateways: set[Address] = field(default_factory=set)
    device_owner: dict[DeviceId, Address] = field(default_factory=dict)
    inbox: dict[DeviceId, list[tuple[int, bytes]]] = field(default_factory=dict)
    outbox: dict[DeviceId, list[tuple[int, bytes]]] = field(default_factory=dict)

    def serialize(self) -> bytes:
        out = [codec.lp(self.admin.raw if self.admin else b"")]
        out.append(codec.u64(len(self.gateways)))
        out.extend(g.raw for g in sorted(self.gateways))
        out.append(codec.u64(len(self.device_owner)))
        for dev in sorted(self.device_owner):
            out.append(dev.raw + self.device_owner[dev].raw)
        for box in (self.inbox, self.outbox):
            out.append(codec.u64(len(box)))
            for dev in sorted(box):
                out.append(dev.raw + codec.u64(len(box[dev])))
                for seq, payload in box[dev]:
                    out.append(codec.u64(seq) + codec.lp(payload))
        return b"".join(out)

    def digest(self) -> bytes:
        return hashlib.sha256(self.serialize()).digest()


# (event name, device, payload, sequence)
Emitted = tuple[str, DeviceId, bytes, int]


def encode_messages(entries: list[tuple[int, bytes]]) -> bytes:
    return struct.pack(">I", len(entries)) + b"".join(codec.u64(s) + codec.lp(p) for s, p in entries)


def decode_messages(data: bytes) -> list[tuple[int, bytes]]:
    r = codec.Reader(data)
    return [(r.u64(), r.lp()) for _ in range(r.u32())]


# Call builders: (function token, canonical argument bytes)

def call_deploy() -> tuple[str, bytes]:
    return DEPLOY, b""


def call_register_gateway(gateway: Address) -> tuple[str, bytes]:
    return REGISTER_GATEWAY, codec.encode_args(gateway.raw)


def call_register_device(device: DeviceId, gateway: Address) -> tuple[str, bytes]:
    return REGISTER_DEVICE, codec.encode_args(device.raw, gateway.raw)


def call_send_message(device: DeviceId, message: bytes, encoding: Encoding = Encoding.FULL) -> tuple[str, bytes]:
    return SEND_MESSAGE, codec.encode_args(device.raw, message, bytes([encoding]))


def call_send_response(device: DeviceId, message: bytes, encoding: Encoding = Encoding.FULL) -> tuple[str, bytes]:
    return SEND_RESPONSE, codec.encode_args(device.raw, message, bytes([encoding]))


def call_get_messages(device: DeviceId, after_sequence: int = 0) -> tuple[str, bytes]:
    return GET_MESSAGES, codec.encode_args(device.raw, codec.u64(after_sequence))


def _device(arg: bytes) -> DeviceId:
    if len(arg) != 16:
        raise BadArguments("deviceID must be 16 bytes")
    return DeviceId(arg)


def _address(arg: bytes) -> Address:
    if len(arg) != 20:
        raise BadArguments("address must be 20 bytes")
    return Address(arg)


def _encoding(arg: bytes) -> Encoding:
    if len(arg) != 1 or arg[0] not in Encoding._value2member_map_:
        raise BadArguments("unknown message encoding")
    return Encoding(arg[0])


def _decode(args: bytes, n: int) -> list[bytes]:
    try:
        parts = codec.decode_args(args)
    except ValueError as exc:
        raise BadArguments(str(exc)) from None
    if len(parts) != n:
        raise BadArguments(f"expected {n} arguments, got {len(parts)}")
    return parts


class BIoTContract:
    """Contract logic plus its state. The ledger is the only intended writer."""

    READ_ONLY = frozenset({GET_MESSAGES})
    MUTATING = frozenset({DEPLOY, REGISTER_GATEWAY, REGISTER_DEVICE, SEND_MESSAGE, SEND_RESPONSE})

    def __init__(self, schedule: GasSchedule | None = None, max_payload: int = DEFAULT_MAX_PAYLOAD):
        self.schedule = schedule or GasSchedule()
        self.max_payload = max_payload
        self.state = ContractState()

    @property
    def deployed(self) -> bool:
        return self.state.admin is not None

    def context_for(self, caller: Address) -> CallerContext:
        if caller == self.state.admin:
            role = Role.ADMINISTRATOR
        elif caller in self.state.gateways:
            role = Role.GATEWAY
        else:
            role = Role.CLIENT
        return CallerContext(caller, role)

    # -- metering ---------------------------------------------------------

    def gas_for(self, function: str, args: bytes) -> int:
        """Gas of a successful call. Undecodable calls are priced as reverts."""
        s = self.schedule
        if function == DEPLOY:
            return s.deploy_gas
        if function == REGISTER_GATEWAY:
            return s.register_gateway_gas
        if function == REGISTER_DEVICE:
            return s.register_device_gas
        if function in (SEND_MESSAGE, SEND_RESPONSE):
            try:
                _, message, enc = _decode(args, 3)
                enc = _encoding(enc)
            except ContractError:
                return s.revert_gas
            if enc is Encoding.FULL:
                return gas_for_payload(s, Scheme.FULL_ON_CHAIN, len(message))
            return s.digest_anchor_gas
        return s.revert_gas

    # -- dispatch ---------------------------------------------------------

    def execute(self, sender: Address, function: str, args: bytes) -> list[Emitted]:
        """Run a mutating call; raises a ContractError subclass on rejection."""
        if function == DEPLOY:
            _decode(args, 0)
            return self.deploy(sender)
        if function in self.READ_ONLY:
            raise BadArguments(f"{function} is read-only")
        if function not in self.MUTATING:
            raise UnknownFunction(function)
        if not self.deployed:
            raise NotDeployed("contract has not been deployed")
        ctx = self.context_for(sender)
        if function == REGISTER_GATEWAY:
            (gw,) = _decode(args, 1)
            self.register_gateway(ctx, _address(gw))
            return []
        if function == REGISTER_DEVICE:
            dev, gw = _decode(args, 2)
            self.register_device(ctx, _device(dev), _address(gw))
            return []
        dev, message, enc = _decode(args, 3)
        if function == SEND_MESSAGE:
            return self.send_message_to_device(ctx, _device(dev), message, _encoding(enc))
        return self.send_response_from_device(ctx, _device(dev), message, _encoding(enc))

    def query(self, sender: Address | None, function: str, args: bytes) -> bytes:
        if function != GET_MESSAGES:
            raise UnknownFunction(function)
        if not self.deployed:
            raise NotDeployed("contract has not been deployed")
        dev, after = _decode(args, 2)
        if len(after) != 8:
            raise BadArguments("afterSequence must be a u64")
        ctx = self.context_for(sender) if sender is not None else None
        entries = self.get_messages_from_device(ctx, _device(dev), int.from_bytes(after, "big"))
        return encode_messages(entries)

    # -- the five functions ----------------------------------------------

    def deploy(self, sender: Address) -> list[Emitted]:
        if self.deployed:
            raise AlreadyDeployed("contract already deployed")
        self.state.admin = sender
        return []

    def register_gateway(self, ctx: CallerContext, gateway_addr: Address) -> None:
        if ctx.role is not Role.ADMINISTRATOR:
            raise Unauthorized("only the administrator can register gateways")
        self.state.gateways.add(gateway_addr)

    def register_device(self, ctx: CallerContext, device_id: DeviceId, gateway_addr: Address) -> None:
        if ctx.role is not Role.ADMINISTRATOR:
            raise Unauthorized("only the administrator can register devices")
        if gateway_addr not in self.state.gateways:
            raise UnknownGateway(str(gateway_addr))
        self.state.device_owner[device_id] = gateway_addr

    def _check_message(self, message: bytes, encoding: Encoding) -> None:
        if encoding is Encoding.FULL:
            if len(message) > self.max_payload:
                raise PayloadTooLarge(f"{len(message)} > {self.max_payload} bytes")
        elif len(message) != DIGEST_SIZE:
            raise BadArguments("digest and root messages are 32 bytes")

    @staticmethod
    def _append(box: dict, device_id: DeviceId, message: bytes) -> int:
        entries = box.setdefault(device_id, [])
        seq = len(entries) + 1
        entries.append((seq, message))
        return seq

    def send_message_to_device(self, ctx: CallerContext, device_id: DeviceId, message: bytes,
                               encoding: Encoding = Encoding.FULL) -> list[Emitted]:
        # any caller may send, but only to a registered device
        if device_id not in self.state.device_owner:
            raise UnknownDevice(device_id.hex())
        self._check_message(message, encoding)
        seq = self._append(self.state.outbox, device_id, message)
        return [(MESSAGE_SENT, device_id, message, seq)]

    def send_response_from_device(self, ctx: CallerContext, device_id: DeviceId, message: bytes,
                                  encoding: Encoding = Encoding.FULL) -> list[Emitted]:
        owner = self.state.device_owner.get(device_id)
        if owner is None:
            raise UnknownDevice(device_id.hex())
        if ctx.caller != owner:
            raise Unauthorized("only the device's gateway can store its responses")
        self._check_message(message, encoding)
        seq = self._append(self.state.inbox, device_id, message)
        return [(RESPONSE_SENT, device_id, message, seq)]

    def get_messages_from_device(self, ctx: CallerContext | None, device_id: DeviceId,
                                 after_sequence: int = 0) -> list[tuple[int, bytes]]:
        if device_id not in self.state.device_owner:
            raise UnknownDevice(device_id.hex())
        entries = self.state.inbox.get(device_id, [])
        # sequences are 1..n without gaps, so the cursor is also a list offset
        return list(entries[after_sequence:])
