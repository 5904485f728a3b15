"""Simulated IoT devices: a refrigerated container and a smart light.

Frame layouts (all big-endian, all exactly 24 bytes)::

    telemetry   0..15 device id | 16..19 u32 timestamp (s) | 20..21 i16 temperature
                (centi-degrees C) | 22..23 u16 sequence (wraps at 65536)
    command     0..15 device id | 16 u8 opcode | 17..23 zero padding
    response    0..15 device id | 16 u8 opcode echoed | 17 u8 light state (0 off, 1 on)
                | 18..23 zero padding

Opcodes: 1 ON, 2 OFF, 3 TOGGLE, 4 STATUS.

The 16-byte device id prefix duplicates the ``deviceID`` argument of the
contract call, so only the trailing 8 data bytes (:func:`frame_body`) go on
chain when a frame is stored as-is.
"""

from __future__ import annotations

import csv
import hashlib
import io
import random
import struct
from dataclasses import dataclass
from enum import IntEnum

from biot.contract import DeviceId
from biot.errors import MalformedFrame

FRAME_SIZE = 24
ID_SIZE = 16

_TELEMETRY = struct.Struct(">16sIhH")
_COMMAND = struct.Struct(">16sB7x")
_RESPONSE = struct.Struct(">16sBB6x")

TEMP_MIN = -3000
TEMP_MAX = 3000
TEMP_STEP = 10


def frame_body(frame: bytes) -> bytes:
    return frame[ID_SIZE:]


def frame_from_body(device_id: DeviceId, body: bytes) -> bytes:
    return device_id.raw + body


def fingerprint(label: str) -> bytes:
    """Stand-in for a certificate fingerprint: 32 opaque bytes."""
    return hashlib.sha256(b"cert:" + label.encode()).digest()


@dataclass(frozen=True)
class TelemetryFrame:
    device_id: DeviceId
    timestamp: int
    temperature: int  # centi-degrees Celsius
    sequence: int

    def encode(self) -> bytes:
        return _TELEMETRY.pack(self.device_id.raw, self.timestamp & 0xFFFFFFFF,
                               self.temperature, self.sequence & 0xFFFF)

    @classmethod
    def decode(cls, frame: bytes) -> "TelemetryFrame":
        if len(frame) != FRAME_SIZE:
            raise MalformedFrame(f"telemetry frame is {len(frame)} bytes, expected {FRAME_SIZE}")
        dev, ts, temp, seq = _TELEMETRY.unpack(frame)
        return cls(DeviceId(dev), ts, temp, seq)


class Opcode(IntEnum):
    ON = 1
    OFF = 2
    TOGGLE = 3
    STATUS = 4


@dataclass(frozen=True)
class LightCommand:
    opcode: Opcode
    device_id: DeviceId

    def encode(self) -> bytes:
        return _COMMAND.pack(self.device_id.raw, self.opcode)

    @classmethod
    def decode(cls, frame: bytes) -> "LightCommand":
        if len(frame) != FRAME_SIZE:
            raise MalformedFrame(f"command frame is {len(frame)} bytes, expected {FRAME_SIZE}")
        dev, op = _COMMAND.unpack(frame)
        if op not in Opcode._value2member_map_:
            raise MalformedFrame(f"unknown opcode {op}")
        return cls(Opcode(op), DeviceId(dev))


@dataclass(frozen=True)
class LightResponse:
    opcode: Opcode
    device_id: DeviceId
    state: bool

    def encode(self) -> bytes:
        return _RESPONSE.pack(self.device_id.raw, self.opcode, int(self.state))

    @classmethod
    def decode(cls, frame: bytes) -> "LightResponse":
        if len(frame) != FRAME_SIZE:
            raise MalformedFrame(f"response frame is {len(frame)} bytes, expected {FRAME_SIZE}")
        dev, op, state = _RESPONSE.unpack(frame)
        if op not in Opcode._value2member_map_ or state > 1:
            raise MalformedFrame("bad response frame")
        return cls(Opcode(op), DeviceId(dev), bool(state))


def light_handle_command(cmd: LightCommand | bytes, state: bool) -> tuple[bool, bytes]:
    """Apply one command to a light in ``state``; returns (new state, response frame)."""
    if isinstance(cmd, (bytes, bytearray)):
        cmd = LightCommand.decode(bytes(cmd))
    if cmd.opcode is Opcode.ON:
        new = True
    elif cmd.opcode is Opcode.OFF:
        new = False
    elif cmd.opcode is Opcode.TOGGLE:
        new = not state
    else:
        new = state
    return new, LightResponse(cmd.opcode, cmd.device_id, new).encode()


class TemperatureProcess:
    """Seeded random walk in centi-degrees: +-0.1 C per step, clamped to +-30 C."""

    def __init__(self, seed, setpoint: int = -1800):
        self.rng = random.Random(seed)
        self.value = max(TEMP_MIN, min(TEMP_MAX, setpoint))

    def step(self) -> int:
        self.value += TEMP_STEP if self.rng.random() < 0.5 else -TEMP_STEP
        self.value = max(TEMP_MIN, min(TEMP_MAX, self.value))
        return self.value


class Device:
    """Common device plumbing: identity, pinned gateway fingerprint, link
    state and a frame trace."""

    def __init__(self, device_id: DeviceId, pinned_gateway: bytes, device_fingerprint: bytes):
        self.device_id = device_id
        self.pinned_gateway = pinned_gateway
        self.fingerprint = device_fingerprint
        self.online = True
        self.trace: list[tuple[float, str, bytes]] = []

    def accepts_gateway(self, presented: bytes) -> bool:
        return presented == self.pinned_gateway

    def receive(self, frame: bytes, now: float) -> bytes | None:
        """Transport entry point; ``None`` means the frame was dropped."""
        if not self.online:
            return None
        self.trace.append((now, "in", frame))
        reply = self.handle_frame(frame, now)
        if reply is not None:
            self.trace.append((now, "out", reply))
        return reply

    def handle_frame(self, frame: bytes, now: float) -> bytes | None:
        raise NotImplementedError

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "direction", "frame_hex"])
        for t, direction, frame in self.trace:
            w.writerow([t, direction, frame.hex()])
        return buf.getvalue()


class RefrigeratedContainer(Device):
    """Unidirectional telemetry source; one frame per tick."""

    def __init__(self, device_id: DeviceId, pinned_gateway: bytes, device_fingerprint: bytes,
                 seed=0, setpoint: int = -1800):
        super().__init__(device_id, pinned_gateway, device_fingerprint)
        self.process = TemperatureProcess(seed, setpoint)
        self.sequence = 0

    def tick(self, now: float) -> TelemetryFrame:
        frame = TelemetryFrame(self.device_id, int(now), self.process.step(), self.sequence & 0xFFFF)
        self.sequence = (self.sequence + 1) & 0xFFFF
        return frame

    def emit(self, now: float) -> bytes:
        """Produce and trace the frame for a scheduled tick."""
        frame = self.tick(now).encode()
        self.trace.append((now, "out", frame))
        return frame

    def handle_frame(self, frame: bytes, now: float) -> bytes | None:
        # any inbound frame is a poll
        return self.tick(now).encode()


class SmartLight(Device):
    def __init__(self, device_id: DeviceId, pinned_gateway: bytes, device_fingerprint: bytes,
                 state: bool = False):
        super().__init__(device_id, pinned_gateway, device_fingerprint)
        self.state = state
        self.history: list[bool] = []

    def handle_frame(self, frame: bytes, now: float) -> bytes | None:
        self.state, reply = light_handle_command(frame, self.state)
        self.history.append(self.state)
        return reply


def command_schedule(seed, count: int = 20, duration: float = 86_400, slot: float = 60) -> list[float]:
    """``count`` distinct, sorted command times drawn from a grid of ``slot``
    seconds within ``[0, duration)``."""
    slots = int(duration // slot)
    if count > slots:
        raise ValueError(f"cannot place {count} commands in {slots} slots")
    rng = random.Random(seed)
    return sorted(s * slot for s in rng.sample(range(slots), count))


def light_opcodes(count: int) -> list[Opcode]:
    """Alternating ON/OFF, starting with ON."""
    return [Opcode.ON if i % 2 == 0 else Opcode.OFF for i in range(count)]
