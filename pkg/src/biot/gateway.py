"""BIoT Gateway: bridges clients, the ledger and authenticated device channels.

Two message flows are supported:

* CBG (client -> blockchain -> gateway): the client's command lands on chain
  first; the gateway picks it up from the ``messageSentToDevice`` event,
  forwards it to the device and stores the reply through
  ``sendResponseFromDevice``.
* CGB (client -> gateway -> blockchain): the gateway forwards the command
  straight away and answers the client immediately. Anchoring of request and
  reply is optional and never delays the client.

On-chain messages carry frames without their 16-byte device-id prefix (the
contract call already names the device); the off-chain store keeps whole
frames.

Device links are in-process duplex channels guarded by a pinned-fingerprint
handshake. Every forwarded, anchored, ignored or failed message is appended to
``Gateway.log`` (written out as JSON lines).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from biot import contract as C
from biot.anchoring import Anchorer, OffchainStore, WindowPolicy
from biot.contract import DeviceId
from biot.devices import Device, frame_body, frame_from_body
from biot.economics import Scheme
from biot.errors import ChannelClosed, DeviceTimeout, PinningMismatch, UnknownDeviceFingerprint
from biot.ledger import Address, Event, Ledger, Receipt

DEFAULT_DEVICE_TIMEOUT = 5


class Configuration(str, Enum):
    CBG = "CBG"
    CGB = "CGB"


class ChannelState(str, Enum):
    CLOSED = "Closed"
    AUTHENTICATED = "Authenticated"


@dataclass
class GatewayConfig:
    address: Address
    configuration: Configuration = Configuration.CBG
    scheme: Scheme = Scheme.FULL_ON_CHAIN
    window_policy: WindowPolicy = WindowPolicy()
    anchor_optional: bool = True
    device_timeout: float = DEFAULT_DEVICE_TIMEOUT

    def __post_init__(self):
        self.configuration = Configuration(self.configuration)
        self.scheme = Scheme(self.scheme)


@dataclass
class DeviceChannel:
    device_id: DeviceId
    gateway_fingerprint: bytes
    device_fingerprint: bytes
    state: ChannelState = ChannelState.CLOSED
    frames: int = 0

    def close(self) -> None:
        self.state = ChannelState.CLOSED


class Gateway:
    def __init__(self, config: GatewayConfig, ledger: Ledger, fingerprint: bytes,
                 store: OffchainStore | None = None):
        self.config = config
        self.ledger = ledger
        self.fingerprint = fingerprint
        self.anchorer = Anchorer(ledger, config.address, store, config.scheme, config.window_policy)
        self.devices: dict[DeviceId, Device] = {}
        self.known_fingerprints: dict[DeviceId, bytes] = {}
        self.channels: dict[DeviceId, DeviceChannel] = {}
        self.log: list[dict] = []
        self.paused = False
        self._subscription = None

    @property
    def address(self) -> Address:
        return self.config.address

    @property
    def store(self) -> OffchainStore:
        return self.anchorer.store

    def _log(self, t: float, what: str, device_id: DeviceId, **extra) -> None:
        self.log.append({"t": t, "event": what, "device": device_id.hex(), **extra})

    # -- device channels -------------------------------------------------

    def provision(self, device: Device, device_fingerprint: bytes | None = None) -> None:
        """Record a device and the fingerprint its certificate must present."""
        self.devices[device.device_id] = device
        self.known_fingerprints[device.device_id] = device_fingerprint or device.fingerprint

    def open_device_channel(self, device_id: DeviceId, presented_gateway_fingerprint: bytes,
                            presented_device_fingerprint: bytes) -> DeviceChannel:
        device = self.devices.get(device_id)
        expected = self.known_fingerprints.get(device_id)
        if device is None or expected is None or presented_device_fingerprint != expected:
            raise UnknownDeviceFingerprint(device_id.hex())
        # device side of the handshake: compare against the pinned value
        if not device.accepts_gateway(presented_gateway_fingerprint):
            raise PinningMismatch("presented gateway fingerprint does not match the pinned one")
        channel = DeviceChannel(device_id, presented_gateway_fingerprint, presented_device_fingerprint,
                                ChannelState.AUTHENTICATED)
        self.channels[device_id] = channel
        return channel

    def connect(self, device_id: DeviceId) -> DeviceChannel:
        """Honest handshake with the gateway's own and the device's fingerprints."""
        return self.open_device_channel(device_id, self.fingerprint, self.devices[device_id].fingerprint)

    def forward_to_device(self, channel: DeviceChannel, payload: bytes, now: float) -> bytes:
        if channel.state is not ChannelState.AUTHENTICATED:
            raise ChannelClosed(channel.device_id.hex())
        channel.frames += 1
        reply = self.devices[channel.device_id].receive(payload, now)
        if reply is None:
            raise DeviceTimeout(f"no reply from {channel.device_id.hex()}", at=now + self.config.device_timeout)
        channel.frames += 1
        return reply

    def _channel(self, device_id: DeviceId) -> DeviceChannel:
        channel = self.channels.get(device_id)
        if channel is None or channel.state is not ChannelState.AUTHENTICATED:
            raise ChannelClosed(device_id.hex())
        return channel

    # -- anchoring -------------------------------------------------------

    def _anchor(self, device_id: DeviceId, frame: bytes, now: float, direction: str) -> Receipt | None:
        if self.config.scheme is Scheme.FULL_ON_CHAIN:
            receipt = self.anchorer.anchor_full_on_chain(device_id, frame_body(frame), now, direction)
        else:
            receipt = self.anchorer.anchor(device_id, frame, now, direction)
        self._log(now, "anchor", device_id, scheme=self.config.scheme.value, function=direction,
                  nonce=receipt.tx.nonce if receipt else None)
        return receipt

    # -- CBG ---------------------------------------------------------------

    def subscribe(self) -> None:
        """Start capturing ``messageSentToDevice`` events (CBG)."""
        self._subscription = self.ledger.subscribe_events(C.MESSAGE_SENT, callback=self._on_event)

    def _on_event(self, event: Event) -> None:
        if not self.paused:
            self.handle_chain_event(event)

    def handle_chain_event(self, event: Event, now: float | None = None) -> Receipt | None:
        """Forward a command seen on chain and store the device's reply.

        Returns the reply's receipt, or ``None`` when nothing was submitted
        (event ignored, device timed out, or the reply went into a window).
        """
        now = event.timestamp if now is None else now
        if event.name != C.MESSAGE_SENT or self.config.configuration is not Configuration.CBG:
            return None
        channel = self.channels.get(event.device_id)
        if channel is None:
            self._log(now, "ignored", event.device_id, reason="not owned", nonce=event.tx_nonce)
            return None

        if self.config.scheme is Scheme.FULL_ON_CHAIN:
            frame = frame_from_body(event.device_id, event.payload)
        else:
            rec = self.store.by_digest(event.payload)
            if rec is None:
                self._log(now, "failed", event.device_id, reason="payload not in off-chain store",
                          nonce=event.tx_nonce)
                return None
            frame = rec.payload

        try:
            reply = self.forward_to_device(channel, frame, now)
        except (DeviceTimeout, ChannelClosed) as exc:
            at = getattr(exc, "at", None) or now
            self._log(at, "failed", event.device_id, reason=exc.code, nonce=event.tx_nonce)
            return None
        self._log(now, "forward", event.device_id, nonce=event.tx_nonce)
        return self._anchor(event.device_id, reply, now, C.SEND_RESPONSE)

    # -- CGB ---------------------------------------------------------------

    def handle_client_command(self, device_id: DeviceId, payload: bytes, now: float) -> bytes:
        """Forward a client command and return the device reply at once."""
        if self.config.configuration is not Configuration.CGB:
            raise ChannelClosed("client commands go through the ledger under CBG")
        channel = self._channel(device_id)
        try:
            reply = self.forward_to_device(channel, payload, now)
        except DeviceTimeout as exc:
            self._log(exc.at, "failed", device_id, reason=exc.code)
            raise
        self._log(now, "forward", device_id)
        if self.config.anchor_optional:
            self._anchor(device_id, payload, now, C.SEND_MESSAGE)
            self._anchor(device_id, reply, now, C.SEND_RESPONSE)
        return reply

    # -- device-initiated data ---------------------------------------------

    def handle_telemetry(self, device_id: DeviceId, frame: bytes, now: float) -> Receipt | None:
        """Unidirectional push from a device. Anchored always under CBG and
        only if ``anchor_optional`` under CGB."""
        channel = self._channel(device_id)
        channel.frames += 1
        self._log(now, "telemetry", device_id)
        if self.config.configuration is Configuration.CGB and not self.config.anchor_optional:
            return None
        return self._anchor(device_id, frame, now, C.SEND_RESPONSE)

    def close_expired_windows(self, now: float):
        return self.anchorer.close_expired(now)

    def write_log(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.log:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
