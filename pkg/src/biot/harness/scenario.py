"""Scenario runner for the refrigerated-container and smart-light setups."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from biot import contract as C
from biot.anchoring import OffchainStore, WindowPolicy
from biot.contract import BIoTContract, DeviceId, Encoding
from biot.devices import (
    LightCommand,
    RefrigeratedContainer,
    SmartLight,
    command_schedule,
    fingerprint,
    frame_body,
    light_opcodes,
)
from biot.economics import DAY, CostReport, GasSchedule, PriceContext, Scheme, build_cost_report
from biot.errors import ConfigInvalid
from biot.gateway import Configuration, Gateway, GatewayConfig
from biot.harness.clock import PRIORITY_BLOCK, PRIORITY_DEVICE, PRIORITY_TIMER, Scheduler
from biot.ledger import Address, Block, Event, LatencyModel, Ledger, read_blocks, write_blocks


class ScenarioKind(str, Enum):
    REFRIGERATED_CONTAINER = "RefrigeratedContainer"
    SMART_LIGHT = "SmartLight"


DEFAULT_MESSAGES = {ScenarioKind.REFRIGERATED_CONTAINER: 1440, ScenarioKind.SMART_LIGHT: 20}


@dataclass
class ScenarioConfig:
    scenario: ScenarioKind = ScenarioKind.REFRIGERATED_CONTAINER
    configuration: Configuration = Configuration.CBG
    scheme: Scheme = Scheme.FULL_ON_CHAIN
    duration: float = DAY
    block_interval: float = 15
    confirmations: int = 1
    seed: int = 0
    prices: PriceContext = field(default_factory=PriceContext)
    window_policy: WindowPolicy = field(default_factory=WindowPolicy)
    gas_schedule: GasSchedule = field(default_factory=GasSchedule)
    anchor_optional: bool = True
    # device messages (telemetry frames or light commands) per day
    messages_per_day: int | None = None

    def __post_init__(self):
        try:
            self.scenario = ScenarioKind(self.scenario)
            self.configuration = Configuration(self.configuration)
            self.scheme = Scheme(self.scheme)
        except ValueError as exc:
            raise ConfigInvalid(str(exc)) from None

    @property
    def rate(self) -> int:
        return self.messages_per_day if self.messages_per_day is not None else DEFAULT_MESSAGES[self.scenario]

    def validate(self) -> None:
        if self.duration <= 0:
            raise ConfigInvalid("duration must be positive")
        if self.block_interval <= 0:
            raise ConfigInvalid("block_interval must be positive")
        if self.confirmations < 1:
            raise ConfigInvalid("confirmations must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigInvalid("seed must be a 64-bit unsigned integer")
        if self.rate < 0:
            raise ConfigInvalid("messages_per_day must be non-negative")
        if self.scenario is ScenarioKind.SMART_LIGHT and self.rate > DAY // 60:
            raise ConfigInvalid("smart light commands are placed on a one-minute grid")

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario.value,
            "configuration": self.configuration.value,
            "scheme": self.scheme.value,
            "duration": self.duration,
            "block_interval": self.block_interval,
            "confirmations": self.confirmations,
            "seed": self.seed,
            "prices": self.prices.to_dict(),
            "window_policy": {"duration": self.window_policy.duration,
                              "max_leaves": self.window_policy.max_leaves},
            "gas_schedule": self.gas_schedule.to_dict(),
            "anchor_optional": self.anchor_optional,
            "messages_per_day": self.messages_per_day,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        data = dict(data)
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
        try:
            if "prices" in data:
                data["prices"] = PriceContext.from_dict(data["prices"])
            if "window_policy" in data:
                data["window_policy"] = WindowPolicy(**data["window_policy"])
            if "gas_schedule" in data:
                data["gas_schedule"] = GasSchedule.from_dict(data["gas_schedule"])
            return cls(**data)
        except (TypeError, ValueError, ArithmeticError) as exc:
            raise ConfigInvalid(str(exc)) from None

    @classmethod
    def load(cls, path: str | Path) -> "ScenarioConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigInvalid(str(exc)) from None
        if not isinstance(data, dict):
            raise ConfigInvalid("config must be a JSON object")
        return cls.from_dict(data)


@dataclass
class Interaction:
    device: str
    kind: str  # "telemetry" or "command"
    submitted_at: float
    resolved_at: float | None = None
    legs: int = 0  # on-chain legs waited for
    deferred: bool = False  # data secured later by a window root
    failed: bool = False

    @property
    def chain_wait(self) -> float | None:
        return None if self.resolved_at is None else self.resolved_at - self.submitted_at

    def to_dict(self) -> dict:
        return {
            "device": self.device,
            "kind": self.kind,
            "submitted_at": self.submitted_at,
            "resolved_at": self.resolved_at,
            "chain_wait": self.chain_wait,
            "legs": self.legs,
            "deferred": self.deferred,
            "failed": self.failed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Interaction":
        d = dict(d)
        d.pop("chain_wait", None)
        return cls(**d)


@dataclass
class RunResult:
    config: ScenarioConfig
    blocks: list[Block]
    events: list[Event]
    interactions: list[Interaction]
    device_traces: dict[str, list[tuple[float, str, str]]]
    admin: Address
    operators: list[Address]
    clients: list[Address]
    message_count: int
    window_anchor_count: int
    complete: bool
    device_states: dict[str, list[bool]] = field(default_factory=dict)
    client_received: dict[str, list[tuple[int, str]]] = field(default_factory=dict)
    gateway_log: list[dict] = field(default_factory=list)
    cost_report: CostReport | None = None

    @property
    def duration(self) -> float:
        return self.config.duration

    @property
    def scheme(self) -> Scheme:
        return self.config.scheme

    @property
    def transactions(self):
        for block in self.blocks:
            yield from block.transactions

    @property
    def latencies(self) -> list[tuple[float, float | None]]:
        return [(i.submitted_at, i.resolved_at) for i in self.interactions]

    def summary_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "admin": str(self.admin),
            "operators": [str(a) for a in self.operators],
            "clients": [str(a) for a in self.clients],
            "message_count": self.message_count,
            "window_anchor_count": self.window_anchor_count,
            "complete": self.complete,
            "head_digest": self.blocks[-1].digest.hex(),
            "interactions": [i.to_dict() for i in self.interactions],
            "device_states": {k: [int(s) for s in v] for k, v in self.device_states.items()},
            "client_received": {k: [[s, p] for s, p in v] for k, v in self.client_received.items()},
            "cost_report": self.cost_report.to_dict() if self.cost_report else None,
        }

    def save(self, out_dir: str | Path) -> Path:
        """Write the run directory (ledger, events, logs, traces, summary)."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_blocks(out / "ledger.bin", self.blocks)
        (out / "ledger.json").write_text(json.dumps([b.to_dict() for b in self.blocks], indent=1) + "\n")
        with open(out / "events.jsonl", "w") as fh:
            for ev in self.events:
                fh.write(json.dumps(ev.to_dict(), sort_keys=True) + "\n")
        with open(out / "gateway.jsonl", "w") as fh:
            for rec in self.gateway_log:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        traces = out / "traces"
        traces.mkdir(exist_ok=True)
        for dev, rows in sorted(self.device_traces.items()):
            lines = ["time,direction,frame_hex"] + [f"{t},{d},{f}" for t, d, f in rows]
            (traces / f"{dev}.csv").write_text("\n".join(lines) + "\n")
        (out / "run.json").write_text(json.dumps(self.summary_dict(), indent=1, sort_keys=True) + "\n")
        return out

    @classmethod
    def load(cls, run_dir: str | Path) -> "RunResult":
        run = Path(run_dir)
        summary = json.loads((run / "run.json").read_text())
        blocks = read_blocks(run / "ledger.bin")
        events = []
        for line in (run / "events.jsonl").read_text().splitlines():
            d = json.loads(line)
            events.append(Event(d["name"], DeviceId.from_hex(d["device_id"]), bytes.fromhex(d["payload"]),
                                d["block_index"], d["tx_nonce"], d["sequence"], d["timestamp"]))
        traces = {}
        for path in sorted((run / "traces").glob("*.csv")):
            rows = []
            for line in path.read_text().splitlines()[1:]:
                t, d, f = line.split(",")
                rows.append((float(t) if "." in t else int(t), d, f))
            traces[path.stem] = rows
        gw_log = [json.loads(line) for line in (run / "gateway.jsonl").read_text().splitlines()]
        cr = summary.get("cost_report")
        return cls(
            config=ScenarioConfig.from_dict(summary["config"]),
            blocks=blocks,
            events=events,
            interactions=[Interaction.from_dict(i) for i in summary["interactions"]],
            device_traces=traces,
            admin=Address.from_hex(summary["admin"]),
            operators=[Address.from_hex(a) for a in summary["operators"]],
            clients=[Address.from_hex(a) for a in summary["clients"]],
            message_count=summary["message_count"],
            window_anchor_count=summary["window_anchor_count"],
            complete=summary["complete"],
            device_states={k: [bool(s) for s in v] for k, v in summary["device_states"].items()},
            client_received={k: [(s, p) for s, p in v] for k, v in summary["client_received"].items()},
            gateway_log=gw_log,
            cost_report=CostReport.from_dict(cr) if cr else None,
        )


def message_times(rate: int, duration: float) -> list[float]:
    """Evenly spread message times: ``rate`` per day over ``duration``."""
    if rate <= 0:
        return []
    total = int(rate * duration // DAY)
    return [(i * DAY) // rate for i in range(total)]


class _Run:
    """Mutable state of one scenario execution."""

    def __init__(self, config: ScenarioConfig, store_path=None):
        self.config = config
        self.sched = Scheduler()
        contract = BIoTContract(config.gas_schedule)
        self.ledger = Ledger(contract, LatencyModel(config.block_interval, config.confirmations))
        self.admin = self.ledger.create_account("admin")
        self.gw_addr = self.ledger.create_account("gateway-0")
        self.client = self.ledger.create_account("client-0")
        self.device_id = DeviceId.from_label("device-0")

        self.store = OffchainStore(store_path)
        gw_fp = fingerprint("gateway-0")
        self.gateway = Gateway(
            GatewayConfig(self.gw_addr, config.configuration, config.scheme, config.window_policy,
                          config.anchor_optional),
            self.ledger, gw_fp, self.store)
        dev_fp = fingerprint("device-0")
        if config.scenario is ScenarioKind.REFRIGERATED_CONTAINER:
            self.device = RefrigeratedContainer(self.device_id, gw_fp, dev_fp, seed=f"{config.seed}:container")
        else:
            self.device = SmartLight(self.device_id, gw_fp, dev_fp)
        self.gateway.provision(self.device)
        self.gateway.connect(self.device_id)

        self.interactions: list[Interaction] = []
        self.by_command_nonce: dict[int, Interaction] = {}
        self.received: list[tuple[int, bytes]] = []
        self.cursor = 0
        self.messages = 0

    # -- setup -----------------------------------------------------------

    def setup(self) -> None:
        submit = self.ledger.submit_call
        submit(self.admin, C.call_deploy(), 0)
        submit(self.admin, C.call_register_gateway(self.gw_addr), 0)
        submit(self.admin, C.call_register_device(self.device_id, self.gw_addr), 0)

        self.gateway.anchorer.on_window_opened = self._window_opened
        if self.config.configuration is Configuration.CBG:
            self.ledger.subscribe_events(C.MESSAGE_SENT, callback=self._on_command_event)
        self.ledger.subscribe_events(C.RESPONSE_SENT, self.device_id, callback=self._on_response_event)
        self.sched.every(self.config.block_interval, self.ledger.produce_block,
                         start=self.config.block_interval, until=self.config.duration,
                         priority=PRIORITY_BLOCK)

    def _window_opened(self, window) -> None:
        deadline = window.deadline(self.config.window_policy)
        if deadline < self.config.duration:
            self.sched.at(deadline, self.gateway.close_expired_windows, PRIORITY_TIMER)

    # -- container -------------------------------------------------------

    def schedule_container(self) -> None:
        for t in message_times(self.config.rate, self.config.duration):
            self.sched.at(t, self._tick, PRIORITY_DEVICE)

    def _tick(self, t: float) -> None:
        frame = self.device.emit(t)
        self.messages += 1
        inter = Interaction(self.device_id.hex(), "telemetry", t)
        self.interactions.append(inter)
        receipt = self.gateway.handle_telemetry(self.device_id, frame, t)
        if self.config.configuration is Configuration.CGB or receipt is None:
            # CGB: the gateway relays to the client at once; Merkle: secured at window close
            inter.resolved_at = t
            inter.deferred = receipt is None and self.config.configuration is Configuration.CBG
        else:
            inter.legs = 1
            receipt.add_done_callback(lambda r, i=inter: setattr(i, "resolved_at", r.resolved_at))

    # -- smart light -----------------------------------------------------

    def schedule_light(self) -> None:
        days = max(1, int(self.config.duration // DAY))
        times: list[float] = []
        for day in range(days):
            span = min(DAY, self.config.duration - day * DAY)
            times += [day * DAY + t for t in command_schedule(f"{self.config.seed}:light:{day}",
                                                             self.config.rate, span)]
        for t, op in zip(times, light_opcodes(len(times))):
            self.sched.at(t, lambda now, op=op: self._command(now, op), PRIORITY_DEVICE)

    def _command(self, t: float, op) -> None:
        frame = LightCommand(op, self.device_id).encode()
        inter = Interaction(self.device_id.hex(), "command", t)
        self.interactions.append(inter)
        self.messages += 1
        if self.config.configuration is Configuration.CGB:
            self.gateway.handle_client_command(self.device_id, frame, t)
            inter.resolved_at = t
            return
        if self.config.scheme is Scheme.FULL_ON_CHAIN:
            call = C.call_send_message(self.device_id, frame_body(frame), Encoding.FULL)
        else:
            rec = self.store.put(self.device_id, frame)
            call = C.call_send_message(self.device_id, rec.digest, Encoding.DIGEST)
        receipt = self.ledger.submit_call(self.client, call, t)
        inter.legs = 1
        self.by_command_nonce[receipt.tx.nonce] = inter

    def _on_command_event(self, event: Event) -> None:
        inter = self.by_command_nonce.pop(event.tx_nonce, None)
        log_len = len(self.gateway.log)
        reply_receipt = self.gateway.handle_chain_event(event)
        if inter is None:
            return
        outcomes = [r["event"] for r in self.gateway.log[log_len:]]
        if "failed" in outcomes:
            inter.failed = True
            inter.resolved_at = event.timestamp
        elif reply_receipt is None:
            inter.resolved_at = event.timestamp
            inter.deferred = True
        else:
            inter.legs = 2
            reply_receipt.add_done_callback(lambda r, i=inter: setattr(i, "resolved_at", r.resolved_at))

    def _on_response_event(self, event: Event) -> None:
        # the client reads new responses through the free read-only call
        out = self.ledger.call(*C.call_get_messages(self.device_id, self.cursor), sender=self.client)
        entries = C.decode_messages(out)
        if entries:
            self.cursor = entries[-1][0]
            self.received.extend(entries)

    # -- drive -----------------------------------------------------------

    def run(self) -> RunResult:
        self.setup()
        if self.config.scenario is ScenarioKind.REFRIGERATED_CONTAINER:
            self.schedule_container()
        else:
            self.schedule_light()
        self.sched.run(self.config.duration)

        end = self.config.duration
        # close what is still open, then let the chain settle
        for _ in range(100):
            self.gateway.anchorer.close_all(max(end, self.ledger.head.timestamp))
            self.ledger.run_until_settled()
            if not self.gateway.anchorer.windows:
                break

        anchors = sum(1 for _ in self.gateway.anchorer.closed)
        trace = {self.device_id.hex(): [(t, d, f.hex()) for t, d, f in self.device.trace]}
        states = {self.device_id.hex(): list(self.device.history)} if isinstance(self.device, SmartLight) else {}
        result = RunResult(
            config=self.config,
            blocks=self.ledger.blocks,
            events=self.ledger.events,
            interactions=self.interactions,
            device_traces=trace,
            admin=self.admin,
            operators=[self.gw_addr],
            clients=[self.client],
            message_count=self.messages,
            window_anchor_count=anchors,
            complete=self.ledger.settled and all(i.resolved_at is not None for i in self.interactions),
            device_states=states,
            client_received={self.device_id.hex(): [(s, p.hex()) for s, p in self.received]},
            gateway_log=self.gateway.log,
        )
        result.cost_report = build_cost_report(result, self.config.prices)
        return result


def run_scenario(config: ScenarioConfig, store_path: str | Path | None = None) -> RunResult:
    config.validate()
    return _Run(config, store_path).run()
