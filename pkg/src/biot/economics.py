"""Gas schedule, USD conversion and per-day cost reports.

Gas is not emulated at opcode level. Each contract operation is priced from a
small calibrated schedule: fixed costs for deployment, registration and digest
anchors, and a piecewise-linear per-byte curve for payloads stored as-is.

Dollar amounts use :class:`decimal.Decimal` throughout so that reports are
reproducible byte for byte.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from decimal import ROUND_DOWN, Decimal
from enum import Enum
from fractions import Fraction
from pathlib import Path

DAY = 86_400
GWEI = Decimal("1e-9")


class Scheme(str, Enum):
    FULL_ON_CHAIN = "FullOnChain"
    DATA_HASHING = "DataHashing"
    MERKLE_TREE = "MerkleTree"


class Rounding(str, Enum):
    EXACT = "Exact"
    PAPER_TABLE = "PaperTable"


@dataclass(frozen=True)
class GasSchedule:
    deploy_gas: int = 866_212
    register_gateway_gas: int = 43_702
    # not measured in the reference deployment; same storage shape as registerGateway
    register_device_gas: int = 43_702
    full_on_chain_anchors: tuple[tuple[int, int], ...] = ((16, 52_132), (1024, 382_119))
    digest_anchor_gas: int = 72_433
    # charged to reverted transactions (intrinsic transaction cost)
    revert_gas: int = 21_000

    def __post_init__(self):
        anchors = tuple(tuple(a) for a in self.full_on_chain_anchors)
        object.__setattr__(self, "full_on_chain_anchors", anchors)
        if len(anchors) < 2:
            raise ValueError("need at least two full on-chain anchors")
        for (s0, g0), (s1, g1) in zip(anchors, anchors[1:]):
            if not (s1 > s0 and g1 > g0):
                raise ValueError("anchors must be sorted by size with strictly increasing gas")
        for name in ("deploy_gas", "register_gateway_gas", "register_device_gas",
                     "digest_anchor_gas", "revert_gas"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "GasSchedule":
        data = dict(data)
        if "full_on_chain_anchors" in data:
            data["full_on_chain_anchors"] = tuple((int(s), int(g)) for s, g in data["full_on_chain_anchors"])
        return cls(**data)

    def to_dict(self) -> dict:
        return {
            "deploy_gas": self.deploy_gas,
            "register_gateway_gas": self.register_gateway_gas,
            "register_device_gas": self.register_device_gas,
            "full_on_chain_anchors": [list(a) for a in self.full_on_chain_anchors],
            "digest_anchor_gas": self.digest_anchor_gas,
            "revert_gas": self.revert_gas,
        }


@dataclass(frozen=True)
class PriceContext:
    gas_price_gwei: Decimal = Decimal("1")
    eth_usd: Decimal = Decimal("168.0")
    rounding: Rounding = Rounding.EXACT

    def __post_init__(self):
        object.__setattr__(self, "gas_price_gwei", Decimal(str(self.gas_price_gwei)))
        object.__setattr__(self, "eth_usd", Decimal(str(self.eth_usd)))
        object.__setattr__(self, "rounding", Rounding(self.rounding))
        if self.gas_price_gwei <= 0 or self.eth_usd <= 0:
            raise ValueError("prices must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "PriceContext":
        return cls(**data)

    def to_dict(self) -> dict:
        return {
            "gas_price_gwei": str(self.gas_price_gwei),
            "eth_usd": str(self.eth_usd),
            "rounding": self.rounding.value,
        }

    def with_rounding(self, rounding: Rounding) -> "PriceContext":
        return PriceContext(self.gas_price_gwei, self.eth_usd, rounding)

    @property
    def is_reference(self) -> bool:
        return self.gas_price_gwei == 1 and self.eth_usd == 168


def load_config(path: str | Path) -> tuple[GasSchedule, PriceContext]:
    """Read ``{"gas_schedule": {...}, "prices": {...}}``; either key may be omitted."""
    data = json.loads(Path(path).read_text())
    return (GasSchedule.from_dict(data.get("gas_schedule", {})),
            PriceContext.from_dict(data.get("prices", {})))


def _round_half_up(x: Fraction) -> int:
    return math.floor(x + Fraction(1, 2))


def gas_for_payload(schedule: GasSchedule, scheme: Scheme, size: int) -> int:
    if size < 0:
        raise ValueError("size must be non-negative")
    scheme = Scheme(scheme)
    if scheme is not Scheme.FULL_ON_CHAIN:
        return schedule.digest_anchor_gas

    anchors = schedule.full_on_chain_anchors
    if size <= anchors[0][0]:
        return anchors[0][1]
    # first segment whose right end covers size; the last one extrapolates
    for (s0, g0), (s1, g1) in zip(anchors, anchors[1:]):
        if size <= s1:
            break
    return g0 + _round_half_up(Fraction(size - s0) * Fraction(g1 - g0, s1 - s0))


# Per-operation dollar values as printed in the reference cost table (1 gwei,
# $168/ETH). The table truncates rather than rounds: 0.00876 is printed 0.008.
PUBLISHED_USD = {
    866_212: Decimal("0.145"),
    43_702: Decimal("0.007"),
    52_132: Decimal("0.008"),
    382_119: Decimal("0.06"),
    72_433: Decimal("0.012"),
}
_MILLI = Decimal("0.001")


def usd_cost(gas: int, prices: PriceContext) -> Decimal:
    """Dollar cost of ``gas`` units.

    In ``PaperTable`` mode a gas amount that matches a published operation is
    priced at its published value; anything else is truncated to $0.001, the
    convention the published table follows.
    """
    if gas < 0:
        raise ValueError("gas must be non-negative")
    exact = Decimal(gas) * prices.gas_price_gwei * GWEI * prices.eth_usd
    if prices.rounding is Rounding.EXACT:
        return exact
    if prices.is_reference and gas in PUBLISHED_USD:
        return PUBLISHED_USD[gas]
    return exact.quantize(_MILLI, rounding=ROUND_DOWN)


def crossover_size(schedule: GasSchedule, limit: int = 1 << 16) -> int | None:
    """Largest payload size at which full on-chain storage is still no dearer
    than anchoring a digest. Hashing is strictly cheaper for every larger size."""
    # the full on-chain curve is non-decreasing, so the first size above the
    # digest cost ends the search
    digest = schedule.digest_anchor_gas
    last = None
    for size in range(limit + 1):
        if gas_for_payload(schedule, Scheme.FULL_ON_CHAIN, size) > digest:
            break
        last = size
    return last


@dataclass
class CostReport:
    scheme: Scheme
    rounding: Rounding
    days: int
    messages_per_day: Decimal
    gas_per_day: Decimal
    usd_per_day: Decimal
    per_message_usd: Decimal | None
    window_anchors_per_day: Decimal
    daily_gas: list[int] = field(default_factory=list)
    setup_gas: int = 0
    client_gas: int = 0
    operator_gas: int = 0
    total_gas: int = 0

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme.value,
            "rounding": self.rounding.value,
            "days": self.days,
            "messages_per_day": str(self.messages_per_day),
            "gas_per_day": str(self.gas_per_day),
            "usd_per_day": str(self.usd_per_day),
            "per_message_usd": None if self.per_message_usd is None else str(self.per_message_usd),
            "window_anchors_per_day": str(self.window_anchors_per_day),
            "daily_gas": list(self.daily_gas),
            "setup_gas": self.setup_gas,
            "client_gas": self.client_gas,
            "operator_gas": self.operator_gas,
            "total_gas": self.total_gas,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CostReport":
        return cls(
            scheme=Scheme(d["scheme"]),
            rounding=Rounding(d["rounding"]),
            days=d["days"],
            messages_per_day=Decimal(d["messages_per_day"]),
            gas_per_day=Decimal(d["gas_per_day"]),
            usd_per_day=Decimal(d["usd_per_day"]),
            per_message_usd=None if d["per_message_usd"] is None else Decimal(d["per_message_usd"]),
            window_anchors_per_day=Decimal(d["window_anchors_per_day"]),
            daily_gas=list(d["daily_gas"]),
            setup_gas=d["setup_gas"],
            client_gas=d["client_gas"],
            operator_gas=d["operator_gas"],
            total_gas=d["total_gas"],
        )


def _per_day(total, days: int) -> Decimal:
    return Decimal(total) / Decimal(days)


def build_cost_report(run, prices: PriceContext) -> CostReport:
    """Aggregate a finished run into daily figures.

    Transactions are attributed by sender: the administrator pays for setup
    (deployment, registrations), clients pay for the commands they put on
    chain, and the gateway operator pays for everything anchored on behalf of
    its device. The per-day figures cover the operator's share only, which is
    what a per-device daily cost means. ``total_gas`` still sums every
    transaction of the run.

    ``run`` needs ``complete``, ``duration``, ``scheme``, ``transactions``,
    ``admin``, ``operators``, ``message_count`` and ``window_anchor_count``.
    """
    from biot.errors import IncompleteRun

    if not run.complete:
        raise IncompleteRun("run has pending transactions or was not finished")

    days = max(1, math.ceil(run.duration / DAY))
    daily = [0] * days
    operators = set(run.operators)
    setup = client = operator = total = 0
    usd = Decimal(0)
    for tx in run.transactions:
        total += tx.gas_used
        if tx.sender == run.admin:
            setup += tx.gas_used
        elif tx.sender in operators:
            operator += tx.gas_used
            day = min(int(tx.submitted_at // DAY), days - 1)
            daily[day] += tx.gas_used
            usd += usd_cost(tx.gas_used, prices)
        else:
            client += tx.gas_used

    messages_per_day = _per_day(run.message_count, days)
    usd_per_day = usd / days
    return CostReport(
        scheme=Scheme(run.scheme),
        rounding=prices.rounding,
        days=days,
        messages_per_day=messages_per_day,
        gas_per_day=_per_day(operator, days),
        usd_per_day=usd_per_day,
        per_message_usd=(usd_per_day / messages_per_day) if run.message_count else None,
        window_anchors_per_day=_per_day(run.window_anchor_count, days),
        daily_gas=daily,
        setup_gas=setup,
        client_gas=client,
        operator_gas=operator,
        total_gas=total,
    )


def operation_rows(schedule: GasSchedule, prices: PriceContext) -> list[tuple[str, int, Decimal]]:
    """(operation, gas, usd) rows for the per-operation half of the cost table."""
    rows = [
        ("Smart contract deployment", schedule.deploy_gas),
        ("registerGateway()", schedule.register_gateway_gas),
    ]
    for size, gas in schedule.full_on_chain_anchors:
        rows.append((f"sendMessageToDevice() full on-chain, {size} B", gas))
    rows.append(("sendMessageToDevice() data hashing", schedule.digest_anchor_gas))
    rows.append(("Merkle root anchor (any amount of data)", schedule.digest_anchor_gas))
    return [(name, gas, usd_cost(gas, prices)) for name, gas in rows]
