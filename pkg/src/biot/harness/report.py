"""Report rendering: aligned text table, JSON and CSV."""

from __future__ import annotations

import csv
import io
import json
from decimal import Decimal

from biot.economics import PriceContext, Rounding, build_cost_report, crossover_size, operation_rows, usd_cost

FORMATS = ("table", "json", "csv")


def money(d: Decimal) -> str:
    return "$" + format(d.normalize(), "f")


def _latency_summary(result) -> dict:
    waits = [i.chain_wait for i in result.interactions if not i.failed and i.chain_wait is not None]
    if not waits:
        return {"count": 0, "min": None, "max": None, "mean": None}
    return {"count": len(waits), "min": min(waits), "max": max(waits), "mean": sum(waits) / len(waits)}


def _rounding_note(schedule, prices: PriceContext) -> str:
    gas = schedule.full_on_chain_anchors[0][1]
    exact = usd_cost(gas, prices.with_rounding(Rounding.EXACT))
    table = usd_cost(gas, prices.with_rounding(Rounding.PAPER_TABLE))
    return (f"Table-mode dollars are per-operation values truncated to $0.001 and then multiplied: "
            f"{gas:,} gas is ${exact:.5f} exact but {money(table)} in table mode.")


NOTES = [
    "Daily figures cover the gateway operator's transactions for the device; "
    "setup and client-paid commands are listed separately.",
    "Full on-chain messages carry the 8 data bytes of each frame; the 16-byte device id is the call's "
    "deviceID argument, so short frames are charged at the smallest calibrated size.",
    "Hashing beats full on-chain storage only above the crossover size reported above; "
    "million-message totals are not extrapolated beyond the calibrated gas curve.",
]


def report_dict(result) -> dict:
    prices = result.config.prices
    schedule = result.config.gas_schedule
    exact = build_cost_report(result, prices.with_rounding(Rounding.EXACT))
    table = build_cost_report(result, prices.with_rounding(Rounding.PAPER_TABLE))
    return {
        "scenario": result.config.scenario.value,
        "configuration": result.config.configuration.value,
        "scheme": result.config.scheme.value,
        "seed": result.config.seed,
        "duration": result.config.duration,
        "block_interval": result.config.block_interval,
        "head_digest": result.blocks[-1].digest.hex(),
        "blocks": len(result.blocks),
        "operations": [
            {"operation": name, "gas": gas, "usd_exact": str(usd),
             "usd_table": str(usd_cost(gas, prices.with_rounding(Rounding.PAPER_TABLE)))}
            for name, gas, usd in operation_rows(schedule, prices.with_rounding(Rounding.EXACT))
        ],
        "cost_exact": exact.to_dict(),
        "cost_table": table.to_dict(),
        "latency": _latency_summary(result),
        "crossover_bytes": crossover_size(schedule),
        "notes": [_rounding_note(schedule, prices)] + NOTES,
    }


def _table(result) -> str:
    d = report_dict(result)
    ops = d["operations"]
    w = max(len(o["operation"]) for o in ops)
    out = [f"Per-operation cost (gas price {result.config.prices.gas_price_gwei} gwei, "
           f"1 ETH = ${result.config.prices.eth_usd})", ""]
    out.append(f"{'Operation':<{w}}  {'Gas':>9}  {'USD exact':>12}  {'USD table':>9}")
    for o in ops:
        out.append(f"{o['operation']:<{w}}  {o['gas']:>9,}  {Decimal(o['usd_exact']):>12.6f}  "
                   f"{money(Decimal(o['usd_table'])):>9}")
    out.append("")

    ex, tb, lat = d["cost_exact"], d["cost_table"], d["latency"]
    out.append(f"Scenario {d['scenario']} / {d['configuration']} / {d['scheme']}  "
               f"(seed {d['seed']}, {d['duration']} s, block interval {d['block_interval']} s)")
    out.append("")
    head = f"{'Scheme':<12}  {'Msgs/day':>8}  {'Gas/day':>12}  {'USD/day exact':>14}  " \
           f"{'USD/day table':>13}  {'Anchors/day':>11}  {'Chain wait/interaction':>22}"
    out.append(head)
    if lat["count"]:
        wait = f"{lat['mean']:g} s" if lat["min"] == lat["max"] else \
            f"{lat['min']:g}-{lat['max']:g} s (mean {lat['mean']:.2f})"
    else:
        wait = "-"
    out.append(f"{d['scheme']:<12}  {Decimal(ex['messages_per_day']).normalize():>8f}  "
               f"{int(Decimal(ex['gas_per_day'])):>12,}  {Decimal(ex['usd_per_day']):>14.5f}  "
               f"{money(Decimal(tb['usd_per_day'])):>13}  "
               f"{Decimal(ex['window_anchors_per_day']).normalize():>11f}  {wait:>22}")
    out.append("")
    out.append(f"setup gas {ex['setup_gas']:,}; client gas {ex['client_gas']:,}; "
               f"operator gas {ex['operator_gas']:,}; total gas {ex['total_gas']:,}")
    out.append(f"full on-chain vs hashing crossover: hashing is cheaper above {d['crossover_bytes']} bytes")
    out.append(f"head block digest {d['head_digest']}")
    out.append("")
    out.append("Notes:")
    out.extend(f"  - {n}" for n in d["notes"])
    return "\n".join(out) + "\n"


def _csv(result) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "device", "kind", "submitted_at", "resolved_at", "chain_wait", "legs", "deferred", "failed"])
    for n, i in enumerate(result.interactions):
        w.writerow([n, i.device, i.kind, i.submitted_at, i.resolved_at, i.chain_wait, i.legs,
                    int(i.deferred), int(i.failed)])
    return buf.getvalue()


def emit_report(result, fmt: str = "table") -> str:
    if fmt == "table":
        return _table(result)
    if fmt == "json":
        return json.dumps(report_dict(result), indent=2, sort_keys=True) + "\n"
    if fmt == "csv":
        return _csv(result)
    raise ValueError(f"unknown report format {fmt!r}; expected one of {FORMATS}")
