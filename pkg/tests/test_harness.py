import csv
import io
import json
import time
from decimal import Decimal

import pytest

from biot.anchoring import WindowPolicy
from biot.economics import PriceContext, Rounding, Scheme, build_cost_report
from biot.errors import ConfigInvalid, IncompleteRun
from biot.gateway import Configuration
from biot.harness.clock import PRIORITY_BLOCK, PRIORITY_DEVICE, PRIORITY_TIMER, Scheduler
from biot.harness.report import emit_report, report_dict
from biot.harness.scenario import RunResult, ScenarioConfig, ScenarioKind, message_times, run_scenario

CONTAINER = ScenarioKind.REFRIGERATED_CONTAINER
LIGHT = ScenarioKind.SMART_LIGHT


def run(**kw):
    return run_scenario(ScenarioConfig(**kw))


def test_scheduler_order():
    s = Scheduler()
    seen = []
    s.at(10, lambda t: seen.append("timer"), PRIORITY_TIMER)
    s.at(10, lambda t: seen.append("device"), PRIORITY_DEVICE)
    s.at(10, lambda t: seen.append("block"), PRIORITY_BLOCK)
    s.at(5, lambda t: seen.append("early"), PRIORITY_TIMER)
    s.at(10, lambda t: seen.append("device2"), PRIORITY_DEVICE)
    assert s.run(10) == 5
    assert seen == ["early", "block", "device", "device2", "timer"]
    with pytest.raises(ValueError):
        s.at(9, lambda t: None)


def test_scheduler_every():
    s = Scheduler()
    ticks = []
    s.every(15, ticks.append, start=15, until=60)
    s.run(1000)
    assert ticks == [15, 30, 45, 60]


def test_message_times():
    times = message_times(1440, 86_400)
    assert len(times) == 1440 and times[:3] == [0, 60, 120]
    assert len(message_times(10_000, 86_400)) == 10_000
    assert message_times(0, 86_400) == []
    assert len(message_times(1440, 43_200)) == 720


def test_container_cbg_full():
    r = run()
    assert r.complete and r.message_count == 1440
    assert {i.chain_wait for i in r.interactions} == {15}
    ops = [tx for tx in r.transactions if tx.sender in r.operators]
    assert len(ops) == 1440 and {tx.gas_used for tx in ops} == {52_132}
    assert len(r.device_traces[next(iter(r.device_traces))]) == 1440


def test_light_cbg_full():
    r = run(scenario=LIGHT)
    assert r.complete and len(r.interactions) == 20
    assert {i.chain_wait for i in r.interactions} == {30} and {i.legs for i in r.interactions} == {2}
    states = next(iter(r.device_states.values()))
    assert states == [i % 2 == 0 for i in range(20)]
    received = next(iter(r.client_received.values()))
    assert [s for s, _ in received] == list(range(1, 21))


@pytest.mark.parametrize("scheme", list(Scheme))
def test_light_cgb_zero_wait(scheme):
    r = run(scenario=LIGHT, configuration=Configuration.CGB, scheme=scheme)
    assert r.complete and {i.chain_wait for i in r.interactions} == {0}


def test_cgb_latency_independent_of_block_interval():
    a = run(scenario=LIGHT, configuration=Configuration.CGB, block_interval=15)
    b = run(scenario=LIGHT, configuration=Configuration.CGB, block_interval=60)
    assert [i.chain_wait for i in a.interactions] == [i.chain_wait for i in b.interactions]
    assert a.device_states == b.device_states


@pytest.mark.parametrize("scheme", list(Scheme))
def test_cbg_cgb_same_device_trajectory(scheme):
    cbg = run(scenario=LIGHT, scheme=scheme, seed=5)
    cgb = run(scenario=LIGHT, scheme=scheme, seed=5, configuration=Configuration.CGB, anchor_optional=False)
    assert cbg.device_states == cgb.device_states
    assert not any(tx.sender in cgb.operators for tx in cgb.transactions)
    tc = [(t, d, f) for t, d, f in next(iter(cbg.device_traces.values()))]
    tg = [(t, d, f) for t, d, f in next(iter(cgb.device_traces.values()))]
    assert [f for _, _, f in tc] == [f for _, _, f in tg]


def test_container_trajectory_same_across_configurations():
    a = run(seed=9)
    b = run(seed=9, configuration=Configuration.CGB, anchor_optional=False)
    assert a.device_traces == b.device_traces


def test_merkle_day_single_anchor():
    r = run(scheme=Scheme.MERKLE_TREE)
    assert r.complete and r.window_anchor_count == 1
    ops = [tx for tx in r.transactions if tx.sender in r.operators]
    assert [tx.gas_used for tx in ops] == [72_433]
    assert all(i.deferred for i in r.interactions)


def test_merkle_twelve_hour_windows():
    r = run(scheme=Scheme.MERKLE_TREE, window_policy=WindowPolicy(43_200))
    rep = r.cost_report
    assert r.window_anchor_count == 2 and rep.gas_per_day == 2 * 72_433
    assert round(Decimal(rep.usd_per_day), 3) == Decimal("0.024")


def test_multi_day_run():
    r = run(duration=2 * 86_400, scenario=LIGHT)
    rep = r.cost_report
    assert r.complete and len(r.interactions) == 40
    assert rep.days == 2 and rep.daily_gas == [20 * 52_132, 20 * 52_132]


def test_cost_report_conservation():
    for kw in ({}, {"scheme": Scheme.DATA_HASHING}, {"scenario": LIGHT, "configuration": Configuration.CGB}):
        r = run(**kw)
        rep = r.cost_report
        assert rep.total_gas == sum(tx.gas_used for tx in r.transactions)
        assert rep.setup_gas + rep.client_gas + rep.operator_gas == rep.total_gas
        assert sum(rep.daily_gas) == rep.operator_gas
        assert rep.setup_gas == 866_212 + 2 * 43_702


def test_cost_report_requires_complete_run():
    r = run(scenario=LIGHT)
    r.complete = False
    with pytest.raises(IncompleteRun):
        build_cost_report(r, PriceContext())


def test_usd_consistent_with_gas():
    r = run()
    rep = r.cost_report
    assert Decimal(rep.usd_per_day) == Decimal(rep.gas_per_day) * Decimal(168) / Decimal(10**9)


def test_config_validation(tmp_path):
    with pytest.raises(ConfigInvalid):
        ScenarioConfig(scheme="Blockchain")
    with pytest.raises(ConfigInvalid):
        ScenarioConfig.from_dict({"colour": "red"})
    with pytest.raises(ConfigInvalid):
        run_scenario(ScenarioConfig(block_interval=0))
    with pytest.raises(ConfigInvalid):
        run_scenario(ScenarioConfig(seed=-1))
    with pytest.raises(ConfigInvalid):
        run_scenario(ScenarioConfig(scenario=LIGHT, messages_per_day=2000))
    p = tmp_path / "c.json"
    p.write_text("[1]")
    with pytest.raises(ConfigInvalid):
        ScenarioConfig.load(p)
    cfg = ScenarioConfig(scenario=LIGHT, scheme=Scheme.MERKLE_TREE, seed=3, window_policy=WindowPolicy(3600, 5),
                         prices=PriceContext(rounding=Rounding.PAPER_TABLE))
    p.write_text(json.dumps(cfg.to_dict()))
    assert ScenarioConfig.load(p) == cfg


def test_determinism_and_reports():
    cfg = dict(scenario=LIGHT, scheme=Scheme.MERKLE_TREE, seed=11, window_policy=WindowPolicy(21_600))
    a, b = run(**cfg), run(**cfg)
    assert [blk.digest for blk in a.blocks] == [blk.digest for blk in b.blocks]
    for fmt in ("table", "json", "csv"):
        assert emit_report(a, fmt) == emit_report(b, fmt)
    c = run(**{**cfg, "seed": 12})
    assert a.blocks[-1].digest != c.blocks[-1].digest


def test_csv_has_one_row_per_tick():
    r = run()
    rows = list(csv.DictReader(io.StringIO(emit_report(r, "csv"))))
    assert len(rows) == 1440 and {row["chain_wait"] for row in rows} == {"15"}


def test_table_report_merkle_row():
    r = run(scheme=Scheme.MERKLE_TREE)
    table = emit_report(r, "table")
    row = next(line for line in table.splitlines() if line.startswith("MerkleTree"))
    assert "$0.012" in row
    assert "$0.00876" in table and "$0.008" in table
    d = report_dict(r)
    assert d["crossover_bytes"] == 78
    assert d["cost_table"]["usd_per_day"] == "0.012"


def test_unknown_report_format():
    with pytest.raises(ValueError):
        emit_report(run(scenario=LIGHT), "xml")


def test_save_and_load_round_trip(tmp_path):
    r = run(scenario=LIGHT, scheme=Scheme.DATA_HASHING)
    r.save(tmp_path)
    back = RunResult.load(tmp_path)
    for fmt in ("table", "json", "csv"):
        assert emit_report(back, fmt) == emit_report(r, fmt)
    assert back.device_traces == r.device_traces and back.events == r.events


def test_virtual_time_is_fast():
    start = time.perf_counter()
    run(duration=7 * 86_400)
    assert time.perf_counter() - start < 10
