import json

import pytest
from hypothesis import given, settings, strategies as st

from biot import contract as C
from biot.anchoring import OffchainStore, verify_inclusion
from biot.contract import Encoding
from biot.devices import LightCommand, LightResponse, Opcode, RefrigeratedContainer, SmartLight, fingerprint
from biot.economics import Scheme
from biot.errors import ChannelClosed, DeviceTimeout, PinningMismatch, UnknownDeviceFingerprint
from biot.gateway import ChannelState, Configuration, Gateway, GatewayConfig
from biot.ledger import TxStatus
from tests.helpers import Chain

GW_FP = fingerprint("g1")
ATTACKER_FP = fingerprint("mallory")


def make_gateway(chain, configuration=Configuration.CBG, scheme=Scheme.FULL_ON_CHAIN, anchor_optional=True,
                 device=None):
    gw = Gateway(GatewayConfig(chain.g1, configuration, scheme, anchor_optional=anchor_optional),
                 chain.ledger, GW_FP, OffchainStore())
    device = device or SmartLight(chain.d1, GW_FP, fingerprint("d1"))
    gw.provision(device)
    return gw, device


def test_handshake(chain):
    gw, dev = make_gateway(chain)
    ch = gw.open_device_channel(chain.d1, GW_FP, dev.fingerprint)
    assert ch.state is ChannelState.AUTHENTICATED
    with pytest.raises(PinningMismatch):
        gw.open_device_channel(chain.d1, ATTACKER_FP, dev.fingerprint)
    with pytest.raises(UnknownDeviceFingerprint):
        gw.open_device_channel(chain.d1, GW_FP, fingerprint("someone else"))
    with pytest.raises(UnknownDeviceFingerprint):
        gw.open_device_channel(chain.d2, GW_FP, dev.fingerprint)


def test_cbg_light_flow(chain):
    gw, light = make_gateway(chain)
    gw.connect(chain.d1)
    gw.subscribe()
    t0 = chain.ledger.head.timestamp
    cmd = LightCommand(Opcode.ON, chain.d1).encode()
    r = chain.submit(chain.client, C.call_send_message(chain.d1, cmd[16:]), t0 + 1)
    chain.mine()
    assert light.state is True
    assert r.wait == 14
    reply = [tx for tx in chain.ledger.transactions if tx.sender == chain.g1]
    assert len(reply) == 1 and reply[0].status is TxStatus.INCLUDED
    assert reply[0].submitted_at == t0 + 15 and reply[0].gas_used == 52_132
    got = C.decode_messages(chain.ledger.call(*C.call_get_messages(chain.d1), sender=chain.client))
    assert len(got) == 1
    assert LightResponse.decode(chain.d1.raw + got[0][1]).state is True
    assert [e["event"] for e in gw.log] == ["forward", "anchor"]


def test_cbg_hashing_fetches_payload_from_store(chain):
    gw, light = make_gateway(chain, scheme=Scheme.DATA_HASHING)
    gw.connect(chain.d1)
    gw.subscribe()
    rec = gw.store.put(chain.d1, LightCommand(Opcode.TOGGLE, chain.d1).encode())
    chain.submit(chain.client, C.call_send_message(chain.d1, rec.digest, Encoding.DIGEST))
    chain.mine()
    assert light.state is True
    reply = [tx for tx in chain.ledger.transactions if tx.sender == chain.g1]
    assert [tx.gas_used for tx in reply] == [72_433]
    stored = C.decode_messages(chain.ledger.call(*C.call_get_messages(chain.d1)))[0][1]
    assert LightResponse.decode(gw.store.by_digest(stored).payload).state is True


def test_cbg_ignores_other_gateways_devices(chain):
    gw, light = make_gateway(chain)
    gw.connect(chain.d1)
    gw.subscribe()
    chain.submit(chain.client, C.call_send_message(chain.d2, b"\x01" + bytes(7)))
    chain.mine()
    assert light.trace == []
    assert not any(tx.sender == chain.g1 for tx in chain.ledger.transactions)
    assert gw.log[0]["event"] == "ignored"


def test_cbg_device_timeout(chain):
    gw, light = make_gateway(chain)
    gw.connect(chain.d1)
    gw.subscribe()
    light.online = False
    chain.submit(chain.client, C.call_send_message(chain.d1, b"\x01" + bytes(7)))
    chain.mine()
    event_time = chain.ledger.events[-1].timestamp
    assert not any(tx.sender == chain.g1 for tx in chain.ledger.transactions)
    assert gw.log == [{"t": event_time + 5, "event": "failed", "device": chain.d1.hex(),
                       "reason": "DeviceTimeout", "nonce": chain.ledger.events[-1].tx_nonce}]


def test_cbg_completeness(chain):
    gw, light = make_gateway(chain)
    gw.connect(chain.d1)
    gw.subscribe()
    n = 7
    for i in range(n):
        chain.submit(chain.client, C.call_send_message(chain.d1, bytes([1 + i % 3]) + bytes(7)),
                     chain.ledger.head.timestamp + i)
    chain.mine()
    sent = [e for e in chain.ledger.events if e.name == C.MESSAGE_SENT]
    replies = [e for e in chain.ledger.events if e.name == C.RESPONSE_SENT]
    assert len(sent) == n == len(replies) == len(light.history)


def test_non_repudiation_when_gateway_is_down(chain):
    gw, light = make_gateway(chain)
    gw.connect(chain.d1)
    gw.subscribe()
    gw.paused = True
    r = chain.submit(chain.client, C.call_send_message(chain.d1, b"\x01" + bytes(7)))
    chain.mine()
    assert r.status is TxStatus.INCLUDED
    assert chain.ledger.find_transaction(r.tx.nonce).args == r.tx.args
    assert light.trace == [] and gw.log == []


def test_cgb_without_anchoring(chain):
    gw, light = make_gateway(chain, Configuration.CGB, anchor_optional=False)
    gw.connect(chain.d1)
    reply = gw.handle_client_command(chain.d1, LightCommand(Opcode.ON, chain.d1).encode(), 100)
    assert LightResponse.decode(reply).state is True
    assert chain.ledger.pending == []


def test_cgb_merkle_two_leaves(chain):
    gw, light = make_gateway(chain, Configuration.CGB, Scheme.MERKLE_TREE)
    gw.connect(chain.d1)
    cmd = LightCommand(Opcode.ON, chain.d1).encode()
    reply = gw.handle_client_command(chain.d1, cmd, 100)
    assert LightResponse.decode(reply).state is True
    assert chain.ledger.pending == []
    window = gw.anchorer.windows[chain.d1]
    assert [r.payload for r in window.records] == [cmd, reply]
    tree, _ = gw.anchorer.close_window(chain.d1, 200)
    assert verify_inclusion(tree.root, reply, gw.anchorer.proof_for(chain.d1, 2))


def test_cgb_full_anchors_request_and_reply(chain):
    gw, light = make_gateway(chain, Configuration.CGB)
    gw.connect(chain.d1)
    gw.handle_client_command(chain.d1, LightCommand(Opcode.ON, chain.d1).encode(), chain.ledger.head.timestamp)
    chain.mine()
    functions = [tx.function for tx in chain.ledger.transactions if tx.sender == chain.g1]
    assert functions == [C.SEND_MESSAGE, C.SEND_RESPONSE]


def test_cgb_rejected_under_cbg(chain):
    gw, _ = make_gateway(chain)
    gw.connect(chain.d1)
    with pytest.raises(ChannelClosed):
        gw.handle_client_command(chain.d1, bytes(24), 0)


def test_closed_channel(chain):
    gw, light = make_gateway(chain, Configuration.CGB)
    with pytest.raises(ChannelClosed):
        gw.handle_client_command(chain.d1, LightCommand(Opcode.ON, chain.d1).encode(), 0)
    ch = gw.connect(chain.d1)
    ch.close()
    with pytest.raises(ChannelClosed):
        gw.forward_to_device(ch, LightCommand(Opcode.ON, chain.d1).encode(), 0)
    assert light.trace == [] and ch.frames == 0


def test_cgb_timeout(chain):
    gw, light = make_gateway(chain, Configuration.CGB)
    gw.connect(chain.d1)
    light.online = False
    with pytest.raises(DeviceTimeout) as exc:
        gw.handle_client_command(chain.d1, LightCommand(Opcode.ON, chain.d1).encode(), 50)
    assert exc.value.at == 55
    assert chain.ledger.pending == []


def test_telemetry_poll_and_push(chain):
    box = RefrigeratedContainer(chain.d1, GW_FP, fingerprint("d1"), seed=1)
    gw, _ = make_gateway(chain, device=box)
    ch = gw.connect(chain.d1)
    frame = gw.forward_to_device(ch, bytes(24), 0)
    assert len(frame) == 24
    r = gw.handle_telemetry(chain.d1, box.emit(60), chain.ledger.head.timestamp)
    chain.mine()
    # the 16-byte id travels as the deviceID argument, so 8 bytes are stored
    assert r.gas_used == 52_132
    assert len(C.decode_messages(chain.ledger.call(*C.call_get_messages(chain.d1)))[0][1]) == 8


def test_log_written_as_json_lines(chain, tmp_path):
    gw, _ = make_gateway(chain, Configuration.CGB)
    gw.connect(chain.d1)
    gw.handle_client_command(chain.d1, LightCommand(Opcode.ON, chain.d1).encode(), 0)
    gw.write_log(tmp_path / "gw.jsonl")
    rows = [json.loads(line) for line in (tmp_path / "gw.jsonl").read_text().splitlines()]
    assert [r["event"] for r in rows] == ["forward", "anchor", "anchor"]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.booleans(), st.booleans()), min_size=1, max_size=8))
def test_no_unauthenticated_traffic(attempts):
    chain = Chain().setup()
    gw, light = make_gateway(chain, Configuration.CGB, anchor_optional=False)
    delivered = 0
    for good_gw, good_dev, close_after in attempts:
        try:
            ch = gw.open_device_channel(chain.d1, GW_FP if good_gw else ATTACKER_FP,
                                        light.fingerprint if good_dev else fingerprint("x"))
        except (PinningMismatch, UnknownDeviceFingerprint):
            assert not (good_gw and good_dev)
        else:
            assert good_gw and good_dev
            if close_after:
                ch.close()
        try:
            gw.handle_client_command(chain.d1, LightCommand(Opcode.STATUS, chain.d1).encode(), 0)
            delivered += 1
            assert gw.channels[chain.d1].state is ChannelState.AUTHENTICATED
        except ChannelClosed:
            ch = gw.channels.get(chain.d1)
            assert ch is None or ch.state is not ChannelState.AUTHENTICATED
    assert len([t for t in light.trace if t[1] == "in"]) == delivered
