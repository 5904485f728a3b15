import json
import threading

import pytest

from biot import contract as C
from biot.errors import ClockRegression, LedgerCorrupt, LedgerError, NotReadOnly, UnknownSender
from biot.ledger import Address, LatencyModel, Ledger, TxStatus, read_blocks, replay, verify_chain


def oracle_inclusion(t, interval=15):
    # next multiple of the interval strictly greater than t
    return (t // interval + 1) * interval


def test_address_text_form():
    a = Address.from_label("x")
    assert len(a.raw) == 20
    assert str(a) == "0x" + a.raw.hex() and str(a) == str(a).lower()
    assert Address.from_hex(str(a)) == a
    with pytest.raises(ValueError):
        Address(b"\x00" * 19)


@pytest.mark.parametrize("t", [61, 60, 0, 14.5, 15, 899])
def test_inclusion_strictly_after_submission(fresh_chain, t):
    lg = fresh_chain.ledger
    r = lg.submit_call(fresh_chain.admin, C.call_deploy(), t)
    assert r.tx.gas_used == 0 and r.status is TxStatus.PENDING
    lg.advance_to(t + 30)
    block = lg.blocks[r.block_index]
    assert block.timestamp == oracle_inclusion(t)
    assert r.wait == oracle_inclusion(t) - t
    assert r.gas_used == 866_212


def test_inclusion_examples(fresh_chain):
    lg = fresh_chain.ledger
    r61 = lg.submit_call(fresh_chain.admin, C.call_deploy(), 61)
    lg.advance_to(75)
    assert r61.resolved_at == 75 and r61.wait == 14


def test_block_boundary(fresh_chain):
    lg = fresh_chain.ledger
    lg.advance_to(60)
    r = lg.submit_call(fresh_chain.admin, C.call_deploy(), 60)
    lg.advance_to(60)
    assert r.status is TxStatus.PENDING
    lg.advance_to(75)
    assert lg.blocks[r.block_index].timestamp == 75


def test_registration_and_message_gas(fresh_chain):
    c = fresh_chain
    c.submit(c.admin, C.call_deploy())
    c.mine()
    r1 = c.submit(c.admin, C.call_register_gateway(c.g1))
    c.mine()
    c.submit(c.admin, C.call_register_device(c.d1, c.g1))
    c.mine()
    r2 = c.submit(c.client, C.call_send_message(c.d1, b"x" * 16))
    r3 = c.submit(c.g1, C.call_send_response(c.d1, b"y" * 16))
    c.mine()
    assert (r1.gas_used, r2.gas_used, r3.gas_used) == (43_702, 52_132, 52_132)
    assert r2.block_index == r3.block_index
    assert [tx.nonce for tx in c.ledger.blocks[r2.block_index].transactions] == [r2.tx.nonce, r3.tx.nonce]


def test_empty_block_advances_digest(fresh_chain):
    lg = fresh_chain.ledger
    before = lg.head.digest
    b = lg.produce_block(15)
    assert b.transactions == [] and b.digest != before and b.parent_digest == before


def test_produce_block_clock_rules(fresh_chain):
    lg = fresh_chain.ledger
    lg.produce_block(15)
    with pytest.raises(ClockRegression):
        lg.produce_block(15)
    with pytest.raises(ClockRegression):
        lg.produce_block(0)
    with pytest.raises(LedgerError):
        lg.produce_block(45)


def test_reverted_tx_pays_and_changes_nothing(chain):
    lg = chain.ledger
    before = lg.state_digest()
    n_events = len(lg.events)
    r = chain.submit(chain.g2, C.call_send_response(chain.d1, b"z" * 16))
    chain.mine()
    assert r.status is TxStatus.REVERTED and r.gas_used == 21_000 and r.tx.error == "Unauthorized"
    assert r.tx in lg.blocks[r.block_index].transactions
    assert lg.state_digest() == before and len(lg.events) == n_events


def test_unknown_sender(fresh_chain):
    with pytest.raises(UnknownSender):
        fresh_chain.ledger.submit_call(Address.from_label("nobody"), C.call_deploy(), 0)


def test_call_is_free_and_pure(chain):
    lg = chain.ledger
    assert C.decode_messages(lg.call(C.GET_MESSAGES, C.call_get_messages(chain.d1)[1])) == []
    chain.submit(chain.g1, C.call_send_response(chain.d1, b"a" * 8))
    chain.mine()
    digest, n_blocks, t, gas = lg.state_digest(), len(lg.blocks), lg.head.timestamp, \
        sum(tx.gas_used for tx in lg.transactions)
    results = [lg.call(*C.call_get_messages(chain.d1), sender=chain.client) for _ in range(5)]
    assert len(set(results)) == 1
    assert C.decode_messages(results[0]) == [(1, b"a" * 8)]
    assert lg.state_digest() == digest and len(lg.blocks) == n_blocks and lg.head.timestamp == t
    assert sum(tx.gas_used for tx in lg.transactions) == gas
    with pytest.raises(NotReadOnly):
        lg.call(*C.call_deploy())


def test_subscription_filter_and_timing(chain):
    lg = chain.ledger
    only_d1 = lg.subscribe_events(C.MESSAGE_SENT, chain.d1)
    a, b = lg.subscribe_events(C.MESSAGE_SENT), lg.subscribe_events(C.MESSAGE_SENT)
    t0 = lg.head.timestamp
    chain.submit(chain.client, C.call_send_message(chain.d1, b"1"), t0 + 1)
    chain.submit(chain.client, C.call_send_message(chain.d2, b"2"), t0 + 2)
    chain.mine()
    assert [e.device_id for e in only_d1] == [chain.d1]
    assert list(a) == list(b) and len(list(a)) == 2
    for e in a:
        assert e.timestamp == lg.blocks[e.block_index].timestamp == t0 + 15
        tx = lg.find_transaction(e.tx_nonce)
        assert tx.status is TxStatus.INCLUDED and tx.block_index == e.block_index


def test_unsubscribe(chain):
    sub = chain.ledger.subscribe_events(C.MESSAGE_SENT)
    sub.unsubscribe()
    chain.submit(chain.client, C.call_send_message(chain.d1, b"1"))
    chain.mine()
    assert list(sub) == []


def test_confirmations_delay_resolution():
    lg = Ledger(latency=LatencyModel(15, confirmations=3))
    admin = lg.create_account("admin")
    r = lg.submit_call(admin, C.call_deploy(), 1)
    lg.advance_to(15)
    assert r.block_index == 1 and not r.done
    lg.advance_to(45)
    assert r.resolved_at == 45 and r.wait == 44


def test_latency_model_validation():
    with pytest.raises(ValueError):
        LatencyModel(0)
    with pytest.raises(ValueError):
        LatencyModel(15, 0)


def test_chain_integrity_and_tamper(chain):
    lg = chain.ledger
    assert lg.verify_chain()
    for prev, cur in zip(lg.blocks, lg.blocks[1:]):
        assert cur.parent_digest == prev.digest and cur.timestamp == prev.timestamp + 15
    lg.blocks[1].transactions[0].gas_used += 1
    assert not verify_chain(lg.blocks)


def test_persistence_round_trip(chain, tmp_path):
    chain.submit(chain.client, C.call_send_message(chain.d1, b"hi"))
    chain.mine()
    path = tmp_path / "ledger.bin"
    chain.ledger.save(path)
    blocks = read_blocks(path)
    assert [b.serialize() for b in blocks] == [b.serialize() for b in chain.ledger.blocks]
    chain.ledger.export_json(tmp_path / "ledger.json")
    exported = json.loads((tmp_path / "ledger.json").read_text())
    assert exported[-1]["digest"] == chain.ledger.head.digest.hex()


def test_corrupt_file_detected(chain, tmp_path):
    path = tmp_path / "ledger.bin"
    chain.ledger.save(path)
    data = bytearray(path.read_bytes())
    data[-5] ^= 0x01
    path.write_bytes(bytes(data))
    with pytest.raises(LedgerCorrupt):
        read_blocks(path)


def test_replay_reproduces_digests(chain):
    chain.submit(chain.client, C.call_send_message(chain.d1, b"a"), 100)
    chain.submit(chain.g2, C.call_send_response(chain.d1, b"b"), 101)  # reverts
    chain.submit(chain.g1, C.call_send_response(chain.d1, b"c"), 130)
    chain.mine()
    again = replay(chain.ledger.blocks)
    assert [b.digest for b in again.blocks] == [b.digest for b in chain.ledger.blocks]
    assert again.state_digest() == chain.ledger.state_digest()


def test_concurrent_submission_and_reads(chain):
    lg = chain.ledger
    clients = [lg.create_account(f"c{i}") for i in range(8)]
    t = lg.head.timestamp

    def work(sender):
        for k in range(50):
            lg.submit_call(sender, C.call_send_message(chain.d1, bytes([k])), t)
            lg.call(*C.call_get_messages(chain.d1))

    threads = [threading.Thread(target=work, args=(c,)) for c in clients]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    assert len(lg.pending) == 400
    assert sorted(tx.nonce for tx in lg.pending) == [tx.nonce for tx in lg.pending]
    chain.mine()
    assert len(lg.contract.state.outbox[chain.d1]) == 400
    assert [s for s, _ in lg.contract.state.outbox[chain.d1]] == list(range(1, 401))


def test_gas_zero_pending_positive_after(chain):
    for tx in chain.ledger.transactions:
        assert tx.status in (TxStatus.INCLUDED, TxStatus.REVERTED) and tx.gas_used > 0
