import pytest

from batchsim import costmodel as cm
from batchsim.core import Call, DISPATCHER_ADDRESS
from batchsim.dispatcher import BatchType, DispatchMode, classify_batch, select_mode
from batchsim.identity import keygen
from batchsim.primitives import Address

from _support import TOKEN, signed_batch, token_chain, transfers

COST = {
    DispatchMode.IBATCH: cm.cost_ibatch,
    DispatchMode.IDEAL: cm.cost_ibatch,
    DispatchMode.IBATCH_INLINED: cm.cost_inlined,
    DispatchMode.BASELINE_B1: cm.cost_b1,
    DispatchMode.BASELINE_B2: cm.cost_b2,
    DispatchMode.TOP1_ELIDED: cm.cost_top1,
}


@pytest.fixture
def callers():
    return [keygen(100 + i) for i in range(12)]


@pytest.mark.parametrize("mode", list(COST), ids=lambda m: m.value)
@pytest.mark.parametrize("n", [1, 5, 12])
def test_metered_gas_equals_closed_form(mode, n, callers):
    if mode is DispatchMode.TOP1_ELIDED:
        batcher = callers[0]
        group = [batcher]
    else:
        batcher = keygen(999)
        group = callers
    chain = token_chain(mode, group + [batcher])
    invs = transfers(group, n)  # recipient is funded, so transfers only update
    chain.send_raw_transaction(signed_batch(mode, batcher, group, chain, invs))
    blk = chain.produce_block()
    rc = blk.receipts[0]
    assert rc.status, rc.error
    assert len(rc.dispatch.dispatched) == n
    assert rc.gas_used == COST[mode](N=n, X=3, Y=10600)


def test_bad_signature_skips_only_that_entry(callers):
    batcher = keygen(999)
    chain = token_chain(DispatchMode.IBATCH, callers + [batcher])
    invs = transfers(callers[:3], 3)
    outsider = keygen(555)
    invs[1] = type(invs[1])(outsider.address, TOKEN, invs[1].func, invs[1].args)
    chain.send_raw_transaction(signed_batch(DispatchMode.IBATCH, batcher, callers[:3], chain, invs))
    rc = chain.produce_block().receipts[0]
    assert [r.status for r in rc.dispatch.results] == ["ok", "skipped", "ok"]


def test_signed_nonce_must_match_tx_nonce(callers):
    from batchsim.core import BatchSignPayload, encode_batch_data, encode_sign_payload, sign_transaction
    from batchsim.identity import sign

    batcher = keygen(999)
    chain = token_chain(DispatchMode.IBATCH, callers + [batcher])
    invs = transfers(callers[:2], 2)
    payload = BatchSignPayload(tuple(i.call for i in invs), 7)
    sigs = [sign(kp, encode_sign_payload(payload)) for kp in callers[:2]]
    tx = sign_transaction(batcher, 0, DISPATCHER_ADDRESS, 0, 1, encode_batch_data(payload, sigs))
    chain.send_raw_transaction(tx)
    rc = chain.produce_block().receipts[0]
    assert not rc.status and "nonce" in rc.error


def test_b2_rejects_reused_nonce(callers):
    batcher = keygen(999)
    chain = token_chain(DispatchMode.BASELINE_B2, callers + [batcher])
    invs = transfers(callers[:1], 1)
    chain.send_raw_transaction(signed_batch(DispatchMode.BASELINE_B2, batcher, callers, chain, invs))
    chain.send_raw_transaction(signed_batch(DispatchMode.BASELINE_B2, batcher, callers, chain, invs))
    blk = chain.produce_block()
    assert [r.status for r in blk.receipts[1].dispatch.results] == ["skipped"]


def test_b1_refuses_non_transfer(callers):
    from dataclasses import replace

    from batchsim.primitives import selector

    batcher = keygen(999)
    chain = token_chain(DispatchMode.BASELINE_B1, callers + [batcher])
    invs = [replace(i, func=selector("approve")) for i in transfers(callers[:2], 2)]
    chain.send_raw_transaction(signed_batch(DispatchMode.BASELINE_B1, batcher, callers, chain, invs))
    rc = chain.produce_block().receipts[0]
    assert not rc.status


def test_top1_refuses_foreign_callers(callers):
    batcher = callers[0]
    chain = token_chain(DispatchMode.TOP1_ELIDED, callers)
    invs = transfers(callers[:2], 2)
    chain.send_raw_transaction(signed_batch(DispatchMode.TOP1_ELIDED, batcher, callers, chain, invs))
    assert not chain.produce_block().receipts[0].status


def test_classify_and_select():
    a, b = Address.from_label("a"), Address.from_label("b")
    c1, c2 = Address.from_label("c1"), Address.from_label("c2")
    f = b"\x00" * 4
    assert classify_batch([Call(a, c1, f), Call(a, c1, f)]) is BatchType.S1
    assert classify_batch([Call(a, c1, f), Call(b, c1, f)]) is BatchType.S2
    assert classify_batch([Call(a, c1, f), Call(a, c2, f)]) is BatchType.S3
    assert classify_batch([Call(a, c1, f), Call(b, c2, f)]) is BatchType.S4
    assert select_mode(BatchType.S2, inline=True) is DispatchMode.IBATCH_INLINED
    assert select_mode(BatchType.S4, inline=True) is DispatchMode.IBATCH
    assert select_mode(BatchType.S3, callers={a}, batch_sender=a) is DispatchMode.TOP1_ELIDED
    assert select_mode(BatchType.S1, callers={a}, batch_sender=b) is DispatchMode.IBATCH
    with pytest.raises(ValueError):
        classify_batch([])
