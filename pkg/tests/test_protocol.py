import pytest

from batchsim.core import BatchMessage
from batchsim.errors import ConfigError, NoBatch, Retry
from batchsim.protocol import (
    EXPECTED_FATE,
    AdversaryScript,
    AttackKind,
    RefusalReason,
    Refusal,
    audit,
    build_bed,
    collect_signatures,
    emit,
    form_batch,
    load_scenarios,
    run_adversary,
    submit,
)


def _honest(bed):
    bmsg = form_batch(bed.batcher, 0.0)
    rnd = collect_signatures(bed.batcher, bmsg, bed.agents)
    btx = emit(bed.batcher, bmsg, rnd, 5, bed.agents)
    bed.chain.produce_block()
    return bmsg, btx


def test_honest_round_executes_and_audits_clean():
    bed = build_bed(seed=1)
    _, btx = _honest(bed)
    rc = bed.chain.receipts[btx.id]
    assert rc.status and len(rc.dispatch.dispatched) == len(bed.invocations)
    for agent in bed.agents.values():
        assert agent.received_acks == [btx.id]
        assert audit(agent, bed.chain).clean


def test_caller_refuses_duplicated_entry():
    bed = build_bed(seed=2)
    inv = bed.invocations[0]
    agent = bed.agents[inv.caller]
    bmsg = BatchMessage(((inv, inv.caller_nonce), (inv, inv.caller_nonce)), 0)
    r = agent.validate_and_sign(bmsg)
    assert isinstance(r, Refusal) and r.reason is RefusalReason.DUPLICATED


def test_caller_refuses_unknown_nonce():
    bed = build_bed(seed=3)
    inv = bed.invocations[0]
    r = bed.agents[inv.caller].validate_and_sign(BatchMessage(((inv, inv.caller_nonce + 9),), 0))
    assert isinstance(r, Refusal) and r.reason is RefusalReason.NONCE_MISMATCH


def test_caller_refuses_message_without_its_call():
    bed = build_bed(seed=4)
    a, b = bed.invocations[:2]
    r = bed.agents[b.caller].validate_and_sign(BatchMessage(((a, a.caller_nonce),), 0))
    assert isinstance(r, Refusal) and r.reason is RefusalReason.MISSING


def test_silent_caller_gets_sentinel_and_is_skipped():
    bed = build_bed(seed=5, n_callers=3)
    silent = bed.invocations[1].caller
    bed.agents[silent].reply_delay = None
    bmsg = form_batch(bed.batcher, 0.0)
    rnd = collect_signatures(bed.batcher, bmsg, bed.agents)
    assert rnd.dropped == {1}
    btx = emit(bed.batcher, bmsg, rnd, 5, bed.agents)
    bed.chain.produce_block()
    statuses = [r.status for r in bed.chain.receipts[btx.id].dispatch.results]
    assert statuses == ["ok", "skipped", "ok"]


def test_all_silent_means_no_batch():
    bed = build_bed(seed=6, n_callers=3)
    for a in bed.agents.values():
        a.reply_delay = None
    with pytest.raises(NoBatch):
        collect_signatures(bed.batcher, form_batch(bed.batcher, 0.0), bed.agents)


def test_closed_window_asks_for_retry():
    bed = build_bed(seed=7)
    bed.batcher.closed = True
    agent = next(iter(bed.agents.values()))
    before = agent.local_nonce
    with pytest.raises(Retry):
        submit(agent, bed.batcher, bed.token, bed.invocations[0].func, (1, 1), 1)
    assert agent.local_nonce == before


def test_audit_needs_chain():
    bed = build_bed(seed=8)
    with pytest.raises(Retry):
        audit(next(iter(bed.agents.values())), None)


@pytest.mark.parametrize("kind", list(AttackKind), ids=lambda k: k.value)
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_attacks_end_where_expected(kind, seed):
    out = run_adversary(AdversaryScript(kind), seed=seed)
    assert out.fate is EXPECTED_FATE[kind], out.note
    assert not out.callee_mutated


def test_load_scenarios(tmp_path):
    p = tmp_path / "s.txt"
    p.write_text("# drill\nr1,0\nsplit-r4,2\n\nforge\n")
    got = load_scenarios(p)
    assert [(s.kind, s.target) for s in got] == [
        (AttackKind.REPLAY_R1, 0), (AttackKind.SPLIT_R4, 2), (AttackKind.FORGE, 0)
    ]
    p.write_text("warp,1\n")
    with pytest.raises(ConfigError):
        load_scenarios(p)
