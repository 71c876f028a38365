import pytest

from batchsim import costmodel as cm
from batchsim.bench import (
    ReplayConfig,
    SyntheticSpec,
    System,
    TraceRecord,
    calls_per_block_cdf,
    expected_saving_from_cdf,
    gen_synthetic,
    load_blocks,
    load_trace,
    replay,
    write_blocks,
    write_trace,
)
from batchsim.bench.report import write_report
from batchsim.bench.trace import TOKEN
from batchsim.errors import ModeViolation, ParseError
from batchsim.identity import keygen
from batchsim.policy import PolicyMode, PolicySpec, PricingPolicy
from batchsim.primitives import selector
from batchsim.rewriter.fixtures import htlc

KEYS = {kp.address: kp for kp in (keygen(i + 1) for i in range(10))}
ADDRS = list(KEYS)


def _records(n, dt=1.0, func="transfer"):
    return [
        TraceRecord(1.0 + i * dt, 1, ADDRS[i % len(ADDRS)], TOKEN, selector(func),
                    (ADDRS[(i + 1) % len(ADDRS)].to_int(), 5), 20)
        for i in range(n)
    ]


def test_single_call_b0_gas():
    rep = replay(_records(1), System.B0, KEYS)
    assert rep.gas_per_call == 21000 + 2176 * 3 + 10600


def test_six_calls_form_one_batch():
    rep = replay(_records(6), System.IBATCH, KEYS)
    assert rep.batch_sizes == {6: 1}
    assert rep.gas_per_call == cm.cost_ibatch(N=6, X=3, Y=10600) / 6 < replay(_records(6), System.B0, KEYS).gas_per_call


def test_four_calls_fall_back_to_b0():
    ib = replay(_records(4), System.IBATCH, KEYS)
    b0 = replay(_records(4), System.B0, KEYS)
    assert ib.fallback_calls == 4 and ib.total_gas == b0.total_gas


def test_every_call_is_accounted_for():
    st = gen_synthetic(SyntheticSpec(rate=0.2, duration=1200, callers=30, seed=3))
    for system in (System.B0, System.IBATCH, System.B2):
        rep = replay(st.records, system, st.keys(), blocks=st.blocks)
        assert rep.included + rep.dropped_calls == len(st.records)


def test_b0_total_is_sum_of_analytic_costs():
    st = gen_synthetic(SyntheticSpec(rate=0.2, duration=600, callers=30, seed=5))
    rep = replay(st.records, System.B0, st.keys())
    assert rep.total_gas == len(st.records) * cm.cost_b0(N=1, X=3, Y=10600)


def test_unresponsive_callers_are_dropped():
    recs = _records(6)
    cfg = ReplayConfig(unresponsive=frozenset({recs[2].caller}))
    rep = replay(recs, System.IBATCH, KEYS, config=cfg)
    assert rep.dropped_calls == 1 and rep.included == 5


def test_b1_refuses_non_token_calls():
    with pytest.raises(ModeViolation):
        replay(_records(6, func="approve"), System.B1, KEYS)


def test_windowed_never_worse_than_b0_when_batches_are_large():
    st = gen_synthetic(SyntheticSpec(rate=0.2, duration=2400, callers=40, seed=9))
    ib = replay(st.records, System.IBATCH, st.keys())
    b0 = replay(st.records, System.B0, st.keys())
    if all(k >= 5 for k in ib.batch_sizes):
        assert ib.gas_per_call <= b0.gas_per_call


def test_oneblock_replay_runs():
    st = gen_synthetic(SyntheticSpec(rate=0.1, duration=1200, callers=30, seed=2))
    spec = PolicySpec(mode=PolicyMode.ONE_BLOCK, pricing=PricingPolicy.parse("batch:50"))
    rep = replay(st.records, System.IBATCH, st.keys(), blocks=st.blocks, config=ReplayConfig(policy=spec))
    assert rep.included == len(st.records) and rep.mean_delay >= 0


def test_offline_needs_blocks():
    with pytest.raises(ValueError):
        replay(_records(3), System.OFFLINE, KEYS)


# -- traces --------------------------------------------------------------------


def test_trace_round_trip(tmp_path):
    st = gen_synthetic(SyntheticSpec(rate=0.05, duration=300, callers=5, seed=1))
    p, b = tmp_path / "t.csv", tmp_path / "b.csv"
    write_trace(p, st.records)
    write_blocks(b, st.blocks)
    assert load_trace(p, st.keys()) == st.records
    assert load_blocks(b) == st.blocks


def test_three_row_trace(tmp_path):
    p = tmp_path / "t.csv"
    write_trace(p, _records(3))
    assert len(load_trace(p)) == 3


@pytest.mark.parametrize("mutate,needle", [
    (lambda rows: [rows[0], rows[2], rows[1]], "backwards"),
    (lambda rows: [rows[0].replace("submit_time", "time")] + rows[1:], "header"),
    (lambda rows: rows[:2] + [rows[2] + ",extra"], "fields"),
])
def test_bad_traces(tmp_path, mutate, needle):
    p = tmp_path / "t.csv"
    write_trace(p, _records(2))
    rows = p.read_text().splitlines()
    p.write_text("\n".join(mutate(rows)) + "\n")
    with pytest.raises(ParseError) as ei:
        load_trace(p)
    assert needle in str(ei.value)
    assert ei.value.line is not None


def test_unknown_caller_rejected(tmp_path):
    p = tmp_path / "t.csv"
    write_trace(p, _records(2))
    with pytest.raises(ParseError):
        load_trace(p, {ADDRS[0]: KEYS[ADDRS[0]]})


def test_synthetic_modes():
    assert gen_synthetic(SyntheticSpec(rate=0.0)).records == []
    a = gen_synthetic(SyntheticSpec(seed=4, duration=600))
    b = gen_synthetic(SyntheticSpec(seed=4, duration=600))
    assert a.records == b.records and a.blocks == b.blocks
    st = gen_synthetic(SyntheticSpec(fixed_batch=100, duration=360, callers=100))
    per_window = {}
    for r in st.records:
        per_window.setdefault(int(r.submit_time // 120), set()).add(r.caller)
    assert [len(v) for v in per_window.values()] == [100, 100, 100]


# -- calls per block -------------------------------------------------------------


def _at_blocks(counts):
    recs, t = [], 0.0
    for h, k in enumerate(counts, start=1):
        for _ in range(k):
            t += 0.01
            recs.append(TraceRecord(t, h, ADDRS[0], TOKEN, selector("transfer"), (1, 1), 1))
    return recs


def test_cdf_single_calls():
    cdf = calls_per_block_cdf(_at_blocks([1, 1, 1]))
    assert cdf.buckets[0].fraction == 1.0 and cdf.buckets[-1].cumulative == 1.0
    assert expected_saving_from_cdf(cdf) == 0.0


def test_cdf_hand_computed():
    cdf = calls_per_block_cdf(_at_blocks([1, 3, 6]))
    assert [round(b.fraction, 6) for b in cdf.buckets] == [0.333333, 0.0, 0.333333, 0.333333, 0.0, 0.0]
    # blocks of 1, 3 and 6 calls save 0 + 2 + 5 fees out of 10
    assert expected_saving_from_cdf(cdf) == pytest.approx(0.7)
    assert expected_saving_from_cdf(cdf, fee_share=0.5) == pytest.approx(0.35)


def test_cdf_limits():
    assert calls_per_block_cdf([]).buckets == ()
    assert expected_saving_from_cdf({20: 4}) == pytest.approx(19 / 20)


# -- reports ---------------------------------------------------------------------


def test_reports_are_byte_identical(tmp_path):
    st = gen_synthetic(SyntheticSpec(rate=0.2, duration=900, callers=20, seed=8))
    outs = []
    for run in ("a", "b"):
        reps = [replay(st.records, s, st.keys(), blocks=st.blocks) for s in (System.B0, System.IBATCH)]
        written = write_report(reps, tmp_path / run, cdf=calls_per_block_cdf(st.records), emit_plots=True)
        outs.append({p.name: p.read_bytes() for p in written})
    assert outs[0] == outs[1]
    assert outs[0]["report.csv"].startswith(b"metric,name,value\n")
    assert "gas_per_call.png" in outs[0]


def test_custom_contract_replay():
    # a non-token callee, replayed only to check the config hooks are wired
    recs = [TraceRecord(1.0, 1, ADDRS[0], TOKEN, selector("balanceOf"), (ADDRS[0].to_int(),), 3)]
    cfg = ReplayConfig(contracts={TOKEN: htlc()}, storage={TOKEN: {("balances", ADDRS[0].to_int()): 9}})
    rep = replay(recs, System.B0, KEYS, config=cfg)
    assert rep.included == 1
