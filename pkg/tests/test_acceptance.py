"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (shown in the terminal summary) before
asserting, so a failing criterion still reports its measured numbers.
"""

import io
import random
import time
from contextlib import redirect_stdout
from fractions import Fraction

from batchsim import costmodel as cm
from batchsim.bench import ReplayConfig, SyntheticSpec, System, gen_synthetic, replay
from batchsim.cli import main
from batchsim.policy import PolicyMode, PolicySpec, PricingPolicy, price_batch
from batchsim.protocol import AdversaryScript, AttackKind, run_adversary
from batchsim.rewriter import rewrite

from _support import DISPATCHER, FIXTURES, buggy_erc20_rewrite, equivalence_failures, routing_failures

X, Y = 3, 10600


def _cli(*argv) -> tuple[int, str]:
    buf = io.StringIO()
    with redirect_stdout(buf):
        code = main(list(argv))
    return code, buf.getvalue()


def _fixed(n: int, windows: int, system: System, seed: int = 0):
    st = gen_synthetic(SyntheticSpec(fixed_batch=n, duration=120.0 * windows, callers=max(n, 10), seed=seed))
    cfg = ReplayConfig(policy=PolicySpec(min_batch=1, max_batch=n))
    return replay(st.records, system, st.keys(), config=cfg)


def test_criterion_01_break_even(record):
    t0 = time.perf_counter()
    code, out = _cli("analyze", "nmin", "--x", "3")
    sweep = [n for n in range(1, 101) if cm.cost_ibatch(N=n, X=X, Y=0) < cm.cost_b0(N=n, X=X, Y=0)]
    elapsed = time.perf_counter() - t0
    ok = code == 0 and out.strip() == "5" and sweep == list(range(5, 101)) and elapsed < 1.0
    record(1, ok, f"nmin={out.strip()} cheaper-from={sweep[0]} t={elapsed:.2f}s")
    assert ok


def test_criterion_02_meter_matches_analysis(record):
    t0 = time.perf_counter()
    windows = 3
    details, ok = [], True
    for n in (1, 5, 10, 60):
        ib = _fixed(n, windows, System.IBATCH)
        b0 = _fixed(n, windows, System.B0)
        want_ib = windows * cm.cost_ibatch(N=n, X=X, Y=Y)
        want_b0 = windows * cm.cost_b0(N=n, X=X, Y=Y)
        good = ib.batch_sizes == {n: windows} and ib.total_gas == want_ib and b0.total_gas == want_b0
        ok &= good
        details.append(f"N={n}:{'=' if good else '!='}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 10.0
    record(2, ok, " ".join(details) + f" t={elapsed:.2f}s")
    assert ok


def test_criterion_03_batch_100_ordering(record):
    t0 = time.perf_counter()
    g = {s: _fixed(100, 2, s).gas_per_call for s in
         (System.B0, System.B1, System.B2, System.IBATCH, System.IDEAL, System.INLINED)}
    ib = g[System.IBATCH]
    save = {s: 1 - ib / g[s] for s in (System.B0, System.B1, System.B2)}
    extra = 1 - g[System.INLINED] / ib
    elapsed = time.perf_counter() - t0
    checks = {
        "ideal~ibatch": abs(g[System.IDEAL] - ib) / ib <= 0.01,
        "vsB1>=12%": save[System.B1] >= 0.12,
        "vsB2>=12%": save[System.B2] >= 0.12,
        "vsB0>=15%": save[System.B0] >= 0.15,
        "inlined>=5%": extra >= 0.05,
        "t<30s": elapsed < 30,
    }
    ok = all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    record(3, ok, f"vsB0={save[System.B0]:.1%} vsB1={save[System.B1]:.1%} vsB2={save[System.B2]:.1%} "
                  f"inlined+={extra:.1%} failed={failed or 'none'}")
    assert ok, failed


def test_criterion_04_small_batches_lose(record):
    per_call = {n: _fixed(n, 2, System.IBATCH).gas_per_call for n in range(1, 6)}
    b0 = _fixed(1, 2, System.B0).gas_per_call
    ok = all(per_call[n] >= b0 for n in range(1, 5)) and per_call[5] < b0
    record(4, ok, " ".join(f"N={n}:{v:.0f}" for n, v in per_call.items()) + f" b0={b0:.0f}")
    assert ok


def test_criterion_05_pricing_example(record):
    t0 = time.perf_counter()
    calls, block = [8, 9, 10], list(range(1, 8))
    p50 = price_batch(calls, block, PricingPolicy.parse("batch:50"))
    p10 = price_batch(calls, block, PricingPolicy.parse("block:10"))
    elapsed = time.perf_counter() - t0
    ok = p50 == 9 and p10 == 1 and elapsed < 1.0
    record(5, ok, f"batch50={p50} block10={p10}")
    assert ok


def test_criterion_06_profitability_and_payments(record):
    table = {k: cm.generic_profitability(*v) for k, v in cm.CHAIN_FEES.items()}
    ok_table = table == {"ethereum": 12296, "tron": 79, "eos": 96} and all(v > 0 for v in table.values())
    bad = [n for n in range(1, 10**6 + 1)
           if cm.payment_batch_per_call_exact(n) != Fraction(21000, n) + 22116
           or cm.payment_batch_per_call_exact(n) <= 21000]
    ok = ok_table and not bad
    record(6, ok, f"table={table} payment-mismatches={len(bad)}")
    assert ok


def test_criterion_07_security_suite(record):
    t0 = time.perf_counter()
    scripted = [AttackKind.FORGE, AttackKind.REPLAY_R1, AttackKind.REPLAY_R2, AttackKind.REPLAY_R3,
                AttackKind.OMIT, AttackKind.SPLIT_R4]
    scripted_ok = all(run_adversary(AdversaryScript(k)).as_expected for k in scripted)
    rng = random.Random(2024)
    kinds = list(AttackKind)
    runs = [run_adversary(AdversaryScript(kinds[i % len(kinds)], rng.randrange(4)), seed=i) for i in range(200)]
    good = sum(r.as_expected for r in runs)
    mutated = sum(r.callee_mutated for r in runs)
    elapsed = time.perf_counter() - t0
    ok = scripted_ok and good == 200 and mutated == 0 and elapsed < 30
    record(7, ok, f"scripted={'ok' if scripted_ok else 'BAD'} seeded={good}/200 mutated={mutated} t={elapsed:.1f}s")
    assert ok


def test_criterion_08_rewriter_equivalence(record):
    t0 = time.perf_counter()
    parts, ok = [], True
    for i, kind in enumerate(sorted(FIXTURES)):
        c = FIXTURES[kind]()
        byd = rewrite(c, DISPATCHER)
        eq_bad = equivalence_failures(kind, c, byd, 1000, seed=100 + i)
        fz_bad, tried = routing_failures(kind, c, byd, 100, seed=200 + i)
        ok &= eq_bad == 0 and fz_bad == 0
        parts.append(f"{kind}:eq-fail={eq_bad} fuzz-fail={fz_bad}/{tried}")
    control = equivalence_failures("erc20", FIXTURES["erc20"](), buggy_erc20_rewrite(), 1000, seed=99)
    elapsed = time.perf_counter() - t0
    ok &= control > 0 and elapsed < 60
    record(8, ok, " ".join(parts) + f" bug-control-fails={control} t={elapsed:.1f}s")
    assert ok


def test_criterion_09_delay_properties(record):
    t0 = time.perf_counter()
    pricings = ["batch:50", "batch:25", "block:10"]
    checks = {"a": True, "b": True, "c": True, "d": True}
    notes = []
    for seed in (1, 2, 3):
        st = gen_synthetic(SyntheticSpec(rate=0.1, duration=7200, callers=200, seed=seed))
        keys, blocks = st.keys(), st.blocks

        def run(system, spec):
            return replay(st.records, system, keys, blocks=blocks, config=ReplayConfig(policy=spec))

        off = run(System.OFFLINE, PolicySpec(min_batch=1))
        windowed = run(System.IBATCH, PolicySpec())
        b0 = run(System.B0, PolicySpec())
        ones = [run(System.IBATCH, PolicySpec(mode=PolicyMode.ONE_BLOCK, pricing=PricingPolicy.parse(p)))
                for p in pricings]
        checks["a"] &= off.mean_delay == 0 and off.included == len(st.records)
        checks["b"] &= ones[0].mean_delay <= windowed.mean_delay
        ether = [r.ether_per_call for r in ones]
        delay = [r.mean_delay for r in ones]
        checks["c"] &= all(ether[i + 1] <= ether[i] * 1.05 for i in range(len(ether) - 1))
        checks["c"] &= all(delay[i + 1] >= delay[i] for i in range(len(delay) - 1))
        if windowed.windows and windowed.windows_batched / windowed.windows >= 0.5:
            checks["d"] &= windowed.gas_per_call < b0.gas_per_call
        notes.append(f"s{seed}:off={off.mean_delay:.2f} 1b={ones[0].mean_delay:.2f} win={windowed.mean_delay:.2f} "
                     f"eth={'/'.join(f'{e / 1e3:.0f}k' for e in ether)}")
    elapsed = time.perf_counter() - t0
    ok = all(checks.values()) and elapsed < 120
    record(9, ok, f"{''.join(k for k, v in checks.items() if v)} hold; " + "; ".join(notes) + f" t={elapsed:.1f}s")
    assert ok, checks


def test_criterion_10_determinism(record, tmp_path):
    runs = []
    for d in ("a", "b"):
        out = tmp_path / d
        c1, _ = _cli("bench", "--seed", "42", "--duration", "1800", "--systems", "b0,ibatch,offline",
                     "--out", str(out / "market"), "--emit-plots")
        c2, _ = _cli("bench", "--seed", "42", "--fixed-batch", "20", "--windows", "3",
                     "--systems", "b0,b1,b2,ibatch,ideal", "--out", str(out / "fixed"), "--emit-plots")
        assert c1 == c2 == 0
        runs.append({p.relative_to(out): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()})
    same = runs[0] == runs[1]
    record(10, same, f"{len(runs[0])} files byte-identical={same}")
    assert same
