"""Command line entry point: ``batchsim {replay,bench,attack,rewrite,analyze}``."""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from batchsim import costmodel
from batchsim.errors import (
    BatchSimError,
    ConfigError,
    DomainError,
    InvalidKeyError,
    NoViableU,
    ParseError,
    TraceError,
    Unprofitable,
)

EXIT_OK, EXIT_CONFIG, EXIT_TRACE, EXIT_SIM = 0, 1, 2, 3

# flag defaults; a config file fills anything the command line leaves unset
DEFAULTS = {
    "policy": "windowed",
    "window": 120.0,
    "min_batch": 5,
    "max_batch": 60,
    "top1": False,
    "pricing": "batch:50",
    "d": 10.0,
    "systems": "b0,ibatch",
    "out": "out",
    "emit_plots": False,
    "parallel": 1,
    "windows": 10,
    "rate": 0.1,
    "duration": 3600.0,
    "callers": 200,
    "period_windows": 200,
}


@dataclass(frozen=True)
class RunConfig:
    command: str
    options: dict
    model: costmodel.GasCostModel = costmodel.DEFAULT_MODEL
    seed: int | None = None
    out: Path = Path("out")
    extra: dict = field(default_factory=dict)


def _read_config_file(path: str) -> dict[str, str]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _coerce(key: str, raw, default):
    if isinstance(default, bool):
        if isinstance(raw, bool):
            return raw
        if str(raw).lower() in ("1", "true", "yes", "on"):
            return True
        if str(raw).lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return type(default)(raw) if default is not None else raw
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: bad value {raw!r}") from exc


def resolve(args: argparse.Namespace, env: dict[str, str] | None = None) -> RunConfig:
    """Merge flags over the config file over defaults, and pick the seed."""
    env = os.environ if env is None else env
    file_opts = _read_config_file(args.config) if getattr(args, "config", None) else {}
    gas = {k.removeprefix("gas."): v for k, v in file_opts.items() if k.startswith("gas.")}
    opts = {}
    for key, default in DEFAULTS.items():
        flag = getattr(args, key, None)
        if flag is not None and flag is not False:
            opts[key] = _coerce(key, flag, default)
        elif key in file_opts:
            opts[key] = _coerce(key, file_opts[key], default)
        else:
            opts[key] = default
    for key, value in vars(args).items():
        if key not in opts and key not in ("config", "func"):
            opts[key] = value if value is not None else file_opts.get(key)
    seed = getattr(args, "seed", None)
    if seed is None and "seed" in file_opts:
        seed = file_opts["seed"]
    if seed is None and env.get("BATCHSIM_SEED"):
        seed = env["BATCHSIM_SEED"]
    try:
        seed = int(seed, 0) if isinstance(seed, str) else seed
    except ValueError as exc:
        raise ConfigError(f"bad seed {seed!r}") from exc
    try:
        model = costmodel.load_model({k: int(v) for k, v in gas.items()}) if gas else costmodel.DEFAULT_MODEL
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad gas override: {exc}") from exc
    return RunConfig(args.command, opts, model, seed, Path(opts["out"]))


def _policy(o: dict):
    from batchsim.policy import PolicyMode, PolicySpec, PricingPolicy

    try:
        mode = PolicyMode(o["policy"])
    except ValueError as exc:
        raise ConfigError(f"unknown policy {o['policy']!r}") from exc
    return PolicySpec(
        window_s=o["window"], top1=o["top1"], min_batch=o["min_batch"], max_batch=o["max_batch"],
        mode=mode, d_s=o["d"], pricing=PricingPolicy.parse(o["pricing"]),
    )


def _systems(o: dict):
    from batchsim.bench.replay import System

    try:
        return [System.parse(s) for s in o["systems"].split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"unknown system in {o['systems']!r}") from exc


def _print_table(reports, out=sys.stdout) -> None:
    base = next((r.gas_per_call for r in reports if r.system == "b0"), None)
    print(f"{'system':<36} {'calls':>6} {'gas/call':>12} {'gwei/call':>14} {'delay':>7} {'vs b0':>8}", file=out)
    for r in reports:
        saving = f"{100 * (1 - r.gas_per_call / base):7.2f}%" if base else "      -"
        print(f"{r.label:<36} {r.included:>6} {r.gas_per_call:>12.1f} {r.ether_per_call:>14.1f} {r.mean_delay:>7.2f} {saving:>8}", file=out)


def _run_cells(cfg: RunConfig, trace, keys, blocks, policy):
    from batchsim.bench.replay import ReplayConfig, System, replay_many

    o = cfg.options
    rc = ReplayConfig(policy=policy, period_windows=o["period_windows"], model=cfg.model)
    systems = _systems(o)
    if System.OFFLINE in systems and not blocks:
        raise ConfigError("the offline system needs a block trace")
    return replay_many([(s, rc) for s in systems], trace, keys, blocks=blocks, parallel=o["parallel"])


def _finish(cfg: RunConfig, reports, trace) -> None:
    from batchsim.bench.metrics import calls_per_block_cdf
    from batchsim.bench.report import write_report

    write_report(reports, cfg.out, cdf=calls_per_block_cdf(trace), emit_plots=cfg.options["emit_plots"])
    _print_table(reports)
    print(f"wrote {cfg.out / 'report.csv'}")


def cmd_replay(cfg: RunConfig) -> int:
    from batchsim.bench.trace import load_blocks, load_trace
    from batchsim.identity import read_keystore

    o = cfg.options
    if not o.get("trace"):
        raise ConfigError("--trace is required")
    trace_path = Path(o["trace"])
    if not trace_path.exists():
        raise TraceError(f"trace {trace_path} not found")
    ks = o.get("keystore") or str(trace_path.with_suffix(".keystore"))
    if not Path(ks).exists():
        raise ConfigError(f"keystore {ks} not found; pass --keystore")
    try:
        keys = read_keystore(ks)
    except (ValueError, InvalidKeyError) as exc:
        raise ConfigError(f"bad keystore {ks}: {exc}") from exc
    trace = load_trace(trace_path, keys)
    blocks = load_blocks(o["blocks"]) if o.get("blocks") else None
    reports = _run_cells(cfg, trace, keys, blocks, _policy(o))
    _finish(cfg, reports, trace)
    return EXIT_OK


def cmd_bench(cfg: RunConfig) -> int:
    from batchsim.bench.trace import SyntheticSpec, gen_synthetic, write_blocks, write_trace
    from batchsim.identity import write_keystore

    o = cfg.options
    if cfg.seed is None:
        raise ConfigError("synthetic runs need a seed: pass --seed or set BATCHSIM_SEED")
    policy = _policy(o)
    if o.get("fixed_batch") is not None:
        n = int(o["fixed_batch"])
        if n < 1:
            raise ConfigError("--fixed-batch must be >= 1")
        from dataclasses import replace

        policy = replace(policy, min_batch=1, max_batch=max(n, 1))
        spec = SyntheticSpec(fixed_batch=n, duration=policy.window_s * o["windows"], callers=max(n, 10),
                             seed=cfg.seed, window_s=policy.window_s)
    else:
        spec = SyntheticSpec(rate=o["rate"], duration=o["duration"], callers=o["callers"], seed=cfg.seed,
                             window_s=policy.window_s)
    st = gen_synthetic(spec)
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_trace(cfg.out / "trace.csv", st.records)
    write_keystore(cfg.out / "trace.keystore", st.seeds)
    blocks = None
    if spec.fixed_batch is None:
        blocks = st.blocks
        write_blocks(cfg.out / "blocks.csv", blocks)
    reports = _run_cells(cfg, st.records, st.keys(), blocks, policy)
    _finish(cfg, reports, st.records)
    return EXIT_OK


def cmd_attack(cfg: RunConfig) -> int:
    from batchsim.protocol import EXPECTED_FATE, AttackKind, AdversaryScript, load_scenarios, run_adversary

    o = cfg.options
    if o.get("scenario"):
        try:
            scripts = load_scenarios(o["scenario"])
        except OSError as exc:
            raise ConfigError(f"cannot read scenario file: {exc}") from exc
    else:
        scripts = [AdversaryScript(k) for k in AttackKind]
    seed = cfg.seed or 0
    print(f"{'attack':<12} {'target':>6} {'fate':<20} {'expected':<20} {'mutated':<8} ok")
    bad = 0
    for i, s in enumerate(scripts):
        res = run_adversary(s, seed=seed + i)
        bad += not res.as_expected
        print(f"{s.kind.value:<12} {s.target:>6} {res.fate.value:<20} {EXPECTED_FATE[s.kind].value:<20} "
              f"{str(res.callee_mutated).lower():<8} {'yes' if res.as_expected else 'NO'}")
    return EXIT_OK if not bad else EXIT_SIM


def cmd_rewrite(cfg: RunConfig) -> int:
    from batchsim.core import DISPATCHER_ADDRESS
    from batchsim.primitives import Address
    from batchsim.rewriter import ir
    from batchsim.rewriter.rewrite import rewrite

    o = cfg.options
    if not o.get("in_path"):
        raise ConfigError("--in is required")
    src = Path(o["in_path"])
    try:
        contract = ir.load(src)
    except OSError as exc:
        raise ConfigError(f"cannot read {src}: {exc}") from exc
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"bad contract document {src}: {exc}") from exc
    try:
        disp = Address(o["dispatcher"]) if o.get("dispatcher") else DISPATCHER_ADDRESS
    except ValueError as exc:
        raise ConfigError(f"bad dispatcher address: {exc}") from exc
    dest = Path(o["rewrite_out"]) if o.get("rewrite_out") else src.with_name(f"{src.stem}_byd{src.suffix}")
    ir.save(rewrite(contract, disp), dest)
    print(dest)
    return EXIT_OK


def cmd_analyze(cfg: RunConfig) -> int:
    o = cfg.options
    what = o["what"]
    x = o.get("x")
    if x is not None and x < 0:
        raise DomainError("--x must be non-negative")
    if what == "nmin":
        print(costmodel.n_min(3 if x is None else x, cfg.model))
    elif what == "profit":
        chains = [o["chain"]] if o.get("chain") else list(costmodel.CHAIN_FEES)
        for name in chains:
            if name not in costmodel.CHAIN_FEES:
                raise ConfigError(f"unknown chain {name!r}; known: {', '.join(costmodel.CHAIN_FEES)}")
            value = costmodel.generic_profitability(*costmodel.CHAIN_FEES[name])
            print(value if o.get("chain") else f"{name},{value}")
    elif what == "payments":
        ns = [o["n"]] if o.get("n") is not None else [1, 10, 100, 1000, 10**6]
        for n in ns:
            value = costmodel.payment_batch_per_call(n, model=cfg.model)
            print(value if o.get("n") is not None else f"{n},{value}")
    elif what == "costs":
        xx = 3 if x is None else x
        y = o.get("y") if o.get("y") is not None else 10600
        nmax = o.get("n") or 20
        print("N,b0,b1,b2,ibatch,inlined,top1")
        for n in range(1, nmax + 1):
            w = costmodel.WorkloadShape(n, xx, y)
            row = [f(w, cfg.model) for f in (costmodel.cost_b0, costmodel.cost_b1, costmodel.cost_b2,
                                            costmodel.cost_ibatch, costmodel.cost_inlined, costmodel.cost_top1)]
            print(",".join(map(str, [n, *row])))
    elif what == "pricing":
        u = o.get("u") or 100
        sp = costmodel.service_pricing(u, o.get("n"), 3 if x is None else x)
        print(f"u_min={sp.u_min} v_min={float(sp.v_min):.2f} v_max={float(sp.v_max):.2f}")
    return EXIT_OK


COMMANDS = {"replay": cmd_replay, "bench": cmd_bench, "attack": cmd_attack, "rewrite": cmd_rewrite, "analyze": cmd_analyze}


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--policy", choices=["windowed", "oneblock"], help="batching policy (default windowed)")
    p.add_argument("--window", type=float, help="window length in seconds (default 120)")
    p.add_argument("--min-batch", dest="min_batch", type=int, help="smallest batch worth sending (default 5)")
    p.add_argument("--max-batch", dest="max_batch", type=int, help="largest batch (default 60)")
    p.add_argument("--top1", action="store_true", default=None, help="batch only the most active caller per window")
    p.add_argument("--pricing", help="batch:P | block:P | fixed:PRICE (default batch:50)")
    p.add_argument("--d", type=float, help="seconds after each block before evicting the bpool (default 10)")
    p.add_argument("--systems", help="comma list of b0,ibatch,inlined,b1,b2,ideal,offline (default b0,ibatch)")
    p.add_argument("--out", help="output directory (default out)")
    p.add_argument("--emit-plots", dest="emit_plots", action="store_true", default=None,
                   help="also write gnuplot .dat files and PNG figures")
    p.add_argument("--parallel", type=int, help="worker threads for independent replays (default 1)")
    p.add_argument("--period-windows", dest="period_windows", type=int, help="windows per reporting period (default 200)")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value file; flags override it")
    common.add_argument("--seed", type=lambda s: int(s, 0), help="seed (falls back to BATCHSIM_SEED)")

    parser = argparse.ArgumentParser(prog="batchsim", description="Secure invocation batching simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("replay", parents=[common], help="replay a trace under one or more systems")
    p.add_argument("--trace", help="trace CSV")
    p.add_argument("--keystore", help="address,seed-hex file (default: <trace>.keystore)")
    p.add_argument("--blocks", help="block trace CSV; enables fee-market inclusion")
    _add_run_flags(p)

    p = sub.add_parser("bench", parents=[common], help="generate a synthetic workload and replay it")
    p.add_argument("--fixed-batch", dest="fixed_batch", type=int, help="exactly N calls per window")
    p.add_argument("--windows", type=int, help="windows to simulate in fixed-batch mode (default 10)")
    p.add_argument("--rate", type=float, help="Poisson arrival rate, calls per second (default 0.1)")
    p.add_argument("--duration", type=float, help="seconds of arrivals (default 3600)")
    p.add_argument("--callers", type=int, help="distinct callers (default 200)")
    _add_run_flags(p)

    p = sub.add_parser("attack", parents=[common], help="run scripted adversarial Batcher scenarios")
    p.add_argument("--scenario", help="file of kind,target-index lines (default: one of each kind)")

    p = sub.add_parser("rewrite", parents=[common], help="add Dispatcher-only twins to a contract document")
    p.add_argument("--in", dest="in_path", help="contract JSON")
    p.add_argument("--dispatcher", help="Dispatcher address (0x...)")
    p.add_argument("--out", dest="rewrite_out", help="output path (default <in>_byd.json)")

    p = sub.add_parser("analyze", parents=[common], help="closed-form cost queries")
    p.add_argument("what", choices=["nmin", "profit", "payments", "costs", "pricing"])
    p.add_argument("--x", type=int, help="request words (function id plus arguments)")
    p.add_argument("--y", type=int, help="callee execution gas (costs)")
    p.add_argument("--n", type=int, help="batch size (payments, pricing) or largest N (costs)")
    p.add_argument("--u", type=int, help="purchased calls (pricing)")
    p.add_argument("--chain", help="ethereum | tron | eos (profit)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(args)
        return COMMANDS[cfg.command](cfg)
    except (ConfigError, DomainError, Unprofitable, NoViableU) as exc:
        print(f"batchsim: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParseError, TraceError) as exc:
        print(f"batchsim: trace error: {exc}", file=sys.stderr)
        return EXIT_TRACE
    except BatchSimError as exc:
        print(f"batchsim: simulation error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SIM


if __name__ == "__main__":
    sys.exit(main())
