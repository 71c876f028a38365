"""Trace files and synthetic workloads."""

from __future__ import annotations

import csv
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from batchsim.chainsim import BLOCK_INTERVAL, GAS_LIMIT, TraceBlock
from batchsim.core import Invocation
from batchsim.errors import ParseError
from batchsim.identity import KeyPair, keygen
from batchsim.primitives import Address, selector, word_bytes

HEADER = ["submit_time", "origin_block", "caller", "callee", "func", "args", "gas_price", "gas"]
BLOCK_HEADER = ["height", "timestamp", "prices", "gas"]
TOKEN = Address.from_label("batchsim/token")


@dataclass(frozen=True)
class TraceRecord:
    submit_time: float
    origin_block: int | None
    caller: Address
    callee: Address
    func: bytes
    args: tuple[int, ...]
    gas_price: int
    gas: int | None = None

    def invocation(self, caller_nonce: int = 0) -> Invocation:
        return Invocation(
            self.caller, self.callee, self.func, self.args, caller_nonce,
            self.gas_price, self.submit_time, self.origin_block,
        )


def _parse_func(text: str) -> bytes:
    t = text.strip()
    if t.startswith("0x") and len(t) == 10:
        return bytes.fromhex(t[2:])
    if not t.isidentifier():
        raise ValueError(f"bad func {text!r}")
    return selector(t)


def _parse_args(text: str) -> tuple[int, ...]:
    t = text.strip().removeprefix("0x")
    if len(t) % 64:
        raise ValueError("args must be whole 32-byte words")
    raw = bytes.fromhex(t)
    return tuple(int.from_bytes(raw[i : i + 32], "big") for i in range(0, len(raw), 32))


def load_trace(path: str | Path, keystore: Mapping[Address, KeyPair] | None = None) -> list[TraceRecord]:
    """Parse a trace CSV; every caller must appear in ``keystore`` when one is given."""
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ParseError(f"cannot open trace {path}: {exc}") from exc
    with fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if header != HEADER:
            raise ParseError(f"expected header {','.join(HEADER)}", line=1)
        out: list[TraceRecord] = []
        for lineno, row in enumerate(rows, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(HEADER):
                raise ParseError(f"expected {len(HEADER)} fields, got {len(row)}", lineno)
            try:
                rec = TraceRecord(
                    submit_time=float(row[0]),
                    origin_block=int(row[1]) if row[1].strip() else None,
                    caller=Address(row[2].strip()),
                    callee=Address(row[3].strip()),
                    func=_parse_func(row[4]),
                    args=_parse_args(row[5]),
                    gas_price=int(row[6]),
                    gas=int(row[7]) if row[7].strip() else None,
                )
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from exc
            if rec.gas_price <= 0 or not math.isfinite(rec.submit_time):
                raise ParseError("gas_price must be positive and submit_time finite", lineno)
            if out and rec.submit_time < out[-1].submit_time:
                raise ParseError("submit_time goes backwards", lineno)
            if out and rec.origin_block is not None and out[-1].origin_block is not None and rec.origin_block < out[-1].origin_block:
                raise ParseError("origin_block goes backwards", lineno)
            if keystore is not None and rec.caller not in keystore:
                raise ParseError(f"no key for caller {rec.caller}", lineno)
            out.append(rec)
    return out


def write_trace(path: str | Path, records: Iterable[TraceRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for r in records:
            w.writerow([
                repr(r.submit_time),
                "" if r.origin_block is None else r.origin_block,
                r.caller.hex0x(),
                r.callee.hex0x(),
                "0x" + r.func.hex(),
                "0x" + b"".join(word_bytes(a) for a in r.args).hex(),
                r.gas_price,
                "" if r.gas is None else r.gas,
            ])


def write_blocks(path: str | Path, blocks: Iterable[TraceBlock]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BLOCK_HEADER)
        for b in blocks:
            w.writerow([b.height, repr(b.timestamp), ";".join(map(str, b.prices)), ";".join(map(str, b.gas))])


def load_blocks(path: str | Path) -> list[TraceBlock]:
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ParseError(f"cannot open block trace {path}: {exc}") from exc
    with fh:
        rows = csv.reader(fh)
        if next(rows, None) != BLOCK_HEADER:
            raise ParseError(f"expected header {','.join(BLOCK_HEADER)}", line=1)
        out = []
        for lineno, row in enumerate(rows, start=2):
            try:
                prices = tuple(int(x) for x in row[2].split(";") if x)
                gas = tuple(int(x) for x in row[3].split(";") if x)
                out.append(TraceBlock(int(row[0]), float(row[1]), prices, gas))
            except (ValueError, IndexError) as exc:
                raise ParseError(str(exc), lineno) from exc
    return out


# -- synthetic workloads -------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Poisson arrivals of token transfers over a simulated fee market.

    With ``fixed_batch`` set, arrivals are replaced by exactly that many calls
    per window, each from a distinct caller, so every window yields one batch.
    """

    rate: float = 0.1
    duration: float = 3600.0
    callers: int = 200
    seed: int = 0
    price_gwei: float = 20.0
    call_price_sigma: float = 0.3
    fixed_batch: int | None = None
    window_s: float = 120.0
    block_interval: float = BLOCK_INTERVAL
    background_txs: int = 120
    gas_limit: int = GAS_LIMIT


@dataclass
class SyntheticTrace:
    records: list[TraceRecord]
    blocks: list[TraceBlock]
    seeds: dict[Address, bytes] = field(default_factory=dict)

    def keys(self) -> dict[Address, KeyPair]:
        return {a: keygen(s) for a, s in self.seeds.items()}


def _caller_seeds(rng: random.Random, n: int) -> dict[Address, bytes]:
    seeds = {}
    while len(seeds) < n:
        s = rng.getrandbits(256).to_bytes(32, "big")
        if any(s):
            seeds[keygen(s).address] = s
    return seeds


def _fee_market(rng: random.Random, spec: SyntheticSpec, horizon: float) -> list[TraceBlock]:
    """Blocks of background transactions whose prices drift around a mean-reverting base."""
    blocks, base, t, h = [], spec.price_gwei, 0.0, 0
    while t <= horizon:
        h += 1
        t = round(h * spec.block_interval, 6)
        base = max(1.0, base * math.exp(rng.gauss(0.0, 0.05)) + 0.05 * (spec.price_gwei - base))
        n = max(1, int(rng.gauss(spec.background_txs, spec.background_txs / 10)))
        prices = tuple(max(1, round(rng.lognormvariate(math.log(base), 0.5))) for _ in range(n))
        budget = rng.uniform(0.5, 1.0) * spec.gas_limit
        gas = tuple(max(21000, round(budget / n * rng.uniform(0.5, 1.5))) for _ in range(n))
        blocks.append(TraceBlock(h, t, prices, gas))
    return blocks


def gen_synthetic(spec: SyntheticSpec) -> SyntheticTrace:
    """Deterministic trace of ERC20 transfers; the same spec always yields the same trace."""
    rng = random.Random(spec.seed)
    seeds = _caller_seeds(rng, max(2, spec.callers if spec.fixed_batch is None else max(spec.callers, spec.fixed_batch)))
    callers = list(seeds)
    func = selector("transfer")
    times: list[float] = []
    who: list[Address] = []
    if spec.fixed_batch is not None:
        windows = max(1, int(spec.duration // spec.window_s))
        for w in range(windows):
            group = rng.sample(callers, spec.fixed_batch) if spec.fixed_batch <= len(callers) else callers
            for i, c in enumerate(group):
                times.append(w * spec.window_s + (i + 1) * spec.window_s / (spec.fixed_batch + 1))
                who.append(c)
    elif spec.rate > 0:
        t = rng.expovariate(spec.rate)
        while t < spec.duration:
            times.append(round(t, 6))
            who.append(rng.choice(callers))
            t += rng.expovariate(spec.rate)
    blocks = _fee_market(rng, spec, spec.duration + 100 * spec.block_interval)
    base_at = {b.height: sorted(b.prices)[len(b.prices) // 2] for b in blocks}
    records = []
    for t, c in zip(times, who):
        h = min(len(blocks), int(t // spec.block_interval) + 1)
        price = max(1, round(rng.lognormvariate(math.log(base_at[h]), spec.call_price_sigma)))
        to = rng.choice([a for a in callers[:8] if a != c])
        # origin block: the first block produced after submission, whatever the price
        records.append(TraceRecord(t, h, c, TOKEN, func, (to.to_int(), rng.randint(1, 1000)), price))
    return SyntheticTrace(records, blocks, seeds)
