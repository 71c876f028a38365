"""Gas schedule, runtime meter, and closed-form cost analysis.

The same :class:`GasCostModel` feeds the meter that prices every simulated
transaction and the analytic formulas, so the two agree by construction.
Analytic functions work in :class:`fractions.Fraction` internally and round
costs up to whole gas at the boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from fractions import Fraction
from pathlib import Path
from typing import Iterable, NamedTuple

from batchsim.errors import DomainError, MeterError, NoViableU, Unprofitable


@dataclass(frozen=True)
class GasCostModel:
    tx_base: int = 21000
    tx_per_word: int = 2176
    call_base: int = 700
    call_per_word: int = 2176
    sset: int = 20000
    reset: int = 5000
    sload: int = 200
    sha3_base: int = 30
    sha3_per_word: int = 6
    sig_verify: int = 5000
    # One gas per dispatched entry. With it, the per-entry terms below sum to
    # the reference batch constants (10053 and 12877) exactly.
    entry_residual: int = 1

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise DomainError(f"{f.name} must be non-negative")

    def tx(self, words: int) -> int:
        return self.tx_base + self.tx_per_word * words

    def call(self, words: int) -> int:
        return self.call_base + self.call_per_word * words

    def sha3(self, words: int) -> int:
        return self.sha3_base + self.sha3_per_word * words


DEFAULT_MODEL = GasCostModel()


def load_model(source: str | Path | dict | None = None, base: GasCostModel = DEFAULT_MODEL) -> GasCostModel:
    """Apply ``key=value`` overrides (a file path or a mapping) to ``base``."""
    if source is None:
        return base
    if isinstance(source, dict):
        pairs = source
    else:
        pairs = {}
        for line in Path(source).read_text().splitlines():
            line = line.split("#", 1)[0].strip()
            if line:
                key, value = (s.strip() for s in line.split("=", 1))
                pairs[key] = value
    known = {f.name for f in fields(GasCostModel)}
    overrides = {k: int(v) for k, v in pairs.items() if k in known}
    unknown = set(pairs) - known
    if unknown:
        raise DomainError(f"unknown gas model keys: {sorted(unknown)}")
    return replace(base, **overrides)


# -- meter -------------------------------------------------------------------


class GasOp(NamedTuple):
    """One primitive charge: ``kind`` with a word (or unit) count."""

    kind: str
    amount: int = 1


def _op_cost(op: GasOp, m: GasCostModel) -> int:
    k, n = op
    if k == "tx":
        return m.tx(n)
    if k == "call":
        return m.call(n)
    if k == "sset":
        return m.sset * n
    if k == "reset":
        return m.reset * n
    if k == "sload":
        return m.sload * n
    if k == "sha3":
        return m.sha3(n)
    if k == "sig_verify":
        return m.sig_verify * n
    if k == "residual":
        return m.entry_residual * n
    raise MeterError(f"unknown gas op {k!r}")


def meter(trace: Iterable[GasOp | tuple[str, int]], model: GasCostModel = DEFAULT_MODEL) -> int:
    total = 0
    for op in trace:
        op = GasOp(*op)
        if op.amount < 0:
            raise MeterError(f"negative amount in {op}")
        total += _op_cost(op, model)
    return total


# -- analytic costs ----------------------------------------------------------


@dataclass(frozen=True)
class WorkloadShape:
    N: int
    X: int
    Y: int = 0
    Y_prime: int | None = None

    def __post_init__(self):
        if self.N < 1:
            raise DomainError("batch size N must be >= 1")
        if self.X < 0 or self.Y < 0:
            raise DomainError("X and Y must be non-negative")

    @property
    def yp(self) -> int:
        return self.Y if self.Y_prime is None else self.Y_prime


def _shape(w: WorkloadShape | None, kw: dict) -> WorkloadShape:
    return w if w is not None else WorkloadShape(**kw)


# Per-entry charges of each batched scheme, excluding callee execution.
# Calldata is X+1 words per entry (request plus one framing word); the
# internal call carries X+1 words when ``from`` is prepended, X otherwise.


def ibatch_entry_gas(X: int, m: GasCostModel = DEFAULT_MODEL) -> int:
    return m.tx_per_word * (X + 1) + m.sig_verify + m.call(X + 1) + m.entry_residual


def b1_entry_gas(X: int, m: GasCostModel = DEFAULT_MODEL) -> int:
    return m.tx_per_word * (X + 1) + m.sig_verify + m.reset + m.call(X) + m.entry_residual


def b2_entry_gas(X: int, m: GasCostModel = DEFAULT_MODEL) -> int:
    return ibatch_entry_gas(X, m) + m.sload + m.reset


def inlined_entry_gas(X: int, m: GasCostModel = DEFAULT_MODEL) -> int:
    return m.tx_per_word * (X + 1) + m.sig_verify + m.entry_residual


def top1_entry_gas(X: int, m: GasCostModel = DEFAULT_MODEL) -> int:
    return m.tx_per_word * (X + 1) + m.call(X + 1) + m.entry_residual


def cost_b0(w: WorkloadShape | None = None, model: GasCostModel = DEFAULT_MODEL, **kw) -> int:
    w = _shape(w, kw)
    return (model.tx(w.X) + w.Y) * w.N


def cost_b1(w: WorkloadShape | None = None, model: GasCostModel = DEFAULT_MODEL, **kw) -> int:
    w = _shape(w, kw)
    return model.tx_base + (b1_entry_gas(w.X, model) + w.Y) * w.N


def cost_ibatch(w: WorkloadShape | None = None, model: GasCostModel = DEFAULT_MODEL, **kw) -> int:
    w = _shape(w, kw)
    return model.tx_base + (ibatch_entry_gas(w.X, model) + w.yp) * w.N


def cost_b2(w: WorkloadShape | None = None, model: GasCostModel = DEFAULT_MODEL, **kw) -> int:
    w = _shape(w, kw)
    return model.tx_base + (b2_entry_gas(w.X, model) + w.yp) * w.N


def cost_inlined(w: WorkloadShape | None = None, model: GasCostModel = DEFAULT_MODEL, **kw) -> int:
    w = _shape(w, kw)
    return model.tx_base + (inlined_entry_gas(w.X, model) + w.yp) * w.N


def cost_top1(w: WorkloadShape | None = None, model: GasCostModel = DEFAULT_MODEL, **kw) -> int:
    w = _shape(w, kw)
    return model.tx_base + (top1_entry_gas(w.X, model) + w.yp) * w.N


def n_min(X: int, model: GasCostModel = DEFAULT_MODEL) -> int:
    """Smallest batch size for which a batch is strictly cheaper than unbatched calls."""
    if X < 0:
        raise DomainError("X must be non-negative")
    # B0 - iBatch = N * (tx(X) - entry) - tx_base  (callee cost cancels)
    margin = model.tx(X) - ibatch_entry_gas(X, model)
    if margin <= 0:
        raise Unprofitable(f"batching never pays off at X={X} (per-call margin {margin})")
    return model.tx_base // margin + 1


def generic_profitability(X: int, Y: int) -> int:
    """Net saving per pair of calls on a chain charging X per tx and Y per data word."""
    return X - 4 * Y


CHAIN_FEES = {
    "ethereum": (21000, 2176),
    "tron": (267, 47),
    "eos": (128, 8),
}


def payment_batch_per_call_exact(N: int, ether_transfer_call: int = 7800, model: GasCostModel = DEFAULT_MODEL) -> Fraction:
    if N < 1:
        raise DomainError("N must be >= 1")
    # 65-byte signature plus two 20-byte addresses plus one amount word
    words = Fraction(65 + 20 + 20 + 32, 32)
    return Fraction(model.tx_base, N) + model.tx_per_word * words + model.sig_verify + ether_transfer_call


def payment_batch_per_call(N: int, ether_transfer_call: int = 7800, model: GasCostModel = DEFAULT_MODEL) -> int:
    return math.ceil(payment_batch_per_call_exact(N, ether_transfer_call, model))


@dataclass(frozen=True)
class ServicePricing:
    v_min: Fraction
    v_max: Fraction
    u_min: int


def service_pricing(U: int, N: int | None, X: int, gas_price: int = 1) -> ServicePricing:
    """Fee bounds for a caller buying ``U`` batched calls; ``N=None`` is the N -> infinity limit.

    Uses the reference constants 2175 and 2177 as given, even though the
    schedule's per-word cost is 2176.
    """
    inv_n = Fraction(0) if N is None else Fraction(1, N)
    denom = 21000 * (1 - inv_n) - 2177 * X - 10053
    if denom <= 0:
        raise NoViableU(f"no purchase size pays off at N={N}, X={X}")
    u_min = Fraction(21000) / denom
    v_max = ((21000 + 2175 * X) * U - 21000) * gas_price
    v_min = (21000 * inv_n + 10053 + 4352 * X) * U * gas_price
    return ServicePricing(Fraction(v_min), Fraction(v_max), math.floor(u_min) + 1)
