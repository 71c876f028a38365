"""When to batch, what to batch, and what to pay for it."""

from __future__ import annotations

import enum
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

from batchsim.chainsim import TraceBlock, replay_inclusion_block
from batchsim.core import Invocation
from batchsim.errors import ConfigError, NoBatch, NoInclusion, Oversize, PricingError


class PolicyMode(enum.Enum):
    WINDOWED = "windowed"
    ONE_BLOCK = "oneblock"


@dataclass(frozen=True)
class PricingPolicy:
    """``fixed`` pays ``value`` (or max invocation price + 1 when None); the others are percentiles."""

    variant: str = "batch"
    value: int | None = 50

    def __post_init__(self):
        if self.variant not in ("fixed", "batch", "block"):
            raise ConfigError(f"unknown pricing variant {self.variant!r}")
        if self.variant != "fixed" and not (self.value is not None and 0 < self.value <= 100):
            raise ConfigError("percentile must lie in (0, 100]")
        if self.variant == "fixed" and self.value is not None and self.value <= 0:
            raise ConfigError("fixed price must be positive")

    @classmethod
    def parse(cls, text: str) -> PricingPolicy:
        """Parse ``batch:50``, ``block:10``, ``fixed:P`` or bare ``fixed``."""
        kind, _, val = text.partition(":")
        try:
            return cls(kind.strip(), int(val) if val else None)
        except ValueError as exc:
            raise ConfigError(f"bad pricing {text!r}") from exc

    def __str__(self) -> str:
        return self.variant if self.value is None else f"{self.variant}:{self.value}"


@dataclass(frozen=True)
class PolicySpec:
    window_s: float = 120.0
    top1: bool = False
    min_batch: int = 5
    max_batch: int = 60
    mode: PolicyMode = PolicyMode.WINDOWED
    d_s: float = 10.0
    pricing: PricingPolicy = PricingPolicy()

    def __post_init__(self):
        if self.min_batch < 1:
            raise ConfigError("min_batch must be >= 1")
        if self.max_batch < self.min_batch:
            raise ConfigError("max_batch must be >= min_batch")
        if self.window_s <= 0:
            raise ConfigError("window must be positive")
        if self.d_s < 0:
            raise ConfigError("d must be non-negative")

    @property
    def label(self) -> str:
        if self.mode is PolicyMode.ONE_BLOCK:
            return f"1block-d{self.d_s:g}-{self.pricing}"
        top = "-top1" if self.top1 else ""
        return f"{self.window_s:g}sec-min{self.min_batch}{top}"


def select_windowed(pool: Sequence[Invocation], spec: PolicySpec, window_end: float | None = None) -> list[Invocation]:
    """Calls to batch for the window closing at ``window_end``; NoBatch if too few."""
    cands = [c for c in pool if window_end is None or c.submit_time <= window_end]
    if spec.top1 and cands:
        counts = Counter(c.caller for c in cands)
        top = max(counts.values())
        who = min(a for a, n in counts.items() if n == top)
        cands = [c for c in cands if c.caller == who]
    if len(cands) < spec.min_batch:
        raise NoBatch(f"{len(cands)} candidates, need {spec.min_batch}")
    return cands[: spec.max_batch]


def c1_threshold(items: Iterable[tuple[int, int]], gas_limit: int) -> int:
    """Smallest integer h with the gas of all (price, gas) items priced above h within the limit."""
    items = list(items)
    by_price: dict[int, int] = defaultdict(int)
    for price, gas in items:
        by_price[price] += gas
    total = sum(by_price.values())
    if total <= gas_limit:
        return 0
    # total(h) only drops at price points, so the answer is one of them
    for p in sorted(by_price):
        total -= by_price[p]
        if total <= gas_limit:
            return p
    raise AssertionError("unreachable: nothing is priced above the maximum")


def bpool_evict(
    bpool: Sequence[tuple[Invocation, int]],
    txpool: Sequence[tuple[int, int]],
    gas_limit: int,
) -> tuple[list[Invocation], int]:
    """Pick bpool calls priced above the C1 threshold ``h``.

    ``bpool`` pairs each call with its metered gas estimate; ``txpool`` is
    (price, gas) for pending transactions that compete for the block.
    """
    for inv, gas in bpool:
        if gas > gas_limit:
            raise Oversize(f"call from {inv.caller} needs {gas} gas, over the block limit")
    h = c1_threshold([(inv.gas_price, g) for inv, g in bpool] + list(txpool), gas_limit)
    return [inv for inv, _ in bpool if inv.gas_price > h], h


def _order_stat(values: Sequence[int], pct: int) -> int:
    s = sorted(values)
    k = math.ceil(Fraction(pct, 100) * len(s))
    return s[max(k, 1) - 1]


def price_batch(selection: Sequence[int], block_context: Sequence[int], pricing: PricingPolicy) -> int:
    """Gas price for a batch whose calls bid ``selection``.

    ``block_context`` holds the prices of the other transactions expected in
    the target block; it only matters for the block percentile.
    """
    if pricing.variant == "fixed":
        if pricing.value is not None:
            return pricing.value
        if not selection:
            raise PricingError("fixed default needs at least one call price")
        return max(selection) + 1
    if pricing.variant == "batch":
        if not selection:
            raise PricingError("empty selection")
        return _order_stat(selection, pricing.value)
    pool = list(block_context) + list(selection)
    if not pool:
        raise PricingError("empty block context")
    return _order_stat(pool, pricing.value)


@dataclass(frozen=True)
class Assignment:
    block: int
    calls: tuple[Invocation, ...]
    gas_price: int | None  # None: sent unbatched at each call's own price
    submit_time: float

    @property
    def batched(self) -> bool:
        return self.gas_price is not None


def offline_optimal(trace: Sequence[TraceBlock], calls: Sequence[Invocation], min_batch: int = 1) -> list[Assignment]:
    """Group calls by the block they would land in unbatched and price each group to land there too.

    Pricing at the block's minimum plus one clears the inclusion rule in that
    block. No earlier block after the group's last submission can clear it,
    since each of those blocks was already too dear for the last call, whose
    price is at least this one.
    """
    groups: dict[int, list[Invocation]] = defaultdict(list)
    for c in calls:
        try:
            groups[replay_inclusion_block(trace, c.submit_time, c.gas_price)].append(c)
        except NoInclusion:
            continue
    heights = {b.height: b for b in trace}
    out = []
    for h in sorted(groups):
        g = tuple(groups[h])
        t = max(c.submit_time for c in g)
        if len(g) >= min_batch:
            out.append(Assignment(h, g, heights[h].min_price + 1, t))
        else:
            out.append(Assignment(h, g, None, t))
    return out
