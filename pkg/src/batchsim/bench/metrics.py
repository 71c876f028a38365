"""Per-call outcomes and the aggregate metrics reported for a replay."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence

from batchsim.bench.trace import TraceRecord

CDF_BUCKETS: tuple[tuple[int, int | None], ...] = ((0, 1), (1, 2), (2, 5), (5, 10), (10, 20), (20, None))


@dataclass(frozen=True)
class CallOutcome:
    """What happened to one traced call under one system."""

    submit_time: float
    baseline_block: int | None
    block: int | None
    gas: Fraction
    ether_gwei: Fraction
    batch_size: int  # 1 for unbatched sends
    dropped: bool = False

    @property
    def delay(self) -> int | None:
        if self.block is None or self.baseline_block is None:
            return None
        return self.block - self.baseline_block


@dataclass
class MetricsReport:
    system: str
    policy: str
    calls: int
    included: int
    gas_per_call: float
    ether_per_call: float  # Gwei
    gas_series: list[tuple[int, float]] = field(default_factory=list)
    ether_series: list[tuple[int, float]] = field(default_factory=list)
    batch_sizes: Counter[int] = field(default_factory=Counter)
    block_delays: Counter[int] = field(default_factory=Counter)
    mean_delay: float = 0.0
    batches: int = 0
    fallback_calls: int = 0
    dropped_calls: int = 0
    windows: int = 0
    windows_batched: int = 0
    total_gas: int = 0

    @property
    def label(self) -> str:
        return self.system if not self.policy else f"{self.system}[{self.policy}]"

    def rows(self) -> list[tuple[str, str, str]]:
        """``(metric, name, value)`` rows in a fixed order."""
        lab = self.label
        out = [
            ("calls", lab, str(self.calls)),
            ("included", lab, str(self.included)),
            ("gas_per_call", lab, f"{self.gas_per_call:.6f}"),
            ("ether_per_call_gwei", lab, f"{self.ether_per_call:.6f}"),
            ("mean_block_delay", lab, f"{self.mean_delay:.6f}"),
            ("total_gas", lab, str(self.total_gas)),
            ("batches", lab, str(self.batches)),
            ("fallback_calls", lab, str(self.fallback_calls)),
            ("dropped_calls", lab, str(self.dropped_calls)),
            ("windows", lab, str(self.windows)),
            ("windows_batched", lab, str(self.windows_batched)),
        ]
        out += [("batch_size", f"{lab}:{k}", str(v)) for k, v in sorted(self.batch_sizes.items())]
        out += [("block_delay", f"{lab}:{k}", str(v)) for k, v in sorted(self.block_delays.items())]
        return out


def _mean(xs: Sequence[Fraction]) -> float:
    return float(sum(xs, Fraction(0)) / len(xs)) if xs else 0.0


def summarize(
    system: str,
    policy: str,
    outcomes: Sequence[CallOutcome],
    *,
    batch_sizes: Iterable[int] = (),
    period_s: float | None = None,
    fallback_calls: int = 0,
    windows: int = 0,
    windows_batched: int = 0,
    total_gas: int = 0,
) -> MetricsReport:
    """Aggregate per-call outcomes; means are over included calls."""
    inc = [o for o in outcomes if o.block is not None and not o.dropped]
    delays = [o.delay for o in inc if o.delay is not None]
    rep = MetricsReport(
        system=system,
        policy=policy,
        calls=len(outcomes),
        included=len(inc),
        gas_per_call=_mean([o.gas for o in inc]),
        ether_per_call=_mean([o.ether_gwei for o in inc]),
        batch_sizes=Counter(batch_sizes),
        block_delays=Counter(delays),
        mean_delay=(sum(delays) / len(delays)) if delays else 0.0,
        fallback_calls=fallback_calls,
        dropped_calls=sum(1 for o in outcomes if o.dropped),
        windows=windows,
        windows_batched=windows_batched,
        total_gas=total_gas,
    )
    rep.batches = sum(rep.batch_sizes.values())
    if period_s:
        groups: dict[int, list[CallOutcome]] = {}
        for o in inc:
            groups.setdefault(int(o.submit_time // period_s), []).append(o)
        rep.gas_series = [(k, _mean([o.gas for o in g])) for k, g in sorted(groups.items())]
        rep.ether_series = [(k, _mean([o.ether_gwei for o in g])) for k, g in sorted(groups.items())]
    return rep


# -- calls per block -------------------------------------------------------------


@dataclass(frozen=True)
class CdfBucket:
    lo: int
    hi: int | None
    fraction: float
    cumulative: float

    @property
    def label(self) -> str:
        if self.lo == 0:
            return f"({self.hi}]"
        return f"({self.lo},{'inf' if self.hi is None else self.hi}]"


@dataclass(frozen=True)
class CallsPerBlockCdf:
    buckets: tuple[CdfBucket, ...]
    counts: Mapping[int, int]  # calls per block -> number of blocks


def calls_per_block_cdf(
    trace: Sequence[TraceRecord], callee_filter: Callable[[TraceRecord], bool] | None = None
) -> CallsPerBlockCdf:
    """Distribution of how many traced calls share an origin block, over blocks with at least one."""
    per_block = Counter(
        r.origin_block for r in trace if r.origin_block is not None and (callee_filter is None or callee_filter(r))
    )
    counts = Counter(per_block.values())
    total = sum(counts.values())
    if not total:
        return CallsPerBlockCdf((), {})
    buckets, cum = [], Fraction(0)
    for lo, hi in CDF_BUCKETS:
        n = sum(v for k, v in counts.items() if k > lo and (hi is None or k <= hi))
        frac = Fraction(n, total)
        cum += frac
        buckets.append(CdfBucket(lo, hi, float(frac), float(cum)))
    return CallsPerBlockCdf(tuple(buckets), dict(counts))


def expected_saving_from_cdf(cdf: CallsPerBlockCdf | Mapping[int, int], fee_share: float = 1.0) -> float:
    """Fee fraction saved if all calls sharing a block were batched together.

    A block with k calls pays one transaction fee instead of k, saving
    (k-1)/k of those calls' fee component. The result is weighted by calls.
    """
    counts = cdf.counts if isinstance(cdf, CallsPerBlockCdf) else cdf
    calls = sum(k * n for k, n in counts.items())
    if not calls:
        return 0.0
    saved = sum((k - 1) * n for k, n in counts.items())
    return float(Fraction(saved, calls) * Fraction(fee_share).limit_denominator(10**9))
