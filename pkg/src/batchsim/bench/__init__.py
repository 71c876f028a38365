"""Trace ingestion, synthetic workloads, replay, and reporting."""

from batchsim.bench.metrics import (
    CallOutcome,
    CallsPerBlockCdf,
    MetricsReport,
    calls_per_block_cdf,
    expected_saving_from_cdf,
)
from batchsim.bench.replay import ReplayConfig, System, replay, replay_many
from batchsim.bench.trace import (
    SyntheticSpec,
    SyntheticTrace,
    TraceRecord,
    gen_synthetic,
    load_blocks,
    load_trace,
    write_blocks,
    write_trace,
)

__all__ = [
    "CallOutcome",
    "CallsPerBlockCdf",
    "MetricsReport",
    "ReplayConfig",
    "SyntheticSpec",
    "SyntheticTrace",
    "System",
    "TraceRecord",
    "calls_per_block_cdf",
    "expected_saving_from_cdf",
    "gen_synthetic",
    "load_blocks",
    "load_trace",
    "replay",
    "replay_many",
    "write_blocks",
    "write_trace",
]
