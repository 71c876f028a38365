"""Write replay metrics as CSV, gnuplot data files, and optional PNG figures."""

from __future__ import annotations

import csv
import re
from pathlib import Path
from typing import Sequence

from batchsim.bench.metrics import CallsPerBlockCdf, MetricsReport

REPORT_HEADER = ["metric", "name", "value"]


def _slug(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", label).strip("_")


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _write_dat(path: Path, columns: Sequence[str], rows) -> None:
    with open(path, "w") as fh:
        fh.write("# " + " ".join(columns) + "\n")
        for row in rows:
            fh.write(" ".join(str(v) for v in row) + "\n")


def write_report(
    reports: Sequence[MetricsReport],
    outdir: str | Path,
    *,
    cdf: CallsPerBlockCdf | None = None,
    emit_plots: bool = False,
) -> list[Path]:
    """Write ``report.csv`` plus one CSV per series; returns every path written.

    Output depends only on the reports, so identical runs give identical bytes.
    """
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    rows = [row for rep in reports for row in rep.rows()]
    if cdf is not None:
        rows += [("calls_per_block_cdf", b.label, f"{b.cumulative:.6f}") for b in cdf.buckets]
    _write_csv(out / "report.csv", REPORT_HEADER, rows)
    written.append(out / "report.csv")

    for rep in reports:
        stem = _slug(rep.label)
        series = [(k, f"{g:.6f}", f"{e:.6f}") for (k, g), (_, e) in zip(rep.gas_series, rep.ether_series)]
        p = out / f"series_{stem}.csv"
        _write_csv(p, ["period", "gas_per_call", "ether_per_call_gwei"], series)
        written.append(p)
        p = out / f"delays_{stem}.csv"
        _write_csv(p, ["block_delay", "calls"], sorted(rep.block_delays.items()))
        written.append(p)
        p = out / f"batches_{stem}.csv"
        _write_csv(p, ["batch_size", "batches"], sorted(rep.batch_sizes.items()))
        written.append(p)

    if emit_plots:
        written += _emit_plots(reports, out, cdf)
    return written


def _emit_plots(reports: Sequence[MetricsReport], out: Path, cdf: CallsPerBlockCdf | None) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written = []
    summary = out / "summary.dat"
    _write_dat(summary, ["index", "label", "gas_per_call", "ether_per_call_gwei", "mean_block_delay"], [
        (i, _slug(r.label), f"{r.gas_per_call:.6f}", f"{r.ether_per_call:.6f}", f"{r.mean_delay:.6f}")
        for i, r in enumerate(reports)
    ])
    written.append(summary)
    for rep in reports:
        p = out / f"series_{_slug(rep.label)}.dat"
        _write_dat(p, ["period", "gas_per_call", "ether_per_call_gwei"], [
            (k, f"{g:.6f}", f"{e:.6f}") for (k, g), (_, e) in zip(rep.gas_series, rep.ether_series)
        ])
        written.append(p)
    if cdf is not None:
        p = out / "calls_per_block_cdf.dat"
        _write_dat(p, ["bucket", "fraction", "cumulative"], [
            (b.label, f"{b.fraction:.6f}", f"{b.cumulative:.6f}") for b in cdf.buckets
        ])
        written.append(p)

    # PNG metadata would otherwise embed the matplotlib version
    meta = {"Software": None}
    labels = [r.label for r in reports]

    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(range(len(reports)), [r.gas_per_call for r in reports])
    ax.set_xticks(range(len(reports)), labels, rotation=30, ha="right")
    ax.set_ylabel("gas per call")
    fig.tight_layout()
    p = out / "gas_per_call.png"
    fig.savefig(p, metadata=meta)
    plt.close(fig)
    written.append(p)

    fig, ax = plt.subplots(figsize=(7, 4))
    for rep in reports:
        if rep.gas_series:
            ks, vs = zip(*rep.gas_series)
            ax.plot(ks, vs, marker="o", label=rep.label)
    ax.set_xlabel("period")
    ax.set_ylabel("gas per call")
    if any(r.gas_series for r in reports):
        ax.legend(fontsize="small")
    fig.tight_layout()
    p = out / "gas_series.png"
    fig.savefig(p, metadata=meta)
    plt.close(fig)
    written.append(p)

    fig, ax = plt.subplots(figsize=(7, 4))
    for rep in reports:
        if rep.block_delays:
            ks = sorted(rep.block_delays)
            ax.step(ks, [rep.block_delays[k] for k in ks], where="mid", label=rep.label)
    ax.set_xlabel("block delay")
    ax.set_ylabel("calls")
    if any(r.block_delays for r in reports):
        ax.legend(fontsize="small")
    fig.tight_layout()
    p = out / "block_delays.png"
    fig.savefig(p, metadata=meta)
    plt.close(fig)
    written.append(p)
    return written
