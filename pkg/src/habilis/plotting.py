"""Matplotlib figures for simulation reports, written next to the JSON output."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .sim import SimReport  # noqa: E402

RC = {
    "font.size": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
    "svg.hashsalt": "habilis",
}


def _calls_figure(report: SimReport, path: Path) -> None:
    labels = sorted(report.topologies)
    calls = [report.topologies[k].network_calls for k in labels]
    latency = [report.topologies[k].simulated_total_latency for k in labels]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6))
    ax1.bar(labels, calls, color="#4c72b0")
    ax1.set_ylabel("network calls")
    ax1.set_title(f"{report.request_count} requests")
    ax2.bar(labels, latency, color="#dd8452")
    ax2.set_ylabel("modelled latency (ms)")
    for ax in (ax1, ax2):
        ax.tick_params(axis="x", labelrotation=15)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def _decisions_figure(report: SimReport, path: Path) -> None:
    labels = sorted(report.topologies)
    reasons = sorted({r for c in report.topologies.values() for r in c.denies})
    fig, ax = plt.subplots(figsize=(7, 3.8))
    bottom = [report.topologies[k].allows for k in labels]
    ax.bar(labels, bottom, label="ALLOW", color="#55a868")
    for reason in reasons:
        heights = [report.topologies[k].denies.get(reason, 0) for k in labels]
        ax.bar(labels, heights, bottom=bottom, label=reason)
        bottom = [b + h for b, h in zip(bottom, heights)]
    ax.set_ylabel("decisions")
    ax.legend(fontsize=7, frameon=False, loc="upper left", bbox_to_anchor=(1.0, 1.0))
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def render_report_figures(report: SimReport, out_dir, fmt: str = "png") -> list:
    """Write the call-count and decision-breakdown charts; return their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / f"network_calls.{fmt}", out / f"decisions.{fmt}"]
    with plt.rc_context(RC):
        _calls_figure(report, paths[0])
        _decisions_figure(report, paths[1])
    return paths
