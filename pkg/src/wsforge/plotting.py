"""PNG figures for run directories (matplotlib, headless)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .loadgen.report import RunReport, bucket_labels  # noqa: E402

STYLE = {
    "figure.figsize": (7.0, 4.0),
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.fontsize": 8,
    "font.size": 9,
}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def cpu_figure(samples, path) -> Path:
    """CPU% over time, one panel per role and one line per process."""
    by_role: dict[str, dict[tuple[int, int], list]] = {}
    for s in samples:
        by_role.setdefault(s.role, {}).setdefault((s.proc_index, s.pid), []).append(s)
    roles = sorted(by_role)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(max(1, len(roles)), 1, sharex=True, squeeze=False,
                                 figsize=(7.0, 2.2 * max(1, len(roles))))
        for ax, role in zip(axes[:, 0], roles):
            for (idx, pid), rows in sorted(by_role[role].items()):
                ax.plot([r.t_ms / 1000 for r in rows], [r.cpu_pct for r in rows],
                        marker=".", label=f"{role} {idx} ({pid})")
            ax.set_ylabel("CPU %")
            ax.set_ylim(bottom=0)
            ax.set_title(role, loc="left")
            ax.legend(loc="upper right")
        axes[-1, 0].set_xlabel("time (s)")
        return _save(fig, path)


def throughput_figure(report: RunReport, path) -> Path:
    secs = sorted(report.series)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(secs, [report.series[s][0] for s in secs], label="pings sent")
        ax.plot(secs, [report.series[s][1] for s in secs], label="pongs received", linestyle="--")
        ax.set_xlabel("time (s)")
        ax.set_ylabel("messages / s")
        ax.set_title(f"{report.transport} throughput", loc="left")
        ax.legend()
        return _save(fig, path)


def rtt_figure(report: RunReport, path) -> Path:
    labels = bucket_labels()
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.bar(range(len(labels)), report.hist, color="tab:blue")
        ax.set_xticks(range(len(labels)))
        ax.set_xticklabels(labels, rotation=45, ha="right")
        ax.set_xlabel("round-trip time bucket (ms)")
        ax.set_ylabel("pongs")
        ax.set_title(f"{report.transport} RTT", loc="left")
        return _save(fig, path)


def compare_figure(reports: dict[str, RunReport], path) -> Path:
    names = list(reports)
    with plt.rc_context(STYLE):
        fig, (left, right) = plt.subplots(1, 2)
        left.bar(names, [reports[n].wire_bytes_per_exchange for n in names], color="tab:orange")
        left.set_ylabel("wire bytes per ping/pong")
        right.bar(names, [reports[n].mean_rtt_ms for n in names], color="tab:green")
        right.set_ylabel("mean RTT (ms)")
        return _save(fig, path)


def scaling_figure(fit, path) -> Path:
    cores = [c for c, _ in fit.points]
    base = cores[0]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(cores, fit.implied_speedup, marker="o", label="measured")
        ax.plot(cores, [c / base for c in cores], linestyle=":", label="ideal")
        ax.set_xlabel("cores")
        ax.set_ylabel("speedup")
        ax.legend()
        return _save(fig, path)
