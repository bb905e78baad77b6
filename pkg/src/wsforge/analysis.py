"""Amdahl's law, transport overhead ratios and measured scaling efficiency."""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field

from .comet import BROWSER_REALISTIC, HeaderProfile, measure_per_message_bytes
from .errors import DegenerateInput, DivergesAtOne

# slope band read as "about n/2 times more efficient"
HALF_N_BAND = (0.4, 0.7)


@dataclass(frozen=True)
class AmdahlModel:
    P: float
    N: float

    def __post_init__(self):
        if not 0.0 <= self.P <= 1.0:
            raise ValueError("P must lie in [0, 1]")
        if self.N < 1:
            raise ValueError("N must be >= 1")


def amdahl_speedup(model: AmdahlModel) -> float:
    return 1.0 / ((1.0 - model.P) + model.P / model.N)


def amdahl_limit(P: float) -> float:
    """Speedup as N grows without bound."""
    if not 0.0 <= P <= 1.0:
        raise ValueError("P must lie in [0, 1]")
    if P == 1.0:
        raise DivergesAtOne("a fully parallel program has no finite speedup limit")
    return 1.0 / (1.0 - P)


@dataclass(frozen=True)
class ScalingFit:
    points: tuple[tuple[float, float], ...]
    implied_speedup: tuple[float, ...]
    efficiency_per_core: float
    regime: str = field(default="")

    @property
    def half_n_regime(self) -> bool:
        lo, hi = HALF_N_BAND
        return lo <= self.efficiency_per_core <= hi


def _classify(slope: float) -> str:
    lo, hi = HALF_N_BAND
    if slope > hi:
        return "near-linear"
    if slope >= lo:
        return "n/2"
    return "sublinear"


def scaling_fit(points) -> ScalingFit:
    """Speedup of each point over the first and the least-squares slope of speedup vs relative cores."""
    pts = tuple((float(c), float(t)) for c, t in points)
    if len(pts) < 2:
        raise DegenerateInput("need at least two (cores, throughput) points")
    cores = [c for c, _ in pts]
    if any(b <= a for a, b in zip(cores, cores[1:])):
        raise DegenerateInput("core counts must be strictly increasing")
    base_c, base_t = pts[0]
    if base_t <= 0 or base_c <= 0:
        raise DegenerateInput("baseline throughput and cores must be positive")
    speedups = tuple(t / base_t for _, t in pts)
    rel = [c / base_c for c in cores]
    slope = statistics.linear_regression(rel, speedups).slope
    return ScalingFit(pts, speedups, slope, _classify(slope))


def overhead_ratio(payload: int, profile: HeaderProfile = BROWSER_REALISTIC) -> float:
    """HTTP-poll bytes per message over unmasked WebSocket bytes per message."""
    if payload <= 0:
        raise ValueError("payload must be > 0")
    return (measure_per_message_bytes("poll", payload, profile)
            / measure_per_message_bytes("websocket", payload))


# --- reports over metrics / run CSVs -----------------------------------------

def cpu_by_role(samples) -> dict[str, float]:
    """Mean cpu_pct per process, summed within each role."""
    per_proc: dict[tuple[str, int], list[float]] = {}
    for s in samples:
        per_proc.setdefault((s.role, s.pid), []).append(s.cpu_pct)
    out: dict[str, float] = {}
    for (role, _), vals in sorted(per_proc.items()):
        out[role] = out.get(role, 0.0) + statistics.fmean(vals)
    return out


def peak_rss_by_role(samples) -> dict[str, int]:
    peak: dict[tuple[str, int], int] = {}
    for s in samples:
        key = (s.role, s.pid)
        peak[key] = max(peak.get(key, 0), s.rss_bytes)
    out: dict[str, int] = {}
    for (role, _), v in sorted(peak.items()):
        out[role] = out.get(role, 0) + v
    return out


def metrics_summary(samples) -> dict[str, object]:
    samples = list(samples)
    if not samples:
        raise DegenerateInput("no samples")
    out: dict[str, object] = {
        "samples": len(samples),
        "processes": len({s.pid for s in samples}),
        "span_ms": max(s.t_ms for s in samples) - min(s.t_ms for s in samples),
    }
    for role, v in cpu_by_role(samples).items():
        out[f"cpu_pct_mean.{role}"] = round(v, 2)
    for role, v in peak_rss_by_role(samples).items():
        out[f"rss_peak_bytes.{role}"] = v
    return out


def format_kv(d: dict) -> str:
    return "".join(f"{k}={v}\n" for k, v in d.items())
