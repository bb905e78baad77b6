"""Per-process CPU / memory sampling for cluster and client processes, CSV export
and a gnuplot script generator."""

from __future__ import annotations

import csv
import logging
import threading
import time
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import Callable

import psutil

from .errors import EmptySeries, SamplingDenied

log = logging.getLogger(__name__)

ROLES = ("load_balancer", "worker", "store", "client")
MIN_PERIOD = 0.1
COUNTERS = ("active_conns", "msgs_in", "msgs_out", "drops")


@dataclass(frozen=True)
class MetricsSample:
    t_ms: int
    pid: int
    role: str
    proc_index: int
    cpu_pct: float
    rss_bytes: int
    active_conns: int = 0
    msgs_in: int = 0
    msgs_out: int = 0
    drops: int = 0


CSV_HEADER = [f.name for f in fields(MetricsSample)]


@dataclass
class Target:
    pid: int
    role: str
    proc_index: int = 0
    # returns a dict holding some of COUNTERS, e.g. a control-socket STATS call
    stats: Callable[[], dict] | None = None


class _Tracked:
    def __init__(self, target: Target):
        self.target = target
        try:
            self.proc = psutil.Process(target.pid)
            self.last_cpu = _cpu_seconds(self.proc)
        except psutil.AccessDenied as exc:
            raise SamplingDenied(f"cannot read stats of pid {target.pid}") from exc
        self.last_wall = time.monotonic()
        self.counters = dict.fromkeys(COUNTERS, 0)
        self.dead_at: int | None = None


def _cpu_seconds(proc: psutil.Process) -> float:
    t = proc.cpu_times()
    return t.user + t.system


class Sampler:
    """Background sampler thread.  ``stop`` returns the collected series."""

    def __init__(self, period: float = 1.0):
        if period < MIN_PERIOD:
            raise ValueError(f"period must be >= {MIN_PERIOD} s")
        self.period = period
        self.samples: list[MetricsSample] = []
        self.dead: dict[int, int] = {}
        self._tracked: list[_Tracked] = []
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self.t0 = time.monotonic()

    def add(self, target: Target) -> None:
        with self._lock:
            self._tracked.append(_Tracked(target))

    def add_all(self, targets) -> None:
        for t in targets:
            self.add(t)

    def start(self) -> "Sampler":
        self.t0 = time.monotonic()
        self._thread = threading.Thread(target=self._loop, name="wsforge-sampler", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> list[MetricsSample]:
        self._stop.set()
        if self._thread is not None:
            self._thread.join()
        return list(self.samples)

    def _loop(self) -> None:
        next_at = self.t0 + self.period
        while not self._stop.wait(max(0.0, next_at - time.monotonic())):
            self.tick()
            next_at += self.period

    def tick(self) -> list[MetricsSample]:
        """Take one sample of every live target."""
        out = []
        with self._lock:
            tracked = list(self._tracked)
        for tr in tracked:
            if tr.dead_at is not None:
                continue
            s = self._sample_one(tr)
            if s is not None:
                out.append(s)
        self.samples.extend(out)
        return out

    def _sample_one(self, tr: _Tracked) -> MetricsSample | None:
        now = time.monotonic()
        t_ms = int(round((now - self.t0) * 1000))
        try:
            cpu = _cpu_seconds(tr.proc)
            rss = tr.proc.memory_info().rss
            if tr.proc.status() == psutil.STATUS_ZOMBIE:
                raise psutil.NoSuchProcess(tr.target.pid)
        except psutil.NoSuchProcess:
            tr.dead_at = t_ms
            self.dead[tr.target.pid] = t_ms
            log.info("pid %d (%s %d) gone at %d ms", tr.target.pid, tr.target.role,
                     tr.target.proc_index, t_ms)
            return None
        except psutil.AccessDenied as exc:
            raise SamplingDenied(f"cannot read stats of pid {tr.target.pid}") from exc
        wall = now - tr.last_wall
        pct = max(0.0, (cpu - tr.last_cpu) / wall * 100.0) if wall > 0 else 0.0
        tr.last_cpu, tr.last_wall = cpu, now
        if tr.target.stats is not None:
            try:
                got = tr.target.stats()
                tr.counters.update({k: int(got[k]) for k in COUNTERS if k in got})
            except (OSError, ValueError) as exc:
                log.debug("stats for pid %d unavailable: %s", tr.target.pid, exc)
        return MetricsSample(t_ms, tr.target.pid, tr.target.role, tr.target.proc_index,
                             round(pct, 3), rss, **tr.counters)


def sample(targets, period: float = 1.0, duration: float = 10.0) -> list[MetricsSample]:
    """Blocking sampler run: one sample per live target every ``period`` for ``duration``."""
    s = Sampler(period)
    s.add_all(targets)
    s.start()
    time.sleep(duration + period / 4)
    return s.stop()


def _sort_key(s: MetricsSample):
    return (s.t_ms, s.role, s.proc_index, s.pid)


def export_csv(series, path) -> Path:
    series = list(series)
    if not series:
        raise EmptySeries("nothing to export")
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for s in sorted(series, key=_sort_key):
            w.writerow(astuple(s))
    return path


def read_csv(path) -> list[MetricsSample]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        out.append(MetricsSample(
            t_ms=int(r["t_ms"]), pid=int(r["pid"]), role=r["role"], proc_index=int(r["proc_index"]),
            cpu_pct=float(r["cpu_pct"]), rss_bytes=int(r["rss_bytes"]),
            active_conns=int(r["active_conns"]), msgs_in=int(r["msgs_in"]),
            msgs_out=int(r["msgs_out"]), drops=int(r["drops"]),
        ))
    return out


def emit_plot_script(csv_path, script_path=None) -> Path:
    """Write a gnuplot script plotting CPU% over time, one panel per role and one curve per process.

    The terminal and output are left to the caller (``gnuplot -e "set term png; set output 'x.png'"``).
    """
    csv_path = Path(csv_path)
    series = read_csv(csv_path)
    groups: dict[str, list[tuple[int, int]]] = {}
    for s in series:
        key = (s.proc_index, s.pid)
        procs = groups.setdefault(s.role, [])
        if key not in procs:
            procs.append(key)
    ordered = [r for r in ROLES if r in groups] + sorted(r for r in groups if r not in ROLES)
    name = str(csv_path).replace("'", "''")
    lines = [
        "# CPU usage per process, generated by wsforge",
        "set datafile separator ','",
        "set key outside right",
        "set xlabel 'time (s)'",
        "set ylabel 'CPU (%)'",
        "set grid",
        f"set multiplot layout {max(1, len(ordered))},1",
    ]
    for role in ordered:
        lines.append(f"# group: {role}")
        lines.append(f"set title '{role}'")
        curves = []
        for idx, pid in sorted(groups[role]):
            cond = f'(strcol(3) eq "{role}" && $2 == {pid})'
            curves.append(f"'{name}' every ::1 using ({cond} ? $1/1000.0 : 1/0):5 "
                          f"with linespoints title '{role} {idx} (pid {pid})'")
        lines.append("plot " + ", \\\n     ".join(curves))
    lines.append("unset multiplot")
    out = Path(script_path) if script_path else csv_path.with_suffix(".gp")
    out.write_text("\n".join(lines) + "\n")
    return out
