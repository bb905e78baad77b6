from __future__ import annotations

import logging
import multiprocessing as mp
import queue
import socket
import time
from dataclasses import asdict, dataclass, field, replace

from ..cluster.supervisor import sigint_ignored
from ..comet import BROWSER_REALISTIC, MINIMAL, measure_per_message_bytes
from ..errors import NoTransports, TargetUnreachable
from ..limits import check_fd_limit
from . import client
from .report import ProcReport, RunReport
from .scenario import Scenario, share

log = logging.getLogger(__name__)

START_DELAY = 0.5


def probe(host: str, port: int, timeout: float = 3.0) -> None:
    try:
        with socket.create_connection((host, port), timeout=timeout):
            pass
    except OSError as exc:
        raise TargetUnreachable(f"{host}:{port}: {exc}") from exc


def fd_preflight(sc: Scenario) -> bool:
    return check_fd_limit(share(sc.expected_peak_conns(), sc.n_client_procs, 0))


class LoadGenerator:
    """Client processes of one run.  ``start`` forks them, ``wait`` merges their reports."""

    def __init__(self, scenario: Scenario):
        scenario.validate()
        self.scenario = scenario
        self.procs: list[mp.Process] = []
        self._results = None

    def pids(self) -> list[tuple[int, str, int]]:
        return [(p.pid, "client", i) for i, p in enumerate(self.procs)]

    def start(self) -> "LoadGenerator":
        sc = self.scenario
        probe(sc.host, sc.port)
        fd_preflight(sc)
        ctx = mp.get_context("fork")
        self._results = ctx.Queue()
        start_at = time.time() + START_DELAY
        for i in range(sc.n_client_procs):
            p = ctx.Process(target=client.proc_main, args=(asdict(sc), i, start_at, self._results),
                            name=f"wsforge-client-{i}", daemon=True)
            with sigint_ignored():
                p.start()
            self.procs.append(p)
        return self

    def wait(self) -> RunReport:
        sc = self.scenario
        budget = START_DELAY + sc.duration + sc.drain_timeout + 30.0
        deadline = time.monotonic() + budget
        reports: dict[int, ProcReport] = {}
        while len(reports) < len(self.procs):
            try:
                d = self._results.get(timeout=max(0.1, deadline - time.monotonic()))
            except queue.Empty:
                break
            d["series"] = {int(k): v for k, v in d["series"].items()}
            reports[d["proc_index"]] = ProcReport(**d)
        for i, p in enumerate(self.procs):
            p.join(5)
            if p.is_alive():
                p.kill()
                p.join(2)
            if i not in reports:
                reports[i] = ProcReport(proc_index=i, pid=p.pid or 0,
                                        errors=[f"client process {i} returned no report"])
        return RunReport.merge(list(reports.values()), sc.transport, sc.duration)


def run(scenario: Scenario) -> RunReport:
    return LoadGenerator(scenario).start().wait()


@dataclass
class Comparison:
    reports: dict[str, RunReport]
    cpu: dict[str, dict[str, float]] = field(default_factory=dict)

    def wire_bytes(self) -> dict[str, float]:
        return {t: r.wire_bytes_per_exchange for t, r in self.reports.items()}

    @property
    def wire_ratio(self) -> float | None:
        """Measured long-poll bytes per exchange over WebSocket bytes per exchange."""
        w = self.wire_bytes()
        if not w.get("websocket") or "long_poll" not in w:
            return None
        return w["long_poll"] / w["websocket"]

    def model_ratios(self, payload: int = 20) -> dict[str, float]:
        ws = measure_per_message_bytes("websocket", payload)
        return {p.name: measure_per_message_bytes("long_poll", payload, p) / ws
                for p in (MINIMAL, BROWSER_REALISTIC)}

    def summary(self) -> dict[str, object]:
        out: dict[str, object] = {}
        for t, r in self.reports.items():
            for k, v in r.summary().items():
                out[f"{t}.{k}"] = v
        for t, roles in self.cpu.items():
            for role, pct in roles.items():
                out[f"{t}.cpu_pct.{role}"] = round(pct, 2)
        if self.wire_ratio is not None:
            out["wire_ratio_long_poll_over_websocket"] = round(self.wire_ratio, 3)
        for name, ratio in self.model_ratios().items():
            out[f"model_ratio_20B.{name}"] = round(ratio, 3)
        return out


def compare(transports, scenario: Scenario, targets: dict[str, tuple[str, int]] | None = None,
            sampler_factory=None) -> Comparison:
    """Run ``scenario`` once per transport against already-running servers.

    ``targets`` maps a transport to the (host, port) serving it; the scenario's own
    address is the fallback.  ``sampler_factory(transport, loadgen)`` may return a started
    metrics sampler whose ``stop()`` yields samples; mean cpu_pct per role is reported.
    """
    transports = list(transports)
    if not transports:
        raise NoTransports("compare needs at least one transport")
    targets = targets or {}
    reports, cpu = {}, {}
    for t in transports:
        host, port = targets.get(t, (scenario.host, scenario.port))
        sc = replace(scenario, transport=t, host=host, port=port)
        gen = LoadGenerator(sc).start()
        sampler = sampler_factory(t, gen) if sampler_factory else None
        reports[t] = gen.wait()
        if sampler is not None:
            cpu[t] = _mean_cpu_by_role(sampler.stop())
    return Comparison(reports, cpu)


def _mean_cpu_by_role(samples) -> dict[str, float]:
    acc: dict[tuple[str, int], list[float]] = {}
    for s in samples:
        if s.cpu_pct >= 0:
            acc.setdefault((s.role, s.proc_index), []).append(s.cpu_pct)
    by_role: dict[str, float] = {}
    for (role, _), vals in acc.items():
        by_role[role] = by_role.get(role, 0.0) + sum(vals) / len(vals)
    return by_role
