from __future__ import annotations

import bisect
import csv
from dataclasses import dataclass, field
from pathlib import Path

# upper bucket edges in ms; a final bucket catches everything slower
RTT_EDGES_MS = (0.5, 1, 2, 5, 10, 20, 50, 100, 200, 500, 1000, 2000, 5000)


def bucket_index(rtt_ms: float) -> int:
    return bisect.bisect_left(RTT_EDGES_MS, rtt_ms)


def bucket_labels() -> list[str]:
    lo = [0.0, *RTT_EDGES_MS]
    hi = [*RTT_EDGES_MS, float("inf")]
    return [f"{a:g}-{b:g}" for a, b in zip(lo, hi)]


@dataclass
class ProcReport:
    proc_index: int
    pid: int = 0
    conns_attempted: int = 0
    conns_established: int = 0
    conns_dropped: int = 0
    pings_sent: int = 0
    pongs_received: int = 0
    hist: list[int] = field(default_factory=lambda: [0] * (len(RTT_EDGES_MS) + 1))
    rtt_sum_ms: float = 0.0
    rtt_max_ms: float = 0.0
    # second index -> [pings_sent, pongs_received]
    series: dict[int, list[int]] = field(default_factory=dict)
    # cumulative attempted connections after each tick
    ramp: list[int] = field(default_factory=list)
    wire_bytes_out: int = 0
    wire_bytes_in: int = 0
    handshake_bytes: int = 0
    close_codes: dict[str, int] = field(default_factory=dict)
    errors: list[str] = field(default_factory=list)

    def record_rtt(self, rtt_ms: float) -> None:
        self.hist[bucket_index(rtt_ms)] += 1
        self.rtt_sum_ms += rtt_ms
        if rtt_ms > self.rtt_max_ms:
            self.rtt_max_ms = rtt_ms

    def tick_second(self, second: int, sent: int = 0, received: int = 0) -> None:
        row = self.series.setdefault(second, [0, 0])
        row[0] += sent
        row[1] += received


@dataclass
class RunReport:
    transport: str = "websocket"
    duration: float = 0.0
    conns_attempted: int = 0
    conns_established: int = 0
    conns_dropped: int = 0
    pings_sent: int = 0
    pongs_received: int = 0
    hist: list[int] = field(default_factory=lambda: [0] * (len(RTT_EDGES_MS) + 1))
    rtt_sum_ms: float = 0.0
    rtt_max_ms: float = 0.0
    series: dict[int, list[int]] = field(default_factory=dict)
    procs: list[ProcReport] = field(default_factory=list)
    wire_bytes_out: int = 0
    wire_bytes_in: int = 0
    handshake_bytes: int = 0
    errors: list[str] = field(default_factory=list)

    @classmethod
    def merge(cls, procs: list[ProcReport], transport: str = "websocket", duration: float = 0.0) -> "RunReport":
        r = cls(transport=transport, duration=duration, procs=sorted(procs, key=lambda p: p.proc_index))
        for p in r.procs:
            r.conns_attempted += p.conns_attempted
            r.conns_established += p.conns_established
            r.conns_dropped += p.conns_dropped
            r.pings_sent += p.pings_sent
            r.pongs_received += p.pongs_received
            r.hist = [a + b for a, b in zip(r.hist, p.hist)]
            r.rtt_sum_ms += p.rtt_sum_ms
            r.rtt_max_ms = max(r.rtt_max_ms, p.rtt_max_ms)
            for sec, (s, rcv) in p.series.items():
                row = r.series.setdefault(int(sec), [0, 0])
                row[0] += s
                row[1] += rcv
            r.wire_bytes_out += p.wire_bytes_out
            r.wire_bytes_in += p.wire_bytes_in
            r.handshake_bytes += p.handshake_bytes
            r.errors.extend(p.errors)
        return r

    @property
    def drop_rate(self) -> float:
        return self.conns_dropped / self.conns_attempted if self.conns_attempted else 0.0

    @property
    def mean_rtt_ms(self) -> float:
        return self.rtt_sum_ms / self.pongs_received if self.pongs_received else 0.0

    @property
    def wire_bytes_per_exchange(self) -> float:
        """Post-handshake bytes on the wire (both directions) per completed ping/pong."""
        return (self.wire_bytes_out + self.wire_bytes_in) / self.pongs_received if self.pongs_received else 0.0

    @property
    def throughput(self) -> float:
        return self.pongs_received / self.duration if self.duration else 0.0

    def rtt_percentile(self, q: float) -> float:
        """Upper edge of the bucket holding the q-quantile (coarse by construction)."""
        total = sum(self.hist)
        if not total:
            return 0.0
        target = q * total
        acc = 0
        for i, n in enumerate(self.hist):
            acc += n
            if acc >= target:
                return RTT_EDGES_MS[i] if i < len(RTT_EDGES_MS) else float("inf")
        return float("inf")  # pragma: no cover

    def summary(self) -> dict[str, object]:
        return {
            "transport": self.transport,
            "duration_s": round(self.duration, 3),
            "conns_attempted": self.conns_attempted,
            "conns_established": self.conns_established,
            "conns_dropped": self.conns_dropped,
            "drop_rate": round(self.drop_rate, 6),
            "pings_sent": self.pings_sent,
            "pongs_received": self.pongs_received,
            "throughput_per_s": round(self.throughput, 3),
            "rtt_mean_ms": round(self.mean_rtt_ms, 3),
            "rtt_p50_ms": self.rtt_percentile(0.5),
            "rtt_p99_ms": self.rtt_percentile(0.99),
            "rtt_max_ms": round(self.rtt_max_ms, 3),
            "wire_bytes_per_exchange": round(self.wire_bytes_per_exchange, 2),
            "per_proc_established": ",".join(str(p.conns_established) for p in self.procs),
        }

    def summary_text(self) -> str:
        lines = [f"{k} = {v}" for k, v in self.summary().items()]
        lines.append("# rtt histogram (ms bucket = count)")
        lines += [f"rtt[{lab}] = {n}" for lab, n in zip(bucket_labels(), self.hist)]
        if self.errors:
            lines.append(f"# {len(self.errors)} errors, first: {self.errors[0]}")
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> Path:
        """Per-second series: second, pings sent, pongs received."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_s", "pings_sent", "pongs_received"])
            for sec in sorted(self.series):
                w.writerow([sec, *self.series[sec]])
        return path

    def write_latency_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bucket_ms", "count"])
            for lab, n in zip(bucket_labels(), self.hist):
                w.writerow([lab, n])
        return path

    def write_procs_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["proc_index", "pid", "conns_attempted", "conns_established", "conns_dropped",
                        "pings_sent", "pongs_received"])
            for p in self.procs:
                w.writerow([p.proc_index, p.pid, p.conns_attempted, p.conns_established,
                            p.conns_dropped, p.pings_sent, p.pongs_received])
        return path
