"""``wsforge`` command line: serve, bench, compare, analyze, report.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import signal
import sys
import threading
from datetime import datetime
from pathlib import Path

from . import analysis, conf, metrics
from .cluster import ClusterConfig, spawn
from .comet import PROFILES, spawn_comet
from .errors import (
    ConfigError,
    DegenerateInput,
    DivergesAtOne,
    NoTransports,
    UnknownPreset,
    WsForgeError,
)
from .loadgen import PRESETS, RunReport, Scenario, preset
from .loadgen.report import bucket_labels
from .loadgen.runner import LoadGenerator, compare
from .loadgen.scenario import load_scenario

log = logging.getLogger("wsforge")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# --- config plumbing ---------------------------------------------------------

_SCENARIO_KEYS = {f.name for f in dataclasses.fields(Scenario)}
_CLUSTER_KEYS = {f.name for f in dataclasses.fields(ClusterConfig)}


def split_overrides(items) -> tuple[dict, dict]:
    """Route ``--set`` pairs to the scenario, the cluster config, or both (``host``)."""
    pairs = conf.parse_overrides(items)
    sc, cl = {}, {}
    for k, v in pairs.items():
        if k not in _SCENARIO_KEYS and k not in _CLUSTER_KEYS:
            raise ConfigError(f"unknown setting {k!r}")
        if k in _SCENARIO_KEYS:
            sc[k] = v
        if k in _CLUSTER_KEYS:
            cl[k] = v
    return sc, cl


def cluster_config(args, overrides: dict) -> ClusterConfig:
    base = {}
    if getattr(args, "config", None) and args.command == "serve":
        base = conf.read_kv(args.config)
    return conf.build(ClusterConfig, {**base, **overrides})


def scenario_from(args, overrides: dict) -> Scenario:
    if args.config:
        sc = load_scenario(args.config)
    elif args.preset:
        sc = preset(args.preset)
    else:
        raise UsageError("give a preset name or --config FILE")
    extra = dict(overrides)
    if args.duration is not None:
        extra["duration"] = str(args.duration)
    if args.seed is not None:
        extra["seed"] = str(args.seed)
    return conf.build(Scenario, extra, base=sc) if extra else sc


def run_dir(root) -> Path:
    root = Path(root)
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
    d = root / f"run-{stamp}"
    n = 1
    while d.exists():
        n += 1
        d = root / f"run-{stamp}-{n}"
    d.mkdir(parents=True)
    return d


def write_kv(path: Path, d: dict) -> None:
    path.write_text(analysis.format_kv(d))


# --- serve -------------------------------------------------------------------

def cmd_serve(args) -> int:
    _, cl = split_overrides(args.set)
    config = cluster_config(args, cl)
    handle = spawn(config)
    comet = spawn_comet(args.comet_port, config.host) if args.comet_port else None
    print(f"serving {handle.endpoint}", flush=True)
    for pid, role, idx in handle.pids():
        print(f"  {role} {idx} pid={pid}")
    if comet is not None:
        print(f"long-poll http://{config.host}:{args.comet_port}/lpoll", flush=True)
    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    while not stop.wait(0.5):
        if not all(p.process.is_alive() for p in handle.procs):
            log.error("a cluster process died; shutting down")
            break
    finals = handle.shutdown(args.grace)
    if comet is not None:
        comet.shutdown()
    for ws in finals:
        print(analysis.format_kv({f"worker{ws.worker_index}.{k}": v
                                  for k, v in dataclasses.asdict(ws).items()}), end="")
    return EXIT_OK


# --- bench -------------------------------------------------------------------

def _targets(handle) -> list[metrics.Target]:
    return [metrics.Target(p.pid, p.role, p.index, handle.stats_fn(p)) for p in handle.procs]


def write_run(out: Path, report: RunReport, samples, extra: dict | None = None, prefix: str = "") -> dict:
    from . import plotting

    report.write_csv(out / f"{prefix}report.csv")
    report.write_latency_csv(out / f"{prefix}latency.csv")
    report.write_procs_csv(out / f"{prefix}procs.csv")
    plotting.throughput_figure(report, out / f"{prefix}throughput.png")
    plotting.rtt_figure(report, out / f"{prefix}rtt.png")
    summary = report.summary()
    if samples:
        mpath = metrics.export_csv(samples, out / f"{prefix}metrics.csv")
        metrics.emit_plot_script(mpath, out / f"{prefix}metrics.gp")
        plotting.cpu_figure(samples, out / f"{prefix}cpu.png")
        summary.update(analysis.metrics_summary(samples))
    summary.update(extra or {})
    write_kv(out / f"{prefix}summary.txt", summary)
    return summary


def cmd_bench(args) -> int:
    sc_over, cl_over = split_overrides(args.set)
    sc = scenario_from(args, sc_over)
    out = run_dir(args.out)
    (out / "scenario.conf").write_text(conf.dump(sc))
    handle = None
    if args.spawn:
        cl_over.setdefault("public_port", str(sc.port))
        cl_over.setdefault("expected_conns", str(sc.expected_peak_conns()))
        handle = spawn(cluster_config(args, cl_over))
    sampler = metrics.Sampler(args.period)
    report, samples, extra = None, [], {}
    try:
        if handle is not None:
            sampler.add_all(_targets(handle))
        gen = LoadGenerator(sc)
        sampler.start()
        gen.start()
        for pid, role, idx in gen.pids():
            sampler.add(metrics.Target(pid, role, idx))
        report = gen.wait()
        samples = sampler.stop()
        if handle is not None and handle.config.n_stores:
            extra["store_pings_sum"] = handle.store_sum()
    finally:
        sampler.stop()
        if handle is not None:
            finals = handle.shutdown()
            extra["workers_pings_received"] = sum(w.pings_received for w in finals)
            extra["workers_pongs_sent"] = sum(w.pongs_sent for w in finals)
        if report is not None:
            summary = write_run(out, report, samples or sampler.samples, extra)
            print(analysis.format_kv(summary), end="")
        elif sampler.samples:
            metrics.export_csv(sampler.samples, out / "metrics.csv")
    print(f"artifacts in {out}")
    if args.max_drop is not None and report.drop_rate > args.max_drop:
        print(f"drop rate {report.drop_rate:.4f} exceeds --max-drop {args.max_drop}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


# --- compare -----------------------------------------------------------------

def cmd_compare(args) -> int:
    from . import plotting

    transports = [t for t in args.transports.split(",") if t]
    if not transports:
        raise NoTransports("no transports given")
    if args.preset is None and args.config is None:
        args.preset = "compare_transports"
    sc_over, cl_over = split_overrides(args.set)
    sc = scenario_from(args, sc_over)
    targets = {"websocket": (sc.host, sc.port), "long_poll": (sc.host, args.comet_port)}
    handle = comet = None
    out = run_dir(args.out)
    try:
        if args.spawn:
            if "websocket" in transports:
                cl_over.setdefault("public_port", str(sc.port))
                cl_over.setdefault("expected_conns", str(sc.expected_peak_conns()))
                handle = spawn(cluster_config(args, cl_over))
            if "long_poll" in transports:
                comet = spawn_comet(args.comet_port, sc.host, args.hold_timeout)
        samples_by_t: dict[str, list] = {}

        def sampler_factory(t, gen):
            s = metrics.Sampler(args.period)
            server = handle if t == "websocket" else comet
            if server is not None:
                for pid, role, idx in server.pids():
                    stats = None
                    if server is handle:
                        stats = handle.stats_fn(next(p for p in handle.procs if p.pid == pid))
                    # the long-poll server plays the worker role
                    s.add(metrics.Target(pid, "worker" if role == "comet" else role, idx, stats))
            for pid, role, idx in gen.pids():
                s.add(metrics.Target(pid, role, idx))
            s.start()
            samples_by_t[t] = s.samples
            return s

        cmp = compare(transports, sc, targets, sampler_factory)
    finally:
        if handle is not None:
            handle.shutdown()
        if comet is not None:
            comet.shutdown()
    for t, r in cmp.reports.items():
        write_run(out, r, samples_by_t.get(t), prefix=f"{t}-")
    if len(cmp.reports) > 1:
        plotting.compare_figure(cmp.reports, out / "compare.png")
    summary = cmp.summary()
    write_kv(out / "compare.txt", summary)
    print(analysis.format_kv(summary), end="")
    if cmp.wire_ratio is not None:
        print(f"ratio: long_poll/websocket wire bytes per exchange = {cmp.wire_ratio:.2f}")
    print(f"artifacts in {out}")
    return EXIT_OK


# --- analyze -----------------------------------------------------------------

def _pair(text: str) -> tuple[str, float]:
    k, sep, v = text.partition("=")
    if not sep:
        raise UsageError(f"expected NAME=VALUE, got {text!r}")
    try:
        return k.strip().upper(), float(v)
    except ValueError:
        raise UsageError(f"{text!r}: not a number") from None


def _points(text: str) -> list[tuple[float, float]]:
    pts = []
    for item in text.split(","):
        c, sep, t = item.partition(":")
        if not sep:
            raise UsageError(f"scaling point {item!r} is not CORES:THROUGHPUT")
        pts.append((float(c), float(t)))
    return pts


def cmd_analyze(args) -> int:
    out: dict[str, object] = {}
    if args.amdahl:
        vals = dict(_pair(a) for a in args.amdahl)
        if set(vals) != {"P", "N"}:
            raise UsageError("--amdahl needs P=... N=...")
        try:
            m = analysis.AmdahlModel(vals["P"], vals["N"])
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        out["speedup"] = f"{analysis.amdahl_speedup(m):.3f}"
        try:
            out["limit"] = f"{analysis.amdahl_limit(m.P):.3f}"
        except DivergesAtOne:
            out["limit"] = "inf"
    if args.overhead is not None:
        prof = PROFILES.get(args.profile)
        if prof is None:
            raise UsageError(f"unknown profile {args.profile!r}; choose from {', '.join(PROFILES)}")
        out["overhead_ratio"] = f"{analysis.overhead_ratio(args.overhead, prof):.3f}"
    if args.scaling:
        try:
            fit = analysis.scaling_fit(_points(args.scaling))
        except DegenerateInput as exc:
            raise UsageError(str(exc)) from None
        out["implied_speedup"] = ",".join(f"{s:.3f}" for s in fit.implied_speedup)
        out["efficiency_per_core"] = f"{fit.efficiency_per_core:.3f}"
        out["regime"] = fit.regime
    if args.metrics:
        out.update(analysis.metrics_summary(metrics.read_csv(args.metrics)))
    if not out:
        raise UsageError("nothing to analyze; see --help")
    print(analysis.format_kv(out), end="")
    return EXIT_OK


# --- report ------------------------------------------------------------------

def load_run(d: Path) -> RunReport | None:
    rpath, lpath = d / "report.csv", d / "latency.csv"
    if not rpath.exists():
        return None
    r = RunReport()
    summ = d / "summary.txt"
    if summ.exists():
        kv = conf.parse_kv(summ.read_text(), str(summ))
        r.transport = kv.get("transport", r.transport)
        r.duration = float(kv.get("duration_s", 0) or 0)
    with rpath.open(newline="") as fh:
        for row in csv.DictReader(fh):
            r.series[int(row["t_s"])] = [int(row["pings_sent"]), int(row["pongs_received"])]
    r.pings_sent = sum(v[0] for v in r.series.values())
    if lpath.exists():
        with lpath.open(newline="") as fh:
            counts = {row["bucket_ms"]: int(row["count"]) for row in csv.DictReader(fh)}
        r.hist = [counts.get(lab, 0) for lab in bucket_labels()]
    r.pongs_received = sum(r.hist) if lpath.exists() else sum(v[1] for v in r.series.values())
    return r


def cmd_report(args) -> int:
    from . import plotting

    root = Path(args.dir)
    if not root.is_dir():
        raise UsageError(f"{root} is not a directory")
    runs = sorted(p for p in [root, *root.glob("run-*")] if (p / "report.csv").exists()
                  or (p / "metrics.csv").exists())
    if not runs:
        raise UsageError(f"no run artifacts under {root}")
    lines = []
    for d in runs:
        rep = load_run(d)
        if rep is not None:
            plotting.throughput_figure(rep, d / "throughput.png")
            plotting.rtt_figure(rep, d / "rtt.png")
        mpath = d / "metrics.csv"
        if mpath.exists():
            samples = metrics.read_csv(mpath)
            if samples:
                plotting.cpu_figure(samples, d / "cpu.png")
                metrics.emit_plot_script(mpath, d / "metrics.gp")
        summ = d / "summary.txt"
        lines.append(f"[{d.name}]")
        lines.append(summ.read_text().rstrip() if summ.exists() else "no summary")
        lines.append("")
    index = root / "report.txt"
    index.write_text("\n".join(lines))
    print(index.read_text(), end="")
    return EXIT_OK


# --- argument parsing --------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value file")
    common.add_argument("--set", action="append", default=[], metavar="K=V",
                        help="override one setting (repeatable, wins over --config)")
    common.add_argument("--out", default=os.environ.get("WSFORGE_OUT", "runs"),
                        help="output directory (default: $WSFORGE_OUT or ./runs)")
    common.add_argument("--seed", type=int, help="seed for every randomized schedule")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="wsforge", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("serve", parents=[common], help="run the cluster until interrupted")
    s.add_argument("--comet-port", type=int, help="also run the long-poll server on this port")
    s.add_argument("--grace", type=float, default=5.0, help="shutdown grace period in seconds")

    for name, helptext in (("bench", "run a benchmark scenario"),
                           ("compare", "run one scenario over several transports")):
        b = sub.add_parser(name, parents=[common], help=helptext)
        b.add_argument("preset", nargs="?", help=f"one of: {', '.join(PRESETS)}")
        b.add_argument("--duration", type=float, help="override the scenario duration (s)")
        b.add_argument("--max-drop", type=float, help="exit 1 if the drop rate exceeds this")
        b.add_argument("--spawn", action="store_true", help="start the server(s) for this run")
        b.add_argument("--period", type=float, default=1.0, help="metrics sampling period (s)")
    cmp = sub.choices["compare"]
    cmp.add_argument("--transports", default="websocket,long_poll")
    cmp.add_argument("--comet-port", type=int, default=8001)
    cmp.add_argument("--hold-timeout", type=float, default=25.0)

    a = sub.add_parser("analyze", parents=[common], help="Amdahl, overhead and scaling figures")
    a.add_argument("--amdahl", nargs=2, metavar=("P=..", "N=.."))
    a.add_argument("--overhead", type=int, metavar="PAYLOAD", help="poll/websocket byte ratio")
    a.add_argument("--profile", default="browser-realistic", help=f"one of: {', '.join(PROFILES)}")
    a.add_argument("--scaling", metavar="C:T,C:T,...", help="cores:throughput points")
    a.add_argument("--metrics", metavar="CSV", help="summarize a metrics CSV")

    r = sub.add_parser("report", parents=[common], help="render figures and collate run directories")
    r.add_argument("dir")
    return p


COMMANDS = {"serve": cmd_serve, "bench": cmd_bench, "compare": cmd_compare,
            "analyze": cmd_analyze, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UnknownPreset as exc:
        print(f"wsforge: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, ConfigError, NoTransports) as exc:
        print(f"wsforge: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except WsForgeError as exc:
        print(f"wsforge: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        return EXIT_RUNTIME
