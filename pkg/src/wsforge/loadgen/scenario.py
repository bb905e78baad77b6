from __future__ import annotations

import configparser
import math
import random
import re
from dataclasses import dataclass
from importlib import resources

from .. import conf
from ..errors import ConfigError, UnknownPreset

PRESETS = (
    "client_throughput", "compare_transports", "context_switch", "horizontal_scaling",
    "param_influence_base", "param_influence_ping", "param_influence_conns",
    "param_influence_filesize", "concurrency_max",
)

_PM = re.compile(r"uniform_pm_fraction\(\s*([0-9.]+)\s*\)$")
_FILE = re.compile(r"file_request\((.+)\)$")


@dataclass(frozen=True)
class Scenario:
    duration: float = 10.0
    new_conns_per_tick: int = 10
    tick_period: float = 1.0
    ping_mean_period: float = 2.5
    ping_jitter: str = "uniform_pm_fraction(0.2)"
    payload: str = "random_number"
    n_client_procs: int = 2
    host: str = "127.0.0.1"
    port: int = 8000
    max_total_conns: int | None = 1000
    transport: str = "websocket"
    closed_loop: bool = False
    drain_timeout: float = 10.0
    seed: int = 0

    def validate(self) -> None:
        if self.duration <= 0:
            raise ConfigError("duration must be > 0")
        if self.new_conns_per_tick < 1:
            raise ConfigError("new_conns_per_tick must be >= 1")
        if self.tick_period <= 0 or self.ping_mean_period <= 0:
            raise ConfigError("tick_period and ping_mean_period must be > 0")
        if self.n_client_procs < 1:
            raise ConfigError("n_client_procs must be >= 1")
        if self.max_total_conns is not None and self.max_total_conns < 1:
            raise ConfigError("max_total_conns must be >= 1")
        if not 1 <= self.port <= 65535:
            raise ConfigError(f"port {self.port} out of range")
        if self.transport not in ("websocket", "long_poll"):
            raise ConfigError("transport must be websocket or long_poll")
        self.jitter_fraction  # parses or raises
        self.file_name

    @property
    def jitter_fraction(self) -> float | None:
        """``None`` for the 0-5 s uniform law, else the +-fraction around the mean."""
        if self.ping_jitter == "uniform_0_to_5s":
            return None
        m = _PM.match(self.ping_jitter)
        if not m or not 0 <= float(m.group(1)) < 1:
            raise ConfigError(f"unknown ping_jitter {self.ping_jitter!r}")
        return float(m.group(1))

    @property
    def file_name(self) -> str | None:
        if self.payload == "random_number":
            return None
        m = _FILE.match(self.payload)
        if not m:
            raise ConfigError(f"unknown payload {self.payload!r}")
        return m.group(1)

    def draw_interval(self, rng: random.Random) -> float:
        """Seconds until the next ping on one connection."""
        f = self.jitter_fraction
        if f is None:
            return round(rng.random() * 5000) / 1000.0
        return self.ping_mean_period * rng.uniform(1 - f, 1 + f)

    def expected_peak_conns(self) -> int:
        return planned_total(self, self.n_ticks)

    @property
    def n_ticks(self) -> int:
        """Ticks fire at 0, T, 2T, ... strictly before the end of the run."""
        return max(1, math.ceil(round(self.duration / self.tick_period, 9)))

    def with_overrides(self, mapping: dict) -> "Scenario":
        return conf.build(Scenario, mapping, base=self)


def share(total: int, n: int, i: int) -> int:
    """Part of ``total`` owned by process ``i`` of ``n``; the remainder goes to the lowest indices."""
    return total // n + (1 if i < total % n else 0)


def planned_attempts(sc: Scenario, ticks: int, i: int) -> int:
    """Connections process ``i`` has opened once ``ticks`` ticks have fired.

    Each process owns a share of the cumulative total, so the per-tick remainder
    rotates and per-process counts never differ by more than one.
    """
    return share(planned_total(sc, ticks), sc.n_client_procs, i)


def planned_total(sc: Scenario, ticks: int) -> int:
    total = ticks * sc.new_conns_per_tick
    return min(total, sc.max_total_conns) if sc.max_total_conns else total


def _preset_parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    cp.read_string((resources.files("wsforge.loadgen") / "presets.conf").read_text())
    return cp


def preset(name: str) -> Scenario:
    cp = _preset_parser()
    if name not in PRESETS or not cp.has_section(name):
        raise UnknownPreset(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return conf.build(Scenario, dict(cp[name]))


def presets_version() -> int:
    return int(_preset_parser()["meta"]["version"])


def load_scenario(path) -> Scenario:
    return conf.build(Scenario, conf.read_kv(path))
