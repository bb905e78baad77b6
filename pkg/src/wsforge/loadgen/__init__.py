"""Benchmark client: ramped connections over several processes, randomized pings,
RTT and drop accounting."""

from .report import RunReport
from .runner import compare, run
from .scenario import PRESETS, Scenario, preset

__all__ = ["PRESETS", "RunReport", "Scenario", "compare", "preset", "run"]
