"""Multi-process server: load balancers splice TCP to workers, workers speak
WebSocket and run the ping/pong and file protocols, a store aggregates counters."""

from .config import ClusterConfig
from .supervisor import ClusterHandle, spawn

__all__ = ["ClusterConfig", "ClusterHandle", "spawn"]
