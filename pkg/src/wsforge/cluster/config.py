from __future__ import annotations

from dataclasses import asdict, dataclass

from ..errors import ConfigError

STRATEGIES = ("round_robin", "least_connections")


@dataclass(frozen=True)
class ClusterConfig:
    n_load_balancers: int = 1
    n_workers: int = 1
    n_stores: int = 1
    host: str = "127.0.0.1"
    public_port: int = 8000
    worker_base_port: int = 8100
    store_port: int = 8090
    lb_strategy: str = "round_robin"
    max_conns_per_worker: int = 50_000
    send_queue_cap: int = 1024
    max_message_size: int = 1024 * 1024
    expected_conns: int = 0

    def validate(self) -> None:
        if self.n_load_balancers < 1 or self.n_workers < 1:
            raise ConfigError("need at least one load balancer and one worker")
        if self.n_stores not in (0, 1):
            raise ConfigError("n_stores must be 0 or 1")
        if self.lb_strategy not in STRATEGIES:
            raise ConfigError(f"lb_strategy must be one of {', '.join(STRATEGIES)}")
        if self.max_conns_per_worker < 1 or self.send_queue_cap < 1:
            raise ConfigError("max_conns_per_worker and send_queue_cap must be positive")
        ports = [self.public_port, *self.worker_ports]
        if self.n_stores:
            ports.append(self.store_port)
        for p in ports:
            if not 1 <= p <= 65535:
                raise ConfigError(f"port {p} out of range")
        if len(set(ports)) != len(ports):
            raise ConfigError("public, worker and store ports must be disjoint")

    @property
    def worker_ports(self) -> list[int]:
        return [self.worker_base_port + i for i in range(self.n_workers)]

    def to_dict(self) -> dict:
        return asdict(self)
