"""File-descriptor soft limit check (the classic 1024 ``ulimit -n`` trap)."""

from __future__ import annotations

import logging
import resource
import warnings

log = logging.getLogger(__name__)

FD_HEADROOM = 100


class FdLimitWarning(UserWarning):
    pass


def fd_soft_limit() -> int:
    return resource.getrlimit(resource.RLIMIT_NOFILE)[0]


def required_fds(expected_conns: int) -> int:
    return expected_conns + FD_HEADROOM


def check_fd_limit(expected_conns: int) -> bool:
    """Warn if this process's soft limit cannot hold ``expected_conns`` sockets plus headroom."""
    soft = fd_soft_limit()
    need = required_fds(expected_conns)
    if soft != resource.RLIM_INFINITY and soft < need:
        msg = (f"file-descriptor soft limit is {soft} but about {need} are needed for "
               f"{expected_conns} connections; raise it with `ulimit -n {need}` or limits.conf")
        log.warning(msg)
        warnings.warn(msg, FdLimitWarning, stacklevel=2)
        return False
    return True
