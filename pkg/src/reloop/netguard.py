"""Offline test mode: fail loudly on any attempt to open a network connection.

Activated by the CLI ``--offline`` flag and by the acceptance suite; the
model gateway is the only module allowed to do backend I/O, and in offline
mode even it must stay on the scripted mock.
"""

from __future__ import annotations

import socket
from contextlib import contextmanager
from typing import Iterator


class NetworkForbidden(RuntimeError):
    pass


def _refuse(*args, **kwargs):
    raise NetworkForbidden("network access attempted in offline mode")


@contextmanager
def forbid_network() -> Iterator[None]:
    """Patch socket entry points so outbound connections raise."""
    saved = (
        socket.socket.connect,
        socket.socket.connect_ex,
        socket.create_connection,
    )
    socket.socket.connect = _refuse  # type: ignore[method-assign]
    socket.socket.connect_ex = _refuse  # type: ignore[method-assign]
    socket.create_connection = _refuse  # type: ignore[assignment]
    try:
        yield
    finally:
        socket.socket.connect, socket.socket.connect_ex, socket.create_connection = saved  # type: ignore[assignment]
