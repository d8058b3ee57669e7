"""Byte-stream transports between the driver and switches.

Both ends expose the same three calls: ``send(bytes)``, ``recv()`` which
returns whatever bytes are available without blocking (raising
``ConnectionError`` once the stream is closed and drained), and ``close()``.
"""

from __future__ import annotations

import errno
import select
import socket
import threading
from collections import deque


class PipeEnd:
    def __init__(self, inbox: deque, outbox: deque, state: dict, lock: threading.Lock):
        self._in = inbox
        self._out = outbox
        self._state = state
        self._lock = lock

    @property
    def closed(self) -> bool:
        return self._state["closed"]

    def send(self, data: bytes) -> None:
        with self._lock:
            if self._state["closed"]:
                raise ConnectionError("pipe closed")
            self._out.append(bytes(data))

    def recv(self) -> bytes:
        with self._lock:
            if self._in:
                data = b"".join(self._in)
                self._in.clear()
                return data
            if self._state["closed"]:
                raise ConnectionError("pipe closed")
            return b""

    def pending(self) -> int:
        with self._lock:
            return sum(len(c) for c in self._in)

    def close(self) -> None:
        with self._lock:
            self._state["closed"] = True
            # a killed link loses whatever was in flight
            self._in.clear()
            self._out.clear()


def memory_pipe() -> tuple[PipeEnd, PipeEnd]:
    """Two connected in-memory ends; closing either kills both."""
    a_to_b, b_to_a = deque(), deque()
    state = {"closed": False}
    lock = threading.Lock()
    return PipeEnd(b_to_a, a_to_b, state, lock), PipeEnd(a_to_b, b_to_a, state, lock)


class SocketTransport:
    """Non-blocking wrapper around a connected TCP socket."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.sock.setblocking(False)
        self._send_lock = threading.Lock()
        self.closed = False

    @classmethod
    def connect(cls, host: str, port: int, timeout: float = 5.0) -> SocketTransport:
        sock = socket.create_connection((host, port), timeout=timeout)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return cls(sock)

    def fileno(self):
        return self.sock.fileno()

    def send(self, data: bytes) -> None:
        if self.closed:
            raise ConnectionError("socket closed")
        with self._send_lock:
            view = memoryview(data)
            while view:
                try:
                    n = self.sock.send(view)
                except BlockingIOError:
                    select.select([], [self.sock], [], 1.0)
                    continue
                except OSError as exc:
                    self.closed = True
                    raise ConnectionError(str(exc)) from exc
                view = view[n:]

    def recv(self) -> bytes:
        if self.closed:
            raise ConnectionError("socket closed")
        chunks = []
        while True:
            try:
                data = self.sock.recv(65536)
            except BlockingIOError:
                break
            except OSError as exc:
                if exc.errno == errno.EAGAIN:
                    break
                self.closed = True
                raise ConnectionError(str(exc)) from exc
            if not data:
                self.closed = True
                if chunks:
                    return b"".join(chunks)
                raise ConnectionError("peer closed the connection")
            chunks.append(data)
        return b"".join(chunks)

    def wait(self, timeout: float) -> bool:
        """Block until data is readable (or timeout)."""
        if self.closed:
            return True
        r, _, _ = select.select([self.sock], [], [], timeout)
        return bool(r)

    def close(self) -> None:
        self.closed = True
        try:
            self.sock.close()
        except OSError:
            pass


def parse_endpoint(text: str, default_port: int) -> tuple[str, int]:
    """``"host:port"``, ``":port"`` or ``"host"`` -> (host, port)."""
    if ":" in text:
        host, _, port = text.rpartition(":")
        return host or "0.0.0.0", int(port)
    return text, default_port
