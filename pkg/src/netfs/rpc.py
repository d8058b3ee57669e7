"""Reach one store from many processes: a JSON-lines server and a client facade.

The server owns the :class:`~netfs.schema.NetFS`. Each request is one
JSON object per line, ``{"id", "op", "args", "kwargs", "who"}``, answered
by ``{"id", "ok", "result"}`` or ``{"id", "ok": false, "error", ...}``.
:class:`RemoteNetFS` mirrors the facade's methods so tools and daemons
run unchanged against a remote store. Watches live on the server and are
referred to by id.
"""

from __future__ import annotations

import base64
import contextlib
import dataclasses
import json
import logging
import os
import socket
import socketserver
import threading

from . import store as store_mod
from .errors import NetFSError, StoreUnreachable, error_class
from .fields import FlowSpec
from .schema import EventRecord, NetFS
from .transport import parse_endpoint

log = logging.getLogger(__name__)

DEFAULT_PORT = 6640
ENV_ENDPOINT = "NETFS_STORE"
MAX_WAIT = 30.0

# facade methods a client may call
OPERATIONS = frozenset({
    "read", "read_text", "list", "exists", "stat", "kind", "readlink", "resolve",
    "chmod", "snapshot", "restore", "mkdir", "mk_semantic", "ensure", "rmdir",
    "rm_semantic", "remove", "unlink", "rename", "write", "write_flow_field",
    "clear_flow_fields", "commit_flow", "committed_flow", "committed_flows", "add_flow",
    "symlink", "open_event_buffer", "close_event_buffer", "enqueue_event",
    "deliver_packet_in", "read_event", "pending_events", "ack_event", "packet_out",
    "switches", "ports", "peer_of", "role_of",
})

_DATACLASSES = {cls.__name__: cls for cls in (
    store_mod.ChangeEvent, store_mod.NodeInfo, store_mod.NodeMeta, EventRecord)}
_ENUMS = {"NodeKind": store_mod.NodeKind, "EventKind": store_mod.EventKind}


def encode(value):
    """Turn facade values into JSON-safe data (bytes, tuples, enums, records)."""
    if isinstance(value, (store_mod.NodeKind, store_mod.EventKind)):
        return {"$enum": type(value).__name__, "v": value.value}
    if value is None or isinstance(value, (bool, int, float, str)):
        return value
    if isinstance(value, (bytes, bytearray)):
        return {"$b": base64.b64encode(bytes(value)).decode()}
    if isinstance(value, tuple):
        return {"$t": [encode(v) for v in value]}
    if isinstance(value, list):
        return [encode(v) for v in value]
    if isinstance(value, dict):
        return {"$d": [[encode(k), encode(v)] for k, v in value.items()]}
    if isinstance(value, FlowSpec):
        return {"$flow": value.to_dict()}
    if type(value).__name__ in _DATACLASSES:
        return {"$dc": type(value).__name__,
                "f": {f.name: encode(getattr(value, f.name)) for f in dataclasses.fields(value)}}
    raise TypeError(f"cannot encode {type(value).__name__}")


def decode(value):
    if isinstance(value, list):
        return [decode(v) for v in value]
    if not isinstance(value, dict):
        return value
    if "$b" in value:
        return base64.b64decode(value["$b"])
    if "$t" in value:
        return tuple(decode(v) for v in value["$t"])
    if "$d" in value:
        return {decode(k): decode(v) for k, v in value["$d"]}
    if "$enum" in value:
        return _ENUMS[value["$enum"]](value["v"])
    if "$flow" in value:
        return FlowSpec.from_dict(value["$flow"])
    if "$dc" in value:
        return _DATACLASSES[value["$dc"]](**{k: decode(v) for k, v in value["f"].items()})
    if "$watch" in value:
        return value
    raise ValueError(f"cannot decode {value!r}")


def _error_reply(rid, exc: NetFSError) -> dict:
    return {"id": rid, "ok": False, "error": type(exc).__name__, "message": str(exc),
            "path": exc.path, "field": getattr(exc, "field", None)}


# -- server ----------------------------------------------------------------------

class StoreServer:
    """Serve one NetFS to any number of line-protocol clients."""

    def __init__(self, fs: NetFS, host: str = "127.0.0.1", port: int = DEFAULT_PORT):
        self.fs = fs
        self.watches: dict[int, object] = {}
        self._watch_ids = iter(range(1, 1 << 62))
        self._lock = threading.Lock()
        server = self

        class Handler(socketserver.StreamRequestHandler):
            def handle(self):
                owned = []
                try:
                    for line in self.rfile:
                        if not line.strip():
                            continue
                        reply = server.dispatch(json.loads(line), owned)
                        self.wfile.write(json.dumps(reply).encode() + b"\n")
                        self.wfile.flush()
                except (ConnectionError, OSError):
                    pass
                finally:
                    for wid in owned:
                        server._drop_watch(wid)

        class Server(socketserver.ThreadingTCPServer):
            daemon_threads = True
            allow_reuse_address = True

        self.server = Server((host, port), Handler)
        self.address = self.server.server_address

    def dispatch(self, req: dict, owned: list) -> dict:
        rid = req.get("id")
        op = req.get("op")
        fs = self.fs.as_user(req["who"]) if req.get("who") else self.fs
        try:
            args = decode(req.get("args", []))
            kwargs = decode(req["kwargs"]) if "kwargs" in req else {}
            if op == "watch":
                handle = fs.watch(*args, **kwargs)
                with self._lock:
                    wid = next(self._watch_ids)
                    self.watches[wid] = handle
                owned.append(wid)
                result = {"$watch": wid}
            elif op == "watch_get":
                wid, timeout = args
                handle = self._handle(wid)
                timeout = MAX_WAIT if timeout is None else min(float(timeout), MAX_WAIT)
                result = encode(handle.get(timeout))
            elif op == "watch_drain":
                result = encode(self._handle(args[0]).drain())
            elif op == "unwatch":
                self._drop_watch(args[0])
                if args[0] in owned:
                    owned.remove(args[0])
                result = None
            elif op == "root":
                result = fs.root
            elif op in OPERATIONS:
                result = encode(getattr(fs, op)(*args, **kwargs))
            else:
                return {"id": rid, "ok": False, "error": "InvalidArgument",
                        "message": f"unknown operation {op!r}", "path": None, "field": None}
        except NetFSError as exc:
            return _error_reply(rid, exc)
        except (TypeError, ValueError, KeyError) as exc:
            return {"id": rid, "ok": False, "error": "InvalidArgument", "message": str(exc),
                    "path": None, "field": None}
        return {"id": rid, "ok": True, "result": result}

    def _handle(self, wid):
        with self._lock:
            handle = self.watches.get(wid)
        if handle is None:
            raise store_mod.InvalidArgument(f"no such watch {wid}")
        return handle

    def _drop_watch(self, wid) -> None:
        with self._lock:
            handle = self.watches.pop(wid, None)
        if handle is not None:
            self.fs.unwatch(handle)

    def serve_forever(self) -> None:
        self.server.serve_forever(poll_interval=0.1)

    def start(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, name="store-rpc", daemon=True)
        t.start()
        return t

    def close(self) -> None:
        self.server.shutdown()
        self.server.server_close()


# -- client ----------------------------------------------------------------------

class _Connection:
    def __init__(self, host: str, port: int, timeout: float):
        try:
            self.sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise StoreUnreachable(f"cannot reach store at {host}:{port}: {exc}") from None
        self.sock.settimeout(None)
        self.rfile = self.sock.makefile("rb")
        self.lock = threading.Lock()
        self.ids = iter(range(1, 1 << 62))
        self.endpoint = f"{host}:{port}"

    def call(self, op, args=(), kwargs=None, who=None):
        req = {"op": op, "args": encode(list(args)), "kwargs": encode(kwargs or {}), "who": who}
        with self.lock:
            req["id"] = next(self.ids)
            try:
                self.sock.sendall(json.dumps(req).encode() + b"\n")
                line = self.rfile.readline()
            except OSError as exc:
                raise StoreUnreachable(f"store {self.endpoint}: {exc}") from None
        if not line:
            raise StoreUnreachable(f"store {self.endpoint} closed the connection")
        reply = json.loads(line)
        if not reply["ok"]:
            cls = error_class(reply["error"])
            exc = cls(reply["message"], reply.get("path"))
            if reply.get("field") is not None:
                exc.field = reply["field"]
            raise exc
        return reply["result"]

    def close(self):
        with contextlib.suppress(OSError):
            self.sock.close()


class RemoteWatch:
    def __init__(self, conn: _Connection, wid: int):
        self.conn = conn
        self.id = wid

    def get(self, timeout: float | None = 0.0):
        return decode(self.conn.call("watch_get", (self.id, timeout)))

    def drain(self) -> list:
        return decode(self.conn.call("watch_drain", (self.id,)))

    def close(self) -> None:
        self.conn.call("unwatch", (self.id,))


class RemoteNetFS:
    """Client-side stand-in for :class:`NetFS` over the line protocol.

    ``atomic()`` cannot span round trips and only groups calls visually;
    every single call is still atomic on the server.
    """

    def __init__(self, endpoint: str, who: str | None = None, timeout: float = 5.0,
                 _conn: _Connection | None = None):
        self.endpoint = endpoint
        self.who = who
        if _conn is None:
            host, port = parse_endpoint(endpoint, DEFAULT_PORT)
            _conn = _Connection(host or "127.0.0.1", port, timeout)
        self._conn = _conn
        self.root = _conn.call("root")

    def as_user(self, who: str) -> RemoteNetFS:
        return RemoteNetFS(self.endpoint, who, _conn=self._conn)

    def atomic(self):
        return contextlib.nullcontext(self)

    def path(self, *parts) -> str:
        return "/".join([self.root.rstrip("/")] + [str(p).strip("/") for p in parts if str(p)])

    def switch_path(self, switch, view: str | None = None) -> str:
        name = f"{switch:016x}" if isinstance(switch, int) else switch
        return f"{view or self.root}/switches/{name}"

    def watch(self, path: str, recursive: bool = False, capacity: int | None = None):
        kwargs = {"recursive": recursive}
        if capacity is not None:
            kwargs["capacity"] = capacity
        result = self._conn.call("watch", (path,), kwargs, self.who)
        return RemoteWatch(self._conn, result["$watch"])

    def unwatch(self, handle: RemoteWatch) -> None:
        handle.close()

    def next_event(self, handle: RemoteWatch, timeout: float | None = 0.0):
        return handle.get(timeout)

    def close(self) -> None:
        self._conn.close()

    def __getattr__(self, name):
        if name not in OPERATIONS:
            raise AttributeError(name)

        def call(*args, **kwargs):
            return decode(self._conn.call(name, args, kwargs, self.who))
        call.__name__ = name
        return call


def connect_store(endpoint: str | None = None, who: str | None = None) -> RemoteNetFS:
    """Connect to ``endpoint`` or ``$NETFS_STORE``; raises StoreUnreachable."""
    endpoint = endpoint or os.environ.get(ENV_ENDPOINT)
    if not endpoint:
        raise StoreUnreachable(f"no store endpoint given and ${ENV_ENDPOINT} is not set")
    return RemoteNetFS(endpoint, who)


def main(argv=None) -> int:
    import argparse

    parser = argparse.ArgumentParser(prog="netfsd", description="serve a /net store")
    parser.add_argument("--listen", default=f"127.0.0.1:{DEFAULT_PORT}")
    parser.add_argument("--snapshot", help="restore this snapshot file at start")
    parser.add_argument("--log-level", default="INFO")
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    fs = NetFS()
    if args.snapshot:
        with open(args.snapshot, encoding="utf-8") as fh:
            fs.restore(fh.read())
    host, port = parse_endpoint(args.listen, DEFAULT_PORT)
    server = StoreServer(fs, host, port)
    log.info("serving /net on %s:%d", *server.address[:2])
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.close()
    return 0
