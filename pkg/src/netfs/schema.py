"""The ``/net`` layout on top of the raw store.

:class:`NetFS` is the file-style facade applications use. It behaves like
the plain store except at *schema points*, where directories mean
something:

* ``mkdir`` of a view, switch, port, flow or event buffer creates the object
  together with its mandated children;
* ``rmdir`` of such an object removes its whole subtree;
* writes into flow and port directories are checked against the field
  grammars, and writing a flow's ``version`` file commits the flow.

Committed flows are kept as images inside the schema layer. Drivers only
ever read those images, so staged edits never reach hardware until a
commit bumps the version.
"""

from __future__ import annotations

import itertools
import logging
import re
import threading
from dataclasses import dataclass

from . import fields as F
from .errors import (
    InvalidName,
    IsADirectory,
    NetFSError,
    NotASchemaPoint,
    NotFound,
    ParseError,
    UnknownField,
    ValidationFailed,
)
from .store import (
    DIRECTORY,
    FILE,
    ROOT_USER,
    Store,
    basename,
    check_name,
    is_under,
    parent_of,
)

log = logging.getLogger(__name__)

NET_ROOT = "/net"
DEFAULT_BUFFER_CAPACITY = 1024

VIEW_CHILDREN = ("hosts", "switches", "views")
SWITCH_CHILDREN = ("ports", "flows", "events", "packets_out")
PORT_FILES = {
    "hw_addr": "00:00:00:00:00:00",
    "config.port_down": "0",
    "config.port_status": "down",
    "stats.rx_packets": "0",
    "stats.tx_packets": "0",
}
RECORD_FILES = ("buffer_id", "in_port", "reason", "total_len", "data")

# role of a directory -> role of each named child
_FIXED_CHILDREN = {
    "view": {"hosts": "hosts", "switches": "switches", "views": "views"},
    "switch": {"ports": "ports", "flows": "flows", "events": "events",
               "packets_out": "packets_out"},
}
# role of a directory -> role of any child
_LIST_CHILDREN = {
    "views": "view", "switches": "switch", "ports": "port", "flows": "flow",
    "events": "buffer", "packets_out": "pktout", "buffer": "record",
}
SEMANTIC_ROLES = ("view", "switch", "port", "flow", "buffer", "pktout")
OBJECT_ROLES = SEMANTIC_ROLES + ("record",)

_SWITCH_NAME = re.compile(r"[0-9a-f]{16}")
_PORT_NAME = re.compile(r"[1-9][0-9]{0,4}")
_RECORD_NAME = re.compile(r"[0-9]{20}")


def switch_name(dpid: int) -> str:
    return f"{dpid:016x}"


@dataclass
class EventRecord:
    """One packet-in as it sits in an application's buffer."""

    in_port: int
    data: bytes
    reason: str = "no_match"
    buffer_id: int | None = None
    total_len: int | None = None

    def __post_init__(self):
        if self.total_len is None:
            self.total_len = len(self.data)

    def to_files(self) -> dict[str, bytes]:
        return {
            "buffer_id": b"none" if self.buffer_id is None else str(self.buffer_id).encode(),
            "in_port": str(self.in_port).encode(),
            "reason": self.reason.encode(),
            "total_len": str(self.total_len).encode(),
            "data": bytes(self.data),
        }

    @classmethod
    def from_files(cls, files: dict) -> EventRecord:
        bid = F.strip_payload(files["buffer_id"])
        return cls(
            in_port=int(F.strip_payload(files["in_port"])),
            data=bytes(files["data"]),
            reason=F.strip_payload(files["reason"]),
            buffer_id=None if bid == "none" else int(bid),
            total_len=int(F.strip_payload(files["total_len"])),
        )


class _Shared:
    """State every facade over one store shares, whatever its identity."""

    def __init__(self):
        self.images: dict[str, F.FlowSpec] = {}
        self.counter = itertools.count(1)
        self.counter_lock = threading.Lock()
        self.buffer_capacity = DEFAULT_BUFFER_CAPACITY

    def next_seq(self) -> int:
        with self.counter_lock:
            return next(self.counter)


class NetFS:
    """File-style facade over a :class:`Store` with ``/net`` semantics.

    ``as_user`` returns another facade over the same store and schema
    state acting under a different identity.
    """

    def __init__(self, store: Store | None = None, root: str = NET_ROOT,
                 who: str = ROOT_USER, _shared: _Shared | None = None):
        self.store = store if store is not None else Store()
        self.root = root
        self.who = who
        if _shared is None:
            _shared = _Shared()
            with self.store.atomic():
                self.store.makedirs(root)
                for child in VIEW_CHILDREN:
                    if not self.store.exists(f"{root}/{child}"):
                        self.store.mkdir(f"{root}/{child}")
        self._shared = _shared

    def as_user(self, who: str) -> NetFS:
        return NetFS(self.store, self.root, who, self._shared)

    def atomic(self):
        """Context manager: no other mutation interleaves with the block."""
        return self.store.atomic()

    @property
    def buffer_capacity(self):
        return self._shared.buffer_capacity

    @buffer_capacity.setter
    def buffer_capacity(self, value):
        self._shared.buffer_capacity = value

    # -- paths ----------------------------------------------------------------

    def path(self, *parts) -> str:
        return "/".join([self.root.rstrip("/")] + [str(p).strip("/") for p in parts if str(p)])

    def switch_path(self, switch, view: str | None = None) -> str:
        base = view or self.root
        name = switch_name(switch) if isinstance(switch, int) else switch
        return f"{base}/switches/{name}"

    def role_of(self, path: str) -> str | None:
        """Schema role of a (canonical) path, or None outside the schema."""
        if not is_under(path, self.root):
            return None
        rel = path[len(self.root):].strip("/")
        role = "view"
        for seg in rel.split("/") if rel else ():
            if role in _LIST_CHILDREN:
                role = _LIST_CHILDREN[role]
            elif role in _FIXED_CHILDREN:
                role = _FIXED_CHILDREN[role].get(seg)
                if role is None:
                    return None
            else:
                return None
        return role

    def _canon(self, path: str) -> str:
        """Resolve every component but the last (like lstat)."""
        parent = parent_of(path)
        name = basename(path)
        if not name:
            return "/"
        return self.store.resolve(parent).rstrip("/") + "/" + name

    def _container_role(self, path: str) -> str | None:
        return self.role_of(parent_of(path))

    # -- generic pass-through ---------------------------------------------------

    def read(self, path: str) -> bytes:
        return self.store.read(path)

    def read_text(self, path: str) -> str:
        return F.strip_payload(self.store.read(path))

    def list(self, path: str) -> list[str]:
        return self.store.list(path)

    def exists(self, path: str) -> bool:
        return self.store.exists(path)

    def stat(self, path: str, follow: bool = True):
        return self.store.stat(path, follow)

    def kind(self, path: str, follow: bool = True):
        return self.store.kind(path, follow)

    def readlink(self, path: str) -> str:
        return self.store.readlink(path)

    def resolve(self, path: str) -> str:
        return self.store.resolve(path)

    def watch(self, path: str, recursive: bool = False, capacity: int | None = None):
        if capacity is None:
            return self.store.watch(path, recursive)
        return self.store.watch(path, recursive, capacity)

    def unwatch(self, handle) -> None:
        self.store.unwatch(handle)

    def next_event(self, handle, timeout: float | None = 0.0):
        return handle.get(timeout)

    def chmod(self, path: str, mode: int) -> None:
        self.store.chmod(path, mode, who=self.who)

    def snapshot(self) -> str:
        return self.store.snapshot()

    def restore(self, serialized: str) -> None:
        """Restore a snapshot and rebuild flow images from committed versions."""
        with self.store.atomic():
            self.store.restore(serialized)
            self._shared.images.clear()
            for p, kind in list(self.store.walk(self.root)):
                if kind is DIRECTORY and self.role_of(p) == "flow":
                    try:
                        version = int(self.read_text(p + "/version"))
                    except (NotFound, ValueError):
                        continue
                    if version > 0:
                        try:
                            spec = F.parse_flow_files(self._flow_files(p))
                        except ValidationFailed:
                            continue
                        spec.version = version
                        self._shared.images[p] = spec

    # -- creation and removal ---------------------------------------------------

    def mkdir(self, path: str, mode: int | None = None) -> None:
        canon = self._canon(path)
        if self.role_of(canon) in SEMANTIC_ROLES:
            self.mk_semantic(canon)
        else:
            self.store.mkdir(canon, mode, who=self.who)

    def mk_semantic(self, path: str) -> str:
        """Create a schema object with all its mandated children in one step."""
        canon = self._canon(path)
        role = self.role_of(canon)
        if role not in SEMANTIC_ROLES:
            raise NotASchemaPoint(f"{path} is not a place where objects are created", path)
        name = basename(canon)
        check_name(name)
        if role == "switch" and not _SWITCH_NAME.fullmatch(name):
            raise InvalidName(f"switch name must be 16 lowercase hex digits: {name!r}", path)
        if role == "port" and not (_PORT_NAME.fullmatch(name) and int(name) <= 0xFF00):
            raise InvalidName(f"port name must be a port number: {name!r}", path)
        st = self.store
        with st.atomic():
            st.mkdir(canon, who=self.who)
            if role == "view":
                for child in VIEW_CHILDREN:
                    st.mkdir(f"{canon}/{child}", who=self.who)
            elif role == "switch":
                for child in SWITCH_CHILDREN:
                    st.mkdir(f"{canon}/{child}", who=self.who)
            elif role == "port":
                for fname, default in PORT_FILES.items():
                    st.create(f"{canon}/{fname}", FILE, who=self.who, content=default.encode())
            elif role == "flow":
                st.create(f"{canon}/version", FILE, who=self.who, content=b"0")
        return canon

    def ensure(self, path: str) -> str:
        """mk_semantic unless the object already exists."""
        canon = self._canon(path)
        with self.store.atomic():
            if self.store.exists(canon):
                return canon
            return self.mk_semantic(canon)

    def rmdir(self, path: str) -> None:
        canon = self._canon(path)
        if self.role_of(canon) in OBJECT_ROLES:
            self.rm_semantic(canon)
        else:
            self.store.remove(canon, recursive=False, who=self.who)

    def rm_semantic(self, path: str) -> None:
        """Remove a schema object and everything below it in one call."""
        canon = self._canon(path)
        if self.role_of(canon) not in OBJECT_ROLES:
            raise NotASchemaPoint(f"{path} is not a schema object", path)
        with self.store.atomic():
            self.store.remove(canon, recursive=True, who=self.who)
            self._forget_images(canon)

    def remove(self, path: str, recursive: bool = False) -> None:
        canon = self._canon(path)
        with self.store.atomic():
            self.store.remove(canon, recursive=recursive, who=self.who)
            self._forget_images(canon)

    def unlink(self, path: str) -> None:
        canon = self._canon(path)
        if self.store.kind(canon, follow=False) is DIRECTORY:
            raise IsADirectory(f"{path} is a directory", path)
        self.store.remove(canon, who=self.who)

    def _forget_images(self, canon):
        images = self._shared.images
        for p in [p for p in images if is_under(p, canon)]:
            del images[p]

    def rename(self, old: str, new: str) -> None:
        old_c, new_c = self._canon(old), self._canon(new)
        with self.store.atomic():
            self.store.rename(old_c, new_c, who=self.who)
            images = self._shared.images
            for p in [p for p in images if is_under(p, old_c)]:
                images[new_c + p[len(old_c):]] = images.pop(p)

    # -- writes -----------------------------------------------------------------

    def write(self, path: str, data) -> None:
        """Replace a file's content, creating the file if needed.

        Inside flow and port directories the payload is validated first;
        writing ``version`` in a flow directory commits the flow.
        """
        if isinstance(data, str):
            data = data.encode()
        canon = self._canon(path)
        container = self._container_role(canon)
        name = basename(canon)
        if container == "flow":
            if name == "version":
                F.parse_flow_field("version", data)
                self.commit_flow(parent_of(canon))
                return
            F.parse_flow_field(name, data)
        elif container == "port":
            _check_port_file(name, data)
        with self.store.atomic():
            if self.store.exists(canon):
                self.store.write(canon, data, who=self.who)
            else:
                self.store.create(canon, FILE, who=self.who, content=data)

    def write_flow_field(self, flow_path: str, field: str, text) -> None:
        canon = self._canon(flow_path)
        if self.role_of(canon) != "flow":
            raise NotASchemaPoint(f"{flow_path} is not a flow", flow_path)
        if not self.store.exists(canon):
            raise NotFound(f"no such flow: {flow_path}", flow_path)
        if field in ("version",) or field.startswith("stats."):
            raise UnknownField(f"{field} is not a writable flow field", field=field)
        self.write(f"{canon}/{field}", text)

    def clear_flow_fields(self, flow_path: str) -> None:
        """Remove every staged field file (version and stats are kept)."""
        canon = self._canon(flow_path)
        with self.store.atomic():
            for name in self.store.list(canon):
                if name != "version" and not name.startswith("stats."):
                    self.store.remove(f"{canon}/{name}", who=self.who)

    def _flow_files(self, canon) -> dict:
        files = {}
        for name in self.store.list(canon):
            if name == "version" or name == "error" or name.startswith("stats."):
                continue
            files[name] = self.store.read(f"{canon}/{name}")
        return files

    def commit_flow(self, flow_path: str) -> int:
        """Validate the staged field set and bump the version.

        Raises ValidationFailed (version untouched) when any field fails its
        grammar or the match contradicts itself.
        """
        canon = self._canon(flow_path)
        if self.role_of(canon) != "flow":
            raise NotASchemaPoint(f"{flow_path} is not a flow", flow_path)
        st = self.store
        with st.atomic():
            if st.kind(canon) is not DIRECTORY:
                raise NotFound(f"no such flow: {flow_path}", flow_path)
            spec = F.parse_flow_files(self._flow_files(canon))
            vpath = f"{canon}/version"
            try:
                prev = int(F.strip_payload(st.read(vpath)) or "0")
            except NotFound:
                prev = None
            except ValueError:
                prev = 0
            spec.version = (prev or 0) + 1
            self._shared.images[canon] = spec
            if prev is None:
                st.create(vpath, FILE, who=self.who, content=str(spec.version).encode())
            else:
                st.write(vpath, str(spec.version).encode(), who=self.who)
            return spec.version

    def committed_flow(self, flow_path: str) -> F.FlowSpec | None:
        """The last committed image of a flow, or None if never committed."""
        canon = self._canon(flow_path)
        with self.store.atomic():
            spec = self._shared.images.get(canon)
            if spec is None:
                return None
            return F.FlowSpec(dict(spec.match), spec.priority, spec.idle_timeout,
                              spec.hard_timeout, list(spec.actions), spec.version)

    def committed_flows(self, switch_path: str) -> dict[str, F.FlowSpec]:
        prefix = self._canon(switch_path) + "/flows/"
        with self.store.atomic():
            return {p[len(prefix):]: self.committed_flow(p)
                    for p in list(self._shared.images) if p.startswith(prefix)
                    and "/" not in p[len(prefix):]}

    def add_flow(self, switch_path: str, name: str, spec: F.FlowSpec | dict) -> int:
        """Stage every field of ``spec`` into a (possibly new) flow and commit.

        Existing staged fields are cleared first, so the committed flow is
        exactly ``spec``.
        """
        files = spec.to_files() if isinstance(spec, F.FlowSpec) else spec
        flow = f"{self._canon(switch_path)}/flows/{name}"
        with self.store.atomic():
            self.ensure(flow)
            self.clear_flow_fields(flow)
            for fname, text in files.items():
                self.write_flow_field(flow, fname, text)
            return self.commit_flow(flow)

    # -- links ------------------------------------------------------------------

    def symlink(self, path: str, target: str) -> None:
        canon = self._canon(path)
        if basename(canon) == "peer" and self._container_role(canon) == "port":
            if self.role_of(target) != "port":
                raise ValidationFailed(f"peer must point at a port, not {target}", path,
                                       field="peer")
            if self.store.exists(target) and self.store.kind(target) is not DIRECTORY:
                raise ValidationFailed(f"peer target {target} is not a port directory", path,
                                       field="peer")
        self.store.symlink(canon, target, who=self.who)

    # -- packet-in buffers ------------------------------------------------------

    def open_event_buffer(self, switch_path: str, app_name: str) -> str:
        check_name(app_name)
        sw = self._canon(switch_path)
        if self.role_of(sw) != "switch":
            raise NotASchemaPoint(f"{switch_path} is not a switch", switch_path)
        if not self.store.exists(sw):
            raise NotFound(f"no such switch: {switch_path}", switch_path)
        return self.ensure(f"{sw}/events/{app_name}")

    def close_event_buffer(self, buffer_path: str) -> None:
        self.rm_semantic(buffer_path)

    def enqueue_event(self, buffer_path: str, record: EventRecord, seq: int | None = None) -> str:
        """Append one record; at capacity the oldest goes and ``overflowed`` appears."""
        st = self.store
        canon = self._canon(buffer_path)
        if seq is None:
            seq = self._shared.next_seq()
        with st.atomic():
            records = [n for n in st.list(canon) if _RECORD_NAME.fullmatch(n)]
            excess = len(records) + 1 - self._shared.buffer_capacity
            if excess > 0:
                for n in records[:excess]:
                    st.remove(f"{canon}/{n}", recursive=True)
                if not st.exists(f"{canon}/overflowed"):
                    st.create(f"{canon}/overflowed", FILE, content=b"1")
            rec = f"{canon}/{seq:020d}"
            st.mkdir(rec)
            for fname, payload in record.to_files().items():
                st.create(f"{rec}/{fname}", FILE, content=payload)
            return rec

    def deliver_packet_in(self, switch_path: str, record: EventRecord) -> list[str]:
        """Fan one packet-in out to every open buffer of the switch.

        All copies share one sequence number. With no buffers open the
        record is dropped silently.
        """
        sw = self._canon(switch_path)
        with self.store.atomic():
            try:
                buffers = self.store.list(f"{sw}/events")
            except NotFound:
                return []
            if not buffers:
                return []
            seq = self._shared.next_seq()
            return [self.enqueue_event(f"{sw}/events/{b}", record, seq) for b in buffers]

    def read_event(self, record_path: str) -> EventRecord:
        with self.store.atomic():
            files = {n: self.store.read(f"{record_path}/{n}") for n in RECORD_FILES}
        return EventRecord.from_files(files)

    def pending_events(self, buffer_path: str) -> list[str]:
        return [f"{buffer_path}/{n}" for n in self.store.list(buffer_path)
                if _RECORD_NAME.fullmatch(n)]

    def ack_event(self, record_path: str) -> None:
        self.store.remove(self._canon(record_path), recursive=True, who=self.who)

    # -- packet-out records -----------------------------------------------------

    def packet_out(self, switch_path: str, data: bytes, actions, in_port: int | str = "none") -> str:
        """Queue a frame for transmission by the switch's driver.

        ``actions`` is a list of output ports (ints or symbols). The record
        is complete before ``send`` is written, and the driver removes it
        once transmitted.
        """
        sw = self._canon(switch_path)
        rec = f"{sw}/packets_out/{self._shared.next_seq():020d}"
        st = self.store
        with st.atomic():
            st.mkdir(rec, who=self.who)
            st.create(f"{rec}/data", FILE, who=self.who, content=bytes(data))
            st.create(f"{rec}/in_port", FILE, who=self.who, content=str(in_port).encode())
            for n, port in enumerate(actions):
                st.create(f"{rec}/action.{n}.output", FILE, who=self.who,
                          content=str(port).encode())
            st.create(f"{rec}/send", FILE, who=self.who, content=b"1")
        return rec

    # -- convenience ------------------------------------------------------------

    def switches(self, view: str | None = None) -> list[str]:
        return self.store.list(f"{view or self.root}/switches")

    def ports(self, switch_path: str) -> list[int]:
        return sorted(int(p) for p in self.store.list(f"{switch_path}/ports") if p.isdigit())

    def peer_of(self, port_path: str) -> str | None:
        try:
            return self.store.readlink(f"{port_path}/peer")
        except NetFSError:
            return None


def _check_port_file(name: str, data: bytes) -> None:
    text = F.strip_payload(data)
    if name == "config.port_down":
        if text not in ("0", "1"):
            raise ParseError(f"config.port_down takes 0 or 1, not {text!r}",
                             field="config.port_down")
    elif name == "config.port_status":
        if text not in ("up", "down"):
            raise ParseError(f"config.port_status takes up or down, not {text!r}",
                             field="config.port_status")
    elif name == "hw_addr":
        F.parse_mac(text, "hw_addr")
    elif name.startswith("stats."):
        F.parse_int(text, 2 ** 64 - 1, name)

