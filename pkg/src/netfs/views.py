"""Slices: a subset of switches plus a flowspace, shown as a view under ``views/``.

A view directory holds a mirror of each member switch (ports, flows,
events, packets_out) and a hidden ``.slice`` directory recording its
definition. A :class:`SliceEngine` keeps one view in sync with its
parent:

* flows committed in the mirror are intersected with the flowspace and
  committed in the parent as ``<view>,<flow>`` (or rejected with an
  ``error`` file when the intersection is empty);
* packet-ins on member switches that satisfy the flowspace are copied into
  the mirror's buffers;
* packet-outs written in the mirror are forwarded to the parent when the
  frame lies inside the flowspace.

The parent of a view is the view that contains it (``/net`` at the top),
so views nest and their translations compose.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from . import fields as F
from .errors import (
    EmptyIntersection,
    FlowspaceNotContained,
    MemberUnknown,
    NetFSError,
    NotFound,
)
from .packet import parse_header
from .schema import PORT_FILES
from .store import EventKind, basename, parent_of

log = logging.getLogger(__name__)

SLICE_DIR = ".slice"
FLOWSPACE_PREFIX = "flowspace.match."
SEPARATOR = ","
SWITCH_FILES = ("capabilities", "n_buffers", "n_tables", "status")
WATCH_CAPACITY = 1 << 16


@dataclass
class ViewDef:
    name: str
    path: str
    parent: str
    members: list[str] = field(default_factory=list)
    flowspace: dict = field(default_factory=dict)

    @property
    def buffer_name(self) -> str:
        return f"view.{self.name}"


def parent_view(fs, path: str) -> str:
    """``/net/views/a/views/b`` -> ``/net/views/a``; ``/net/views/a`` -> ``/net``."""
    if fs.role_of(path) != "view" or path == fs.root:
        raise NotFound(f"{path} is not a view", path)
    return parent_of(parent_of(path))


def view_flowspace(fs, path: str) -> dict:
    """The flowspace of a view; the root view admits everything."""
    if path == fs.root:
        return {}
    return read_view(fs, path).flowspace


def read_view(fs, path: str) -> ViewDef:
    sl = f"{path}/{SLICE_DIR}"
    members = [m for m in fs.read_text(f"{sl}/members").split("\n") if m]
    flowspace = {}
    for name in fs.list(sl):
        if name.startswith(FLOWSPACE_PREFIX):
            f = name[len(FLOWSPACE_PREFIX):]
            flowspace[f] = F.parse_match_value(f, fs.read(f"{sl}/{name}"))
    return ViewDef(basename(path), path, parent_view(fs, path), members, flowspace)


def list_views(fs, under: str | None = None) -> list[str]:
    """Every defined view (one with a ``.slice`` record), parents first."""
    out = []
    base = under or fs.root
    try:
        names = fs.list(f"{base}/views")
    except NetFSError:
        return out
    for name in names:
        path = f"{base}/views/{name}"
        if fs.exists(f"{path}/{SLICE_DIR}/members"):
            out.append(path)
        out += list_views(fs, path)
    return out


def check_definition(fs, parent: str, members, flowspace: dict) -> None:
    known = set(fs.switches(parent))
    for m in members:
        if m not in known:
            raise MemberUnknown(f"switch {m} is not visible in {parent}", m)
    outer = view_flowspace(fs, parent)
    if not F.match_contains(outer, flowspace):
        raise FlowspaceNotContained(
            f"flowspace {describe(flowspace)} is not inside {describe(outer)} of {parent}", parent)
    F.check_prerequisites(flowspace)


def describe(match: dict) -> str:
    return ",".join(f"{k}={F.format_match_value(k, v)}" for k, v in sorted(match.items())) or "*"


def define_view(fs, path: str, members, flowspace: dict) -> ViewDef:
    """Create (or redefine) a view and its mirror switches."""
    parent = parent_view(fs, path)
    members = sorted(set(members))
    parsed = {}
    for k, v in flowspace.items():
        parsed[k] = F.parse_match_value(k, v) if isinstance(v, str) else v
    check_definition(fs, parent, members, parsed)
    with fs.atomic():
        fs.ensure(path)
        sl = f"{path}/{SLICE_DIR}"
        if fs.exists(sl):
            fs.remove(sl, recursive=True)
        fs.mkdir(sl)
        fs.write(f"{sl}/members", "".join(f"{m}\n" for m in members))
        for k, v in sorted(parsed.items()):
            fs.write(f"{sl}/{FLOWSPACE_PREFIX}{k}", F.format_match_value(k, v))
        for m in fs.switches(path):
            if m not in members:
                fs.rm_semantic(fs.switch_path(m, path))
        view = ViewDef(basename(path), path, parent, members, parsed)
        for m in members:
            mirror_switch(fs, view, m)
    return view


def mirror_switch(fs, view: ViewDef, name: str) -> None:
    """Bring the mirror of one member switch up to date with the parent."""
    src = fs.switch_path(name, view.parent)
    dst = fs.switch_path(name, view.path)
    fs.ensure(dst)
    for f in SWITCH_FILES:
        _copy(fs, f"{src}/{f}", f"{dst}/{f}")
    try:
        ports = set(fs.ports(src))
    except NotFound:
        ports = set()
    for p in fs.ports(dst):
        if p not in ports:
            fs.rm_semantic(f"{dst}/ports/{p}")
    for p in sorted(ports):
        mirror_port(fs, view, name, p)


def mirror_port(fs, view: ViewDef, name: str, port: int) -> None:
    src = f"{fs.switch_path(name, view.parent)}/ports/{port}"
    dst = f"{fs.switch_path(name, view.path)}/ports/{port}"
    if not fs.exists(src):
        if fs.exists(dst):
            fs.rm_semantic(dst)
        return
    fs.ensure(dst)
    for f in PORT_FILES:
        _copy(fs, f"{src}/{f}", f"{dst}/{f}")
    # peers stay visible only when both ends are members
    target = fs.peer_of(src)
    want = None
    prefix = f"{view.parent}/switches/"
    if target and target.startswith(prefix):
        peer_switch = target[len(prefix):].split("/", 1)[0]
        if peer_switch in view.members:
            want = f"{view.path}/switches/{target[len(prefix):]}"
    have = fs.peer_of(dst)
    if want != have:
        if want is None:
            fs.unlink(f"{dst}/peer")
        else:
            fs.symlink(f"{dst}/peer", want)


def _copy(fs, src: str, dst: str) -> None:
    try:
        data = fs.read(src)
    except NotFound:
        return
    try:
        if fs.read(dst) == data:
            return
    except NotFound:
        pass
    fs.write(dst, data)


def parent_flow_name(view: ViewDef, flow: str) -> str:
    return f"{view.name}{SEPARATOR}{flow}"


def translate_match(view: ViewDef, match: dict) -> dict:
    """The slice flow's match narrowed to the flowspace; raises EmptyIntersection."""
    inter = F.intersect_matches(match, view.flowspace)
    if inter is None:
        raise EmptyIntersection(
            f"match {describe(match)} does not overlap flowspace {describe(view.flowspace)}")
    return inter


def filter_packet_in(view: ViewDef, switch: str, record) -> bool:
    """True when a packet-in on ``switch`` belongs to the view."""
    if switch not in view.members:
        return False
    if not view.flowspace:
        return True
    header = parse_header(record.data)
    if header is None:
        return False
    return F.match_predicate(view.flowspace, header, record.in_port)


def teardown_view(fs, path: str) -> int:
    """Delete every parent flow made by the view, then the view itself.

    Returns the number of parent flows removed.
    """
    view = read_view(fs, path)
    for inner in reversed(list_views(fs, path)):
        teardown_view(fs, inner)
    removed = 0
    prefix = view.name + SEPARATOR
    with fs.atomic():
        for m in fs.switches(view.parent):
            sw = fs.switch_path(m, view.parent)
            try:
                flows = fs.list(f"{sw}/flows")
            except NotFound:
                continue
            for name in flows:
                if name.startswith(prefix):
                    fs.rm_semantic(f"{sw}/flows/{name}")
                    removed += 1
            buf = f"{sw}/events/{view.buffer_name}"
            if fs.exists(buf):
                fs.close_event_buffer(buf)
        fs.rm_semantic(path)
    return removed


class SliceEngine:
    """Keeps one view and its parent consistent. Drive it with :meth:`poll`."""

    def __init__(self, fs, path: str):
        self.fs = fs
        self.view = read_view(fs, path)
        self.handled: dict[str, int] = {}       # mirror flow path -> last version acted on
        self.conflicts: list[tuple[str, str]] = []
        self.delivered = 0
        self.filtered = 0
        self.closed = False
        v = self.view
        self.mirror_watch = fs.watch(f"{v.path}/switches", recursive=True,
                                     capacity=WATCH_CAPACITY)
        self.parent_watches = {}
        for m in v.members:
            sw = fs.switch_path(m, v.parent)
            self.parent_watches[m] = (
                fs.watch(sw, recursive=False, capacity=WATCH_CAPACITY),
                fs.watch(f"{sw}/ports", recursive=True, capacity=WATCH_CAPACITY))
        self.buffers = {m: fs.open_event_buffer(fs.switch_path(m, v.parent), v.buffer_name)
                        for m in v.members}
        for m in v.members:
            mirror_switch(fs, v, m)
        self.resync()

    # -- flows ----------------------------------------------------------------

    def translate(self, switch: str, flow: str) -> str | None:
        """Push one mirror flow to the parent; returns the parent flow path or None."""
        fs, v = self.fs, self.view
        mflow = f"{fs.switch_path(switch, v.path)}/flows/{flow}"
        spec = fs.committed_flow(mflow)
        if spec is None or self.handled.get(mflow) == spec.version:
            return None
        self.handled[mflow] = spec.version
        try:
            match = translate_match(v, spec.match)
        except EmptyIntersection as exc:
            fs.write(f"{mflow}/error", f"{exc}\n")
            log.info("view %s: rejected %s/%s: %s", v.name, switch, flow, exc)
            return None
        if fs.exists(f"{mflow}/error"):
            fs.unlink(f"{mflow}/error")
        psw = fs.switch_path(switch, v.parent)
        pname = parent_flow_name(v, flow)
        out = F.FlowSpec(match, spec.priority, spec.idle_timeout, spec.hard_timeout,
                         list(spec.actions))
        for other, ospec in fs.committed_flows(psw).items():
            if other != pname and ospec.key() == out.key():
                # equal (match, priority) in the parent: last writer wins
                self.conflicts.append((f"{psw}/flows/{other}", pname))
                log.warning("view %s: %s overlaps %s with equal priority", v.name, pname, other)
        fs.add_flow(psw, pname, out)
        return f"{psw}/flows/{pname}"

    def retract(self, switch: str, flow: str) -> None:
        fs, v = self.fs, self.view
        self.handled.pop(f"{fs.switch_path(switch, v.path)}/flows/{flow}", None)
        p = f"{fs.switch_path(switch, v.parent)}/flows/{parent_flow_name(v, flow)}"
        if fs.exists(p):
            fs.rm_semantic(p)

    def resync(self) -> None:
        """Re-derive every parent flow from the mirror (after a lost event)."""
        fs, v = self.fs, self.view
        prefix = v.name + SEPARATOR
        for m in v.members:
            msw = fs.switch_path(m, v.path)
            mine = set(fs.committed_flows(msw))
            for flow in sorted(mine):
                self.translate(m, flow)
            for pname in fs.list(f"{fs.switch_path(m, v.parent)}/flows"):
                if pname.startswith(prefix) and pname[len(prefix):] not in mine:
                    self.retract(m, pname[len(prefix):])

    # -- packet-out -----------------------------------------------------------

    def forward_packet_out(self, switch: str, record: str) -> bool:
        fs, v = self.fs, self.view
        try:
            if fs.read_text(f"{record}/send") != "1":
                return False
            data = fs.read(f"{record}/data")
            in_port = fs.read_text(f"{record}/in_port") if fs.exists(f"{record}/in_port") \
                else "none"
            outs = sorted((int(n.split(".")[1]), fs.read_text(f"{record}/{n}"))
                          for n in fs.list(record) if n.startswith("action.")
                          and n.endswith(".output"))
        except NotFound:
            return False
        fs.remove(record, recursive=True)
        header = parse_header(data)
        inside = not v.flowspace or (header is not None and F.match_predicate(
            v.flowspace, header, None))
        if not inside:
            log.info("view %s: dropped packet-out outside the flowspace", v.name)
            return False
        fs.packet_out(fs.switch_path(switch, v.parent), data, [o for _, o in outs], in_port)
        return True

    # -- loop -----------------------------------------------------------------

    def poll(self) -> int:
        if self.closed:
            return 0
        if not self.fs.exists(f"{self.view.path}/{SLICE_DIR}"):
            self.close()
            return 1
        return self._parent_changes() + self._mirror_changes() + self._packet_ins()

    def _parent_changes(self) -> int:
        work = 0
        for m, watches in self.parent_watches.items():
            events = [ev for w in watches for ev in w.drain()]
            if not events:
                continue
            work += len(events)
            try:
                mirror_switch(self.fs, self.view, m)
            except NetFSError as exc:
                log.warning("view %s: cannot mirror %s: %s", self.view.name, m, exc)
        return work

    def _mirror_changes(self) -> int:
        v = self.view
        events = self.mirror_watch.drain()
        base = f"{v.path}/switches/"
        for ev in events:
            if ev.kind is EventKind.OVERFLOW:
                self.resync()
                continue
            if not ev.path.startswith(base):
                continue
            rel = ev.path[len(base):].split("/")
            if len(rel) < 3:
                continue
            switch, top = rel[0], rel[1]
            if switch not in v.members:
                continue
            try:
                if top == "flows" and len(rel) == 4 and rel[3] == "version" \
                        and ev.kind is EventKind.MODIFIED:
                    self.translate(switch, rel[2])
                elif top == "flows" and len(rel) == 3 and ev.kind is EventKind.REMOVED:
                    self.retract(switch, rel[2])
                elif top == "flows" and ev.kind is EventKind.RENAMED and len(rel) == 3:
                    old = basename(ev.old_path)
                    self.retract(switch, old)
                    self.translate(switch, rel[2])
                elif top == "packets_out" and len(rel) == 4 and rel[3] == "send" \
                        and ev.kind in (EventKind.CREATED, EventKind.MODIFIED):
                    self.forward_packet_out(switch, f"{base}{switch}/packets_out/{rel[2]}")
            except NetFSError as exc:
                log.warning("view %s: %s while handling %s", v.name, exc, ev)
        return len(events)

    def _packet_ins(self) -> int:
        fs, v = self.fs, self.view
        work = 0
        for m, buf in self.buffers.items():
            try:
                records = fs.pending_events(buf)
            except NetFSError:
                continue
            for rec in records:
                work += 1
                try:
                    event = fs.read_event(rec)
                    fs.ack_event(rec)
                except NetFSError:
                    continue
                if filter_packet_in(v, m, event):
                    fs.deliver_packet_in(fs.switch_path(m, v.path), event)
                    self.delivered += 1
                else:
                    self.filtered += 1
        return work

    def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        for w in [self.mirror_watch] + [w for ws in self.parent_watches.values() for w in ws]:
            self.fs.unwatch(w)


class ViewManager:
    """Runs one SliceEngine per defined view, picking up new views as they appear."""

    def __init__(self, fs):
        self.fs = fs
        self.engines: dict[str, SliceEngine] = {}

    def define(self, path: str, members, flowspace: dict) -> SliceEngine:
        define_view(self.fs, path, members, flowspace)
        old = self.engines.pop(path, None)
        if old is not None:
            old.close()
        engine = self.engines[path] = SliceEngine(self.fs, path)
        return engine

    def teardown(self, path: str) -> int:
        for p in [p for p in self.engines if p == path or p.startswith(path + "/")]:
            self.engines.pop(p).close()
        return teardown_view(self.fs, path)

    def discover(self) -> int:
        found = 0
        for path in list_views(self.fs):
            if path not in self.engines:
                try:
                    self.engines[path] = SliceEngine(self.fs, path)
                    found += 1
                except NetFSError as exc:
                    log.warning("cannot start view %s: %s", path, exc)
        return found

    def poll(self) -> int:
        work = self.discover()
        # parents first, so a change flows down a stack in one pass
        for path in sorted(self.engines, key=lambda p: p.count("/")):
            engine = self.engines[path]
            work += engine.poll()
            if engine.closed:
                del self.engines[path]
        # and children first for commits travelling up
        for path in sorted(self.engines, key=lambda p: -p.count("/")):
            work += self.engines[path].poll()
        return work


def _view_path(fs, text: str) -> str:
    if text.startswith("/"):
        return text.rstrip("/")
    return f"{fs.root}/views/{text}"


def main(argv=None, fs=None, out=None, err=None) -> int:
    import argparse
    import sys

    out = out or sys.stdout
    err = err or sys.stderr
    parser = argparse.ArgumentParser(prog="viewctl", description="define and remove slices")
    parser.add_argument("--mount", "--store", dest="mount", default=None)
    parser.add_argument("--porcelain", action="store_true")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)
    d = sub.add_parser("define")
    d.add_argument("view", help="view name under /net/views, or a full view path")
    d.add_argument("--member", "-m", action="append", default=[])
    d.add_argument("--match", action="append", default=[], metavar="FIELD=VALUE")
    t = sub.add_parser("teardown")
    t.add_argument("view")
    sub.add_parser("list")
    s = sub.add_parser("serve", help="run the slicing engines")
    s.add_argument("--interval", type=float, default=0.01)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 64 if exc.code else 0
    logging.basicConfig(level=args.log_level.upper())
    try:
        if fs is None:
            from .rpc import connect_store
            fs = connect_store(args.mount)
        if args.command == "define":
            flowspace = {}
            for item in args.match:
                k, sep, v = item.partition("=")
                k = k.removeprefix("match.")
                if not sep:
                    print(f"viewctl: expected FIELD=VALUE, got {item!r}", file=err)
                    return 64
                flowspace[k] = v
            view = define_view(fs, _view_path(fs, args.view), args.member, flowspace)
            print(f"{view.path}\t{','.join(view.members)}\t{describe(view.flowspace)}", file=out)
        elif args.command == "teardown":
            n = teardown_view(fs, _view_path(fs, args.view))
            print(f"removed {n} parent flows", file=out)
        elif args.command == "list":
            for path in list_views(fs):
                v = read_view(fs, path)
                sep = "\t" if args.porcelain else "  "
                print(sep.join([v.path, ",".join(v.members), describe(v.flowspace)]), file=out)
        else:
            import time
            manager = ViewManager(fs)
            while True:
                if not manager.poll():
                    time.sleep(args.interval)
    except NetFSError as exc:
        print(f"viewctl: {type(exc).__name__}: {exc}", file=err)
        return exc.exit_code
    except KeyboardInterrupt:
        pass
    return 0
