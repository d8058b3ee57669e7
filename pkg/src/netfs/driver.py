"""OpenFlow 1.0 driver: switch sessions on one side, the ``/net`` tree on the other.

The driver materializes each connected switch under ``/net/switches``,
pushes committed flows down as FLOW_MODs when their version file changes,
fans packet-ins into every open event buffer, transmits packet-out records
and turns ``config.port_down`` writes into PORT_MODs.

It is written sans-IO: :meth:`Driver.poll` does whatever work is available
without blocking and reports how much it did, so tests can pump it to
quiescence deterministically. :meth:`Driver.serve` wraps the same loop
around TCP sockets for live use.
"""

from __future__ import annotations

import enum
import logging
import socket
import struct
import threading
import time

from . import ofp
from .errors import NetFSError, NotFound
from .fields import FlowSpec, strip_payload
from .schema import EventRecord, NetFS, switch_name
from .store import EventKind
from .transport import SocketTransport

log = logging.getLogger(__name__)

# side channel for port counters: vendor message with this id, then
# repeated (port_no:H, pad:6, rx_packets:Q, tx_packets:Q)
COUNTER_VENDOR_ID = 0x00594E43
COUNTER_RECORD = struct.Struct("!H6xQQ")

REASONS = {ofp.OFPR_NO_MATCH: "no_match", ofp.OFPR_ACTION: "action"}


class SessionState(str, enum.Enum):
    CONNECTING = "connecting"
    HELLO_SENT = "hello_sent"
    FEATURES_PENDING = "features_pending"
    READY = "ready"
    DEAD = "dead"


class ProtocolViolation(RuntimeError):
    pass


class SwitchSession:
    """One switch connection and its handshake state."""

    def __init__(self, driver: Driver, transport, label: str = ""):
        self.driver = driver
        self.transport = transport
        self.label = label
        self.state = SessionState.CONNECTING
        self.dpid: int | None = None
        self.switch_path: str | None = None
        self.features: ofp.FeaturesReply | None = None
        self.reader = ofp.MessageReader()
        self.log: list[tuple[str, object]] = []
        self._xid = 0

    def next_xid(self) -> int:
        self._xid += 1
        return self._xid

    def send(self, msg) -> None:
        if isinstance(msg, (ofp.FlowMod, ofp.PacketOut, ofp.PortMod)) and \
                self.state is not SessionState.READY:
            raise ProtocolViolation(f"{type(msg).__name__} before the session is ready")
        if not msg.xid:
            msg.xid = self.next_xid()
        self.log.append(("out", msg))
        try:
            self.transport.send(ofp.serialize(msg))
        except ConnectionError:
            self.driver._session_died(self)

    def start(self) -> None:
        self.send(ofp.Hello())
        self.state = SessionState.HELLO_SENT

    def poll(self) -> int:
        if self.state is SessionState.DEAD:
            return 0
        try:
            data = self.transport.recv()
        except ConnectionError:
            self.driver._session_died(self)
            return 1
        if not data:
            return 0
        try:
            messages = self.reader.feed(data)
        except ofp.BadVersion as exc:
            log.warning("session %s: %s; dropping connection", self.label, exc)
            self.kill()
            self.driver._session_died(self)
            return 1
        for msg in messages:
            self.log.append(("in", msg))
            self.driver._handle(self, msg)
        return max(1, len(messages))

    def kill(self) -> None:
        self.state = SessionState.DEAD
        self.transport.close()

    def sent(self, kind=None) -> list:
        return [m for d, m in self.log if d == "out" and (kind is None or isinstance(m, kind))]

    def flow_mods(self) -> list[ofp.FlowMod]:
        return self.sent(ofp.FlowMod)


class Driver:
    """The OpenFlow 1.0 driver over one NetFS."""

    def __init__(self, fs: NetFS, identity: str | None = None):
        self.fs = fs.as_user(identity) if identity else fs
        self.sessions: dict[int, SwitchSession] = {}   # ready sessions by dpid
        self.pending: list[SwitchSession] = []          # handshaking sessions
        self.all_sessions: list[SwitchSession] = []
        self.watches: dict[int, object] = {}
        self.images: dict[int, dict[str, FlowSpec]] = {}
        self.port_config: dict[tuple[int, int], int] = {}
        self.seen: set[int] = set()
        self._lock = threading.RLock()
        self._stop = threading.Event()
        self._server = None

    # -- sessions -----------------------------------------------------------

    def attach(self, transport, label: str = "") -> SwitchSession:
        """Start a session on a fresh transport (sends HELLO immediately)."""
        with self._lock:
            s = SwitchSession(self, transport, label)
            self.pending.append(s)
            self.all_sessions.append(s)
            s.start()
            return s

    run_session = attach

    def session(self, dpid: int) -> SwitchSession | None:
        return self.sessions.get(dpid)

    def _session_died(self, s: SwitchSession) -> None:
        current = s.dpid is not None and self.sessions.get(s.dpid) is s
        s.state = SessionState.DEAD
        s.transport.close()
        if s in self.pending:
            self.pending.remove(s)
        if current:
            del self.sessions[s.dpid]
            self._put(f"{s.switch_path}/status", "disconnected")
            log.info("switch %s disconnected", switch_name(s.dpid))

    # -- main loop ----------------------------------------------------------

    def poll(self) -> int:
        """Do all currently available work; return the number of items handled."""
        with self._lock:
            work = 0
            for s in list(self.pending) + list(self.sessions.values()):
                work += s.poll()
            for dpid, handle in list(self.watches.items()):
                for ev in handle.drain():
                    work += 1
                    try:
                        self._on_change(dpid, ev)
                    except NetFSError as exc:
                        log.warning("driver: %s while handling %s", exc, ev)
            return work

    def run(self, interval: float = 0.005) -> None:
        while not self._stop.is_set():
            if not self.poll():
                time.sleep(interval)

    def stop(self) -> None:
        self._stop.set()
        if self._server is not None:
            try:
                self._server.close()
            except OSError:
                pass

    def serve(self, host: str = "0.0.0.0", port: int = 6633, background: bool = False):
        """Accept switch connections over TCP and run the poll loop."""
        srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        srv.bind((host, port))
        srv.listen(64)
        self._server = srv
        self.address = srv.getsockname()

        def accept_loop():
            while not self._stop.is_set():
                try:
                    conn, peer = srv.accept()
                except OSError:
                    return
                conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                self.attach(SocketTransport(conn), f"{peer[0]}:{peer[1]}")
                log.info("switch connection from %s:%s", *peer)

        threading.Thread(target=accept_loop, name="of-accept", daemon=True).start()
        if background:
            t = threading.Thread(target=self.run, name="of-driver", daemon=True)
            t.start()
            return t
        self.run()

    # -- switch -> tree -----------------------------------------------------

    def _handle(self, s: SwitchSession, msg) -> None:
        if isinstance(msg, ofp.Hello):
            if s.state is SessionState.HELLO_SENT:
                s.state = SessionState.FEATURES_PENDING
                s.send(ofp.FeaturesRequest())
        elif isinstance(msg, ofp.EchoRequest):
            s.send(ofp.EchoReply(xid=msg.xid, data=msg.data))
        elif isinstance(msg, ofp.FeaturesReply):
            if s.state is SessionState.FEATURES_PENDING:
                self._switch_ready(s, msg)
        elif s.state is not SessionState.READY:
            log.debug("ignoring %s before handshake completes", type(msg).__name__)
        elif isinstance(msg, ofp.PacketIn):
            self.deliver_packet_in(s, msg)
        elif isinstance(msg, ofp.PortStatus):
            self._port_status(s, msg)
        elif isinstance(msg, ofp.Unknown) and msg.msg_type == ofp.OFPT_VENDOR:
            self._vendor(s, msg)

    def _put(self, path: str, text: str) -> None:
        """Write a file only when its content would change."""
        try:
            if self.fs.read_text(path) == text:
                return
        except NotFound:
            pass
        self.fs.write(path, text)

    def _switch_ready(self, s: SwitchSession, features: ofp.FeaturesReply) -> None:
        fs = self.fs
        dpid = features.datapath_id
        old = self.sessions.get(dpid)
        if old is not None and old is not s:
            log.info("switch %s reconnected; superseding old session", switch_name(dpid))
            old.kill()
            del self.sessions[dpid]
        s.dpid = dpid
        s.features = features
        s.switch_path = sw = fs.switch_path(dpid)
        with fs.atomic():
            fs.ensure(sw)
            self._put(f"{sw}/capabilities", f"0x{features.capabilities:08x}")
            self._put(f"{sw}/n_buffers", str(features.n_buffers))
            self._put(f"{sw}/n_tables", str(features.n_tables))
            for port in features.ports:
                if port.port_no < ofp.OFPP_MAX:
                    self._port_update(s, port)
            self._put(f"{sw}/status", "connected")
            if dpid not in self.watches:
                self.watches[dpid] = fs.watch(sw, recursive=True, capacity=1 << 16)
        if s in self.pending:
            self.pending.remove(s)
        self.sessions[dpid] = s
        s.state = SessionState.READY
        log.info("switch %s ready with %d ports", switch_name(dpid), len(features.ports))
        committed = fs.committed_flows(sw)
        if dpid in self.seen or committed:
            self.reconcile(dpid)
        else:
            self.images[dpid] = {}
        self.seen.add(dpid)
        for rec in fs.list(f"{sw}/packets_out"):
            self._packet_out_record(dpid, f"{sw}/packets_out/{rec}")

    def _port_update(self, s: SwitchSession, port: ofp.PhyPort) -> None:
        pp = f"{s.switch_path}/ports/{port.port_no}"
        self.fs.ensure(pp)
        self.port_config[(s.dpid, port.port_no)] = port.config & ofp.OFPPC_PORT_DOWN
        self._put(f"{pp}/hw_addr", ":".join(f"{b:02x}" for b in port.hw_addr))
        self._put(f"{pp}/config.port_down", "1" if port.config & ofp.OFPPC_PORT_DOWN else "0")
        self._put(f"{pp}/config.port_status",
                  "down" if port.state & ofp.OFPPS_LINK_DOWN else "up")

    def _port_status(self, s: SwitchSession, msg: ofp.PortStatus) -> None:
        if msg.reason == ofp.OFPPR_DELETE:
            pp = f"{s.switch_path}/ports/{msg.port.port_no}"
            if self.fs.exists(pp):
                self.fs.rm_semantic(pp)
            self.port_config.pop((s.dpid, msg.port.port_no), None)
        else:
            self._port_update(s, msg.port)

    def _vendor(self, s: SwitchSession, msg: ofp.Unknown) -> None:
        body = msg.body
        if len(body) < 4 or struct.unpack_from("!I", body)[0] != COUNTER_VENDOR_ID:
            return
        for off in range(4, len(body) - COUNTER_RECORD.size + 1, COUNTER_RECORD.size):
            port_no, rx, tx = COUNTER_RECORD.unpack_from(body, off)
            pp = f"{s.switch_path}/ports/{port_no}"
            if self.fs.exists(pp):
                self._put(f"{pp}/stats.rx_packets", str(rx))
                self._put(f"{pp}/stats.tx_packets", str(tx))

    def deliver_packet_in(self, s: SwitchSession, msg: ofp.PacketIn) -> list[str]:
        record = EventRecord(
            in_port=msg.in_port, data=msg.data, reason=REASONS.get(msg.reason, str(msg.reason)),
            buffer_id=None if msg.buffer_id == ofp.NO_BUFFER else msg.buffer_id,
            total_len=msg.total_len)
        return self.fs.deliver_packet_in(s.switch_path, record)

    # -- tree -> switch -----------------------------------------------------

    def _on_change(self, dpid: int, ev) -> None:
        sw = self.fs.switch_path(dpid)
        if ev.kind is EventKind.OVERFLOW:
            log.warning("driver watch on %s overflowed; reconciling", sw)
            self.reconcile(dpid)
            return
        if ev.kind is EventKind.RENAMED:
            self._renamed(dpid, sw, ev)
            return
        rel = ev.path[len(sw) + 1:].split("/") if ev.path.startswith(sw + "/") else []
        if not rel:
            if ev.kind is EventKind.REMOVED and ev.path == sw:
                self.images.pop(dpid, None)
            return
        top = rel[0]
        if top == "flows" and len(rel) == 3 and rel[2] == "version" \
                and ev.kind is EventKind.MODIFIED:
            self.sync_flow(dpid, rel[1])
        elif top == "flows" and len(rel) == 2 and ev.kind is EventKind.REMOVED:
            self._flow_removed(dpid, rel[1])
        elif top == "packets_out" and len(rel) == 3 and rel[2] == "send" \
                and ev.kind in (EventKind.CREATED, EventKind.MODIFIED):
            self._packet_out_record(dpid, f"{sw}/packets_out/{rel[1]}")
        elif top == "ports" and len(rel) == 3 and rel[2] == "config.port_down" \
                and ev.kind is EventKind.MODIFIED:
            self.apply_port_config(dpid, int(rel[1]))

    def _renamed(self, dpid, sw, ev) -> None:
        old, new = ev.old_path, ev.path
        flows = f"{sw}/flows/"
        images = self.images.get(dpid, {})
        if old.startswith(flows) and new.startswith(flows):
            o, n = old[len(flows):], new[len(flows):]
            if "/" not in o and "/" not in n and o in images:
                images[n] = images.pop(o)
        elif old.startswith(flows) and "/" not in old[len(flows):]:
            self._flow_removed(dpid, old[len(flows):])
        elif new.startswith(flows) and "/" not in new[len(flows):]:
            self.sync_flow(dpid, new[len(flows):])

    def _flow_mod(self, spec: FlowSpec, command: int) -> ofp.FlowMod:
        return ofp.FlowMod(
            match=ofp.match_from_schema(spec.match), command=command,
            idle_timeout=spec.idle_timeout, hard_timeout=spec.hard_timeout,
            priority=spec.priority, actions=ofp.actions_from_schema(spec.actions))

    def sync_flow(self, dpid: int, name: str) -> None:
        """Bring one flow on the switch up to its committed image."""
        spec = self.fs.committed_flow(f"{self.fs.switch_path(dpid)}/flows/{name}")
        s = self.sessions.get(dpid)
        if spec is None or s is None or s.state is not SessionState.READY:
            return
        images = self.images.setdefault(dpid, {})
        old = images.get(name)
        if old is not None and old.version == spec.version:
            return
        if old is None:
            s.send(self._flow_mod(spec, ofp.OFPFC_ADD))
        elif old.key() == spec.key():
            s.send(self._flow_mod(spec, ofp.OFPFC_MODIFY_STRICT))
        else:
            s.send(self._flow_mod(old, ofp.OFPFC_DELETE_STRICT))
            s.send(self._flow_mod(spec, ofp.OFPFC_ADD))
        images[name] = spec

    def _flow_removed(self, dpid: int, name: str) -> None:
        images = self.images.get(dpid, {})
        old = images.pop(name, None)
        s = self.sessions.get(dpid)
        if old is None or s is None:
            return
        s.send(self._flow_mod(old, ofp.OFPFC_DELETE_STRICT))

    def reconcile(self, dpid: int) -> None:
        """Wipe the switch table and replay every committed flow."""
        s = self.sessions.get(dpid)
        if s is None or s.state is not SessionState.READY:
            return
        s.send(ofp.FlowMod(match=ofp.Match(), command=ofp.OFPFC_DELETE, priority=0))
        committed = self.fs.committed_flows(self.fs.switch_path(dpid))
        for name in sorted(committed):
            s.send(self._flow_mod(committed[name], ofp.OFPFC_ADD))
        self.images[dpid] = committed

    def _packet_out_record(self, dpid: int, rec: str) -> None:
        fs = self.fs
        try:
            if fs.read_text(f"{rec}/send") != "1":
                return
            files = {n: fs.read(f"{rec}/{n}") for n in fs.list(rec)}
        except NotFound:
            return
        s = self.sessions.get(dpid)
        if s is None or s.state is not SessionState.READY:
            fs.remove(rec, recursive=True)
            self._put(f"{fs.switch_path(dpid)}/packets_out/error", "disconnected")
            return
        try:
            msg = self._packet_out_message(files)
        except (ValueError, KeyError) as exc:
            log.warning("bad packet-out record %s: %s", rec, exc)
            fs.remove(rec, recursive=True)
            return
        s.send(msg)
        fs.remove(rec, recursive=True)

    send_packet_out = _packet_out_record

    @staticmethod
    def _packet_out_message(files: dict) -> ofp.PacketOut:
        in_port_text = strip_payload(files.get("in_port", b"none")).strip()
        if in_port_text == "none" or not in_port_text:
            in_port = ofp.OFPP_NONE
        elif in_port_text.isdigit():
            in_port = int(in_port_text)
        else:
            in_port = ofp.port_number(in_port_text)
        actions = []
        numbered = []
        for name, payload in files.items():
            parts = name.split(".")
            if len(parts) == 3 and parts[0] == "action" and parts[1].isdigit() \
                    and parts[2] == "output":
                v = strip_payload(payload).strip()
                numbered.append((int(parts[1]), int(v) if v.isdigit() else ofp.port_number(v)))
        for _, port in sorted(numbered):
            actions.append(ofp.ActionOutput(port))
        return ofp.PacketOut(buffer_id=ofp.NO_BUFFER, in_port=in_port, actions=actions,
                             data=bytes(files.get("data", b"")))

    def apply_port_config(self, dpid: int, port_no: int) -> None:
        pp = f"{self.fs.switch_path(dpid)}/ports/{port_no}"
        try:
            want = 1 if self.fs.read_text(f"{pp}/config.port_down") == "1" else 0
            hw = bytes(int(x, 16) for x in self.fs.read_text(f"{pp}/hw_addr").split(":"))
        except NotFound:
            return
        s = self.sessions.get(dpid)
        if s is None or self.port_config.get((dpid, port_no)) == want:
            return
        s.send(ofp.PortMod(port_no=port_no, hw_addr=hw,
                           config=ofp.OFPPC_PORT_DOWN if want else 0,
                           mask=ofp.OFPPC_PORT_DOWN))
        self.port_config[(dpid, port_no)] = want


def main(argv=None) -> int:
    import argparse

    from .rpc import connect_store

    parser = argparse.ArgumentParser(prog="netfs-driver", description="OpenFlow 1.0 driver")
    parser.add_argument("--listen", default="0.0.0.0:6633", help="switch endpoint addr:port")
    parser.add_argument("--mount", default=None,
                        help="store endpoint host:port (default: $NETFS_STORE)")
    parser.add_argument("--log-level", default="INFO")
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    from .transport import parse_endpoint
    host, port = parse_endpoint(args.listen, 6633)
    try:
        fs = connect_store(args.mount)
    except NetFSError as exc:
        log.error("%s", exc)
        return exc.exit_code
    driver = Driver(fs)
    log.info("listening for switches on %s:%d", host, port)
    try:
        driver.serve(host, port)
    except KeyboardInterrupt:
        driver.stop()
    return 0
