"""Software OpenFlow 1.0 switches joined by a virtual link fabric.

The fabric stands in for hardware in tests: frames injected at an edge
port run through flow tables hop by hop until nothing is left in flight,
table misses become PACKET_INs on the switch's controller transport, and
FLOW_MOD / PACKET_OUT / PORT_MOD from the controller are applied to the
switch. Nothing happens unless the fabric is driven (``inject``, ``run``,
``poll``), so every test sees a deterministic FIFO order.
"""

from __future__ import annotations

import itertools
import logging
import struct
from collections import deque
from dataclasses import dataclass, field

from . import ofp
from .fields import MATCH_FIELDS, header_field
from .packet import parse_header, set_dl_addr

log = logging.getLogger(__name__)

HOP_LIMIT = 64


class SimError(Exception):
    pass


class UnknownSwitch(SimError):
    pass


class UnknownPort(SimError):
    pass


class HopLimitExceeded(SimError):
    """A frame visited more than HOP_LIMIT switches: a forwarding loop."""

    def __init__(self, report):
        super().__init__(f"hop limit {HOP_LIMIT} exceeded")
        self.report = report


@dataclass
class FlowEntry:
    match: ofp.Match
    priority: int
    actions: list
    idle_timeout: int = 0
    hard_timeout: int = 0
    cookie: int = 0
    order: int = 0
    packet_count: int = 0
    byte_count: int = 0

    @property
    def key(self):
        return (self.match, self.priority)


@dataclass
class SimPort:
    port_no: int
    hw_addr: bytes
    link: tuple[int, int] | None = None
    admin_down: bool = False
    rx_packets: int = 0
    tx_packets: int = 0


def packet_fields(frame: bytes) -> dict | None:
    """All match fields (except in_port) a frame presents to the table."""
    h = parse_header(frame)
    if h is None:
        return None
    return {name: header_field(h, name) for name in MATCH_FIELDS if name != "in_port"}


def entry_rank(entry: FlowEntry):
    """Sort key for lookup precedence: exact first, then priority, then age."""
    return (0 if entry.match.is_exact else 1, -entry.priority, entry.order)


def lookup(table: list[FlowEntry], fields: dict, in_port: int) -> FlowEntry | None:
    """Highest-precedence entry covering the packet, or None for a miss.

    Exact-match entries (no wildcard bits) beat every wildcarded entry;
    among the rest the highest priority wins and ties go to the earliest
    insertion.
    """
    best = None
    best_rank = None
    for e in table:
        if e.match.matches(in_port, fields):
            r = entry_rank(e)
            if best is None or r < best_rank:
                best, best_rank = e, r
    return best


@dataclass
class Emission:
    dpid: int
    port: int
    frame: bytes
    hop: int
    edge: bool  # True when the port has no link, i.e. the frame leaves the fabric


@dataclass
class PacketInRecord:
    dpid: int
    in_port: int
    reason: int
    frame: bytes


@dataclass
class DeliveryReport:
    emissions: list[Emission] = field(default_factory=list)
    packet_ins: list[PacketInRecord] = field(default_factory=list)
    drops: list[tuple[int, int, str]] = field(default_factory=list)
    hop_limit_exceeded: bool = False

    @property
    def edge_emissions(self) -> list[Emission]:
        return [e for e in self.emissions if e.edge]

    def extend(self, other: DeliveryReport):
        self.emissions += other.emissions
        self.packet_ins += other.packet_ins
        self.drops += other.drops
        self.hop_limit_exceeded |= other.hop_limit_exceeded


class SimSwitch:
    """One software switch: a flow table plus an OpenFlow endpoint."""

    def __init__(self, dpid: int, n_ports: int = 4, n_buffers: int = 0):
        self.dpid = dpid
        self.ports = {n: SimPort(n, self._mac(n)) for n in range(1, n_ports + 1)}
        self.table: list[FlowEntry] = []
        self.n_buffers = n_buffers
        self.fabric: Fabric | None = None
        self.transport = None
        self.reader = ofp.MessageReader()
        self.handshaken = False
        self.received: list = []          # every message from the controller
        self.unknown_commands = 0
        self.packet_in_count = 0
        self.lookups = 0
        self._order = itertools.count()
        self._xid = itertools.count(1)

    def _mac(self, port_no: int) -> bytes:
        return bytes([0x02]) + struct.pack("!I", self.dpid & 0xFFFFFFFF) + bytes([port_no & 0xFF])

    # -- controller side ------------------------------------------------------

    def connect(self, transport) -> None:
        """Attach a (fresh) controller transport and start the handshake."""
        self.transport = transport
        self.reader = ofp.MessageReader()
        self.handshaken = False
        self._send(ofp.Hello())

    def disconnect(self) -> None:
        if self.transport is not None:
            self.transport.close()
        self.transport = None

    def _send(self, msg) -> None:
        if self.transport is None:
            return
        if not msg.xid:
            msg.xid = next(self._xid)
        try:
            self.transport.send(ofp.serialize(msg))
        except ConnectionError:
            self.transport = None

    def features(self, xid: int = 0) -> ofp.FeaturesReply:
        return ofp.FeaturesReply(
            xid=xid, datapath_id=self.dpid, n_buffers=self.n_buffers, n_tables=1,
            capabilities=0x87,
            actions=(1 << ofp.OFPAT_OUTPUT) | (1 << ofp.OFPAT_SET_DL_SRC)
            | (1 << ofp.OFPAT_SET_DL_DST),
            ports=[self._phy(p) for p in sorted(self.ports)])

    def _phy(self, n: int) -> ofp.PhyPort:
        p = self.ports[n]
        return ofp.PhyPort(n, p.hw_addr, f"s{self.dpid:x}-eth{n}",
                           config=ofp.OFPPC_PORT_DOWN if p.admin_down else 0,
                           state=0)

    def poll(self) -> int:
        """Process every message the controller has sent; returns the count."""
        if self.transport is None:
            return 0
        try:
            data = self.transport.recv()
        except ConnectionError:
            self.transport = None
            return 0
        if not data:
            return 0
        messages = self.reader.feed(data)
        for msg in messages:
            self.received.append(msg)
            self.handle(msg)
        return len(messages)

    def handle(self, msg) -> None:
        if isinstance(msg, ofp.Hello):
            self.handshaken = True
        elif isinstance(msg, ofp.FeaturesRequest):
            self._send(self.features(msg.xid))
        elif isinstance(msg, ofp.EchoRequest):
            self._send(ofp.EchoReply(msg.xid, msg.data))
        elif isinstance(msg, ofp.FlowMod):
            self.handle_flow_mod(msg)
        elif isinstance(msg, ofp.PacketOut):
            self.handle_packet_out(msg)
        elif isinstance(msg, ofp.PortMod):
            port = self.ports.get(msg.port_no)
            if port is not None and msg.mask & ofp.OFPPC_PORT_DOWN:
                port.admin_down = bool(msg.config & ofp.OFPPC_PORT_DOWN)
                self._send(ofp.PortStatus(reason=ofp.OFPPR_MODIFY, port=self._phy(msg.port_no)))

    def echo(self, data: bytes = b"") -> None:
        self._send(ofp.EchoRequest(data=data))

    def push_counters(self) -> None:
        """Report port counters through the vendor side channel."""
        from .driver import COUNTER_RECORD, COUNTER_VENDOR_ID
        body = struct.pack("!I", COUNTER_VENDOR_ID) + b"".join(
            COUNTER_RECORD.pack(p.port_no, p.rx_packets, p.tx_packets)
            for p in self.ports.values())
        self._send(ofp.Unknown(ofp.OFPT_VENDOR, 0, body))

    # -- table ----------------------------------------------------------------

    def handle_flow_mod(self, fm: ofp.FlowMod) -> None:
        cmd = fm.command
        if cmd == ofp.OFPFC_ADD:
            self.table = [e for e in self.table if e.key != (fm.match, fm.priority)]
            self._insert(fm)
        elif cmd in (ofp.OFPFC_MODIFY, ofp.OFPFC_MODIFY_STRICT):
            if cmd == ofp.OFPFC_MODIFY_STRICT:
                hit = [e for e in self.table if e.key == (fm.match, fm.priority)]
            else:
                hit = [e for e in self.table if fm.match.subsumes(e.match)]
            if not hit:
                self._insert(fm)
            for e in hit:
                e.actions = list(fm.actions)
        elif cmd == ofp.OFPFC_DELETE:
            self.table = [e for e in self.table
                          if not (fm.match.subsumes(e.match) and self._outputs_to(e, fm.out_port))]
        elif cmd == ofp.OFPFC_DELETE_STRICT:
            self.table = [e for e in self.table
                          if not (e.key == (fm.match, fm.priority)
                                  and self._outputs_to(e, fm.out_port))]
        else:
            self.unknown_commands += 1

    @staticmethod
    def _outputs_to(entry, out_port) -> bool:
        if out_port == ofp.OFPP_NONE:
            return True
        return any(isinstance(a, ofp.ActionOutput) and a.port == out_port for a in entry.actions)

    def _insert(self, fm: ofp.FlowMod) -> None:
        self.table.append(FlowEntry(fm.match, fm.priority, list(fm.actions), fm.idle_timeout,
                                    fm.hard_timeout, fm.cookie, next(self._order)))

    def lookup(self, frame: bytes, in_port: int) -> FlowEntry | None:
        fields = packet_fields(frame)
        self.lookups += 1
        if fields is None:
            return None
        entry = lookup(self.table, fields, in_port)
        if entry is not None:
            entry.packet_count += 1
            entry.byte_count += len(frame)
        return entry

    def handle_packet_out(self, po: ofp.PacketOut) -> None:
        if self.fabric is None or not po.data:
            return
        in_port = po.in_port if po.in_port in self.ports else None
        self.fabric._apply_actions(self, po.actions, po.data, in_port, hop=0,
                                   report=self.fabric.trace, from_controller=True)
        self.fabric.run()

    def emit_packet_in(self, frame: bytes, in_port: int, reason: int) -> PacketInRecord:
        """Send a frame to the controller (full frame, no buffering)."""
        self.packet_in_count += 1
        self._send(ofp.PacketIn(buffer_id=ofp.NO_BUFFER, total_len=len(frame),
                                in_port=in_port, reason=reason, data=frame))
        return PacketInRecord(self.dpid, in_port, reason, frame)

    def flow_set(self) -> dict:
        """{(match, priority): actions} for bijection checks."""
        return {e.key: list(e.actions) for e in self.table}


class Fabric:
    """Switches plus symmetric, port-exclusive links and a FIFO of frames in flight."""

    def __init__(self):
        self.switches: dict[int, SimSwitch] = {}
        self.pending: deque = deque()
        self.trace = DeliveryReport()   # everything that ever happened

    def add_switch(self, dpid: int, n_ports: int = 4) -> SimSwitch:
        if dpid in self.switches:
            raise SimError(f"duplicate switch {dpid:x}")
        sw = SimSwitch(dpid, n_ports)
        sw.fabric = self
        self.switches[dpid] = sw
        return sw

    def port(self, dpid: int, port_no: int) -> SimPort:
        sw = self.switches.get(dpid)
        if sw is None:
            raise UnknownSwitch(f"no switch {dpid:x}")
        p = sw.ports.get(port_no)
        if p is None:
            raise UnknownPort(f"switch {dpid:x} has no port {port_no}")
        return p

    def link(self, a: tuple[int, int], b: tuple[int, int]) -> None:
        pa, pb = self.port(*a), self.port(*b)
        if a == b:
            raise SimError("cannot link a port to itself")
        if pa.link is not None or pb.link is not None:
            raise SimError(f"port already linked: {a} or {b}")
        pa.link, pb.link = b, a

    def unlink(self, a: tuple[int, int]) -> None:
        pa = self.port(*a)
        if pa.link is None:
            return
        pb = self.port(*pa.link)
        pa.link = pb.link = None

    def links(self) -> set[frozenset]:
        out = set()
        for sw in self.switches.values():
            for p in sw.ports.values():
                if p.link is not None:
                    out.add(frozenset([(sw.dpid, p.port_no), p.link]))
        return out

    # -- forwarding -----------------------------------------------------------

    def inject(self, dpid: int, port_no: int, frame: bytes) -> DeliveryReport:
        """Put a frame onto an edge port and run until nothing is in flight."""
        p = self.port(dpid, port_no)
        if p.admin_down:
            raise SimError(f"port {port_no} of {dpid:x} is administratively down")
        report = DeliveryReport()
        self.pending.append((dpid, port_no, bytes(frame), 1))
        self.run(report)
        if report.hop_limit_exceeded:
            raise HopLimitExceeded(report)
        return report

    def run(self, report: DeliveryReport | None = None) -> int:
        """Process every in-flight frame; returns how many were processed."""
        n = 0
        while self.pending:
            dpid, port_no, frame, hop = self.pending.popleft()
            n += 1
            self._receive(dpid, port_no, frame, hop, report)
        return n

    def _record(self, report, kind, item):
        getattr(self.trace, kind).append(item)
        if report is not None and report is not self.trace:
            getattr(report, kind).append(item)

    def _receive(self, dpid, port_no, frame, hop, report) -> None:
        sw = self.switches[dpid]
        port = sw.ports[port_no]
        if port.admin_down:
            self._record(report, "drops", (dpid, port_no, "port down"))
            return
        if hop > HOP_LIMIT:
            self._record(report, "drops", (dpid, port_no, "hop limit"))
            if report is not None:
                report.hop_limit_exceeded = True
            self.trace.hop_limit_exceeded = True
            log.warning("hop limit exceeded at %x:%d", dpid, port_no)
            return
        port.rx_packets += 1
        entry = sw.lookup(frame, port_no)
        if entry is None:
            self._record(report, "packet_ins", sw.emit_packet_in(frame, port_no, ofp.OFPR_NO_MATCH))
            return
        if not entry.actions:
            self._record(report, "drops", (dpid, port_no, "drop action"))
            return
        self._apply_actions(sw, entry.actions, frame, port_no, hop, report)

    def _apply_actions(self, sw, actions, frame, in_port, hop, report,
                       from_controller=False) -> None:
        for a in actions:
            if isinstance(a, ofp.ActionSetDlSrc):
                frame = set_dl_addr(frame, "src", a.addr)
            elif isinstance(a, ofp.ActionSetDlDst):
                frame = set_dl_addr(frame, "dst", a.addr)
            elif isinstance(a, ofp.ActionOutput):
                self._output(sw, a.port, frame, in_port, hop, report, from_controller)

    def _output(self, sw, out, frame, in_port, hop, report, from_controller) -> None:
        if out in (ofp.OFPP_FLOOD, ofp.OFPP_ALL):
            for n in sorted(sw.ports):
                if n != in_port:
                    self._transmit(sw, n, frame, hop, report)
        elif out == ofp.OFPP_IN_PORT:
            if in_port is not None:
                self._transmit(sw, in_port, frame, hop, report)
        elif out == ofp.OFPP_CONTROLLER:
            self._record(report, "packet_ins",
                         sw.emit_packet_in(frame, in_port or 0, ofp.OFPR_ACTION))
        elif out == ofp.OFPP_TABLE:
            if from_controller and in_port is not None:
                self.pending.append((sw.dpid, in_port, frame, hop))
        elif out in sw.ports:
            if out == in_port and not from_controller:
                # OpenFlow 1.0 never sends a frame back out its ingress port unless asked
                self._record(report, "drops", (sw.dpid, out, "output to ingress"))
                return
            self._transmit(sw, out, frame, hop, report)

    def _transmit(self, sw, port_no, frame, hop, report) -> None:
        port = sw.ports[port_no]
        if port.admin_down:
            return
        port.tx_packets += 1
        self._record(report, "emissions", Emission(sw.dpid, port_no, frame, hop, port.link is None))
        if port.link is not None:
            peer_dpid, peer_port = port.link
            self.pending.append((peer_dpid, peer_port, frame, hop + 1))

    def poll(self) -> int:
        """Let every switch process controller messages, then drain the fabric."""
        n = 0
        for sw in self.switches.values():
            n += sw.poll()
        n += self.run()
        return n


def parse_topology(text: str) -> tuple[dict[int, int], list[tuple[tuple[int, int], tuple[int, int]]]]:
    """Parse ``switch <dpid> ports=<n>`` / ``link <dpid>:<port> <dpid>:<port>`` lines.

    Datapath ids are hexadecimal, with or without ``0x``. ``#`` starts a
    comment.
    """
    switches: dict[int, int] = {}
    links = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        words = line.split()
        try:
            if words[0] == "switch" and len(words) in (2, 3):
                n_ports = 4
                if len(words) == 3:
                    key, _, value = words[2].partition("=")
                    if key != "ports":
                        raise ValueError(f"unknown switch option {key!r}")
                    n_ports = int(value)
                switches[int(words[1], 16)] = n_ports
            elif words[0] == "link" and len(words) == 3:
                ends = []
                for w in words[1:]:
                    d, _, p = w.partition(":")
                    ends.append((int(d, 16), int(p)))
                links.append(tuple(ends))
            else:
                raise ValueError(f"cannot parse {line!r}")
        except ValueError as exc:
            raise SimError(f"topology line {lineno}: {exc}") from None
    return switches, links


def build_fabric(text: str) -> Fabric:
    switches, links = parse_topology(text)
    fab = Fabric()
    for dpid, n in switches.items():
        fab.add_switch(dpid, n)
    for a, b in links:
        fab.link(a, b)
    return fab


def linear(n: int, hosts_per_switch: int = 1) -> str:
    """Topology text for a chain s1 - s2 - ... - sn.

    Port 1 links left, port 2 links right, ports 3.. are host-facing.
    """
    lines = [f"switch {i:x} ports={2 + hosts_per_switch}" for i in range(1, n + 1)]
    lines += [f"link {i:x}:2 {i + 1:x}:1" for i in range(1, n)]
    return "\n".join(lines) + "\n"


def ring(n: int, hosts_per_switch: int = 1) -> str:
    lines = [f"switch {i:x} ports={2 + hosts_per_switch}" for i in range(1, n + 1)]
    lines += [f"link {i:x}:2 {i % n + 1:x}:1" for i in range(1, n + 1)]
    return "\n".join(lines) + "\n"


def star(n: int, hosts_per_switch: int = 1) -> str:
    """A hub switch 1 with leaves 2..n; the hub's port k links to leaf k+1's port 1."""
    lines = [f"switch 1 ports={n - 1 + hosts_per_switch}"]
    lines += [f"switch {i:x} ports={1 + hosts_per_switch}" for i in range(2, n + 1)]
    lines += [f"link 1:{i - 1} {i:x}:1" for i in range(2, n + 1)]
    return "\n".join(lines) + "\n"


def main(argv=None) -> int:
    import argparse
    import time

    from .transport import SocketTransport, parse_endpoint

    parser = argparse.ArgumentParser(prog="simfab", description="simulated OpenFlow fabric")
    parser.add_argument("--topo", required=True, help="topology description file")
    parser.add_argument("--connect", default="127.0.0.1:6633", help="driver address:port")
    parser.add_argument("--counters", type=float, default=0.0,
                        help="push port counters every N seconds (0 disables)")
    parser.add_argument("--log-level", default="INFO")
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    with open(args.topo, encoding="utf-8") as fh:
        fabric = build_fabric(fh.read())
    host, port = parse_endpoint(args.connect, 6633)
    for dpid, sw in sorted(fabric.switches.items()):
        sw.connect(SocketTransport.connect(host or "127.0.0.1", port))
        log.info("switch %016x connected to %s:%d", dpid, host, port)
    next_push = time.monotonic() + args.counters
    try:
        while any(sw.transport is not None for sw in fabric.switches.values()):
            if not fabric.poll():
                time.sleep(0.005)
            if args.counters and time.monotonic() >= next_push:
                for sw in fabric.switches.values():
                    sw.push_counters()
                next_push = time.monotonic() + args.counters
    except KeyboardInterrupt:
        pass
    return 0
