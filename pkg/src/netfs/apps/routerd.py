"""Reactive exact-match router.

Every table miss lands in the router's buffer on the switch where it
happened. The router learns where the source MAC lives, and if the
destination is known it installs one exact-match flow per switch along a
shortest path and hands the frame straight to the last hop. A frame for
an unknown destination is copied to every host-facing port once.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

from ..errors import NetFSError
from ..fields import IP_ICMP, IP_TCP, IP_UDP, FlowSpec, header_field
from ..packet import ETH_TYPE_IP, ETH_TYPE_LLDP, parse_header
from .common import (
    daemon_parser,
    peer_graph,
    run_forever,
    shortest_path,
)

log = logging.getLogger(__name__)

ROUTE_PRIORITY = 32768
FLOW_PREFIX = "routerd-"


@dataclass
class MacTable:
    """Where each MAC was last seen: mac -> (dpid, port, counter)."""

    entries: dict = field(default_factory=dict)
    clock: int = 0

    def learn(self, mac: bytes, dpid: int, port: int) -> bool:
        """Record a sighting; True when the location is new or moved."""
        self.clock += 1
        old = self.entries.get(mac)
        self.entries[mac] = (dpid, port, self.clock)
        return old is None or old[:2] != (dpid, port)

    def lookup(self, mac: bytes) -> tuple[int, int] | None:
        hit = self.entries.get(mac)
        return None if hit is None else hit[:2]

    def __len__(self):
        return len(self.entries)


@dataclass
class Hop:
    dpid: int
    in_port: int
    out_port: int


@dataclass
class PathPlan:
    hops: list[Hop]

    def dpids(self) -> list[int]:
        return [h.dpid for h in self.hops]

    def valid(self, graph) -> bool:
        """Consecutive hops joined by a peer link and no switch visited twice."""
        if len(set(self.dpids())) != len(self.hops):
            return False
        for a, b in zip(self.hops, self.hops[1:]):
            if graph.get(a.dpid, {}).get(a.out_port) != (b.dpid, b.in_port):
                return False
        return True


def plan_path(graph, src: tuple[int, int], dst: tuple[int, int]) -> PathPlan | None:
    """Hops from the ingress attachment ``src`` to the host attachment ``dst``."""
    steps = shortest_path(graph, src[0], dst[0])
    if steps is None:
        return None
    hops = []
    in_port = src[1]
    for dpid, out_port, next_in in steps:
        hops.append(Hop(dpid, in_port, out_port))
        in_port = next_in
    hops.append(Hop(dst[0], in_port, dst[1]))
    return PathPlan(hops)


def exact_match(header, in_port: int) -> dict:
    """The full twelve-tuple of a packet; non-IP frames keep only the L2 part."""
    m = {"in_port": in_port}
    for name in ("dl_src", "dl_dst", "dl_vlan", "dl_vlan_pcp", "dl_type"):
        m[name] = header_field(header, name)
    if header.dl_type == ETH_TYPE_IP and header.nw_proto is not None:
        m["nw_tos"] = header.nw_tos
        m["nw_proto"] = header.nw_proto
        m["nw_src"] = (header.nw_src, 32)
        m["nw_dst"] = (header.nw_dst, 32)
        if header.nw_proto in (IP_ICMP, IP_TCP, IP_UDP):
            m["tp_src"] = header_field(header, "tp_src")
            m["tp_dst"] = header_field(header, "tp_dst")
    return m


def flow_name(match: dict) -> str:
    digest = hashlib.sha1(repr(sorted(match.items())).encode()).hexdigest()
    return FLOW_PREFIX + digest[:16]


def _multicast(mac: bytes) -> bool:
    return bool(mac[0] & 1)


class Routerd:
    def __init__(self, fs, app_name: str = "routerd", priority: int = ROUTE_PRIORITY):
        self.fs = fs
        self.app_name = app_name
        self.priority = priority
        self.macs = MacTable()
        self.buffers: dict[int, str] = {}
        self.plans: list[PathPlan] = []
        self.floods = 0
        self.unroutable = 0

    def attach(self) -> None:
        present = set()
        for name in self.fs.switches():
            try:
                dpid = int(name, 16)
            except ValueError:
                continue
            present.add(dpid)
            if dpid not in self.buffers:
                try:
                    self.buffers[dpid] = self.fs.open_event_buffer(
                        self.fs.switch_path(dpid), self.app_name)
                except NetFSError as exc:
                    log.warning("cannot open buffer on %x: %s", dpid, exc)
        for dpid in set(self.buffers) - present:
            del self.buffers[dpid]

    def poll(self) -> int:
        self.attach()
        pending = []
        for dpid, buf in self.buffers.items():
            try:
                pending += [(rec.rsplit("/", 1)[1], dpid, rec) for rec in self.fs.pending_events(buf)]
            except NetFSError:
                continue
        # record names are the shared packet-in sequence, so this is arrival order
        for _, dpid, rec in sorted(pending):
            try:
                event = self.fs.read_event(rec)
                self.fs.ack_event(rec)
            except NetFSError:
                continue
            try:
                self.on_miss(dpid, event)
            except NetFSError as exc:
                log.warning("routing failed on %x: %s", dpid, exc)
        return len(pending)

    def on_miss(self, dpid: int, event) -> PathPlan | None:
        if event.reason != "no_match":
            return None
        h = parse_header(event.data)
        if h is None or h.dl_type == ETH_TYPE_LLDP:
            return None
        graph = peer_graph(self.fs)
        in_port = event.in_port
        edge = in_port not in graph.get(dpid, {})
        if edge and not _multicast(h.dl_src):
            self.macs.learn(h.dl_src, dpid, in_port)
        dst = None if _multicast(h.dl_dst) else self.macs.lookup(h.dl_dst)
        if dst is None:
            # frames arriving on inter-switch ports are never flooded again
            if edge:
                self.flood(graph, dpid, in_port, event.data)
            return None
        if dst == (dpid, in_port):
            return None
        plan = plan_path(graph, (dpid, in_port), dst)
        if plan is None:
            self.unroutable += 1
            log.warning("no path from %x to %x; dropping", dpid, dst[0])
            return None
        self.install(plan, h)
        last = plan.hops[-1]
        self.fs.packet_out(self.fs.switch_path(last.dpid), event.data, [last.out_port],
                           in_port="none")
        self.plans.append(plan)
        return plan

    def install(self, plan: PathPlan, header) -> list[str]:
        names = []
        for hop in plan.hops:
            match = exact_match(header, hop.in_port)
            name = flow_name(match)
            spec = FlowSpec(match=match, priority=self.priority,
                            actions=[("output", hop.out_port)])
            self.fs.add_flow(self.fs.switch_path(hop.dpid), name, spec)
            names.append(name)
        return names

    def flood(self, graph, dpid: int, in_port: int, data: bytes) -> None:
        """Hand the frame to every host-facing port in the network but the ingress.

        The controller emits it directly at each switch, so no copy ever
        crosses an inter-switch link and loops are impossible.
        """
        sent = False
        for name in self.fs.switches():
            try:
                other = int(name, 16)
            except ValueError:
                continue
            sw = self.fs.switch_path(other)
            links = graph.get(other, {})
            ports = [p for p in self.fs.ports(sw)
                     if p not in links and (other, p) != (dpid, in_port)]
            if ports:
                self.fs.packet_out(sw, data, ports,
                                   in_port=in_port if other == dpid else "none")
                sent = True
        if sent:
            self.floods += 1

def main(argv=None) -> int:
    from ..rpc import connect_store

    args = daemon_parser("routerd", "reactive exact-match router", 1.0).parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        fs = connect_store(args.mount)
    except NetFSError as exc:
        log.error("%s", exc)
        return exc.exit_code
    app = Routerd(fs)
    try:
        run_forever(app, args.interval)
    except KeyboardInterrupt:
        pass
    return 0
