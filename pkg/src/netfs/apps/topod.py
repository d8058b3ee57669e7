"""LLDP topology daemon: turns probe sightings into ``peer`` symlinks.

Each round writes one probe per (switch, port) into ``packets_out``. A
probe sent from (S1, P1) that comes back as a packet-in on (S2, P2) proves
a link, recorded as ``S2/ports/P2/peer -> S1/ports/P1`` plus the mirror
link. Links that go unseen for ``max_missed`` consecutive rounds are
removed again.
"""

from __future__ import annotations

import logging

from ..errors import NetFSError
from ..fields import FlowSpec
from ..packet import ETH_TYPE_LLDP, LldpProbe
from .common import daemon_parser, port_location, port_path, run_forever

log = logging.getLogger(__name__)

LLDP_FLOW = "topod-lldp"
LLDP_PRIORITY = 0xFFFF


class Topod:
    def __init__(self, fs, app_name: str = "topod", max_missed: int = 3,
                 install_lldp_flow: bool = True):
        self.fs = fs
        self.app_name = app_name
        self.max_missed = max_missed
        self.install_lldp_flow = install_lldp_flow
        self.round_no = 0
        self.links: dict[frozenset, int] = {}   # {(dpid, port), (dpid, port)} -> last round seen
        self.buffers: dict[int, str] = {}
        self.ignored = 0

    # -- buffers ------------------------------------------------------------

    def attach(self) -> None:
        """Open our buffer (and the LLDP punt flow) on every switch present."""
        fs = self.fs
        present = set()
        for name in fs.switches():
            try:
                dpid = int(name, 16)
            except ValueError:
                continue
            present.add(dpid)
            if dpid in self.buffers:
                continue
            sw = fs.switch_path(dpid)
            try:
                self.buffers[dpid] = fs.open_event_buffer(sw, self.app_name)
                if self.install_lldp_flow and fs.committed_flow(f"{sw}/flows/{LLDP_FLOW}") is None:
                    fs.add_flow(sw, LLDP_FLOW, FlowSpec(
                        match={"dl_type": ETH_TYPE_LLDP}, priority=LLDP_PRIORITY,
                        actions=[("output", "controller")]))
            except NetFSError as exc:
                log.warning("cannot attach to %s: %s", sw, exc)
        for dpid in set(self.buffers) - present:
            del self.buffers[dpid]

    # -- rounds -------------------------------------------------------------

    def start_round(self) -> int:
        """Send one probe out of every port; returns the number of probes."""
        self.attach()
        self.round_no += 1
        fs = self.fs
        sent = 0
        for dpid in sorted(self.buffers):
            sw = fs.switch_path(dpid)
            try:
                if fs.read_text(f"{sw}/status") != "connected":
                    continue
                ports = fs.ports(sw)
            except NetFSError:
                continue
            for p in ports:
                try:
                    mac = bytes.fromhex(fs.read_text(f"{sw}/ports/{p}/hw_addr").replace(":", ""))
                except (NetFSError, ValueError):
                    mac = b"\x02\x00\x00\x00\x00\x01"
                fs.packet_out(sw, LldpProbe(dpid, p).encode(mac), [p])
                sent += 1
        return sent

    def end_round(self) -> list[frozenset]:
        """Expire links unseen for ``max_missed`` rounds; returns what was removed."""
        expired = [k for k, seen in self.links.items() if self.round_no - seen >= self.max_missed]
        for key in expired:
            self._drop(key)
        return expired

    def round(self, pump) -> None:
        """One complete round when a ``pump`` callable drives the network."""
        self.start_round()
        pump()
        self.end_round()
        pump()

    # -- packet-ins ---------------------------------------------------------

    def poll(self) -> int:
        self.attach()
        work = 0
        for dpid, buf in sorted(self.buffers.items()):
            try:
                records = self.fs.pending_events(buf)
            except NetFSError:
                continue
            for rec in records:
                work += 1
                try:
                    event = self.fs.read_event(rec)
                    self.fs.ack_event(rec)
                except NetFSError:
                    continue
                probe = LldpProbe.decode(event.data)
                if probe is None:
                    self.ignored += 1
                    continue
                self.observe((probe.dpid, probe.port), (dpid, event.in_port))
        return work

    def observe(self, sender: tuple[int, int], receiver: tuple[int, int]) -> None:
        if sender == receiver:
            return
        key = frozenset((sender, receiver))
        for other in [k for k in self.links if k != key and (sender in k or receiver in k)]:
            self._drop(other)
        self.links[key] = self.round_no
        self._point(receiver, sender)
        self._point(sender, receiver)

    def _point(self, a, b) -> None:
        fs = self.fs
        link = port_path(fs, *a) + "/peer"
        target = port_path(fs, *b)
        if fs.peer_of(port_path(fs, *a)) == target:
            return
        try:
            fs.symlink(link, target)
            log.info("link %x:%d -> %x:%d", a[0], a[1], b[0], b[1])
        except NetFSError as exc:
            log.warning("cannot link %s: %s", link, exc)

    def _drop(self, key: frozenset) -> None:
        self.links.pop(key, None)
        a, b = tuple(key)
        for x, y in ((a, b), (b, a)):
            pp = port_path(self.fs, *x)
            if self.fs.peer_of(pp) == port_path(self.fs, *y):
                try:
                    self.fs.unlink(pp + "/peer")
                except NetFSError:
                    pass
        log.info("link %x:%d - %x:%d expired", a[0], a[1], b[0], b[1])

    def peer_links(self) -> set[frozenset]:
        """Links as currently recorded by symlinks (read back from the store)."""
        out = set()
        fs = self.fs
        for name in fs.switches():
            sw = fs.switch_path(name)
            for p in fs.ports(sw):
                target = fs.peer_of(f"{sw}/ports/{p}")
                loc = port_location(fs, target) if target else None
                if loc is not None:
                    out.add(frozenset(((int(name, 16), p), loc)))
        return out


def main(argv=None) -> int:
    from ..rpc import connect_store

    args = daemon_parser("topod", "LLDP topology discovery", 5.0).parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        fs = connect_store(args.mount)
    except NetFSError as exc:
        log.error("%s", exc)
        return exc.exit_code
    app = Topod(fs)

    def tick():
        if app.round_no:
            app.end_round()
        app.start_round()

    try:
        run_forever(app, args.interval, tick)
    except KeyboardInterrupt:
        pass
    return 0
