import pytest
from hypothesis import given
from oracles import naive_lookup
from strategies import pooled_packets, pooled_tables

from netfs import ofp
from netfs.packet import mac, tcp_frame
from netfs.sim import (
    Fabric,
    FlowEntry,
    HopLimitExceeded,
    SimError,
    build_fabric,
    linear,
    lookup,
    parse_topology,
    ring,
    star,
)
from netfs.transport import memory_pipe

H1, H2 = "02:00:00:00:00:01", "02:00:00:00:00:02"


def frame(dport=22):
    return tcp_frame(H1, H2, "10.0.0.1", "10.0.0.2", 1000, dport)


def add(sw, match, actions, priority=0x8000, command=ofp.OFPFC_ADD, out_port=ofp.OFPP_NONE):
    sw.handle_flow_mod(ofp.FlowMod(match=match, priority=priority, command=command,
                                   actions=actions, out_port=out_port))


@given(pooled_tables, pooled_packets())
def test_lookup_matches_oracle(table, packet):
    in_port, fields = packet
    entries = [FlowEntry(m, prio, [], order=i) for i, (m, prio) in enumerate(table)]
    got = lookup(entries, fields, in_port)
    want = naive_lookup([(m.pack(), prio) for m, prio in table], in_port, fields)
    assert (None if got is None else got.order) == want


def test_exact_beats_higher_priority_wildcard():
    fab = build_fabric("switch 1 ports=3\n")
    sw = fab.switches[1]
    add(sw, ofp.Match(), [ofp.ActionOutput(2)], priority=0xFFFF)
    f = frame()
    exact = ofp.Match(in_port=1, **{k: v for k, v in _exact_fields(f).items()})
    assert exact.is_exact
    add(sw, exact, [ofp.ActionOutput(3)], priority=1)
    r = fab.inject(1, 1, f)
    assert [(e.dpid, e.port) for e in r.emissions] == [(1, 3)]


def _exact_fields(f):
    from netfs.sim import packet_fields
    fields = packet_fields(f)
    fields["nw_src"] = (fields["nw_src"], 32)
    fields["nw_dst"] = (fields["nw_dst"], 32)
    return fields


def test_miss_sends_packet_in():
    fab = build_fabric("switch 1 ports=2\n")
    sw_end, ctl_end = memory_pipe()
    fab.switches[1].connect(sw_end)
    r = fab.inject(1, 1, frame())
    assert len(r.packet_ins) == 1
    msgs = ofp.MessageReader().feed(ctl_end.recv())
    assert isinstance(msgs[0], ofp.Hello)
    assert isinstance(msgs[1], ofp.PacketIn)
    assert msgs[1].in_port == 1 and msgs[1].data == frame()


def test_handshake_features():
    fab = build_fabric("switch a1 ports=2\n")
    sw_end, ctl_end = memory_pipe()
    fab.switches[0xA1].connect(sw_end)
    ctl_end.send(ofp.serialize(ofp.Hello(1)) + ofp.serialize(ofp.FeaturesRequest(9)))
    fab.poll()
    msgs = ofp.MessageReader().feed(ctl_end.recv())
    reply = msgs[-1]
    assert isinstance(reply, ofp.FeaturesReply)
    assert reply.xid == 9 and reply.datapath_id == 0xA1
    assert [p.hw_addr for p in reply.ports] == [bytes.fromhex("02000000a101"),
                                                bytes.fromhex("02000000a102")]


def test_flow_mod_commands():
    fab = Fabric()
    sw = fab.add_switch(1)
    m22 = ofp.Match(dl_type=0x800, nw_proto=6, tp_dst=22)
    m80 = ofp.Match(dl_type=0x800, nw_proto=6, tp_dst=80)
    add(sw, m22, [ofp.ActionOutput(1)])
    add(sw, m22, [ofp.ActionOutput(2)])
    assert sw.flow_set() == {(m22, 0x8000): [ofp.ActionOutput(2)]}
    add(sw, m80, [ofp.ActionOutput(3)], command=ofp.OFPFC_MODIFY_STRICT)
    assert len(sw.table) == 2
    add(sw, ofp.Match(dl_type=0x800), [], command=ofp.OFPFC_DELETE, out_port=3)
    assert set(sw.flow_set()) == {(m22, 0x8000)}
    add(sw, m22, [], command=ofp.OFPFC_DELETE_STRICT, priority=1)
    assert len(sw.table) == 1
    add(sw, m22, [], command=ofp.OFPFC_DELETE_STRICT)
    assert sw.table == []
    add(sw, m22, [], command=9)
    assert sw.unknown_commands == 1


def test_linear_forwarding_and_edge_report():
    fab = build_fabric(linear(3))
    for dpid, (i, o) in {1: (3, 2), 2: (1, 2), 3: (1, 3)}.items():
        add(fab.switches[dpid], ofp.Match(in_port=i), [ofp.ActionOutput(o)])
    r = fab.inject(1, 3, frame())
    assert [(e.dpid, e.port) for e in r.edge_emissions] == [(3, 3)]
    assert [e.hop for e in r.emissions] == [1, 2, 3]


def test_no_reflection_to_ingress():
    fab = build_fabric("switch 1 ports=2\n")
    add(fab.switches[1], ofp.Match(), [ofp.ActionOutput(1)])
    r = fab.inject(1, 1, frame())
    assert r.emissions == [] and r.drops


def test_flood_excludes_ingress():
    fab = build_fabric("switch 1 ports=4\n")
    add(fab.switches[1], ofp.Match(), [ofp.ActionOutput(ofp.OFPP_FLOOD)])
    r = fab.inject(1, 2, frame())
    assert sorted(e.port for e in r.emissions) == [1, 3, 4]


def test_loop_hits_hop_limit():
    fab = build_fabric(ring(3))
    for sw in fab.switches.values():
        add(sw, ofp.Match(), [ofp.ActionOutput(2)])
    with pytest.raises(HopLimitExceeded):
        fab.inject(1, 3, frame())


def test_admin_down_port():
    fab = build_fabric(linear(2))
    fab.port(1, 3).admin_down = True
    with pytest.raises(SimError):
        fab.inject(1, 3, frame())


def test_packet_out_from_controller():
    fab = build_fabric(linear(2))
    sw_end, ctl_end = memory_pipe()
    fab.switches[1].connect(sw_end)
    ctl_end.send(ofp.serialize(ofp.PacketOut(actions=[ofp.ActionOutput(2)], data=frame())))
    fab.poll()
    pins = [p for p in fab.trace.packet_ins if p.dpid == 2]
    assert len(pins) == 1 and pins[0].in_port == 1


def test_port_mod_sets_admin_down():
    fab = build_fabric("switch 1 ports=2\n")
    sw_end, ctl_end = memory_pipe()
    fab.switches[1].connect(sw_end)
    ctl_end.send(ofp.serialize(ofp.PortMod(port_no=2, config=1, mask=1)))
    fab.poll()
    assert fab.port(1, 2).admin_down
    status = ofp.MessageReader().feed(ctl_end.recv())[-1]
    assert isinstance(status, ofp.PortStatus) and status.port.config == 1


def test_set_dl_dst_rewrites():
    fab = build_fabric("switch 1 ports=2\n")
    new = mac("02:00:00:00:00:99")
    add(fab.switches[1], ofp.Match(), [ofp.ActionSetDlDst(new), ofp.ActionOutput(2)])
    r = fab.inject(1, 1, frame())
    assert r.emissions[0].frame[:6] == new


def test_topology_parsing():
    switches, links = parse_topology("# demo\nswitch 0x1 ports=2\nswitch 2\nlink 1:1 2:1 # x\n")
    assert switches == {1: 2, 2: 4}
    assert links == [((1, 1), (2, 1))]
    with pytest.raises(SimError):
        parse_topology("switch 1 colour=red\n")


@pytest.mark.parametrize("text,n_links", [(linear(3), 2), (ring(4), 4), (star(5), 4)])
def test_generated_topologies(text, n_links):
    assert len(build_fabric(text).links()) == n_links


def test_links_are_exclusive():
    fab = build_fabric(linear(2))
    with pytest.raises(SimError):
        fab.link((1, 2), (2, 3))
    fab.unlink((2, 1))
    assert fab.links() == set()
