import threading
import time

import pytest

from netfs import ofp
from netfs.driver import Driver, ProtocolViolation, SessionState
from netfs.fields import FlowSpec
from netfs.packet import tcp_frame
from netfs.schema import NetFS
from netfs.sim import build_fabric, linear
from netfs.testbed import Testbed
from netfs.transport import SocketTransport, memory_pipe

FRAME = tcp_frame("02:00:00:00:00:01", "02:00:00:00:00:02", "10.0.0.1", "10.0.0.2", 5, 22)


@pytest.fixture
def tb():
    return Testbed("switch 1 ports=3\nswitch 2 ports=2\nlink 1:3 2:2\n")


def test_handshake_populates_tree(tb):
    fs = tb.fs
    sw = tb.switch_path(1)
    assert sorted(fs.switches()) == ["0000000000000001", "0000000000000002"]
    assert fs.read_text(f"{sw}/status") == "connected"
    assert fs.read_text(f"{sw}/capabilities") == "0x00000087"
    assert fs.ports(sw) == [1, 2, 3]
    assert fs.read_text(f"{sw}/ports/2/hw_addr") == "02:00:00:00:01:02"
    assert fs.read_text(f"{sw}/ports/2/config.port_status") == "up"


def test_commit_sends_one_add(tb):
    sw = tb.switch_path(1)
    tb.fs.add_flow(sw, "f", FlowSpec(match={"in_port": 1}, actions=[("output", 2)]))
    tb.pump()
    fms = tb.driver.session(1).flow_mods()
    assert [fm.command for fm in fms] == [ofp.OFPFC_ADD]
    assert tb.switches[1].flow_set() == {(ofp.Match(in_port=1), 0x8000): [ofp.ActionOutput(2)]}


def test_no_flow_mod_before_commit(tb):
    flow = f"{tb.switch_path(1)}/flows/f"
    tb.fs.mkdir(flow)
    tb.fs.write_flow_field(flow, "match.in_port", "1")
    tb.pump()
    assert tb.driver.session(1).flow_mods() == []


def test_action_change_uses_modify_strict(tb):
    sw = tb.switch_path(1)
    tb.fs.add_flow(sw, "f", FlowSpec(match={"in_port": 1}, actions=[("output", 2)]))
    tb.pump()
    tb.fs.add_flow(sw, "f", FlowSpec(match={"in_port": 1}, actions=[("output", 3)]))
    tb.pump()
    cmds = [fm.command for fm in tb.driver.session(1).flow_mods()]
    assert cmds == [ofp.OFPFC_ADD, ofp.OFPFC_MODIFY_STRICT]
    assert list(tb.switches[1].flow_set().values()) == [[ofp.ActionOutput(3)]]


def test_match_change_replaces_entry(tb):
    sw = tb.switch_path(1)
    tb.fs.add_flow(sw, "f", FlowSpec(match={"in_port": 1}, actions=[("output", 2)]))
    tb.pump()
    tb.fs.add_flow(sw, "f", FlowSpec(match={"in_port": 2}, actions=[("output", 1)]))
    tb.pump()
    assert set(tb.switches[1].flow_set()) == {(ofp.Match(in_port=2), 0x8000)}


def test_flow_removal_deletes(tb):
    sw = tb.switch_path(1)
    tb.fs.add_flow(sw, "f", FlowSpec(match={"in_port": 1}, actions=[("output", 2)]))
    tb.pump()
    tb.fs.rm_semantic(f"{sw}/flows/f")
    tb.pump()
    assert tb.switches[1].table == []


def test_packet_in_reaches_buffers(tb):
    buf = tb.fs.open_event_buffer(tb.switch_path(1), "app")
    tb.inject(1, 1, FRAME)
    recs = tb.fs.pending_events(buf)
    assert len(recs) == 1
    ev = tb.fs.read_event(recs[0])
    assert (ev.in_port, ev.data, ev.reason, ev.buffer_id) == (1, FRAME, "no_match", None)


def test_packet_out_transmits_and_clears(tb):
    sw = tb.switch_path(1)
    rec = tb.fs.packet_out(sw, FRAME, [2])
    tb.pump()
    assert not tb.fs.exists(rec)
    assert any(e.dpid == 1 and e.port == 2 for e in tb.fabric.trace.emissions)


def test_port_down_sends_port_mod(tb):
    pp = f"{tb.switch_path(1)}/ports/2"
    tb.fs.write(f"{pp}/config.port_down", "1")
    tb.pump()
    assert tb.fabric.port(1, 2).admin_down
    assert tb.driver.session(1).sent(ofp.PortMod)[0].config == ofp.OFPPC_PORT_DOWN


def test_disconnect_marks_status(tb):
    tb.disconnect(2)
    tb.pump()
    assert tb.fs.read_text(f"{tb.switch_path(2)}/status") == "disconnected"
    rec = tb.fs.packet_out(tb.switch_path(2), FRAME, [1])
    tb.pump()
    assert not tb.fs.exists(rec)
    assert tb.fs.read_text(f"{tb.switch_path(2)}/packets_out/error") == "disconnected"


def test_reconnect_replays(tb):
    sw = tb.switch_path(1)
    tb.fs.add_flow(sw, "f", FlowSpec(match={"in_port": 1}, actions=[("output", 2)]))
    tb.pump()
    tb.switches[1].table.clear()
    tb.reconnect(1)
    assert set(tb.switches[1].flow_set()) == {(ofp.Match(in_port=1), 0x8000)}


def test_counters_via_vendor_message(tb):
    tb.inject(1, 1, FRAME)
    tb.switches[1].push_counters()
    tb.pump()
    assert tb.fs.read_text(f"{tb.switch_path(1)}/ports/1/stats.rx_packets") == "1"


def test_echo_answered(tb):
    tb.switches[1].echo(b"ping")
    tb.pump()
    assert tb.driver.session(1).sent(ofp.EchoReply)[0].data == b"ping"


def test_flow_mod_before_ready_is_a_violation():
    d = Driver(NetFS())
    a, _ = memory_pipe()
    s = d.attach(a)
    with pytest.raises(ProtocolViolation):
        s.send(ofp.FlowMod())


def test_bad_version_drops_session():
    d = Driver(NetFS())
    a, b = memory_pipe()
    s = d.attach(a)
    b.send(b"\x04\x00\x00\x08\x00\x00\x00\x01")
    d.poll()
    assert s.state is SessionState.DEAD


def test_driver_over_tcp():
    fs = NetFS()
    driver = Driver(fs)
    driver.serve("127.0.0.1", 0, background=True)
    fab = build_fabric(linear(1))
    fab.switches[1].connect(SocketTransport.connect(*driver.address))
    stop = threading.Event()

    def pump():
        while not stop.is_set():
            fab.poll()
            time.sleep(0.002)

    t = threading.Thread(target=pump, daemon=True)
    t.start()
    try:
        deadline = time.time() + 5
        while driver.session(1) is None and time.time() < deadline:
            time.sleep(0.01)
        assert driver.session(1) is not None
        fs.add_flow(fs.switch_path(1), "f", FlowSpec(match={"in_port": 3},
                                                     actions=[("output", 2)]))
        while not fab.switches[1].table and time.time() < deadline:
            time.sleep(0.01)
        assert set(fab.switches[1].flow_set()) == {(ofp.Match(in_port=3), 0x8000)}
    finally:
        stop.set()
        driver.stop()
        t.join(1)
