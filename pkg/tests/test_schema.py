import pytest
from hypothesis import given
from hypothesis import strategies as st

from netfs.errors import (
    InvalidName,
    IsADirectory,
    NotASchemaPoint,
    NotFound,
    ParseError,
    PermissionDenied,
    RangeError,
    UnknownField,
    ValidationFailed,
)
from netfs.fields import FlowSpec
from netfs.schema import (
    PORT_FILES,
    SWITCH_CHILDREN,
    VIEW_CHILDREN,
    EventRecord,
    NetFS,
    switch_name,
)
from netfs.store import EventKind

SW = switch_name(1)


@pytest.fixture
def fs():
    fs = NetFS()
    fs.mkdir(f"/net/switches/{SW}")
    fs.mkdir(f"/net/switches/{SW}/ports/1")
    fs.mkdir(f"/net/switches/{SW}/ports/2")
    return fs


def test_root_layout():
    assert NetFS().list("/net") == sorted(VIEW_CHILDREN)


def test_semantic_switch(fs):
    assert fs.list(f"/net/switches/{SW}") == sorted(SWITCH_CHILDREN)


def test_semantic_view(fs):
    fs.mkdir("/net/views/v1")
    assert fs.list("/net/views/v1") == sorted(VIEW_CHILDREN)
    fs.mkdir("/net/views/v1/views/inner")
    assert fs.list("/net/views/v1/views/inner") == sorted(VIEW_CHILDREN)


def test_semantic_port(fs):
    assert fs.list(f"/net/switches/{SW}/ports/1") == sorted(PORT_FILES)


def test_semantic_flow_has_version(fs):
    fs.mkdir(f"/net/switches/{SW}/flows/f")
    assert fs.list(f"/net/switches/{SW}/flows/f") == ["version"]
    assert fs.read_text(f"/net/switches/{SW}/flows/f/version") == "0"


def test_semantic_create_is_one_atomic_burst(fs):
    w = fs.watch("/net/views", recursive=True)
    fs.mkdir("/net/views/v2")
    assert [e.path for e in w.drain()] == [
        "/net/views/v2", "/net/views/v2/hosts", "/net/views/v2/switches", "/net/views/v2/views"]


@pytest.mark.parametrize("name", ["1", "xyz", "00000000000000001", "000000000000000G"])
def test_switch_names(fs, name):
    with pytest.raises(InvalidName):
        fs.mkdir(f"/net/switches/{name}")


@pytest.mark.parametrize("name", ["0", "eth0", "65281"])
def test_port_names(fs, name):
    with pytest.raises(InvalidName):
        fs.mkdir(f"/net/switches/{SW}/ports/{name}")


def test_role_of(fs):
    assert fs.role_of("/net") == "view"
    assert fs.role_of(f"/net/switches/{SW}") == "switch"
    assert fs.role_of(f"/net/switches/{SW}/flows/f") == "flow"
    assert fs.role_of(f"/net/views/v/switches/{SW}/ports/3") == "port"
    assert fs.role_of(f"/net/switches/{SW}/bogus") is None
    assert fs.role_of("/elsewhere") is None


def test_mk_semantic_outside_schema(fs):
    with pytest.raises(NotASchemaPoint):
        fs.mk_semantic(f"/net/switches/{SW}/bogus")


def test_rmdir_is_recursive_for_objects(fs):
    fs.add_flow(fs.switch_path(1), "f", FlowSpec(match={"tp_dst": 1}))
    fs.rmdir(fs.switch_path(1))
    assert not fs.exists(fs.switch_path(1))
    assert fs.committed_flows(fs.switch_path(1)) == {}


def test_write_validates_flow_fields(fs):
    flow = f"{fs.switch_path(1)}/flows/f"
    fs.mkdir(flow)
    with pytest.raises(ParseError):
        fs.write(flow + "/match.tp_dst", "http")
    with pytest.raises(RangeError):
        fs.write_flow_field(flow, "priority", "70000")
    with pytest.raises(UnknownField):
        fs.write(flow + "/colour", "blue")
    assert fs.list(flow) == ["version"]


def test_write_validates_port_files(fs):
    with pytest.raises(ParseError):
        fs.write(f"{fs.switch_path(1)}/ports/1/config.port_down", "maybe")
    fs.write(f"{fs.switch_path(1)}/ports/1/config.port_down", "1\n")


def test_staging_is_invisible_until_commit(fs):
    flow = f"{fs.switch_path(1)}/flows/f"
    fs.mkdir(flow)
    fs.write_flow_field(flow, "match.tp_dst", "22")
    assert fs.committed_flow(flow) is None
    assert fs.commit_flow(flow) == 1
    fs.write_flow_field(flow, "match.tp_dst", "80")
    assert fs.committed_flow(flow).match == {"tp_dst": 22}
    fs.write(flow + "/version", "5")
    assert fs.committed_flow(flow).match == {"tp_dst": 80}
    assert fs.committed_flow(flow).version == 2


def test_commit_rejects_and_keeps_version(fs):
    flow = f"{fs.switch_path(1)}/flows/f"
    fs.add_flow(fs.switch_path(1), "f", FlowSpec(match={"dl_type": 0x0806}))
    fs.write_flow_field(flow, "match.tp_dst", "22")
    with pytest.raises(ValidationFailed) as info:
        fs.commit_flow(flow)
    assert info.value.field == "match.tp_dst"
    assert fs.read_text(flow + "/version") == "1"
    assert fs.committed_flow(flow).match == {"dl_type": 0x0806}


def test_version_and_stats_not_writable_as_fields(fs):
    flow = f"{fs.switch_path(1)}/flows/f"
    fs.mkdir(flow)
    with pytest.raises(UnknownField):
        fs.write_flow_field(flow, "version", "3")


def test_add_flow_replaces_staged_fields(fs):
    sw = fs.switch_path(1)
    fs.add_flow(sw, "f", {"match.tp_dst": "22", "action.0.output": "2"})
    fs.add_flow(sw, "f", {"match.tp_src": "9"})
    spec = fs.committed_flow(f"{sw}/flows/f")
    assert spec.match == {"tp_src": 9}
    assert spec.actions == []
    assert spec.version == 2


def test_rename_keeps_committed_image(fs):
    sw = fs.switch_path(1)
    fs.add_flow(sw, "f", {"match.tp_dst": "22"})
    fs.rename(f"{sw}/flows/f", f"{sw}/flows/g")
    assert set(fs.committed_flows(sw)) == {"g"}


def test_peer_symlink_validation(fs):
    sw = fs.switch_path(1)
    fs.symlink(f"{sw}/ports/1/peer", f"{sw}/ports/2")
    assert fs.peer_of(f"{sw}/ports/1") == f"{sw}/ports/2"
    with pytest.raises(ValidationFailed):
        fs.symlink(f"{sw}/ports/2/peer", f"{sw}/flows")
    with pytest.raises(IsADirectory):
        fs.unlink(f"{sw}/ports")
    fs.unlink(f"{sw}/ports/1/peer")
    assert fs.peer_of(f"{sw}/ports/1") is None


def test_event_buffers_fan_out_with_shared_sequence(fs):
    sw = fs.switch_path(1)
    a = fs.open_event_buffer(sw, "a")
    b = fs.open_event_buffer(sw, "b")
    recs = fs.deliver_packet_in(sw, EventRecord(1, b"frame"))
    assert [r.rsplit("/", 1)[1] for r in recs] == [recs[0].rsplit("/", 1)[1]] * 2
    assert fs.read_event(fs.pending_events(a)[0]) == EventRecord(1, b"frame")
    fs.ack_event(fs.pending_events(a)[0])
    assert fs.pending_events(a) == []
    assert len(fs.pending_events(b)) == 1


def test_no_buffer_drops_silently(fs):
    assert fs.deliver_packet_in(fs.switch_path(1), EventRecord(1, b"x")) == []


def test_buffer_overflow(fs):
    fs.buffer_capacity = 3
    buf = fs.open_event_buffer(fs.switch_path(1), "app")
    for i in range(5):
        fs.deliver_packet_in(fs.switch_path(1), EventRecord(1, bytes([i])))
    recs = fs.pending_events(buf)
    assert [fs.read_event(r).data for r in recs] == [b"\x02", b"\x03", b"\x04"]
    assert fs.exists(buf + "/overflowed")


def test_event_record_files_round_trip():
    rec = EventRecord(3, b"\x00\x01", "action", 17, 99)
    assert EventRecord.from_files(rec.to_files()) == rec


def test_packet_out_record_complete_before_send(fs):
    w = fs.watch(fs.switch_path(1) + "/packets_out", recursive=True)
    rec = fs.packet_out(fs.switch_path(1), b"data", [2, "flood"], in_port=1)
    evs = w.drain()
    assert evs[-1].path == rec + "/send"
    assert fs.read_text(rec + "/action.1.output") == "flood"


def test_permissions_through_as_user(fs):
    sw = fs.switch_path(1)
    fs.chmod(f"{sw}/flows", 0o755)
    with pytest.raises(PermissionDenied):
        fs.as_user("mallory").mkdir(f"{sw}/flows/evil")


def test_watch_sees_removed_only_on_rm(fs):
    sw = fs.switch_path(1)
    fs.add_flow(sw, "f", {"match.tp_dst": "1"})
    w = fs.watch(sw, recursive=True)
    fs.rm_semantic(sw)
    evs = w.drain()
    assert evs and all(e.kind is EventKind.REMOVED for e in evs)
    assert evs[-1].path == sw


def test_missing_flow_commit(fs):
    with pytest.raises(NotFound):
        fs.commit_flow(f"{fs.switch_path(1)}/flows/ghost")


def test_snapshot_restore_rebuilds_images(fs):
    sw = fs.switch_path(1)
    fs.add_flow(sw, "f", {"match.tp_dst": "22"})
    snap = fs.snapshot()
    other = NetFS()
    other.restore(snap)
    assert other.committed_flow(f"{sw}/flows/f").match == {"tp_dst": 22}


@given(st.lists(st.tuples(st.sampled_from(["match.tp_dst", "match.tp_src", "priority"]),
                          st.integers(0, 0xFFFF)), max_size=12))
def test_committed_image_equals_last_commit(writes):
    fs = NetFS()
    fs.mkdir(f"/net/switches/{SW}")
    flow = f"/net/switches/{SW}/flows/f"
    fs.mkdir(flow)
    staged = {}
    expected = None
    for n, (name, value) in enumerate(writes):
        fs.write_flow_field(flow, name, str(value))
        staged[name] = value
        if n % 3 == 2:
            fs.commit_flow(flow)
            expected = dict(staged)
    got = fs.committed_flow(flow)
    if expected is None:
        assert got is None
    else:
        assert {f"match.{k}": v for k, v in got.match.items()} == \
            {k: v for k, v in expected.items() if k.startswith("match.")}
