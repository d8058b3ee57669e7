import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from netfs import fields as F
from netfs.errors import ValidationFailed
from netfs.packet import PacketHeader

u16 = st.integers(0, 0xFFFF)
macs = st.binary(min_size=6, max_size=6)


@st.composite
def cidrs(draw, min_len=0):
    plen = draw(st.integers(min_len, 32))
    return (draw(st.integers(0, 2 ** 32 - 1)) & F.prefix_mask(plen), plen)


FIELD_VALUES = {
    "in_port": st.integers(1, 0xFF00),
    "dl_src": macs,
    "dl_dst": macs,
    "dl_vlan": st.integers(0, 4095) | st.just(F.VLAN_NONE),
    "dl_vlan_pcp": st.integers(0, 7),
    "dl_type": st.sampled_from([F.ETH_IP]),
    "nw_tos": st.integers(0, 255),
    "nw_proto": st.sampled_from([F.IP_ICMP, F.IP_TCP, F.IP_UDP]),
    "nw_src": cidrs(),
    "nw_dst": cidrs(),
    "tp_src": u16,
    "tp_dst": u16,
}


@st.composite
def schema_matches(draw):
    names = draw(st.sets(st.sampled_from(F.MATCH_FIELDS)))
    return {n: draw(FIELD_VALUES[n]) for n in names}


@pytest.mark.parametrize("text,expected", [
    ("10.0.0.0/24", (0x0A000000, 24)),
    ("10.0.0.7/24", (0x0A000000, 24)),
    ("10.0.0.7", (0x0A000007, 32)),
    ("0.0.0.0/0", (0, 0)),
    ("192.168.1.1/32\n", (0xC0A80101, 32)),
])
def test_parse_cidr(text, expected):
    assert F.parse_cidr(text) == expected


@pytest.mark.parametrize("text", ["", "10.0.0.0/33", "10.0.0/8/8", "300.0.0.1", "1.2.3.4/+8"])
def test_parse_cidr_rejects(text):
    with pytest.raises(F.ParseError):
        F.parse_cidr(text)


@pytest.mark.parametrize("name,text,value", [
    ("dl_src", "00:11:22:aa:bb:cc", bytes.fromhex("001122aabbcc")),
    ("dl_type", "0x0800", 0x800),
    ("dl_type", "2048", 0x800),
    ("dl_vlan", "none", F.VLAN_NONE),
    ("tp_dst", "22\n", 22),
])
def test_parse_match_value(name, text, value):
    assert F.parse_match_value(name, text) == value


@pytest.mark.parametrize("name,text", [
    ("dl_vlan_pcp", "8"), ("dl_vlan", "4096"), ("tp_dst", "65536"), ("dl_src", "00:11"),
    ("nw_tos", "abc"), ("tp_src", "-1"),
])
def test_parse_match_value_rejects(name, text):
    with pytest.raises(F.ParseError):
        F.parse_match_value(name, text)


@given(schema_matches())
def test_format_parse_round_trip(match):
    for name, value in match.items():
        assert F.parse_match_value(name, F.format_match_value(name, value)) == value


def test_parse_flow_files_complete():
    spec = F.parse_flow_files({
        "match.dl_type": "0x0800", "match.nw_src": "10.0.1.0/24", "priority": "100",
        "action.1.output": "flood", "action.0.set_dl_dst": "02:00:00:00:00:01",
        "version": "3", "stats.packet_count": "9",
    })
    assert spec.match == {"dl_type": 0x800, "nw_src": (0x0A000100, 24)}
    assert spec.priority == 100
    assert spec.actions == [("set_dl_dst", bytes.fromhex("020000000001")), ("output", "flood")]


@pytest.mark.parametrize("files,field", [
    ({"match.bogus": "1"}, "match.bogus"),
    ({"match.tp_dst": "99999"}, "match.tp_dst"),
    ({"action.0.output": "nowhere"}, "action.0.output"),
    ({"action.x.output": "1"}, "action.x.output"),
    ({"priority": "70000"}, "priority"),
    ({"match.dl_type": "0x0806", "match.tp_dst": "22"}, "match.tp_dst"),
    ({"match.nw_proto": "47", "match.tp_dst": "22"}, "match.tp_dst"),
    ({"match.dl_type": "0x86dd", "match.nw_src": "1.2.3.4"}, "match.nw_src"),
])
def test_parse_flow_files_names_field(files, field):
    with pytest.raises(ValidationFailed) as info:
        F.parse_flow_files(files)
    assert info.value.field == field


def test_icmp_type_code_allowed():
    F.check_prerequisites({"dl_type": F.ETH_IP, "nw_proto": F.IP_ICMP, "tp_src": 8})


@given(schema_matches())
def test_spec_files_round_trip(match):
    spec = F.FlowSpec(match=match, priority=7, actions=[("output", 3), ("output", "controller")])
    back = F.parse_flow_files(spec.to_files())
    assert back.match == match
    assert back.actions == spec.actions
    assert back.priority == 7


@given(cidrs(), cidrs())
def test_cidr_contains_is_subset(outer, inner):
    if F.cidr_contains(outer, inner):
        assert inner[1] >= outer[1]
        assert (inner[0] & F.prefix_mask(outer[1])) == outer[0]


@given(schema_matches(), schema_matches())
def test_intersection_is_contained_in_both(a, b):
    both = F.intersect_matches(a, b)
    assume(both is not None)
    assert F.match_contains(a, both)
    assert F.match_contains(b, both)
    assert F.intersect_matches(b, a) == both


@given(schema_matches(), schema_matches(), schema_matches())
def test_intersection_associative(a, b, c):
    ab = F.intersect_matches(a, b)
    bc = F.intersect_matches(b, c)
    left = None if ab is None else F.intersect_matches(ab, c)
    right = None if bc is None else F.intersect_matches(a, bc)
    assert left == right


@st.composite
def headers(draw):
    return PacketHeader(
        dl_src=draw(macs), dl_dst=draw(macs), dl_vlan=None, dl_vlan_pcp=None,
        dl_type=F.ETH_IP, nw_tos=draw(st.integers(0, 255)),
        nw_proto=draw(st.sampled_from([1, 6, 17])),
        nw_src=draw(st.integers(0, 2 ** 32 - 1)), nw_dst=draw(st.integers(0, 2 ** 32 - 1)),
        tp_src=draw(u16), tp_dst=draw(u16))


@given(schema_matches(), schema_matches(), headers(), st.integers(1, 0xFF00))
def test_contained_match_implies_outer_predicate(outer, inner, h, port):
    if F.match_contains(outer, inner) and F.match_predicate(inner, h, port):
        assert F.match_predicate(outer, h, port)
