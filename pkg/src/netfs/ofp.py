"""OpenFlow 1.0 wire codec.

Messages are plain dataclasses; :func:`serialize` and :func:`parse` convert
them to and from network byte order. Serialization is canonical: match
bytes covered by a wildcard are zeroed, and :func:`parse` zeroes them too,
so ``parse(serialize(m)) == m`` for every message whose match is canonical
(which :class:`Match` always is, since wildcarded fields are stored as None).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from .fields import CIDR_FIELDS, MATCH_FIELDS, prefix_mask

OFP_VERSION = 0x01
OFP_HEADER = struct.Struct("!BBHI")
OFP_MAX_LEN = 0xFFFF

# message types
OFPT_HELLO = 0
OFPT_ERROR = 1
OFPT_ECHO_REQUEST = 2
OFPT_ECHO_REPLY = 3
OFPT_VENDOR = 4
OFPT_FEATURES_REQUEST = 5
OFPT_FEATURES_REPLY = 6
OFPT_PACKET_IN = 10
OFPT_PORT_STATUS = 12
OFPT_PACKET_OUT = 13
OFPT_FLOW_MOD = 14
OFPT_PORT_MOD = 15

# special ports
OFPP_MAX = 0xFF00
OFPP_IN_PORT = 0xFFF8
OFPP_TABLE = 0xFFF9
OFPP_NORMAL = 0xFFFA
OFPP_FLOOD = 0xFFFB
OFPP_ALL = 0xFFFC
OFPP_CONTROLLER = 0xFFFD
OFPP_LOCAL = 0xFFFE
OFPP_NONE = 0xFFFF

NO_BUFFER = 0xFFFFFFFF

# flow_mod commands
OFPFC_ADD = 0
OFPFC_MODIFY = 1
OFPFC_MODIFY_STRICT = 2
OFPFC_DELETE = 3
OFPFC_DELETE_STRICT = 4
COMMAND_NAMES = {0: "add", 1: "modify", 2: "modify_strict", 3: "delete", 4: "delete_strict"}

# packet_in reasons
OFPR_NO_MATCH = 0
OFPR_ACTION = 1

# port config / state bits
OFPPC_PORT_DOWN = 1 << 0
OFPPC_NO_FLOOD = 1 << 4
OFPPS_LINK_DOWN = 1 << 0

# port_status reasons
OFPPR_ADD = 0
OFPPR_DELETE = 1
OFPPR_MODIFY = 2

# action types
OFPAT_OUTPUT = 0
OFPAT_SET_DL_SRC = 4
OFPAT_SET_DL_DST = 5

# wildcard bits
OFPFW_IN_PORT = 1 << 0
OFPFW_DL_VLAN = 1 << 1
OFPFW_DL_SRC = 1 << 2
OFPFW_DL_DST = 1 << 3
OFPFW_DL_TYPE = 1 << 4
OFPFW_NW_PROTO = 1 << 5
OFPFW_TP_SRC = 1 << 6
OFPFW_TP_DST = 1 << 7
OFPFW_NW_SRC_SHIFT = 8
OFPFW_NW_DST_SHIFT = 14
OFPFW_NW_SRC_MASK = 0x3F << OFPFW_NW_SRC_SHIFT
OFPFW_NW_DST_MASK = 0x3F << OFPFW_NW_DST_SHIFT
OFPFW_DL_VLAN_PCP = 1 << 20
OFPFW_NW_TOS = 1 << 21
OFPFW_ALL = (1 << 22) - 1

WILDCARD_BITS = {
    "in_port": OFPFW_IN_PORT,
    "dl_vlan": OFPFW_DL_VLAN,
    "dl_src": OFPFW_DL_SRC,
    "dl_dst": OFPFW_DL_DST,
    "dl_type": OFPFW_DL_TYPE,
    "nw_proto": OFPFW_NW_PROTO,
    "tp_src": OFPFW_TP_SRC,
    "tp_dst": OFPFW_TP_DST,
    "dl_vlan_pcp": OFPFW_DL_VLAN_PCP,
    "nw_tos": OFPFW_NW_TOS,
}

MATCH_STRUCT = struct.Struct("!IH6s6sHBxHBB2xIIHH")
PHY_PORT_STRUCT = struct.Struct("!H6s16sIIIIII")
ACTION_HEADER = struct.Struct("!HH")

HEADER_LEN = 8
MATCH_LEN = 40
PHY_PORT_LEN = 48
FEATURES_REPLY_LEN = 32
FLOW_MOD_LEN = 72
PACKET_IN_LEN = 18
PACKET_OUT_LEN = 16
PORT_MOD_LEN = 32
PORT_STATUS_LEN = 64


class CodecError(Exception):
    pass


class Truncated(CodecError):
    """Not enough bytes yet for a whole message; wait for more."""


class BadVersion(CodecError):
    pass


class MalformedBody(CodecError):
    pass


class Oversize(CodecError):
    pass


# -- match ----------------------------------------------------------------------

@dataclass(frozen=True)
class Match:
    """An ofp_match. Each field is None when wildcarded.

    ``nw_src``/``nw_dst`` are ``(address, prefix_len)`` with host bits
    cleared; a /0 is stored as None.
    """

    in_port: int | None = None
    dl_src: bytes | None = None
    dl_dst: bytes | None = None
    dl_vlan: int | None = None
    dl_vlan_pcp: int | None = None
    dl_type: int | None = None
    nw_tos: int | None = None
    nw_proto: int | None = None
    nw_src: tuple | None = None
    nw_dst: tuple | None = None
    tp_src: int | None = None
    tp_dst: int | None = None

    @property
    def wildcards(self) -> int:
        w = 0
        for name, bit in WILDCARD_BITS.items():
            if getattr(self, name) is None:
                w |= bit
        for name, shift in (("nw_src", OFPFW_NW_SRC_SHIFT), ("nw_dst", OFPFW_NW_DST_SHIFT)):
            v = getattr(self, name)
            w |= (0x3F if v is None else 32 - v[1]) << shift
        return w

    @property
    def is_exact(self) -> bool:
        return self.wildcards == 0

    def pack(self) -> bytes:
        def z(v, default=0):
            return default if v is None else v
        return MATCH_STRUCT.pack(
            self.wildcards, z(self.in_port), z(self.dl_src, b"\0" * 6), z(self.dl_dst, b"\0" * 6),
            z(self.dl_vlan), z(self.dl_vlan_pcp), z(self.dl_type), z(self.nw_tos),
            z(self.nw_proto), self.nw_src[0] if self.nw_src else 0,
            self.nw_dst[0] if self.nw_dst else 0, z(self.tp_src), z(self.tp_dst))

    @classmethod
    def unpack(cls, buf: bytes, offset: int = 0) -> Match:
        (w, in_port, dl_src, dl_dst, dl_vlan, pcp, dl_type, tos, proto,
         nw_src, nw_dst, tp_src, tp_dst) = MATCH_STRUCT.unpack_from(buf, offset)

        def keep(name, v):
            return None if w & WILDCARD_BITS[name] else v

        def cidr(addr, shift):
            n = (w >> shift) & 0x3F
            if n >= 32:
                return None
            plen = 32 - n
            return (addr & prefix_mask(plen), plen)

        return cls(
            in_port=keep("in_port", in_port), dl_src=keep("dl_src", dl_src),
            dl_dst=keep("dl_dst", dl_dst), dl_vlan=keep("dl_vlan", dl_vlan),
            dl_vlan_pcp=keep("dl_vlan_pcp", pcp), dl_type=keep("dl_type", dl_type),
            nw_tos=keep("nw_tos", tos), nw_proto=keep("nw_proto", proto),
            nw_src=cidr(nw_src, OFPFW_NW_SRC_SHIFT), nw_dst=cidr(nw_dst, OFPFW_NW_DST_SHIFT),
            tp_src=keep("tp_src", tp_src), tp_dst=keep("tp_dst", tp_dst))

    def matches(self, in_port: int, fields: dict) -> bool:
        """Wire-level semantics: wildcard bits plus masked comparison.

        ``fields`` maps every match field name (except in_port) to the
        packet's value for it, as integers/bytes.
        """
        w = self.wildcards
        if not w & OFPFW_IN_PORT and self.in_port != in_port:
            return False
        for name, bit in WILDCARD_BITS.items():
            if name == "in_port" or w & bit:
                continue
            if getattr(self, name) != fields[name]:
                return False
        for name, shift in (("nw_src", OFPFW_NW_SRC_SHIFT), ("nw_dst", OFPFW_NW_DST_SHIFT)):
            n = (w >> shift) & 0x3F
            if n >= 32:
                continue
            mask = (0xFFFFFFFF << n) & 0xFFFFFFFF
            if (getattr(self, name)[0] ^ fields[name]) & mask:
                return False
        return True

    def subsumes(self, other: Match) -> bool:
        """True when every packet matching ``other`` matches self."""
        for name in MATCH_FIELDS:
            mine = getattr(self, name)
            if mine is None:
                continue
            theirs = getattr(other, name)
            if theirs is None:
                return False
            if name in CIDR_FIELDS:
                if theirs[1] < mine[1] or (theirs[0] ^ mine[0]) & prefix_mask(mine[1]):
                    return False
            elif mine != theirs:
                return False
        return True


def match_from_schema(fields: dict) -> Match:
    """Turn parsed schema match fields into a wire match; absent means wildcard."""
    kw = {}
    for name, value in fields.items():
        if name in CIDR_FIELDS:
            addr, plen = value
            if plen == 0:
                continue
            kw[name] = (addr & prefix_mask(plen), plen)
        else:
            kw[name] = value
    return Match(**kw)


def match_to_schema(match: Match) -> dict:
    return {name: getattr(match, name) for name in MATCH_FIELDS if getattr(match, name) is not None}


# -- actions --------------------------------------------------------------------

@dataclass(frozen=True)
class ActionOutput:
    port: int
    max_len: int = 0xFFFF


@dataclass(frozen=True)
class ActionSetDlSrc:
    addr: bytes


@dataclass(frozen=True)
class ActionSetDlDst:
    addr: bytes


@dataclass(frozen=True)
class ActionUnknown:
    type: int
    body: bytes


def pack_actions(actions) -> bytes:
    out = []
    for a in actions:
        if isinstance(a, ActionOutput):
            out.append(struct.pack("!HHHH", OFPAT_OUTPUT, 8, a.port, a.max_len))
        elif isinstance(a, ActionSetDlSrc):
            out.append(struct.pack("!HH6s6x", OFPAT_SET_DL_SRC, 16, a.addr))
        elif isinstance(a, ActionSetDlDst):
            out.append(struct.pack("!HH6s6x", OFPAT_SET_DL_DST, 16, a.addr))
        elif isinstance(a, ActionUnknown):
            if (len(a.body) + 4) % 8:
                raise MalformedBody("unknown action body must pad to 8 bytes")
            out.append(ACTION_HEADER.pack(a.type, 4 + len(a.body)) + a.body)
        else:
            raise TypeError(f"not an action: {a!r}")
    return b"".join(out)


def unpack_actions(buf: bytes) -> list:
    actions = []
    off = 0
    while off < len(buf):
        if off + 4 > len(buf):
            raise MalformedBody("truncated action header")
        atype, alen = ACTION_HEADER.unpack_from(buf, off)
        if alen < 8 or alen % 8 or off + alen > len(buf):
            raise MalformedBody(f"bad action length {alen}")
        body = buf[off + 4:off + alen]
        if atype == OFPAT_OUTPUT and alen == 8:
            port, max_len = struct.unpack("!HH", body)
            actions.append(ActionOutput(port, max_len))
        elif atype == OFPAT_SET_DL_SRC and alen == 16:
            actions.append(ActionSetDlSrc(body[:6]))
        elif atype == OFPAT_SET_DL_DST and alen == 16:
            actions.append(ActionSetDlDst(body[:6]))
        else:
            actions.append(ActionUnknown(atype, bytes(body)))
        off += alen
    return actions


# -- messages -------------------------------------------------------------------

@dataclass
class PhyPort:
    port_no: int
    hw_addr: bytes = b"\0" * 6
    name: str = ""
    config: int = 0
    state: int = 0
    curr: int = 0
    advertised: int = 0
    supported: int = 0
    peer: int = 0

    def pack(self) -> bytes:
        return PHY_PORT_STRUCT.pack(self.port_no, self.hw_addr, self.name.encode()[:16],
                                    self.config, self.state, self.curr, self.advertised,
                                    self.supported, self.peer)

    @classmethod
    def unpack(cls, buf, offset=0):
        port_no, hw, name, *rest = PHY_PORT_STRUCT.unpack_from(buf, offset)
        return cls(port_no, hw, name.rstrip(b"\0").decode("ascii", "replace"), *rest)


@dataclass
class Hello:
    xid: int = 0
    data: bytes = b""


@dataclass
class EchoRequest:
    xid: int = 0
    data: bytes = b""


@dataclass
class EchoReply:
    xid: int = 0
    data: bytes = b""


@dataclass
class FeaturesRequest:
    xid: int = 0


@dataclass
class FeaturesReply:
    xid: int = 0
    datapath_id: int = 0
    n_buffers: int = 0
    n_tables: int = 1
    capabilities: int = 0
    actions: int = 0
    ports: list = field(default_factory=list)


@dataclass
class PacketIn:
    xid: int = 0
    buffer_id: int = NO_BUFFER
    total_len: int = 0
    in_port: int = 0
    reason: int = OFPR_NO_MATCH
    data: bytes = b""


@dataclass
class PacketOut:
    xid: int = 0
    buffer_id: int = NO_BUFFER
    in_port: int = OFPP_NONE
    actions: list = field(default_factory=list)
    data: bytes = b""


@dataclass
class FlowMod:
    xid: int = 0
    match: Match = field(default_factory=Match)
    cookie: int = 0
    command: int = OFPFC_ADD
    idle_timeout: int = 0
    hard_timeout: int = 0
    priority: int = 0x8000
    buffer_id: int = NO_BUFFER
    out_port: int = OFPP_NONE
    flags: int = 0
    actions: list = field(default_factory=list)


@dataclass
class PortMod:
    xid: int = 0
    port_no: int = 0
    hw_addr: bytes = b"\0" * 6
    config: int = 0
    mask: int = 0
    advertise: int = 0


@dataclass
class PortStatus:
    xid: int = 0
    reason: int = OFPPR_MODIFY
    port: PhyPort = field(default_factory=lambda: PhyPort(0))


@dataclass
class Unknown:
    """Any message type this codec does not model (error, vendor, stats...)."""

    msg_type: int
    xid: int = 0
    body: bytes = b""


_TYPE_OF = {
    Hello: OFPT_HELLO, EchoRequest: OFPT_ECHO_REQUEST, EchoReply: OFPT_ECHO_REPLY,
    FeaturesRequest: OFPT_FEATURES_REQUEST, FeaturesReply: OFPT_FEATURES_REPLY,
    PacketIn: OFPT_PACKET_IN, PacketOut: OFPT_PACKET_OUT, FlowMod: OFPT_FLOW_MOD,
    PortMod: OFPT_PORT_MOD, PortStatus: OFPT_PORT_STATUS,
}


def _body(msg) -> tuple[int, bytes]:
    if isinstance(msg, Unknown):
        return msg.msg_type, msg.body
    t = _TYPE_OF[type(msg)]
    if isinstance(msg, (Hello, EchoRequest, EchoReply)):
        return t, msg.data
    if isinstance(msg, FeaturesRequest):
        return t, b""
    if isinstance(msg, FeaturesReply):
        return t, struct.pack("!QIB3xII", msg.datapath_id, msg.n_buffers, msg.n_tables,
                              msg.capabilities, msg.actions) + b"".join(p.pack() for p in msg.ports)
    if isinstance(msg, PacketIn):
        return t, struct.pack("!IHHBx", msg.buffer_id, msg.total_len, msg.in_port,
                              msg.reason) + msg.data
    if isinstance(msg, PacketOut):
        acts = pack_actions(msg.actions)
        return t, struct.pack("!IHH", msg.buffer_id, msg.in_port, len(acts)) + acts + msg.data
    if isinstance(msg, FlowMod):
        return t, (msg.match.pack()
                   + struct.pack("!QHHHHIHH", msg.cookie, msg.command, msg.idle_timeout,
                                 msg.hard_timeout, msg.priority, msg.buffer_id, msg.out_port,
                                 msg.flags)
                   + pack_actions(msg.actions))
    if isinstance(msg, PortMod):
        return t, struct.pack("!H6sIII4x", msg.port_no, msg.hw_addr, msg.config, msg.mask,
                              msg.advertise)
    if isinstance(msg, PortStatus):
        return t, struct.pack("!B7x", msg.reason) + msg.port.pack()
    raise TypeError(f"cannot serialize {msg!r}")


def serialize(msg) -> bytes:
    msg_type, body = _body(msg)
    length = HEADER_LEN + len(body)
    if length > OFP_MAX_LEN:
        raise Oversize(f"message of {length} bytes exceeds 65535")
    return OFP_HEADER.pack(OFP_VERSION, msg_type, length, msg.xid) + body


def parse(buf: bytes, offset: int = 0):
    """Parse one message starting at ``offset``.

    Returns ``(message, consumed)``. Raises Truncated when ``buf`` does not
    yet hold the whole message.
    """
    avail = len(buf) - offset
    if avail < HEADER_LEN:
        raise Truncated(f"need 8 header bytes, have {avail}")
    version, msg_type, length, xid = OFP_HEADER.unpack_from(buf, offset)
    if version != OFP_VERSION:
        raise BadVersion(f"version 0x{version:02x} is not OpenFlow 1.0")
    if length < HEADER_LEN:
        raise MalformedBody(f"header length {length} below 8")
    if avail < length:
        raise Truncated(f"need {length} bytes, have {avail}")
    body = bytes(buf[offset + HEADER_LEN:offset + length])
    return _parse_body(msg_type, xid, body), length


def _need(body, n, what):
    if len(body) < n:
        raise MalformedBody(f"{what} body too short ({len(body)} < {n})")


def _parse_body(t, xid, body):
    if t == OFPT_HELLO:
        return Hello(xid, body)
    if t == OFPT_ECHO_REQUEST:
        return EchoRequest(xid, body)
    if t == OFPT_ECHO_REPLY:
        return EchoReply(xid, body)
    if t == OFPT_FEATURES_REQUEST:
        return FeaturesRequest(xid)
    if t == OFPT_FEATURES_REPLY:
        _need(body, FEATURES_REPLY_LEN - HEADER_LEN, "features_reply")
        dpid, n_buffers, n_tables, caps, acts = struct.unpack_from("!QIB3xII", body)
        rest = body[24:]
        if len(rest) % PHY_PORT_LEN:
            raise MalformedBody("port list is not a multiple of 48 bytes")
        ports = [PhyPort.unpack(rest, i) for i in range(0, len(rest), PHY_PORT_LEN)]
        return FeaturesReply(xid, dpid, n_buffers, n_tables, caps, acts, ports)
    if t == OFPT_PACKET_IN:
        _need(body, PACKET_IN_LEN - HEADER_LEN, "packet_in")
        buffer_id, total_len, in_port, reason = struct.unpack_from("!IHHBx", body)
        return PacketIn(xid, buffer_id, total_len, in_port, reason, body[10:])
    if t == OFPT_PACKET_OUT:
        _need(body, PACKET_OUT_LEN - HEADER_LEN, "packet_out")
        buffer_id, in_port, alen = struct.unpack_from("!IHH", body)
        if 8 + alen > len(body):
            raise MalformedBody("packet_out actions overrun the message")
        return PacketOut(xid, buffer_id, in_port, unpack_actions(body[8:8 + alen]),
                         body[8 + alen:])
    if t == OFPT_FLOW_MOD:
        _need(body, FLOW_MOD_LEN - HEADER_LEN, "flow_mod")
        match = Match.unpack(body, 0)
        (cookie, command, idle, hard, prio, buffer_id, out_port,
         flags) = struct.unpack_from("!QHHHHIHH", body, MATCH_LEN)
        return FlowMod(xid, match, cookie, command, idle, hard, prio, buffer_id, out_port,
                       flags, unpack_actions(body[FLOW_MOD_LEN - HEADER_LEN:]))
    if t == OFPT_PORT_MOD:
        if len(body) != PORT_MOD_LEN - HEADER_LEN:
            raise MalformedBody("port_mod body must be 24 bytes")
        port_no, hw, config, mask, adv = struct.unpack("!H6sIII4x", body)
        return PortMod(xid, port_no, hw, config, mask, adv)
    if t == OFPT_PORT_STATUS:
        if len(body) != PORT_STATUS_LEN - HEADER_LEN:
            raise MalformedBody("port_status body must be 56 bytes")
        return PortStatus(xid, body[0], PhyPort.unpack(body, 8))
    return Unknown(t, xid, body)


class MessageReader:
    """Reassembles messages from an arbitrarily chunked byte stream."""

    def __init__(self):
        self._buf = bytearray()
        self.malformed = 0

    def feed(self, data: bytes) -> list:
        """Return every complete message now available.

        A message with a well-formed header but a broken body is skipped
        (counted in ``malformed``); BadVersion propagates since the stream
        cannot be trusted after it.
        """
        self._buf += data
        out = []
        off = 0
        while True:
            try:
                msg, n = parse(self._buf, off)
            except Truncated:
                break
            except MalformedBody:
                length = OFP_HEADER.unpack_from(self._buf, off)[2]
                if length < HEADER_LEN:
                    raise
                self.malformed += 1
                off += length
                continue
            out.append(msg)
            off += n
        del self._buf[:off]
        return out

    @property
    def pending(self) -> int:
        return len(self._buf)


def port_number(symbolic) -> int:
    """Map a schema output value (int or symbol) onto an OpenFlow port."""
    if isinstance(symbolic, int):
        return symbolic
    return {"controller": OFPP_CONTROLLER, "flood": OFPP_FLOOD, "all": OFPP_ALL,
            "in_port": OFPP_IN_PORT}[symbolic]


def port_symbol(port: int):
    return {OFPP_CONTROLLER: "controller", OFPP_FLOOD: "flood", OFPP_ALL: "all",
            OFPP_IN_PORT: "in_port"}.get(port, port)


def actions_from_schema(actions) -> list:
    out = []
    for kind, value in actions:
        if kind == "output":
            out.append(ActionOutput(port_number(value)))
        elif kind == "set_dl_src":
            out.append(ActionSetDlSrc(value))
        elif kind == "set_dl_dst":
            out.append(ActionSetDlDst(value))
    return out


def actions_to_schema(actions) -> list:
    out = []
    for a in actions:
        if isinstance(a, ActionOutput):
            out.append(("output", port_symbol(a.port)))
        elif isinstance(a, ActionSetDlSrc):
            out.append(("set_dl_src", a.addr))
        elif isinstance(a, ActionSetDlDst):
            out.append(("set_dl_dst", a.addr))
    return out
