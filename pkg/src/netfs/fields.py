"""Payload grammars for flow, port and flowspace files.

A flow directory holds one file per field. Match values parse into plain
Python values:

============  =========================================
field         parsed value
============  =========================================
in_port       int 0..0xffff
dl_src/dst    6-byte ``bytes``
dl_vlan       int 0..4095, or 0xffff ("none": untagged)
dl_vlan_pcp   int 0..7
dl_type       int 0..0xffff (``0x0800`` or ``2048``)
nw_tos        int 0..255
nw_proto      int 0..255
nw_src/dst    ``(address, prefix_len)``, host bits cleared
tp_src/dst    int 0..0xffff
============  =========================================

All payloads tolerate a single trailing newline.
"""

from __future__ import annotations

import ipaddress
import re
from dataclasses import dataclass, field

from .errors import ParseError, RangeError, UnknownField, ValidationFailed

MATCH_FIELDS = (
    "in_port", "dl_src", "dl_dst", "dl_vlan", "dl_vlan_pcp", "dl_type",
    "nw_tos", "nw_proto", "nw_src", "nw_dst", "tp_src", "tp_dst",
)
CIDR_FIELDS = ("nw_src", "nw_dst")
MAC_FIELDS = ("dl_src", "dl_dst")

_INT_RANGES = {
    "in_port": 0xFFFF,
    "dl_vlan_pcp": 7,
    "dl_type": 0xFFFF,
    "nw_tos": 0xFF,
    "nw_proto": 0xFF,
    "tp_src": 0xFFFF,
    "tp_dst": 0xFFFF,
}

VLAN_NONE = 0xFFFF
DEFAULT_PRIORITY = 0x8000

ETH_IP = 0x0800
ETH_ARP = 0x0806
IP_ICMP = 1
IP_TCP = 6
IP_UDP = 17

OUTPUT_SYMBOLS = ("controller", "flood", "all", "in_port")
ACTION_TYPES = ("output", "set_dl_src", "set_dl_dst")
_ACTION_RE = re.compile(r"^action\.(\d+)\.([a-z_]+)$")

# files a flow directory may contain besides match.* / action.N.*
FLOW_SCALARS = ("priority", "idle_timeout", "hard_timeout")
FLOW_DRIVER_FILES = ("version", "stats.packet_count", "stats.byte_count", "error")


def strip_payload(text) -> str:
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError:
            raise ParseError("payload is not UTF-8") from None
    text = text.removesuffix("\n")
    return text


def parse_int(text, limit: int, name: str = "value") -> int:
    text = strip_payload(text).strip()
    try:
        value = int(text, 0) if text.lower().startswith("0x") else int(text, 10)
    except ValueError:
        raise ParseError(f"{name}: not an integer: {text!r}", field=name) from None
    if not 0 <= value <= limit:
        raise RangeError(f"{name}: {value} outside 0..{limit}", field=name)
    return value


def parse_mac(text, name: str = "mac") -> bytes:
    text = strip_payload(text).strip()
    parts = text.split(":")
    if len(parts) != 6 or not all(re.fullmatch(r"[0-9a-fA-F]{1,2}", p) for p in parts):
        raise ParseError(f"{name}: not a colon-hex MAC: {text!r}", field=name)
    return bytes(int(p, 16) for p in parts)


def format_mac(mac: bytes) -> str:
    return ":".join(f"{b:02x}" for b in mac)


def parse_cidr(text) -> tuple[int, int]:
    """``"10.0.0.0/24"`` -> ``(0x0A000000, 24)``; a bare address is a /32.

    Host bits below the prefix are cleared.
    """
    text = strip_payload(text).strip()
    if text.count("/") > 1 or not text:
        raise ParseError(f"not CIDR notation: {text!r}")
    try:
        net = ipaddress.IPv4Network(text, strict=False)
    except ValueError as exc:
        raise ParseError(f"not CIDR notation: {text!r} ({exc})") from None
    if "/" in text and not text.split("/")[1].isdigit():
        raise ParseError(f"prefix length must be decimal: {text!r}")
    return int(net.network_address), net.prefixlen


def format_cidr(addr: int, prefix_len: int) -> str:
    return f"{ipaddress.IPv4Address(addr)}/{prefix_len}"


def cidr_contains(outer: tuple[int, int], inner: tuple[int, int]) -> bool:
    """True when every address of ``inner`` lies inside ``outer``."""
    oa, ol = outer
    ia, il = inner
    if il < ol:
        return False
    mask = prefix_mask(ol)
    return (oa & mask) == (ia & mask)


def prefix_mask(prefix_len: int) -> int:
    return (0xFFFFFFFF << (32 - prefix_len)) & 0xFFFFFFFF if prefix_len else 0


def parse_match_value(name: str, text):
    """Parse the payload of ``match.<name>``."""
    if name in MAC_FIELDS:
        return parse_mac(text, name)
    if name in CIDR_FIELDS:
        try:
            return parse_cidr(text)
        except ParseError as exc:
            raise ParseError(f"match.{name}: {exc}", field=f"match.{name}") from None
    if name == "dl_vlan":
        t = strip_payload(text).strip()
        if t == "none":
            return VLAN_NONE
        value = parse_int(t, 0xFFFF, f"match.{name}")
        if value > 4095 and value != VLAN_NONE:
            raise RangeError(f"match.dl_vlan: {value} outside 0..4095", field="match.dl_vlan")
        return value
    if name in _INT_RANGES:
        try:
            return parse_int(text, _INT_RANGES[name], f"match.{name}")
        except ParseError as exc:
            exc.field = f"match.{name}"
            raise
    raise UnknownField(f"unknown match field: {name}", field=f"match.{name}")


def format_match_value(name: str, value) -> str:
    if name in MAC_FIELDS:
        return format_mac(value)
    if name in CIDR_FIELDS:
        return format_cidr(*value)
    if name == "dl_type":
        return f"0x{value:04x}"
    return str(value)


def parse_output(text) -> int | str:
    t = strip_payload(text).strip().lower()
    if t in OUTPUT_SYMBOLS:
        return t
    return parse_int(t, 0xFF00, "output")


def parse_action(kind: str, text):
    if kind == "output":
        return parse_output(text)
    if kind in ("set_dl_src", "set_dl_dst"):
        return parse_mac(text, kind)
    raise UnknownField(f"unknown action type: {kind}")


def format_action(kind: str, value) -> str:
    if kind in ("set_dl_src", "set_dl_dst"):
        return format_mac(value)
    return str(value)


@dataclass
class FlowSpec:
    """One flow entry as the schema sees it. ``match`` omits wildcards."""

    match: dict = field(default_factory=dict)
    priority: int = DEFAULT_PRIORITY
    idle_timeout: int = 0
    hard_timeout: int = 0
    actions: list = field(default_factory=list)  # [(kind, value), ...] in N order
    version: int = 0

    def key(self):
        return (tuple(sorted(self.match.items())), self.priority)

    def to_files(self) -> dict[str, str]:
        """Field files (without version) that reproduce this spec."""
        files = {f"match.{k}": format_match_value(k, v) for k, v in self.match.items()}
        if self.priority != DEFAULT_PRIORITY:
            files["priority"] = str(self.priority)
        if self.idle_timeout:
            files["idle_timeout"] = str(self.idle_timeout)
        if self.hard_timeout:
            files["hard_timeout"] = str(self.hard_timeout)
        for n, (kind, value) in enumerate(self.actions):
            files[f"action.{n}.{kind}"] = format_action(kind, value)
        return files

    def to_dict(self) -> dict:
        return {"files": self.to_files(), "version": self.version}

    @classmethod
    def from_dict(cls, d: dict) -> FlowSpec:
        spec = parse_flow_files(d["files"])
        spec.version = d["version"]
        return spec


def classify_flow_file(name: str) -> str:
    """Return the role of a file inside a flow directory or raise UnknownField."""
    if name.startswith("match."):
        if name[6:] not in MATCH_FIELDS:
            raise UnknownField(f"unknown match field: {name}", field=name)
        return "match"
    if name.startswith("action."):
        m = _ACTION_RE.match(name)
        if not m or m.group(2) not in ACTION_TYPES:
            raise UnknownField(f"unknown action file: {name}", field=name)
        return "action"
    if name in FLOW_SCALARS:
        return "scalar"
    if name in FLOW_DRIVER_FILES:
        return "meta"
    raise UnknownField(f"unknown flow file: {name}", field=name)


def parse_flow_field(name: str, text):
    """Validate one flow file payload; returns the parsed value."""
    role = classify_flow_file(name)
    try:
        if role == "match":
            return parse_match_value(name[6:], text)
        if role == "action":
            m = _ACTION_RE.match(name)
            return parse_action(m.group(2), text)
        if role == "scalar":
            return parse_int(text, 0xFFFF, name)
        if name == "version" or name.startswith("stats."):
            return parse_int(text, 2 ** 64 - 1, name)
        return strip_payload(text)
    except ParseError as exc:
        exc.field = name
        if name not in str(exc):
            exc.args = (f"{name}: {exc}",)
        raise


def parse_flow_files(files: dict) -> FlowSpec:
    """Build a FlowSpec from {file name: payload}, checking it as a whole.

    Raises ValidationFailed naming the offending field.
    """
    spec = FlowSpec()
    actions = {}
    for name, text in files.items():
        try:
            value = parse_flow_field(name, text)
        except (ParseError, UnknownField) as exc:
            raise ValidationFailed(str(exc), field=exc.field or name) from None
        role = classify_flow_file(name)
        if role == "match":
            spec.match[name[6:]] = value
        elif role == "action":
            m = _ACTION_RE.match(name)
            n = int(m.group(1))
            if n in actions:
                raise ValidationFailed(f"two actions numbered {n}", field=name)
            actions[n] = (m.group(2), value)
        elif role == "scalar":
            setattr(spec, name, value)
    spec.actions = [actions[n] for n in sorted(actions)]
    check_prerequisites(spec.match)
    return spec


def check_prerequisites(match: dict) -> None:
    """Reject matches whose L3/L4 fields contradict their own L2/L3 fields.

    A prerequisite that is wildcarded is not a contradiction.
    """
    dl_type = match.get("dl_type")
    nw_proto = match.get("nw_proto")
    if dl_type is not None:
        for f in ("nw_src", "nw_dst", "nw_proto"):
            if f in match and dl_type not in (ETH_IP, ETH_ARP):
                raise ValidationFailed(f"match.{f} requires dl_type 0x0800 or 0x0806",
                                       field=f"match.{f}")
        if "nw_tos" in match and dl_type != ETH_IP:
            raise ValidationFailed("match.nw_tos requires dl_type 0x0800", field="match.nw_tos")
    for f in ("tp_src", "tp_dst"):
        if f not in match:
            continue
        if dl_type is not None and dl_type != ETH_IP:
            raise ValidationFailed(f"match.{f} requires dl_type 0x0800", field=f"match.{f}")
        if nw_proto is not None and nw_proto not in (IP_ICMP, IP_TCP, IP_UDP):
            raise ValidationFailed(f"match.{f} requires nw_proto 1, 6 or 17", field=f"match.{f}")


# -- predicates over packet headers -------------------------------------------

def header_field(header, name):
    """Value of ``name`` in a parsed header, with absent layers read as 0."""
    value = getattr(header, name)
    if value is None:
        if name == "dl_vlan":
            return VLAN_NONE
        return 0
    return value


def match_predicate(match: dict, header, in_port: int | None = None) -> bool:
    """Schema-level predicate: every present field must hold, absent ones are free.

    CIDR fields use address membership; everything else is equality. When
    ``in_port`` is None the in_port field is not checked.
    """
    for name, want in match.items():
        if name == "in_port":
            if in_port is not None and in_port != want:
                return False
            continue
        got = header_field(header, name)
        if name in CIDR_FIELDS:
            net = ipaddress.IPv4Network((want[0], want[1]))
            if ipaddress.IPv4Address(got) not in net:
                return False
        elif got != want:
            return False
    return True


_EMPTY = object()


def intersect_field(name, a, b):
    """Field-wise intersection; None means wildcard, _EMPTY means disjoint."""
    if a is None:
        return b
    if b is None:
        return a
    if name in CIDR_FIELDS:
        if cidr_contains(a, b):
            return b
        if cidr_contains(b, a):
            return a
        return _EMPTY
    return a if a == b else _EMPTY


def intersect_matches(a: dict, b: dict) -> dict | None:
    """Intersection of two match maps, or None when it is empty."""
    out = {}
    for name in MATCH_FIELDS:
        v = intersect_field(name, a.get(name), b.get(name))
        if v is _EMPTY:
            return None
        if v is not None:
            out[name] = v
    try:
        check_prerequisites(out)
    except ValidationFailed:
        return None
    return out


def match_contains(outer: dict, inner: dict) -> bool:
    """True when every packet matching ``inner`` also matches ``outer``."""
    for name, want in outer.items():
        if name not in inner:
            return False
        got = inner[name]
        if name in CIDR_FIELDS:
            if not cidr_contains(want, got):
                return False
        elif got != want:
            return False
    return True
