"""Ethernet frame construction and header extraction.

Only what the simulator and the system applications need: Ethernet with an
optional 802.1Q tag, IPv4 carrying TCP/UDP/ICMP, ARP, and the LLDP probes
the topology daemon sends. Header extraction never fails on short frames;
layers that are cut off are simply reported as absent.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

ETH_TYPE_IP = 0x0800
ETH_TYPE_ARP = 0x0806
ETH_TYPE_VLAN = 0x8100
ETH_TYPE_LLDP = 0x88CC

IP_PROTO_ICMP = 1
IP_PROTO_TCP = 6
IP_PROTO_UDP = 17

BROADCAST = b"\xff" * 6
LLDP_MULTICAST = bytes.fromhex("0180c200000e")


@dataclass
class PacketHeader:
    dl_src: bytes
    dl_dst: bytes
    dl_type: int
    dl_vlan: int | None = None
    dl_vlan_pcp: int | None = None
    nw_src: int | None = None
    nw_dst: int | None = None
    nw_proto: int | None = None
    nw_tos: int | None = None
    tp_src: int | None = None
    tp_dst: int | None = None

    @property
    def is_ip(self):
        return self.dl_type == ETH_TYPE_IP and self.nw_proto is not None


def mac(text: str) -> bytes:
    return bytes(int(p, 16) for p in text.split(":"))


def ip(text: str) -> int:
    a, b, c, d = (int(x) for x in text.split("."))
    return (a << 24) | (b << 16) | (c << 8) | d


def ethernet(dst: bytes, src: bytes, eth_type: int, payload: bytes = b"",
             vlan: int | None = None, pcp: int = 0) -> bytes:
    if vlan is not None:
        tag = struct.pack("!HH", ETH_TYPE_VLAN, ((pcp & 7) << 13) | (vlan & 0x0FFF))
        return dst + src + tag + struct.pack("!H", eth_type) + payload
    return dst + src + struct.pack("!H", eth_type) + payload


def ipv4(src: int, dst: int, proto: int, payload: bytes = b"", tos: int = 0,
         ttl: int = 64) -> bytes:
    total = 20 + len(payload)
    hdr = struct.pack("!BBHHHBBHII", 0x45, tos, total, 0, 0, ttl, proto, 0, src, dst)
    csum = _checksum(hdr)
    return hdr[:10] + struct.pack("!H", csum) + hdr[12:] + payload


def _checksum(data: bytes) -> int:
    if len(data) % 2:
        data += b"\0"
    s = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while s >> 16:
        s = (s & 0xFFFF) + (s >> 16)
    return ~s & 0xFFFF


def tcp(sport: int, dport: int, payload: bytes = b"") -> bytes:
    return struct.pack("!HHIIBBHHH", sport, dport, 0, 0, 5 << 4, 0x02, 8192, 0, 0) + payload


def udp(sport: int, dport: int, payload: bytes = b"") -> bytes:
    return struct.pack("!HHHH", sport, dport, 8 + len(payload), 0) + payload


def icmp(icmp_type: int = 8, code: int = 0, payload: bytes = b"") -> bytes:
    return struct.pack("!BBHI", icmp_type, code, 0, 0) + payload


def arp(op: int, sha: bytes, spa: int, tha: bytes, tpa: int) -> bytes:
    return struct.pack("!HHBBH6sI6sI", 1, ETH_TYPE_IP, 6, 4, op, sha, spa, tha, tpa)


def tcp_frame(src_mac, dst_mac, src_ip, dst_ip, sport, dport, payload=b"", tos=0,
              vlan=None, pcp=0) -> bytes:
    """Convenience builder used heavily by tests and examples."""
    return ethernet(_m(dst_mac), _m(src_mac), ETH_TYPE_IP,
                    ipv4(_i(src_ip), _i(dst_ip), IP_PROTO_TCP, tcp(sport, dport, payload), tos),
                    vlan, pcp)


def udp_frame(src_mac, dst_mac, src_ip, dst_ip, sport, dport, payload=b"") -> bytes:
    return ethernet(_m(dst_mac), _m(src_mac), ETH_TYPE_IP,
                    ipv4(_i(src_ip), _i(dst_ip), IP_PROTO_UDP, udp(sport, dport, payload)))


def _m(v):
    return mac(v) if isinstance(v, str) else v


def _i(v):
    return ip(v) if isinstance(v, str) else v


def parse_header(frame: bytes) -> PacketHeader | None:
    """Extract the OpenFlow 1.0 twelve-tuple fields (minus in_port).

    Returns None when the frame is too short to hold an Ethernet header.
    ARP puts sender/target protocol addresses in nw_src/nw_dst and the low
    byte of the opcode in nw_proto; ICMP puts type/code in tp_src/tp_dst.
    """
    if len(frame) < 14:
        return None
    dst, src = frame[0:6], frame[6:12]
    (eth_type,) = struct.unpack_from("!H", frame, 12)
    off = 14
    h = PacketHeader(dl_src=bytes(src), dl_dst=bytes(dst), dl_type=eth_type)
    if eth_type == ETH_TYPE_VLAN:
        if len(frame) < 18:
            return h
        tci, eth_type = struct.unpack_from("!HH", frame, 14)
        h.dl_vlan = tci & 0x0FFF
        h.dl_vlan_pcp = tci >> 13
        h.dl_type = eth_type
        off = 18
    if eth_type == ETH_TYPE_IP and len(frame) >= off + 20:
        vihl, tos = frame[off], frame[off + 1]
        ihl = (vihl & 0x0F) * 4
        proto = frame[off + 9]
        h.nw_tos = tos & 0xFC
        h.nw_proto = proto
        h.nw_src, h.nw_dst = struct.unpack_from("!II", frame, off + 12)
        l4 = off + ihl
        frag = struct.unpack_from("!H", frame, off + 6)[0] & 0x1FFF
        if frag == 0:
            if proto in (IP_PROTO_TCP, IP_PROTO_UDP) and len(frame) >= l4 + 4:
                h.tp_src, h.tp_dst = struct.unpack_from("!HH", frame, l4)
            elif proto == IP_PROTO_ICMP and len(frame) >= l4 + 2:
                h.tp_src, h.tp_dst = frame[l4], frame[l4 + 1]
    elif eth_type == ETH_TYPE_ARP and len(frame) >= off + 28:
        op = struct.unpack_from("!H", frame, off + 6)[0]
        h.nw_proto = op & 0xFF
        h.nw_src = struct.unpack_from("!I", frame, off + 14)[0]
        h.nw_dst = struct.unpack_from("!I", frame, off + 24)[0]
    return h


def set_dl_addr(frame: bytes, which: str, addr: bytes) -> bytes:
    if which == "dst":
        return addr + frame[6:]
    return frame[:6] + addr + frame[12:]


# -- LLDP probes --------------------------------------------------------------

LLDP_TLV_END = 0
LLDP_TLV_CHASSIS_ID = 1
LLDP_TLV_PORT_ID = 2
LLDP_TLV_TTL = 3
LLDP_SUBTYPE_LOCAL = 7


def _tlv(tlv_type: int, value: bytes) -> bytes:
    return struct.pack("!H", (tlv_type << 9) | len(value)) + value


@dataclass(frozen=True)
class LldpProbe:
    dpid: int
    port: int
    ttl: int = 120

    def encode(self, src_mac: bytes = b"\x02\x00\x00\x00\x00\x01") -> bytes:
        body = (_tlv(LLDP_TLV_CHASSIS_ID, bytes([LLDP_SUBTYPE_LOCAL]) + f"{self.dpid:016x}".encode())
                + _tlv(LLDP_TLV_PORT_ID, bytes([LLDP_SUBTYPE_LOCAL]) + str(self.port).encode())
                + _tlv(LLDP_TLV_TTL, struct.pack("!H", self.ttl))
                + _tlv(LLDP_TLV_END, b""))
        return ethernet(LLDP_MULTICAST, src_mac, ETH_TYPE_LLDP, body)

    @classmethod
    def decode(cls, frame: bytes) -> LldpProbe | None:
        """Return the probe carried by ``frame``, or None for anything else.

        LLDP frames from other speakers (different chassis-id subtype or a
        chassis id that is not 16 hex digits) are not probes.
        """
        if len(frame) < 14 or struct.unpack_from("!H", frame, 12)[0] != ETH_TYPE_LLDP:
            return None
        off = 14
        tlvs = {}
        while off + 2 <= len(frame):
            (tl,) = struct.unpack_from("!H", frame, off)
            t, n = tl >> 9, tl & 0x1FF
            off += 2
            if t == LLDP_TLV_END:
                break
            if off + n > len(frame):
                return None
            tlvs.setdefault(t, frame[off:off + n])
            off += n
        chassis = tlvs.get(LLDP_TLV_CHASSIS_ID)
        port = tlvs.get(LLDP_TLV_PORT_ID)
        ttl = tlvs.get(LLDP_TLV_TTL)
        if not chassis or not port or ttl is None or len(ttl) != 2:
            return None
        if chassis[0] != LLDP_SUBTYPE_LOCAL or port[0] != LLDP_SUBTYPE_LOCAL:
            return None
        try:
            cid = chassis[1:].decode("ascii")
            pid = port[1:].decode("ascii")
        except UnicodeDecodeError:
            return None
        if len(cid) != 16 or any(c not in "0123456789abcdef" for c in cid) or not pid.isdigit():
            return None
        return cls(int(cid, 16), int(pid), struct.unpack("!H", ttl)[0])
