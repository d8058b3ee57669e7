"""Independent reference models used to check the real implementations.

The lookup oracle reads flow matches straight from their packed wire
bytes with plain slicing and ``int.from_bytes``, so it shares no code
with the codec or the simulated switch.
"""

# (name, byte offset, byte length, wildcard bit) in a packed ofp_match
_LAYOUT = (
    ("dl_vlan", 18, 2, 1 << 1),
    ("dl_src", 6, 6, 1 << 2),
    ("dl_dst", 12, 6, 1 << 3),
    ("dl_type", 22, 2, 1 << 4),
    ("nw_proto", 25, 1, 1 << 5),
    ("tp_src", 36, 2, 1 << 6),
    ("tp_dst", 38, 2, 1 << 7),
    ("dl_vlan_pcp", 20, 1, 1 << 20),
    ("nw_tos", 24, 1, 1 << 21),
)


def _as_int(v):
    return int.from_bytes(v, "big") if isinstance(v, (bytes, bytearray)) else v


def covers(packed: bytes, in_port: int, fields: dict) -> bool:
    """Does the packed 40-byte match accept this packet?"""
    w = int.from_bytes(packed[0:4], "big")
    if not w & 1 and int.from_bytes(packed[4:6], "big") != in_port:
        return False
    for name, off, size, bit in _LAYOUT:
        if w & bit:
            continue
        if int.from_bytes(packed[off:off + size], "big") != _as_int(fields[name]):
            return False
    for name, off, shift in (("nw_src", 28, 8), ("nw_dst", 32, 14)):
        ignored = (w >> shift) & 0x3F
        if ignored >= 32:
            continue
        want = int.from_bytes(packed[off:off + 4], "big")
        # compare the significant leading bits by shifting, not masking
        if want >> ignored != fields[name] >> ignored:
            return False
    return True


def is_exact(packed: bytes) -> bool:
    return int.from_bytes(packed[0:4], "big") & 0x3FFFFF == 0


def naive_lookup(entries, in_port: int, fields: dict):
    """Index of the winning entry in ``entries`` [(packed match, priority)], or None.

    Every entry is scored; exact entries outrank wildcarded ones, then
    higher priority, then the earlier index.
    """
    scored = [((1 if is_exact(m) else 0), prio, -i)
              for i, (m, prio) in enumerate(entries) if covers(m, in_port, fields)]
    if not scored:
        return None
    return -max(scored)[2]


def cidr_member(addr: int, net: int, plen: int) -> bool:
    """Membership by comparing dotted-quad bit strings."""
    a = format(addr, "032b")
    n = format(net, "032b")
    return a[:plen] == n[:plen]
