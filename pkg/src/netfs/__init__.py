"""A network controller whose state is a file tree.

The network lives under ``/net``: switches, ports, flows, packet-in
buffers and views are directories and files. Applications read and write
them; the OpenFlow driver keeps switches in step with the tree.
"""

from .errors import NetFSError
from .fields import FlowSpec
from .schema import EventRecord, NetFS
from .store import ChangeEvent, EventKind, NodeKind, Store

__all__ = ["ChangeEvent", "EventKind", "EventRecord", "FlowSpec", "NetFS", "NetFSError",
           "NodeKind", "Store"]
__version__ = "0.1.0"
