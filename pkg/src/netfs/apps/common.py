"""Helpers shared by the daemons: the peer-link graph and the run loop."""

from __future__ import annotations

import argparse
import logging
import time
from collections import deque

from ..errors import NetFSError

log = logging.getLogger(__name__)

Graph = dict  # dpid -> {port: (peer dpid, peer port)}


def port_location(fs, path: str) -> tuple[int, int] | None:
    """(dpid, port) for a ``<root>/switches/<dpid>/ports/<n>`` path, else None."""
    prefix = f"{fs.root}/switches/"
    if not path.startswith(prefix):
        return None
    parts = path[len(prefix):].split("/")
    if len(parts) != 3 or parts[1] != "ports" or not parts[2].isdigit():
        return None
    try:
        return int(parts[0], 16), int(parts[2])
    except ValueError:
        return None


def port_path(fs, dpid: int, port: int) -> str:
    return f"{fs.switch_path(dpid)}/ports/{port}"


def peer_graph(fs) -> Graph:
    """Adjacency read from the peer symlinks; every switch appears as a key."""
    graph: Graph = {}
    for name in fs.switches():
        try:
            dpid = int(name, 16)
        except ValueError:
            continue
        adj = graph.setdefault(dpid, {})
        sw = fs.switch_path(name)
        try:
            ports = fs.ports(sw)
        except NetFSError:
            continue
        for p in ports:
            target = fs.peer_of(f"{sw}/ports/{p}")
            loc = port_location(fs, target) if target else None
            if loc is not None:
                adj[p] = loc
    return graph


def _neighbors(graph: Graph, u: int):
    """(peer dpid, local port, peer port) in lexicographic dpid-then-port order."""
    return sorted((v, p, q) for p, (v, q) in graph.get(u, {}).items())


def shortest_path(graph: Graph, src: int, dst: int) -> list[tuple[int, int, int]] | None:
    """BFS path as [(dpid, out_port, next dpid's in_port), ...] or None.

    Ties between equal-length paths go to the lexicographically smallest
    neighbor dpid, then port, at every step.
    """
    if src == dst:
        return []
    parent = {src: None}
    queue = deque([src])
    while queue:
        u = queue.popleft()
        for v, p, q in _neighbors(graph, u):
            if v in parent:
                continue
            parent[v] = (u, p, q)
            if v == dst:
                steps = []
                node = v
                while parent[node] is not None:
                    prev, out_port, in_port = parent[node]
                    steps.append((prev, out_port, in_port))
                    node = prev
                return steps[::-1]
            queue.append(v)
    return None


def spanning_tree_ports(graph: Graph) -> set[tuple[int, int]]:
    """Ports on a BFS spanning forest rooted at each component's lowest dpid."""
    tree: set[tuple[int, int]] = set()
    seen: set[int] = set()
    for root in sorted(graph):
        if root in seen:
            continue
        seen.add(root)
        queue = deque([root])
        while queue:
            u = queue.popleft()
            for v, p, q in _neighbors(graph, u):
                if v in seen:
                    continue
                seen.add(v)
                tree.add((u, p))
                tree.add((v, q))
                queue.append(v)
    return tree


def daemon_parser(prog: str, description: str, interval: float) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=prog, description=description)
    parser.add_argument("--mount", default=None,
                        help="store endpoint host:port (default: $NETFS_STORE)")
    parser.add_argument("--interval", type=float, default=interval,
                        help="seconds between periodic rounds")
    parser.add_argument("--log-level", default="INFO")
    return parser


def run_forever(app, interval: float, tick=None, idle: float = 0.01) -> None:
    """Poll ``app`` continuously and call ``tick`` every ``interval`` seconds."""
    next_tick = time.monotonic()
    while True:
        if tick is not None and time.monotonic() >= next_tick:
            tick()
            next_tick = time.monotonic() + interval
        try:
            busy = app.poll()
        except NetFSError as exc:
            log.warning("%s", exc)
            busy = 0
        if not busy:
            time.sleep(idle)
