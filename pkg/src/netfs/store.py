"""In-memory hierarchical tree with file-style operations and change watches.

The store knows nothing about networks. It holds directories, files and
symbolic links addressed by absolute paths, checks basic mode bits on
mutation, and pushes a ``ChangeEvent`` into every matching watch queue while
the mutation is still in progress, so an event is always visible before the
mutating call returns.
"""

from __future__ import annotations

import base64
import enum
import itertools
import threading
from collections import deque
from collections.abc import Iterator
from contextlib import contextmanager
from dataclasses import dataclass

from .errors import (
    AlreadyExists,
    DanglingLink,
    DirectoryNotEmpty,
    InvalidArgument,
    InvalidName,
    IsADirectory,
    LoopDetected,
    MalformedSnapshot,
    NotADirectory,
    NotALink,
    NotFound,
    PermissionDenied,
)

ROOT_USER = "root"
MAX_LINK_HOPS = 16
DEFAULT_WATCH_CAPACITY = 4096

_FORBIDDEN_IN_NAMES = ("/", "\0", "\t", "\n", "\r")


class NodeKind(str, enum.Enum):
    DIRECTORY = "dir"
    FILE = "file"
    SYMLINK = "link"


DIRECTORY = NodeKind.DIRECTORY
FILE = NodeKind.FILE
SYMLINK = NodeKind.SYMLINK

DEFAULT_MODES = {DIRECTORY: 0o755, FILE: 0o644, SYMLINK: 0o777}


class EventKind(str, enum.Enum):
    CREATED = "created"
    MODIFIED = "modified"
    REMOVED = "removed"
    RENAMED = "renamed"
    LINK_CHANGED = "link_changed"
    OVERFLOW = "overflow"


@dataclass
class ChangeEvent:
    seq: int
    path: str
    kind: EventKind
    old_path: str | None = None

    def __str__(self):
        if self.kind is EventKind.RENAMED:
            return f"{self.seq} {self.kind.value} {self.old_path} -> {self.path}"
        return f"{self.seq} {self.kind.value} {self.path}"


@dataclass(frozen=True)
class NodeMeta:
    mode: int
    owner: str
    mtime: int


@dataclass(frozen=True)
class NodeInfo:
    """What ``stat`` returns: a read-only view of one node."""

    id: int
    kind: NodeKind
    path: str
    meta: NodeMeta
    size: int
    target: str | None = None


class Node:
    __slots__ = (
        "children",
        "content",
        "id",
        "kind",
        "mode",
        "mtime",
        "name",
        "owner",
        "parent",
        "target",
    )

    def __init__(self, id, kind, name, parent, mode, owner, mtime):
        self.id = id
        self.kind = kind
        self.name = name
        self.parent = parent
        self.children = {} if kind is DIRECTORY else None
        self.content = b"" if kind is FILE else None
        self.target = None
        self.mode = mode
        self.owner = owner
        self.mtime = mtime

    def meta(self):
        return NodeMeta(self.mode, self.owner, self.mtime)


def split_path(path: str) -> list[str]:
    """Split an absolute path into validated segments.

    Repeated and trailing slashes are tolerated; ``.`` and ``..`` are not.
    """
    if not isinstance(path, str) or not path.startswith("/"):
        raise InvalidName(f"path must be absolute: {path!r}", path)
    parts = [p for p in path.split("/") if p]
    for p in parts:
        check_name(p)
    return parts


def check_name(name: str) -> None:
    if not name or name in (".", "..") or any(c in name for c in _FORBIDDEN_IN_NAMES):
        raise InvalidName(f"invalid node name: {name!r}")


def join(*parts: str) -> str:
    out = "/".join(p.strip("/") for p in parts if p.strip("/"))
    return "/" + out


def parent_of(path: str) -> str:
    parts = [p for p in path.split("/") if p]
    return "/" + "/".join(parts[:-1])


def basename(path: str) -> str:
    parts = [p for p in path.split("/") if p]
    return parts[-1] if parts else ""


def is_under(path: str, root: str) -> bool:
    """True when ``path`` equals ``root`` or lies in its subtree."""
    if root == "/":
        return True
    return path == root or path.startswith(root + "/")


class WatchHandle:
    """A bounded FIFO of change events for one subscription.

    When the queue is full the oldest events are dropped and a single
    ``overflow`` marker is queued ahead of the surviving events. While that
    marker is still queued, further drops are silent (the marker's ``seq``
    is advanced to the newest dropped event so sequence numbers stay
    increasing). Consumers may block in :meth:`get` from any thread.
    """

    def __init__(self, root_path: str, recursive: bool, capacity: int):
        if capacity < 1:
            raise InvalidArgument("watch capacity must be positive")
        self.root_path = root_path
        self.recursive = recursive
        self.capacity = capacity
        self.queue: deque[ChangeEvent] = deque()
        self.closed = False
        self._seq = 0
        self._cond = threading.Condition()
        self._marker: ChangeEvent | None = None

    def matches(self, path: str) -> bool:
        if self.recursive:
            return is_under(path, self.root_path)
        return path == self.root_path or parent_of(path) == self.root_path

    def _push(self, path, kind, old_path=None):
        with self._cond:
            if self.closed:
                return
            self._seq += 1
            q = self.queue
            q.append(ChangeEvent(self._seq, path, kind, old_path))
            if len(q) > self.capacity:
                # the marker always sits at the head, where the gap is
                if self._marker is None:
                    self._marker = ChangeEvent(0, self.root_path, EventKind.OVERFLOW)
                    q.appendleft(self._marker)
                while len(q) > self.capacity:
                    victim = q[1] if len(q) > 1 else None
                    if victim is None:
                        break
                    del q[1]
                    self._marker.seq = victim.seq
            self._cond.notify_all()

    def _push_overflow(self):
        with self._cond:
            if self.closed:
                return
            self.queue.clear()
            self._marker = ChangeEvent(self._seq, self.root_path, EventKind.OVERFLOW)
            self.queue.append(self._marker)
            self._cond.notify_all()

    def get(self, timeout: float | None = 0.0) -> ChangeEvent | None:
        """Pop the next event, waiting up to ``timeout`` seconds.

        Returns None on timeout (a normal outcome, not an error). ``None``
        as timeout waits forever.
        """
        with self._cond:
            if not self.queue and timeout != 0:
                self._cond.wait_for(lambda: self.queue or self.closed, timeout)
            if not self.queue:
                return None
            ev = self.queue.popleft()
            if ev is self._marker:
                self._marker = None
            return ev

    def drain(self) -> list[ChangeEvent]:
        with self._cond:
            out = list(self.queue)
            self.queue.clear()
            self._marker = None
            return out

    def __len__(self):
        return len(self.queue)

    def close(self):
        with self._cond:
            self.closed = True
            self._cond.notify_all()


class Store:
    """The tree. Safe to share between threads.

    Mutations and event delivery happen under one re-entrant lock; use
    :meth:`atomic` to group several operations into one uninterrupted unit.
    Every operation takes an optional ``who`` identity; ``root`` bypasses
    permission checks, any other identity is checked against the owner/other
    write bits of the node being changed (or of its parent directory for
    create, remove and rename).
    """

    def __init__(self):
        self._lock = threading.RLock()
        self._ids = itertools.count(1)
        self._clock = 0
        self._watches: list[WatchHandle] = []
        self.root = Node(next(self._ids), DIRECTORY, "", None, 0o755, ROOT_USER, 0)

    # -- locking ------------------------------------------------------------

    @contextmanager
    def atomic(self) -> Iterator[Store]:
        with self._lock:
            yield self

    def _tick(self):
        self._clock += 1
        return self._clock

    # -- path resolution ----------------------------------------------------

    def _walk(self, path: str, follow_last: bool = True) -> Node:
        parts = split_path(path)
        node = self.root
        hops = 0
        followed = False
        i = 0
        while i < len(parts):
            if node.kind is not DIRECTORY:
                raise NotADirectory(f"not a directory on the way to {path}", path)
            child = node.children.get(parts[i])
            if child is None:
                if followed:
                    raise DanglingLink(f"dangling link while resolving {path}", path)
                raise NotFound(f"no such node: {path}", path)
            last = i == len(parts) - 1
            if child.kind is SYMLINK and (follow_last or not last):
                hops += 1
                if hops > MAX_LINK_HOPS:
                    raise LoopDetected(f"too many link hops resolving {path}", path)
                parts = split_path(child.target) + parts[i + 1:]
                node = self.root
                followed = True
                i = 0
                continue
            node = child
            i += 1
        return node

    def _parent_and_name(self, path: str) -> tuple[Node, str]:
        parts = split_path(path)
        if not parts:
            raise InvalidName("the root has no parent", path)
        parent = self._walk("/" + "/".join(parts[:-1]))
        if parent.kind is not DIRECTORY:
            raise NotADirectory(f"parent of {path} is not a directory", path)
        return parent, parts[-1]

    @staticmethod
    def path_of(node: Node) -> str:
        names = []
        while node.parent is not None:
            names.append(node.name)
            node = node.parent
        return "/" + "/".join(reversed(names))

    def resolve(self, path: str) -> str:
        """Canonical path of whatever ``path`` resolves to."""
        with self._lock:
            return self.path_of(self._walk(path))

    # -- permissions --------------------------------------------------------

    @staticmethod
    def _check_write(node: Node, who: str, path: str):
        if who == ROOT_USER:
            return
        bit = 0o200 if who == node.owner else 0o002
        if not node.mode & bit:
            raise PermissionDenied(f"{who} may not modify {path}", path)

    # -- events -------------------------------------------------------------

    def _emit(self, path, kind, old_path=None):
        for w in self._watches:
            if w.matches(path) or (old_path is not None and w.matches(old_path)):
                w._push(path, kind, old_path)

    # -- operations ---------------------------------------------------------

    def create(self, path: str, kind: NodeKind = FILE, mode: int | None = None,
               *, who: str = ROOT_USER, content: bytes = b"") -> int:
        kind = NodeKind(kind)
        with self._lock:
            parent, name = self._parent_and_name(path)
            check_name(name)
            if name in parent.children:
                raise AlreadyExists(f"{path} already exists", path)
            self._check_write(parent, who, path)
            now = self._tick()
            node = Node(next(self._ids), kind, name, parent,
                        DEFAULT_MODES[kind] if mode is None else mode & 0o777, who, now)
            if kind is FILE:
                node.content = bytes(content)
            parent.children[name] = node
            parent.mtime = now
            self._emit(self.path_of(node), EventKind.CREATED)
            return node.id

    def mkdir(self, path, mode=None, *, who=ROOT_USER):
        return self.create(path, DIRECTORY, mode, who=who)

    def makedirs(self, path, *, who=ROOT_USER):
        """Create ``path`` and any missing ancestors; existing ones are kept."""
        with self._lock:
            cur = ""
            for part in split_path(path):
                cur += "/" + part
                try:
                    node = self._walk(cur)
                except NotFound:
                    self.create(cur, DIRECTORY, who=who)
                    continue
                if node.kind is not DIRECTORY:
                    raise NotADirectory(f"{cur} is not a directory", cur)

    def read(self, path: str) -> bytes:
        with self._lock:
            node = self._walk(path)
            if node.kind is DIRECTORY:
                raise IsADirectory(f"{path} is a directory", path)
            return node.content

    def write(self, path: str, data: bytes, *, who: str = ROOT_USER) -> None:
        if isinstance(data, str):
            data = data.encode()
        with self._lock:
            node = self._walk(path)
            if node.kind is DIRECTORY:
                raise IsADirectory(f"{path} is a directory", path)
            self._check_write(node, who, path)
            node.content = bytes(data)
            node.mtime = self._tick()
            self._emit(self.path_of(node), EventKind.MODIFIED)

    def remove(self, path: str, recursive: bool = False, *, who: str = ROOT_USER) -> None:
        with self._lock:
            node = self._walk(path, follow_last=False)
            if node.parent is None:
                raise InvalidArgument("cannot remove the root", path)
            if node.kind is DIRECTORY and node.children and not recursive:
                raise DirectoryNotEmpty(f"{path} is not empty", path)
            self._check_write(node.parent, who, path)
            doomed = []
            self._postorder(node, self.path_of(node), doomed)
            del node.parent.children[node.name]
            node.parent.mtime = self._tick()
            for p in doomed:
                self._emit(p, EventKind.REMOVED)

    def _postorder(self, node, path, out):
        if node.kind is DIRECTORY:
            for name in sorted(node.children):
                self._postorder(node.children[name], path + "/" + name, out)
        out.append(path)

    def rename(self, old_path: str, new_path: str, *, who: str = ROOT_USER) -> None:
        with self._lock:
            node = self._walk(old_path, follow_last=False)
            if node.parent is None:
                raise InvalidArgument("cannot rename the root", old_path)
            new_parent, new_name = self._parent_and_name(new_path)
            check_name(new_name)
            if new_name in new_parent.children:
                raise AlreadyExists(f"{new_path} already exists", new_path)
            p = new_parent
            while p is not None:
                if p is node:
                    raise InvalidArgument("cannot move a directory into itself", new_path)
                p = p.parent
            self._check_write(node.parent, who, old_path)
            self._check_write(new_parent, who, new_path)
            src = self.path_of(node)
            now = self._tick()
            del node.parent.children[node.name]
            node.parent.mtime = now
            node.name = new_name
            node.parent = new_parent
            new_parent.children[new_name] = node
            new_parent.mtime = now
            node.mtime = now
            self._emit(self.path_of(node), EventKind.RENAMED, src)

    def symlink(self, path: str, target: str, *, who: str = ROOT_USER) -> None:
        """Create or retarget a symlink. Targets are stored verbatim."""
        if not isinstance(target, str) or not target.startswith("/"):
            raise InvalidArgument(f"symlink target must be absolute: {target!r}", path)
        split_path(target)
        with self._lock:
            parent, name = self._parent_and_name(path)
            check_name(name)
            node = parent.children.get(name)
            if node is not None and node.kind is not SYMLINK:
                raise AlreadyExists(f"{path} exists and is not a link", path)
            now = self._tick()
            if node is None:
                self._check_write(parent, who, path)
                node = Node(next(self._ids), SYMLINK, name, parent,
                            DEFAULT_MODES[SYMLINK], who, now)
                parent.children[name] = node
                parent.mtime = now
            else:
                self._check_write(parent, who, path)
                if node.target == target:
                    return
            node.target = target
            node.mtime = now
            self._emit(self.path_of(node), EventKind.LINK_CHANGED)

    def readlink(self, path: str) -> str:
        with self._lock:
            node = self._walk(path, follow_last=False)
            if node.kind is not SYMLINK:
                raise NotALink(f"{path} is not a symlink", path)
            return node.target

    def list(self, path: str) -> list[str]:
        with self._lock:
            node = self._walk(path)
            if node.kind is not DIRECTORY:
                raise NotADirectory(f"{path} is not a directory", path)
            return sorted(node.children)

    def exists(self, path: str, follow: bool = True) -> bool:
        try:
            with self._lock:
                self._walk(path, follow_last=follow)
            return True
        except (NotFound, NotADirectory, LoopDetected):
            return False

    def stat(self, path: str, follow: bool = True) -> NodeInfo:
        with self._lock:
            node = self._walk(path, follow_last=follow)
            if node.kind is FILE:
                size = len(node.content)
            elif node.kind is SYMLINK:
                size = len(node.target)
            else:
                size = len(node.children)
            return NodeInfo(node.id, node.kind, self.path_of(node), node.meta(), size,
                            node.target)

    def kind(self, path: str, follow: bool = True) -> NodeKind | None:
        try:
            return self.stat(path, follow).kind
        except (NotFound, NotADirectory, LoopDetected):
            return None

    def chmod(self, path: str, mode: int, *, who: str = ROOT_USER) -> None:
        with self._lock:
            node = self._walk(path)
            if who != ROOT_USER and who != node.owner:
                raise PermissionDenied(f"{who} does not own {path}", path)
            node.mode = mode & 0o777
            node.mtime = self._tick()
            self._emit(self.path_of(node), EventKind.MODIFIED)

    def chown(self, path: str, owner: str, *, who: str = ROOT_USER) -> None:
        with self._lock:
            node = self._walk(path)
            if who != ROOT_USER:
                raise PermissionDenied("only root may change ownership", path)
            node.owner = owner
            node.mtime = self._tick()
            self._emit(self.path_of(node), EventKind.MODIFIED)

    def walk(self, path: str = "/") -> Iterator[tuple[str, NodeKind]]:
        """Yield (path, kind) for ``path`` and everything below it, pre-order."""
        with self._lock:
            start = self._walk(path, follow_last=False)
            out = []
            stack = [(self.path_of(start), start)]
            while stack:
                p, node = stack.pop()
                out.append((p, node.kind))
                if node.kind is DIRECTORY:
                    prefix = "" if p == "/" else p
                    for name in sorted(node.children, reverse=True):
                        stack.append((prefix + "/" + name, node.children[name]))
        yield from out

    # -- watches ------------------------------------------------------------

    def watch(self, path: str, recursive: bool = False,
              capacity: int = DEFAULT_WATCH_CAPACITY) -> WatchHandle:
        with self._lock:
            node = self._walk(path)
            handle = WatchHandle(self.path_of(node), recursive, capacity)
            self._watches.append(handle)
            return handle

    def unwatch(self, handle: WatchHandle) -> None:
        with self._lock:
            handle.close()
            if handle in self._watches:
                self._watches.remove(handle)

    @staticmethod
    def next_event(handle: WatchHandle, timeout: float | None = 0.0) -> ChangeEvent | None:
        return handle.get(timeout)

    # -- snapshots ----------------------------------------------------------

    def snapshot(self) -> str:
        """Canonical text serialization of the whole tree.

        One line per node, ``KIND<TAB>PATH<TAB>MODE<TAB>payload``, sorted by
        path; files carry base64 content, links their target, directories
        nothing.
        """
        with self._lock:
            lines = []
            stack = [("/", self.root)]
            while stack:
                p, node = stack.pop()
                if node.kind is FILE:
                    payload = base64.b64encode(node.content).decode("ascii")
                elif node.kind is SYMLINK:
                    payload = node.target
                else:
                    payload = ""
                    prefix = "" if p == "/" else p
                    for name, child in node.children.items():
                        stack.append((prefix + "/" + name, child))
                lines.append((p, f"{node.kind.value}\t{p}\t{node.mode:03o}\t{payload}"))
        lines.sort(key=lambda t: t[0])
        return "".join(line + "\n" for _, line in lines)

    def restore(self, serialized: str) -> None:
        """Replace the whole tree with a snapshot.

        The new tree is built aside and swapped in only if every line
        parses. Every live watch receives an ``overflow`` event, telling its
        consumer to rescan.
        """
        if isinstance(serialized, bytes):
            serialized = serialized.decode("utf-8")
        lines = serialized.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if not lines:
            raise MalformedSnapshot("empty snapshot")
        with self._lock:
            now = self._tick()
            root = None
            index: dict[str, Node] = {}
            for n, line in enumerate(lines, 1):
                cols = line.split("\t")
                if len(cols) != 4:
                    raise MalformedSnapshot(f"line {n}: expected 4 columns")
                kind_s, path, mode_s, payload = cols
                try:
                    kind = NodeKind(kind_s)
                    mode = int(mode_s, 8)
                except ValueError:
                    raise MalformedSnapshot(f"line {n}: bad kind or mode") from None
                if not 0 <= mode <= 0o777:
                    raise MalformedSnapshot(f"line {n}: mode out of range")
                try:
                    parts = split_path(path)
                except InvalidName:
                    raise MalformedSnapshot(f"line {n}: bad path {path!r}") from None
                if not parts:
                    if root is not None or kind is not DIRECTORY or n != 1:
                        raise MalformedSnapshot(f"line {n}: misplaced root")
                    root = Node(next(self._ids), DIRECTORY, "", None, mode, ROOT_USER, now)
                    index["/"] = root
                    continue
                if root is None:
                    raise MalformedSnapshot("snapshot does not start with the root")
                parent = index.get("/" + "/".join(parts[:-1]))
                if parent is None or parent.kind is not DIRECTORY:
                    raise MalformedSnapshot(f"line {n}: parent missing for {path}")
                if parts[-1] in parent.children:
                    raise MalformedSnapshot(f"line {n}: duplicate {path}")
                node = Node(next(self._ids), kind, parts[-1], parent, mode, ROOT_USER, now)
                if kind is FILE:
                    try:
                        node.content = base64.b64decode(payload, validate=True)
                    except ValueError:
                        raise MalformedSnapshot(f"line {n}: bad base64") from None
                elif kind is SYMLINK:
                    if not payload.startswith("/"):
                        raise MalformedSnapshot(f"line {n}: link target not absolute")
                    node.target = payload
                elif payload:
                    raise MalformedSnapshot(f"line {n}: directory with payload")
                parent.children[parts[-1]] = node
                index["/" + "/".join(parts)] = node
            self.root = root
            for w in self._watches:
                w._push_overflow()
