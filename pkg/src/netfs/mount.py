"""Expose the store through a user-space filesystem mount.

:class:`NetFSOperations` implements the fusepy ``Operations`` protocol as a
pure pass-through onto the facade, so ``ls``, ``cat`` and shell
redirection work on ``/net``. The class has no FUSE dependency and can be
driven by direct calls; only :func:`mount` needs the optional ``fusepy``
package and a kernel with FUSE support.

The store has no offsets, so writes are collected per open handle and
applied as one whole-file write when the handle is flushed or released.
"""

from __future__ import annotations

import errno
import itertools
import logging
import os
import posixpath
import stat
import threading
import time
from dataclasses import dataclass

from .errors import MountpointBusy, MountUnavailable, NetFSError, NotFound
from .store import DIRECTORY, SYMLINK

log = logging.getLogger(__name__)

try:  # optional dependency
    from fuse import FUSE, FuseOSError, Operations
except ImportError:  # pragma: no cover - depends on the host
    FUSE = None
    Operations = object

    class FuseOSError(OSError):
        def __init__(self, code):
            super().__init__(code, os.strerror(code))


def fuse_available() -> bool:
    return FUSE is not None and os.path.exists("/dev/fuse")


@dataclass
class MountConfig:
    mountpoint: str = "/net"
    store: str | None = None
    read_only: bool = False
    foreground: bool = True


@dataclass
class _Handle:
    path: str
    data: bytearray | None = None   # None until the first write or truncate
    dirty: bool = False
    created: bool = False
    writable: bool = True


def _errno_of(exc: NetFSError) -> int:
    return getattr(exc, "errno", errno.EIO) or errno.EIO


class NetFSOperations(Operations):
    """fusepy-style operations over a NetFS (or RemoteNetFS) facade."""

    def __init__(self, fs, read_only: bool = False):
        self.fs = fs
        self.read_only = read_only
        self.handles: dict[int, _Handle] = {}
        self._fh = itertools.count(1)
        self._lock = threading.Lock()
        self.uid = os.getuid() if hasattr(os, "getuid") else 0
        self.gid = os.getgid() if hasattr(os, "getgid") else 0

    # -- plumbing -------------------------------------------------------------

    def _p(self, path: str) -> str:
        root = self.fs.root.rstrip("/")
        return root if path in ("", "/") else root + "/" + path.strip("/")

    def __call__(self, op, *args):
        if not hasattr(self, op):
            raise FuseOSError(errno.ENOSYS)
        try:
            return getattr(self, op)(*args)
        except NetFSError as exc:
            raise FuseOSError(_errno_of(exc)) from None

    def _mutating(self):
        if self.read_only:
            raise FuseOSError(errno.EROFS)

    def _pending(self, path: str) -> _Handle | None:
        with self._lock:
            for h in self.handles.values():
                if h.path == path and h.created:
                    return h
        return None

    # -- metadata -------------------------------------------------------------

    def getattr(self, path, fh=None):
        try:
            info = self.fs.stat(self._p(path), False)
        except NotFound:
            pending = self._pending(path)
            if pending is None:
                raise FuseOSError(errno.ENOENT) from None
            now = time.time()
            return {"st_mode": stat.S_IFREG | 0o644, "st_nlink": 1,
                    "st_size": len(pending.data or b""), "st_uid": self.uid,
                    "st_gid": self.gid, "st_atime": now, "st_mtime": now, "st_ctime": now}
        if info.kind is DIRECTORY:
            kind, nlink = stat.S_IFDIR, 2
        elif info.kind is SYMLINK:
            kind, nlink = stat.S_IFLNK, 1
        else:
            kind, nlink = stat.S_IFREG, 1
        size = info.size
        if kind == stat.S_IFLNK:
            size = len(info.target or "")
        # the store's mtime is a logical clock, not wall time
        now = time.time()
        return {"st_mode": kind | info.meta.mode, "st_nlink": nlink, "st_size": size,
                "st_uid": self.uid, "st_gid": self.gid, "st_atime": now,
                "st_mtime": now, "st_ctime": now, "st_ino": info.id}

    def readdir(self, path, fh=None):
        return [".", ".."] + self.fs.list(self._p(path))

    def readlink(self, path):
        return self.fs.readlink(self._p(path))

    def access(self, path, amode):
        if not self.fs.exists(self._p(path)) and self._pending(path) is None:
            raise FuseOSError(errno.ENOENT)
        if amode & os.W_OK and self.read_only:
            raise FuseOSError(errno.EROFS)
        return 0

    def statfs(self, path):
        return {"f_bsize": 4096, "f_frsize": 4096, "f_blocks": 0, "f_bfree": 0,
                "f_bavail": 0, "f_files": 0, "f_ffree": 0, "f_namemax": 255}

    def chmod(self, path, mode):
        self._mutating()
        self.fs.chmod(self._p(path), stat.S_IMODE(mode))
        return 0

    def chown(self, path, uid, gid):
        raise FuseOSError(errno.EPERM)

    def utimens(self, path, times=None):
        return 0

    # -- namespace ------------------------------------------------------------

    def mkdir(self, path, mode):
        self._mutating()
        self.fs.mkdir(self._p(path))
        return 0

    def rmdir(self, path):
        self._mutating()
        self.fs.rmdir(self._p(path))
        return 0

    def unlink(self, path):
        self._mutating()
        self.fs.unlink(self._p(path))
        return 0

    def rename(self, old, new):
        self._mutating()
        self.fs.rename(self._p(old), self._p(new))
        return 0

    def symlink(self, target, source):
        """fusepy passes (link path, target)."""
        self._mutating()
        link = self._p(target)
        if not source.startswith("/"):
            source = posixpath.normpath(posixpath.join(posixpath.dirname(link), source))
        self.fs.symlink(link, source)
        return 0

    # -- file contents --------------------------------------------------------

    def _new_handle(self, h: _Handle) -> int:
        with self._lock:
            fh = next(self._fh)
            self.handles[fh] = h
            return fh

    def open(self, path, flags):
        p = self._p(path)
        if self.fs.kind(p) is DIRECTORY:
            raise FuseOSError(errno.EISDIR)
        if not self.fs.exists(p):
            raise FuseOSError(errno.ENOENT)
        writable = (flags & os.O_ACCMODE) != os.O_RDONLY
        if writable:
            self._mutating()
        h = _Handle(path, writable=writable)
        if flags & os.O_TRUNC and writable:
            h.data, h.dirty = bytearray(), True
        return self._new_handle(h)

    def create(self, path, mode, fi=None):
        self._mutating()
        p = self._p(path)
        if self.fs.exists(p) and self.fs.kind(p) is DIRECTORY:
            raise FuseOSError(errno.EISDIR)
        # nothing reaches the store until the content is known
        return self._new_handle(_Handle(path, bytearray(), dirty=True,
                                        created=not self.fs.exists(p)))

    def _handle(self, fh) -> _Handle:
        h = self.handles.get(fh)
        if h is None:
            raise FuseOSError(errno.EBADF)
        return h

    def read(self, path, size, offset, fh):
        h = self.handles.get(fh)
        data = bytes(h.data) if h is not None and h.data is not None \
            else self.fs.read(self._p(path))
        return data[offset:offset + size]

    def write(self, path, data, offset, fh):
        self._mutating()
        h = self._handle(fh)
        if not h.writable:
            raise FuseOSError(errno.EBADF)
        if h.data is None:
            h.data = bytearray(self.fs.read(self._p(path)))
        if offset > len(h.data):
            h.data.extend(b"\0" * (offset - len(h.data)))
        h.data[offset:offset + len(data)] = data
        h.dirty = True
        return len(data)

    def truncate(self, path, length, fh=None):
        self._mutating()
        h = self.handles.get(fh) if fh is not None else None
        if h is None:
            with self._lock:
                h = next((x for x in self.handles.values() if x.path == path and x.writable),
                         None)
        if h is not None:
            if h.data is None:
                h.data = bytearray(self.fs.read(self._p(path))) if not h.created else bytearray()
            del h.data[length:]
            h.data.extend(b"\0" * (length - len(h.data)))
            h.dirty = True
            return 0
        data = self.fs.read(self._p(path))
        self.fs.write(self._p(path), data[:length] + b"\0" * (length - len(data)))
        return 0

    def _apply(self, h: _Handle) -> None:
        if not h.dirty:
            return
        h.dirty = False
        h.created = False
        self.fs.write(self._p(h.path), bytes(h.data or b""))

    def flush(self, path, fh):
        h = self.handles.get(fh)
        if h is not None:
            self._apply(h)
        return 0

    def fsync(self, path, datasync, fh):
        return self.flush(path, fh)

    def release(self, path, fh):
        with self._lock:
            h = self.handles.pop(fh, None)
        if h is not None:
            self._apply(h)
        return 0


def check_mountpoint(path: str) -> None:
    if not os.path.isdir(path):
        raise MountpointBusy(f"mountpoint {path} does not exist", path)
    if os.listdir(path):
        raise MountpointBusy(f"mountpoint {path} is not empty", path)


def mount(fs, config: MountConfig):
    """Mount ``fs`` at ``config.mountpoint`` (blocks while mounted in the foreground)."""
    if not fuse_available():
        raise MountUnavailable("user-space filesystems are unavailable (install fusepy and "
                               "libfuse, and make sure /dev/fuse exists)")
    check_mountpoint(config.mountpoint)
    ops = NetFSOperations(fs, config.read_only)
    return FUSE(ops, config.mountpoint, foreground=config.foreground, nothreads=False,
                ro=config.read_only, raw_fi=False)


def main(argv=None) -> int:
    import argparse
    import sys

    from .rpc import connect_store

    parser = argparse.ArgumentParser(prog="yancmount", description="mount the /net store")
    parser.add_argument("--mountpoint", default="/net")
    parser.add_argument("--store", default=None, help="store endpoint (default: $NETFS_STORE)")
    parser.add_argument("--read-only", action="store_true")
    parser.add_argument("--background", action="store_true")
    parser.add_argument("--log-level", default="WARNING")
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper())
    config = MountConfig(args.mountpoint, args.store, args.read_only, not args.background)
    try:
        mount(connect_store(config.store), config)
    except NetFSError as exc:
        print(f"yancmount: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0
