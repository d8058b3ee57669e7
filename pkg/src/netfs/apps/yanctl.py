"""Admin shell over the store for hosts without a filesystem mount.

    yanctl ls [-l] PATH        yanctl mkdir PATH
    yanctl cat PATH            yanctl ln TARGET LINK
    yanctl write PATH VALUE    yanctl rm [-r] PATH
    yanctl watch [-r] [-n N] [-t SECONDS] PATH

``write PATH -`` reads the value from stdin. Store errors exit with the
error class's own code (see :mod:`netfs.errors`).
"""

from __future__ import annotations

import argparse
import sys

from ..errors import NetFSError
from ..store import DIRECTORY, SYMLINK

EXIT_USAGE = 64


def cmd_ls(fs, path, long, porcelain, out):
    if fs.kind(path) is not DIRECTORY:
        names = [path.rsplit("/", 1)[-1]]
        base = path.rsplit("/", 1)[0] or "/"
    else:
        names = fs.list(path)
        base = path
    for name in names:
        if not long:
            print(name, file=out)
            continue
        child = f"{base.rstrip('/')}/{name}"
        info = fs.stat(child, False)
        kind = {"dir": "d", "file": "-", "link": "l"}[info.kind.value]
        cols = [f"{kind}{info.meta.mode:03o}", info.meta.owner, str(info.size), name]
        if info.kind is SYMLINK:
            cols.append(f"-> {info.target}")
        print(("\t" if porcelain else " ").join(cols), file=out)
    return 0


def cmd_cat(fs, path, out):
    data = fs.read(path)
    out.write(data.decode("utf-8", "replace"))
    if data and not data.endswith(b"\n"):
        out.write("\n")
    return 0


def cmd_watch(fs, path, recursive, count, timeout, porcelain, out):
    handle = fs.watch(path, recursive=recursive)
    seen = 0
    try:
        while count is None or seen < count:
            ev = fs.next_event(handle, timeout)
            if ev is None:
                break
            seen += 1
            if porcelain:
                fields = [str(ev.seq), ev.kind.value, ev.path] + ([ev.old_path] if ev.old_path else [])
                print("\t".join(fields), file=out)
            else:
                print(str(ev), file=out)
            out.flush()
    finally:
        fs.unwatch(handle)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="yanctl", description="inspect and edit /net")
    parser.add_argument("--mount", "--store", dest="mount", default=None,
                        help="store endpoint host:port (default: $NETFS_STORE)")
    parser.add_argument("--porcelain", action="store_true", help="tab-separated output")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("ls")
    p.add_argument("-l", dest="long", action="store_true")
    p.add_argument("path", nargs="?", default="/net")
    p = sub.add_parser("cat")
    p.add_argument("path")
    p = sub.add_parser("write")
    p.add_argument("path")
    p.add_argument("value")
    p = sub.add_parser("mkdir")
    p.add_argument("path")
    p = sub.add_parser("ln")
    p.add_argument("target")
    p.add_argument("link")
    p = sub.add_parser("rm")
    p.add_argument("-r", dest="recursive", action="store_true")
    p.add_argument("path")
    p = sub.add_parser("watch")
    p.add_argument("-r", dest="recursive", action="store_true")
    p.add_argument("-n", dest="count", type=int, default=None, help="stop after N events")
    p.add_argument("-t", dest="timeout", type=float, default=None,
                   help="stop after this many idle seconds")
    p.add_argument("path")
    return parser


def run(fs, args, out, stdin) -> int:
    c = args.command
    if c == "ls":
        return cmd_ls(fs, args.path, args.long, args.porcelain, out)
    if c == "cat":
        return cmd_cat(fs, args.path, out)
    if c == "write":
        value = stdin.read() if args.value == "-" else args.value
        fs.write(args.path, value)
        return 0
    if c == "mkdir":
        fs.mkdir(args.path)
        return 0
    if c == "ln":
        fs.symlink(args.link, args.target)
        return 0
    if c == "rm":
        if fs.kind(args.path, False) is DIRECTORY:
            if args.recursive:
                fs.remove(args.path, recursive=True)
            else:
                fs.rmdir(args.path)
        else:
            fs.unlink(args.path)
        return 0
    return cmd_watch(fs, args.path, args.recursive, args.count, args.timeout,
                     args.porcelain, out)


def main(argv=None, fs=None, out=None, err=None, stdin=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else 0
    try:
        if fs is None:
            from ..rpc import connect_store
            fs = connect_store(args.mount)
        return run(fs, args, out, stdin or sys.stdin)
    except NetFSError as exc:
        print(f"yanctl: {type(exc).__name__}: {exc}", file=err)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
