"""Static flow pusher.

    flowctl add <switch> <name> [match.F=V]... [action.N.T=V]... [priority=P]
    flowctl del <switch> <name>
    flowctl list [<switch>]

Exit status: 0 success, 1 unknown switch or flow, 2 invalid flow, 3 store
unreachable.
"""

from __future__ import annotations

import argparse
import sys

from ..errors import (
    FieldError,
    NetFSError,
    NotFound,
    StoreUnreachable,
    ValidationFailed,
)
from ..fields import format_action, format_match_value, parse_flow_files
from ..store import check_name

EXIT_OK = 0
EXIT_UNKNOWN = 1
EXIT_INVALID = 2
EXIT_UNREACHABLE = 3


class Usage(Exception):
    pass


def normalize_switch(text: str) -> str:
    """Accept a full 16-digit datapath id or a shorter hex one."""
    t = text.lower()
    t = t.removeprefix("0x")
    if not t or len(t) > 16 or any(c not in "0123456789abcdef" for c in t):
        raise Usage(f"not a datapath id: {text!r}")
    return t.rjust(16, "0")


def parse_assignments(items: list[str]) -> dict[str, str]:
    files = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise Usage(f"expected FIELD=VALUE, got {item!r}")
        files[key] = value
    return files


def describe_match(match: dict) -> str:
    return ",".join(f"{k}={format_match_value(k, v)}" for k, v in sorted(match.items())) or "*"


def describe_actions(actions: list) -> str:
    return ",".join(f"{k}:{format_action(k, v)}" for k, v in actions) or "drop"


def cmd_add(fs, switch: str, name: str, files: dict, out) -> int:
    if "," in name:
        raise ValidationFailed(f"flow names may not contain ',': {name!r}", field="name")
    check_name(name)
    parse_flow_files(files)  # reject before touching the store
    sw = fs.switch_path(switch)
    if not fs.exists(sw):
        raise NotFound(f"no such switch: {switch}", sw)
    version = fs.add_flow(sw, name, files)
    print(f"{switch}/{name} committed at version {version}", file=out)
    return EXIT_OK


def cmd_del(fs, switch: str, name: str, out) -> int:
    sw = fs.switch_path(switch)
    if not fs.exists(sw):
        raise NotFound(f"no such switch: {switch}", sw)
    flow = f"{sw}/flows/{name}"
    if not fs.exists(flow):
        raise NotFound(f"no such flow: {switch}/{name}", flow)
    fs.rm_semantic(flow)
    print(f"{switch}/{name} deleted", file=out)
    return EXIT_OK


def cmd_list(fs, switch: str | None, porcelain: bool, out) -> int:
    if switch is not None:
        if not fs.exists(fs.switch_path(switch)):
            raise NotFound(f"no such switch: {switch}", fs.switch_path(switch))
        switches = [switch]
    else:
        switches = sorted(fs.switches())
    rows = []
    for sw in switches:
        flows = fs.committed_flows(fs.switch_path(sw))
        for name in sorted(flows):
            spec = flows[name]
            rows.append((sw, name, str(spec.version), str(spec.priority),
                         describe_match(spec.match), describe_actions(spec.actions)))
    if porcelain:
        for row in rows:
            print("\t".join(row), file=out)
        return EXIT_OK
    header = ("SWITCH", "FLOW", "VERSION", "PRIORITY", "MATCH", "ACTIONS")
    widths = [max(len(r[i]) for r in rows + [header]) for i in range(5)]
    for row in [header] + rows:
        print("  ".join(c.ljust(w) for c, w in zip(row, widths)) + "  " + row[5], file=out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowctl", description="push static flows")
    parser.add_argument("--mount", "--store", dest="mount", default=None,
                        help="store endpoint host:port (default: $NETFS_STORE)")
    parser.add_argument("--porcelain", action="store_true", help="tab-separated output")
    sub = parser.add_subparsers(dest="command", required=True)
    add = sub.add_parser("add")
    add.add_argument("switch")
    add.add_argument("name")
    add.add_argument("fields", nargs="*")
    rm = sub.add_parser("del")
    rm.add_argument("switch")
    rm.add_argument("name")
    ls = sub.add_parser("list")
    ls.add_argument("switch", nargs="?")
    return parser


def main(argv=None, fs=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    try:
        if fs is None:
            from ..rpc import connect_store
            fs = connect_store(args.mount)
        if args.command == "add":
            return cmd_add(fs, normalize_switch(args.switch), args.name,
                           parse_assignments(args.fields), out)
        if args.command == "del":
            return cmd_del(fs, normalize_switch(args.switch), args.name, out)
        switch = normalize_switch(args.switch) if args.switch else None
        return cmd_list(fs, switch, args.porcelain, out)
    except StoreUnreachable as exc:
        print(f"flowctl: {exc}", file=err)
        return EXIT_UNREACHABLE
    except Usage as exc:
        print(f"flowctl: {exc}", file=err)
        return EXIT_INVALID
    except (ValidationFailed, FieldError) as exc:
        field = getattr(exc, "field", None)
        prefix = f"{field}: " if field and not str(exc).startswith(field) else ""
        print(f"flowctl: invalid flow: {prefix}{exc}", file=err)
        return EXIT_INVALID
    except NotFound as exc:
        print(f"flowctl: {exc}", file=err)
        return EXIT_UNKNOWN
    except NetFSError as exc:
        print(f"flowctl: {exc}", file=err)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
