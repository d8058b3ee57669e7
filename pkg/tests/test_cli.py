import io
import shutil
import subprocess
import threading

import pytest

from netfs.apps import flowctl, yanctl
from netfs.schema import NetFS

SW = "0000000000000001"


@pytest.fixture
def fs():
    fs = NetFS()
    fs.mkdir(f"/net/switches/{SW}")
    return fs


def run(main, fs, *argv, stdin=""):
    out, err = io.StringIO(), io.StringIO()
    kw = {"stdin": io.StringIO(stdin)} if main is yanctl.main else {}
    code = main(list(argv), fs=fs, out=out, err=err, **kw)
    return code, out.getvalue(), err.getvalue()


def test_flowctl_add_and_list(fs):
    code, out, _ = run(flowctl.main, fs, "add", "1", "ssh", "match.dl_type=0x0800",
                       "match.nw_proto=6", "match.tp_dst=22", "action.0.output=2", "priority=100")
    assert code == flowctl.EXIT_OK
    assert "committed at version 1" in out
    code, out, _ = run(flowctl.main, fs, "--porcelain", "list")
    assert out.strip().split("\t") == [SW, "ssh", "1", "100",
                                       "dl_type=0x0800,nw_proto=6,tp_dst=22", "output:2"]
    code, out, _ = run(flowctl.main, fs, "list", "1")
    lines = out.splitlines()
    assert lines[0].split() == ["SWITCH", "FLOW", "VERSION", "PRIORITY", "MATCH", "ACTIONS"]


def test_flowctl_drop_flow_lists_drop(fs):
    run(flowctl.main, fs, "add", "1", "blackhole", "match.in_port=4")
    _, out, _ = run(flowctl.main, fs, "--porcelain", "list")
    assert out.strip().endswith("drop")


@pytest.mark.parametrize("argv,code", [
    (["add", "1", "bad", "match.tp_dst=99999"], flowctl.EXIT_INVALID),
    (["add", "1", "a,b", "match.tp_dst=1"], flowctl.EXIT_INVALID),
    (["add", "1", "x", "match.tp_dst"], flowctl.EXIT_INVALID),
    (["add", "zz", "x"], flowctl.EXIT_INVALID),
    (["add", "2", "x", "match.tp_dst=1"], flowctl.EXIT_UNKNOWN),
    (["del", "1", "ghost"], flowctl.EXIT_UNKNOWN),
    (["list", "2"], flowctl.EXIT_UNKNOWN),
    (["frobnicate"], flowctl.EXIT_INVALID),
])
def test_flowctl_errors(fs, argv, code):
    assert run(flowctl.main, fs, *argv)[0] == code


def test_flowctl_invalid_leaves_store_untouched(fs):
    before = fs.snapshot()
    code, _, err = run(flowctl.main, fs, "add", "1", "bad", "match.dl_type=0x0806",
                       "match.tp_dst=22")
    assert code == flowctl.EXIT_INVALID
    assert "match.tp_dst" in err
    assert fs.snapshot() == before


def test_flowctl_del(fs):
    run(flowctl.main, fs, "add", "1", "f", "match.in_port=1")
    assert run(flowctl.main, fs, "del", "1", "f")[0] == 0
    assert fs.committed_flows(fs.switch_path(1)) == {}


def test_flowctl_unreachable_store(monkeypatch):
    monkeypatch.delenv("NETFS_STORE", raising=False)
    code, _, _err = run(flowctl.main, None, "--store", "127.0.0.1:1", "list")
    assert code == flowctl.EXIT_UNREACHABLE


def test_normalize_switch():
    assert flowctl.normalize_switch("0xA1") == "00000000000000a1"
    with pytest.raises(flowctl.Usage):
        flowctl.normalize_switch("1" * 17)


def test_yanctl_ls_cat_write(fs):
    _code, out, _ = run(yanctl.main, fs, "ls", f"/net/switches/{SW}")
    assert out.split() == ["events", "flows", "packets_out", "ports"]
    run(yanctl.main, fs, "mkdir", f"/net/switches/{SW}/ports/1")
    assert run(yanctl.main, fs, "write", f"/net/switches/{SW}/ports/1/config.port_down",
               "-", stdin="1\n")[0] == 0
    _, out, _ = run(yanctl.main, fs, "cat", f"/net/switches/{SW}/ports/1/config.port_down")
    assert out == "1\n"


def test_yanctl_long_listing_shows_links(fs):
    run(yanctl.main, fs, "mkdir", f"/net/switches/{SW}/ports/1")
    run(yanctl.main, fs, "mkdir", f"/net/switches/{SW}/ports/2")
    run(yanctl.main, fs, "ln", f"/net/switches/{SW}/ports/2",
        f"/net/switches/{SW}/ports/1/peer")
    _, out, _ = run(yanctl.main, fs, "ls", "-l", f"/net/switches/{SW}/ports/1")
    assert f"peer -> /net/switches/{SW}/ports/2" in out


def test_yanctl_errors_map_to_exit_codes(fs):
    assert run(yanctl.main, fs, "cat", "/net/nothing")[0] == 2
    assert run(yanctl.main, fs, "mkdir", "/net/switches/bad")[0] == 7
    assert run(yanctl.main, fs, "bogus")[0] == yanctl.EXIT_USAGE


def test_yanctl_rm_recursive(fs):
    assert run(yanctl.main, fs, "rm", "-r", f"/net/switches/{SW}")[0] == 0
    assert fs.switches() == []


def test_yanctl_watch(fs):
    fs.mkdir(f"/net/switches/{SW}/ports/1")
    handle_out = io.StringIO()
    t = threading.Timer(0.05, lambda: fs.write(f"/net/switches/{SW}/ports/1/hw_addr",
                                               "02:00:00:00:00:01"))
    t.start()
    code = yanctl.main(["--porcelain", "watch", "-r", "-n", "1", "-t", "2", f"/net/switches/{SW}"],
                       fs=fs, out=handle_out, err=io.StringIO())
    t.join()
    assert code == 0
    assert "modified" in handle_out.getvalue()


@pytest.mark.parametrize("tool", ["flowctl", "yanctl", "viewctl", "simfab", "netfsd",
                                  "netfs-driver", "topod", "routerd", "yancmount"])
def test_console_scripts_answer_help(tool):
    exe = shutil.which(tool)
    if exe is None:
        pytest.skip(f"{tool} not installed")
    res = subprocess.run([exe, "--help"], capture_output=True, text=True, timeout=30,
                         check=False)
    assert res.returncode == 0
    assert "usage" in res.stdout.lower()
