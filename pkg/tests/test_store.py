import threading

import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.stateful import RuleBasedStateMachine, invariant, rule

from netfs.errors import (
    AlreadyExists,
    DanglingLink,
    DirectoryNotEmpty,
    InvalidArgument,
    InvalidName,
    IsADirectory,
    LoopDetected,
    MalformedSnapshot,
    NotADirectory,
    NotFound,
    PermissionDenied,
)
from netfs.store import DIRECTORY, FILE, SYMLINK, EventKind, Store


@pytest.fixture
def store():
    s = Store()
    s.makedirs("/a/b")
    return s


def test_create_read_write(store):
    store.create("/a/f", content=b"x")
    assert store.read("/a/f") == b"x"
    store.write("/a/f", b"yz")
    assert store.read("/a/f") == b"yz"
    assert store.stat("/a/f").size == 2
    assert store.kind("/a/f") is FILE


def test_create_existing(store):
    with pytest.raises(AlreadyExists):
        store.mkdir("/a/b")


def test_missing_parent(store):
    with pytest.raises(NotFound):
        store.create("/nope/f")


def test_file_as_directory(store):
    store.create("/a/f")
    with pytest.raises(NotADirectory):
        store.create("/a/f/g")
    with pytest.raises(IsADirectory):
        store.read("/a")


@pytest.mark.parametrize("name", ["x\ty", "x\ny", "."])
def test_bad_names(store, name):
    with pytest.raises((InvalidName, AlreadyExists, NotFound)):
        store.create("/a/" + name)


def test_list_sorted(store):
    for n in ("c", "a", "b2"):
        store.create(f"/a/b/{n}")
    assert store.list("/a/b") == ["a", "b2", "c"]


def test_remove_non_empty(store):
    with pytest.raises(DirectoryNotEmpty):
        store.remove("/a")
    store.remove("/a", recursive=True)
    assert not store.exists("/a")


def test_rename_moves_subtree(store):
    store.create("/a/b/f", content=b"1")
    store.rename("/a/b", "/a/c")
    assert store.read("/a/c/f") == b"1"
    assert not store.exists("/a/b")


def test_rename_into_itself(store):
    with pytest.raises(InvalidArgument):
        store.rename("/a", "/a/b/a")


def test_symlinks(store):
    store.create("/a/b/f", content=b"v")
    store.symlink("/l", "/a/b")
    assert store.read("/l/f") == b"v"
    assert store.readlink("/l") == "/a/b"
    assert store.kind("/l", follow=False) is SYMLINK
    assert store.kind("/l") is DIRECTORY
    store.symlink("/dangling", "/zzz")
    with pytest.raises(DanglingLink):
        store.read("/dangling")


def test_symlink_loop(store):
    store.symlink("/x", "/y")
    store.symlink("/y", "/x")
    with pytest.raises(LoopDetected):
        store.read("/x")


def test_permissions(store):
    store.create("/a/f", mode=0o644)
    store.chown("/a/f", "alice")
    store.write("/a/f", b"1", who="alice")
    with pytest.raises(PermissionDenied):
        store.write("/a/f", b"2", who="bob")
    store.chmod("/a/f", 0o666)
    store.write("/a/f", b"3", who="bob")


def test_watch_kinds(store):
    w = store.watch("/a", recursive=True)
    store.create("/a/f")
    store.write("/a/f", b"1")
    store.rename("/a/f", "/a/g")
    store.symlink("/a/l", "/a/g")
    store.remove("/a/g")
    kinds = [e.kind for e in w.drain()]
    assert kinds == [EventKind.CREATED, EventKind.MODIFIED, EventKind.RENAMED,
                     EventKind.LINK_CHANGED, EventKind.REMOVED]


def test_non_recursive_watch(store):
    w = store.watch("/a")
    store.create("/a/b/deep")
    store.create("/a/shallow")
    assert [e.path for e in w.drain()] == ["/a/shallow"]


def test_watch_seq_gap_free(store):
    w = store.watch("/a", recursive=True)
    for i in range(20):
        store.create(f"/a/f{i}")
    assert [e.seq for e in w.drain()] == list(range(1, 21))


def test_overflow_marker_at_head(store):
    w = store.watch("/a", recursive=True, capacity=4)
    for i in range(10):
        store.create(f"/a/f{i}")
    evs = w.drain()
    assert evs[0].kind is EventKind.OVERFLOW
    assert [e.path for e in evs[1:]] == [f"/a/f{i}" for i in range(7, 10)]
    seqs = [e.seq for e in evs]
    assert seqs == sorted(seqs)


def test_watch_get_blocks_until_event(store):
    w = store.watch("/a")
    t = threading.Timer(0.05, lambda: store.create("/a/late"))
    t.start()
    ev = w.get(timeout=2)
    t.join()
    assert ev is not None and ev.path == "/a/late"
    assert w.get(timeout=0.01) is None


def test_unwatch_stops_delivery(store):
    w = store.watch("/a")
    store.unwatch(w)
    store.create("/a/f")
    assert w.drain() == []


def test_snapshot_round_trip(store):
    store.create("/a/f", content=b"\x00\xffdata")
    store.symlink("/a/l", "/a/f")
    store.chmod("/a/f", 0o600)
    snap = store.snapshot()
    other = Store()
    other.restore(snap)
    assert other.snapshot() == snap
    assert other.read("/a/l") == b"\x00\xffdata"


def test_restore_sends_overflow(store):
    w = store.watch("/a")
    snap = store.snapshot()
    store.restore(snap)
    assert [e.kind for e in w.drain()] == [EventKind.OVERFLOW]


def test_restore_malformed_keeps_tree(store):
    before = store.snapshot()
    with pytest.raises(MalformedSnapshot):
        store.restore("garbage\n")
    assert store.snapshot() == before


NAMES = st.sampled_from(["p", "q", "r"])


class StoreModel(RuleBasedStateMachine):
    """Files in a two-level tree checked against a plain dict."""

    def __init__(self):
        super().__init__()
        self.store = Store()
        self.store.mkdir("/d")
        self.watch = self.store.watch("/d", recursive=True, capacity=10_000)
        self.model: dict[str, bytes] = {}
        self.events = 0

    @rule(name=NAMES, data=st.binary(max_size=4))
    def put(self, name, data):
        path = "/d/" + name
        if path in self.model:
            self.store.write(path, data)
        else:
            self.store.create(path, content=data)
        self.model[path] = data
        self.events += 1

    @rule(name=NAMES)
    def delete(self, name):
        path = "/d/" + name
        if path in self.model:
            self.store.remove(path)
            del self.model[path]
            self.events += 1
        else:
            with pytest.raises(NotFound):
                self.store.remove(path)

    @rule(a=NAMES, b=NAMES)
    def move(self, a, b):
        pa, pb = "/d/" + a, "/d/" + b
        if pa in self.model and pb not in self.model:
            self.store.rename(pa, pb)
            self.model[pb] = self.model.pop(pa)
            self.events += 1

    @invariant()
    def agrees(self):
        assert self.store.list("/d") == sorted(p[3:] for p in self.model)
        for p, data in self.model.items():
            assert self.store.read(p) == data
        assert len(self.watch) == self.events


TestStoreModel = StoreModel.TestCase


@given(st.lists(st.binary(max_size=8), min_size=1, max_size=50), st.integers(1, 60))
def test_bounded_watch_keeps_newest_in_order(payloads, capacity):
    s = Store()
    s.mkdir("/d")
    s.create("/d/f")
    w = s.watch("/d", recursive=True, capacity=capacity)
    for p in payloads:
        s.write("/d/f", p)
    evs = w.drain()
    assert len(evs) <= capacity
    seqs = [e.seq for e in evs]
    assert seqs == sorted(seqs)
    if len(payloads) > capacity:
        assert evs[0].kind is EventKind.OVERFLOW
        assert seqs[-1] == len(payloads)
    else:
        assert seqs == list(range(1, len(payloads) + 1))
