"""A whole controller in one process: store, driver, simulated fabric and apps.

Everything is wired over in-memory pipes and driven by :meth:`Testbed.pump`,
which polls each component until none of them has work left. That makes
end-to-end runs deterministic.
"""

from __future__ import annotations

from .driver import Driver
from .schema import NetFS
from .sim import Fabric, build_fabric
from .store import Store
from .transport import memory_pipe


class NotQuiescent(RuntimeError):
    pass


class Testbed:
    __test__ = False  # not a pytest class

    def __init__(self, topology: str | Fabric = "", apps=(), connect: bool = True):
        self.store = Store()
        self.fs = NetFS(self.store)
        self.fabric = topology if isinstance(topology, Fabric) else build_fabric(topology)
        self.driver = Driver(self.fs)
        self.apps = list(apps)
        self.links: dict[int, tuple] = {}
        if connect:
            for dpid in sorted(self.fabric.switches):
                self.connect(dpid)
            self.pump()

    @property
    def switches(self):
        return self.fabric.switches

    def add_app(self, app):
        """Register ``app`` and pump once so its buffers exist before traffic."""
        self.apps.append(app)
        self.pump()
        return app

    def connect(self, dpid: int) -> None:
        sw_end, ctl_end = memory_pipe()
        self.fabric.switches[dpid].connect(sw_end)
        self.driver.attach(ctl_end, f"sim-{dpid:x}")
        self.links[dpid] = (sw_end, ctl_end)

    def disconnect(self, dpid: int) -> None:
        self.fabric.switches[dpid].disconnect()

    def reconnect(self, dpid: int) -> None:
        self.disconnect(dpid)
        self.pump()
        self.connect(dpid)
        self.pump()

    def step(self) -> int:
        work = self.driver.poll()
        work += self.fabric.poll()
        for app in self.apps:
            work += app.poll()
        return work

    def pump(self, max_steps: int = 100_000) -> int:
        """Run until a full pass finds no work; returns the number of passes."""
        for n in range(1, max_steps + 1):
            if not self.step():
                return n
        raise NotQuiescent(f"still busy after {max_steps} passes")

    def switch_path(self, dpid: int) -> str:
        return self.fs.switch_path(dpid)

    def inject(self, dpid: int, port: int, frame: bytes, pump: bool = True):
        report = self.fabric.inject(dpid, port, frame)
        if pump:
            self.pump()
        return report
