"""Small builders shared by the test modules."""

import numpy as np

from hbcp.core import DataFrame, make_frame, make_payload
from hbcp.engine import EnergyModel, Simulator
from hbcp.mac import MacLayer, MacParams, TxRequest
from hbcp.protocol import NodeState
from hbcp.radio import LinkTable, RadioParams


class FixedRng:
    """Backoff stream that always returns the same fraction of the window."""

    def __init__(self, value=0.0):
        self.value = value

    def random(self):
        return self.value


def table(values):
    return LinkTable(np.array(values, dtype=float))


def data_frame(src, sector=1, reading=bytes(22)):
    return make_frame(src, DataFrame(sector, (make_payload(src, reading),)))


class MacBench:
    """A bare simulator and MAC over a hand-built link table."""

    def __init__(self, rows, radio=RadioParams(), mac=MacParams(), seed=0, backoff=None,
                 energy=EnergyModel()):
        self.table = table(rows)
        self.states = [NodeState(i) for i in range(self.table.size)]
        self.sim = Simulator(seed, 0, self.states, energy)
        if backoff is not None:
            self.sim.backoff = FixedRng(backoff)
        self.upcalls = []
        self.done = {}
        self.mac = MacLayer(self.sim, self.table, radio, mac, -87.0,
                            lambda node, frame, rssi, src: self.upcalls.append((node, frame, rssi, src)))
        self.sim.mac = self.mac

    def send(self, src, dst=None, frame=None, deadline=None, at=0):
        frame = frame or data_frame(src)
        request = TxRequest(frame) if dst is None else TxRequest.unicast(frame, dst)

        def go():
            self.mac.submit(src, request, deadline,
                            lambda result, req, attempts: self.done.__setitem__(src, (result, attempts)))
        self.sim.at(at, "Timer", src, go)

    def run(self):
        self.sim.run()
        return self.sim.records

    def tx(self, what=None):
        return [r for r in self.sim.records if r["kind"] == "TxStart" and (what is None or r["what"] == what)]


def quiet_protocol(**kw):
    from hbcp.protocol import ProtocolParams
    kw.setdefault("clock_drift_ppm", 0.0)
    return ProtocolParams(**kw)


def matrix_scenario(rows, radio=RadioParams(ideal_channel=True), mac=MacParams(), protocol=None,
                    seed=1, collections=1, energy=EnergyModel(), name="matrix"):
    """Scenario over a hand-built RSSI matrix; positions are placeholders."""
    from hbcp.engine import Scenario
    from hbcp.radio import Position

    protocol = protocol or quiet_protocol()
    n = len(rows)
    return Scenario(tuple(Position(float(i), 0.0) for i in range(n)), radio, mac, protocol, seed,
                    collections, energy, tuple(tuple(float(v) for v in r) for r in rows), name)


def chain_rows(n, good=-60.0, far=-120.0):
    """Sink plus n - 1 nodes in a line; only neighbours hear each other."""
    return [[0.0 if i == j else (good if abs(i - j) == 1 else far) for j in range(n)] for i in range(n)]
