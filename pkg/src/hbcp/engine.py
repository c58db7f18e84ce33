"""Deterministic event loop, scenario description, topology generators and the
per-node energy ledger that tie radio, MAC and protocol together."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .core import ConfigError, SINK_ID
from .mac import MacLayer, MacParams
from .protocol import HbcpNode, NodeState, Phase, ProtocolParams, SinkNode
from .radio import LinkTable, Position, RadioParams, build_link_table
from .trace import EventTrace

STREAMS = ("topology", "shadowing", "backoff", "offsets", "reception", "drift")
_STREAM_INDEX = {name: i for i, name in enumerate(STREAMS)}


class InfeasibleGeometry(ValueError):
    pass


class SchedulingError(RuntimeError):
    pass


def stream(seed: int, name: str, collection: int = 0) -> np.random.Generator:
    """Independent generator for one purpose; adding draws to one never moves another."""
    return np.random.default_rng(np.random.SeedSequence([seed, _STREAM_INDEX[name], collection]))


# ---------------------------------------------------------------------------
# scenario

@dataclass(frozen=True)
class EnergyModel:
    tx_cost: float = 1.0e-4  # percent per byte
    rx_cost: float = 1.1e-4
    initial: float = 100.0

    def validate(self, prefix: str = "energy") -> None:
        if self.tx_cost < 0 or self.rx_cost < 0:
            raise ConfigError(f"{prefix}.tx_cost", "costs must be >= 0")
        if not 0 <= self.initial <= 100:
            raise ConfigError(f"{prefix}.initial_percent", "must lie in 0..100")


@dataclass(frozen=True)
class Scenario:
    positions: tuple[Position, ...]
    radio: RadioParams = RadioParams()
    mac: MacParams = MacParams()
    protocol: ProtocolParams = ProtocolParams()
    seed: int = 1
    collections: int = 1
    energy: EnergyModel = EnergyModel()
    # optional hand-made RSSI matrix replacing the path-loss model
    rssi: Optional[tuple[tuple[float, ...], ...]] = None
    name: str = "scenario"

    def validate(self) -> None:
        if len(self.positions) < 2:
            raise ConfigError("topology", "need the sink and at least one node")
        if len(self.positions) > 0xFFFF:
            raise ConfigError("topology", "node ids must fit 16 bits")
        if self.collections < 1:
            raise ConfigError("scenario.collections", "must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("scenario.seed", "must be a 64-bit unsigned integer")
        for p in self.positions:
            if not all(math.isfinite(v) for v in (p.x, p.y, p.z)):
                raise ConfigError("topology", "coordinates must be finite")
        self.radio.validate(self.protocol.gamma_ga)
        self.mac.validate()
        self.protocol.validate()
        self.energy.validate()
        if self.rssi is not None and (len(self.rssi) != len(self.positions)
                                      or any(len(row) != len(self.positions) for row in self.rssi)):
            raise ConfigError("scenario.rssi", "matrix must be n x n")

    @property
    def size(self) -> int:
        return len(self.positions)


def link_table(scenario: Scenario) -> LinkTable:
    if scenario.rssi is not None:
        return LinkTable(np.array(scenario.rssi, dtype=float))
    return build_link_table(scenario.positions, scenario.radio, scenario.protocol.tx_power,
                            stream(scenario.seed, "shadowing"))


def drift_factors(scenario: Scenario) -> list[float]:
    ppm = scenario.protocol.clock_drift_ppm
    u = stream(scenario.seed, "drift").uniform(-1.0, 1.0, scenario.size)
    factors = [1.0 + ppm * 1e-6 * float(v) for v in u]
    factors[SINK_ID] = 1.0
    return factors


# ---------------------------------------------------------------------------
# event loop

class Event(NamedTuple):
    time: int
    sequence: int
    kind: str
    subject: int
    fn: Callable
    args: tuple


class Simulator:
    """Future-event set ordered by (time, sequence) plus the services layers share."""

    def __init__(self, seed: int = 0, collection: int = 0, states: Sequence[NodeState] = (),
                 energy: EnergyModel = EnergyModel()):
        self.now = 0
        self._heap: list[Event] = []
        self._seq = 0
        self.records: list[dict] = []
        self.backoff = stream(seed, "backoff", collection)
        self.offsets = stream(seed, "offsets", collection)
        self.reception = stream(seed, "reception", collection)
        self.states = list(states)
        self.energy = energy
        self.generated_at: dict[int, int] = {}
        self.mac: Optional[MacLayer] = None
        self.executed = 0

    def at(self, time: int, kind: str, subject: int, fn: Callable, *args) -> None:
        time = int(time)
        if time < self.now:
            raise SchedulingError(f"event at {time} scheduled in the past (now {self.now})")
        heapq.heappush(self._heap, Event(time, self._seq, kind, subject, fn, args))
        self._seq += 1

    def pending(self) -> int:
        return len(self._heap)

    def record(self, kind: str, node: int, **details) -> None:
        rec = {"t": self.now, "node": node, "kind": kind}
        rec.update(details)
        self.records.append(rec)

    def charge_tx(self, node: int, nbytes: int) -> None:
        if self.states:
            st = self.states[node]
            st.energy_percent = max(0.0, st.energy_percent - self.energy.tx_cost * nbytes)

    def charge_rx(self, node: int, nbytes: int) -> None:
        if self.states:
            st = self.states[node]
            st.energy_percent = max(0.0, st.energy_percent - self.energy.rx_cost * nbytes)

    def run(self, until: Optional[int] = None) -> int:
        heap = self._heap
        while heap:
            if until is not None and heap[0].time > until:
                break
            ev = heapq.heappop(heap)
            self.now = ev.time
            self.executed += 1
            ev.fn(*ev.args)
        return self.executed


# ---------------------------------------------------------------------------
# running scenarios

@dataclass
class RunResult:
    traces: list[EventTrace]
    report: object
    states: list[NodeState] = field(default_factory=list)


def run_collection(scenario: Scenario, table: LinkTable, states: list[NodeState], collection: int,
                   drift: Sequence[float]) -> EventTrace:
    """One collection on a fresh event loop starting at t = 0."""
    params = scenario.protocol
    for st in states:
        st.reset()
    sim = Simulator(scenario.seed, collection, states, scenario.energy)
    sink = SinkNode(states[SINK_ID], params, sim)
    nodes: list = [sink] + [HbcpNode(states[i], params, sim, drift[i]) for i in range(1, len(states))]

    def upcall(node: int, frame, rssi: float, src: int) -> None:
        nodes[node].on_frame(frame, rssi, src)

    sim.mac = MacLayer(sim, table, scenario.radio, scenario.mac, params.gamma_ga, upcall)
    sink.start_collection()
    sim.run()
    sink.finish_collection()

    for node in nodes[1:]:
        st = node.state
        queued = [p.origin for p in st.data_queue] + [p.origin for p in node.in_flight]
        sim.record("Timer", st.id, what="collection_end", covered=st.sector is not None,
                   sector=st.sector, parent=st.parent, backup=st.backup_parent,
                   parent_rssi=st.parent_rssi, via=st.joined_via, stranded=queued,
                   energy=round(st.energy_percent, 6))
        if st.phase is not Phase.ASLEEP and st.sector is None:
            raise RuntimeError(f"node {st.id} left discovery without a sector")
    meta = {
        "collection": collection, "seed": scenario.seed, "nodes": scenario.size,
        "max_hops": params.max_hops, "reuse": params.sector_reuse_distance,
        "hrs": params.hrs_enabled, "gamma_e": params.gamma_e,
        "collection_time": params.collection_time, "discovery_time": params.discovery_time,
        "drift": [float(f) for f in drift], "name": scenario.name,
    }
    return EventTrace(meta, sim.records)


def run(scenario: Scenario, report: bool = True) -> RunResult:
    """Execute ``scenario.collections`` independent collections; energy carries over."""
    from .metrics import summarize

    scenario.validate()
    table = link_table(scenario)
    drift = drift_factors(scenario)
    states = [NodeState(i, energy_percent=scenario.energy.initial) for i in range(scenario.size)]
    traces = [run_collection(scenario, table, states, c, drift) for c in range(scenario.collections)]
    return RunResult(traces, summarize(traces) if report else None, states)


# ---------------------------------------------------------------------------
# topologies

@dataclass(frozen=True)
class TopologyPreset:
    kind: str  # random_uniform | bottleneck | uniform_sectors | sectors
    counts: tuple[int, ...] = ()
    n: int = 0
    area: float = 0.0
    require_coverage: bool = False

    def validate(self, prefix: str = "topology") -> None:
        if self.kind == "random_uniform":
            if self.n < 1:
                raise ConfigError(f"{prefix}.n", "must be >= 1")
            if not self.area > 0:
                raise ConfigError(f"{prefix}.area_m", "must be > 0")
        elif self.kind in ("bottleneck", "uniform_sectors", "sectors"):
            if not self.resolved_counts() or any(c < 1 for c in self.resolved_counts()):
                raise ConfigError(f"{prefix}.counts", "every sector needs at least one node")
        else:
            raise ConfigError(f"{prefix}.kind", f"unknown preset {self.kind!r}")

    def resolved_counts(self) -> tuple[int, ...]:
        if self.counts:
            return tuple(self.counts)
        return {"bottleneck": (1, 1, 23), "uniform_sectors": (10, 10, 10)}.get(self.kind, ())


# margins (dB) kept under zero shadowing: rings two apart stay this far below the
# audibility floor, and a child stays this far above the good-link threshold
RING_FLOOR_MARGIN = 1.5
RING_LINK_MARGIN = 2.5


def ring_spacing(radio: RadioParams, gamma_q: float, tx_power: float) -> tuple[float, float]:
    """(spacing, max parent distance) for concentric sector rings under zero shadowing."""
    spacing = radio.distance_for(radio.gray_floor - RING_FLOOR_MARGIN, tx_power) / 2.0
    reach = radio.distance_for(gamma_q + RING_LINK_MARGIN, tx_power)
    if spacing > reach:
        raise InfeasibleGeometry(
            f"ring spacing {spacing:.2f} m exceeds good-link reach {reach:.2f} m; "
            "the path-loss model cannot separate sectors")
    return spacing, reach


def sector_rings(counts: Sequence[int], radio: RadioParams, gamma_q: float, tx_power: float,
                 rng: np.random.Generator) -> list[Position]:
    spacing, reach = ring_spacing(radio, gamma_q, tx_power)
    positions = [Position(0.0, 0.0)]
    previous: list[float] = []
    rotation = rng.uniform(0.0, 2.0 * math.pi)
    for ring, count in enumerate(counts, start=1):
        radius = ring * spacing
        if ring == 1:
            angles = [rotation + 2.0 * math.pi * j / count for j in range(count)]
        else:
            inner = (ring - 1) * spacing
            cos_max = (radius ** 2 + inner ** 2 - reach ** 2) / (2.0 * radius * inner)
            spread = 0.9 * math.acos(max(-1.0, min(1.0, cos_max)))
            angles = [previous[j % len(previous)] + rng.uniform(-spread, spread) for j in range(count)]
        positions.extend(Position(radius * math.cos(a), radius * math.sin(a)) for a in angles)
        previous = angles
    return positions


def random_uniform(n: int, area: float, rng: np.random.Generator) -> list[Position]:
    xy = rng.uniform(0.0, area, size=(n, 2))
    return [Position(area / 2.0, area / 2.0)] + [Position(float(x), float(y)) for x, y in xy]


def generate_topology(preset: TopologyPreset, rng: np.random.Generator,
                      radio: RadioParams = RadioParams(),
                      protocol: ProtocolParams = ProtocolParams()) -> list[Position]:
    """Positions with the sink first. Sectorized presets are checked against the
    breadth-first sector oracle under zero shadowing."""
    from .metrics import bfs_sector_oracle

    preset.validate()
    if preset.kind == "random_uniform":
        return random_uniform(preset.n, preset.area, rng)
    counts = preset.resolved_counts()
    positions = sector_rings(counts, radio, protocol.gamma_q, protocol.tx_power, rng)
    quiet = replace(radio, shadowing_sigma=0.0, symmetry_sigma=0.0)
    table = build_link_table(positions, quiet, protocol.tx_power, 0)
    sectors = bfs_sector_oracle(table, protocol.gamma_ga, protocol.gamma_q, protocol.max_hops)
    start = 1
    for ring, count in enumerate(counts, start=1):
        got = [sectors.get(i) for i in range(start, start + count)]
        if any(s != ring for s in got):
            raise InfeasibleGeometry(f"ring {ring} nodes did not land in sector {ring}: {got}")
        start += count
    return positions


def build_scenario(preset: TopologyPreset, seed: int, radio: RadioParams = RadioParams(),
                   mac: MacParams = MacParams(), protocol: ProtocolParams = ProtocolParams(),
                   collections: int = 1, energy: EnergyModel = EnergyModel(),
                   name: str = "scenario", max_attempts: int = 200) -> Scenario:
    """Draw a topology from the seed's topology stream. With ``require_coverage`` the draw
    is repeated until every node is reachable in the breadth-first sector oracle."""
    from .metrics import bfs_sector_oracle

    rng = stream(seed, "topology")
    for _ in range(max_attempts):
        positions = generate_topology(preset, rng, radio, protocol)
        scenario = Scenario(tuple(positions), radio, mac, protocol, seed, collections, energy, name=name)
        if not preset.require_coverage:
            return scenario
        sectors = bfs_sector_oracle(link_table(scenario), protocol.gamma_ga, protocol.gamma_q,
                                    protocol.max_hops)
        if len(sectors) == scenario.size:
            return scenario
    raise InfeasibleGeometry(f"no covered topology after {max_attempts} draws")
