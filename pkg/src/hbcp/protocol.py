"""HBCP node behaviour: discovery and sector classification, RSSI-based parent
selection with a second listening window and low-energy downgrade, wave-scheduled
collection slots, randomized transmit offsets, aggregation and forwarding."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

from .core import (
    BROADCAST, ConfigError, DataFrame, DiscoveryFrame, Frame, MAX_FRAME_BYTES, SINK_ID,
    data_frame_bytes, make_frame, make_payload,
)
from .mac import ACK_FAILED, DELIVERED, EXPIRED, TxRequest

NEG_INF = -math.inf


class Phase(Enum):
    ASLEEP = "asleep"
    FIRST_DISCOVERY = "first_discovery"
    SECOND_DISCOVERY = "second_discovery"
    AWAIT_COLLECTION = "await_collection"
    COLLECTING = "collecting"
    DONE = "done"


class CollectionInProgress(RuntimeError):
    pass


class UnassignedSector(RuntimeError):
    pass


@dataclass(frozen=True)
class ProtocolParams:
    max_hops: int = 10
    discovery_time: int = 1000  # ms
    collection_time: int = 2000  # ms
    gamma_ga: float = -87.0
    gamma_q: float = -82.0
    gamma_v: float = 5.0
    gamma_e: float = 15.0
    tx_power: float = 0.0
    sector_reuse_distance: int = 3
    forward_window_fraction: float = 0.8
    max_payloads_per_packet: int = 3
    hrs_enabled: bool = True
    payload_bytes: int = 24
    queue_capacity: int = 64
    clock_drift_ppm: float = 40.0
    # discovery broadcasts are planned to leave this much room before the window closes
    discovery_guard: int = 50  # ms

    def validate(self, prefix: str = "protocol") -> None:
        if not 1 <= self.max_hops <= 255:
            raise ConfigError(f"{prefix}.max_hops", "must lie in 1..255")
        if not 1 <= self.discovery_time <= 0xFFFF:
            raise ConfigError(f"{prefix}.discovery_time_ms", "must lie in 1..65535")
        if not 1 <= self.collection_time <= 0xFFFF:
            raise ConfigError(f"{prefix}.collection_time_ms", "must lie in 1..65535")
        for name in ("gamma_ga", "gamma_q", "tx_power"):
            value = getattr(self, name)
            if value != int(value) or not -128 <= value <= 127:
                raise ConfigError(f"{prefix}.{name}_dbm", "must be an integer dBm in -128..127")
        if abs(self.gamma_q - (self.gamma_ga + self.gamma_v)) > 1e-9:
            raise ConfigError(f"{prefix}.gamma_q_dbm", "must equal gamma_ga_dbm + gamma_v_db")
        if self.gamma_v <= 0:
            raise ConfigError(f"{prefix}.gamma_v_db", "must be > 0")
        if not 0 <= self.gamma_e <= 100:
            raise ConfigError(f"{prefix}.gamma_e_percent", "must lie in 0..100")
        if self.sector_reuse_distance < 1 or (self.hrs_enabled and self.sector_reuse_distance < 3):
            raise ConfigError(f"{prefix}.sector_reuse_distance", "must be >= 3 when HRS is enabled")
        if not 0 < self.forward_window_fraction <= 1:
            raise ConfigError(f"{prefix}.forward_window_fraction", "must lie in (0, 1]")
        if self.max_payloads_per_packet < 1:
            raise ConfigError(f"{prefix}.max_payloads_per_packet", "must be >= 1")
        if not 2 <= self.payload_bytes or data_frame_bytes([self.payload_bytes]) > MAX_FRAME_BYTES:
            raise ConfigError(f"{prefix}.payload_bytes", "a single payload must fit one frame")
        if self.queue_capacity < 1:
            raise ConfigError(f"{prefix}.queue_capacity", "must be >= 1")
        if self.clock_drift_ppm < 0:
            raise ConfigError(f"{prefix}.clock_drift_ppm", "must be >= 0")
        if self.discovery_guard < 0:
            raise ConfigError(f"{prefix}.discovery_guard_ms", "must be >= 0")

    def discovery_frame(self, hop: int = 0, energy: int = 100, coordination_time: int = 0) -> DiscoveryFrame:
        return DiscoveryFrame(
            hop=hop, energy_level=energy, coordination_time=coordination_time,
            max_hops=self.max_hops, drop_threshold=int(self.gamma_ga),
            quality_threshold=int(self.gamma_q), tx_power=int(self.tx_power),
            discovery_time=self.discovery_time, collection_time=self.collection_time,
        )


@dataclass(frozen=True)
class PayloadRecord:
    origin: int
    data: bytes

    @property
    def size(self) -> int:
        return len(self.data)


@dataclass
class NodeState:
    id: int
    energy_percent: float = 100.0
    phase: Phase = Phase.ASLEEP
    sector: Optional[int] = None
    parent: Optional[int] = None
    backup_parent: Optional[int] = None
    current_quality: float = NEG_INF
    data_queue: deque = field(default_factory=deque)
    discovery_deadline: Optional[int] = None
    coordination_time_drawn: Optional[int] = None
    tentative_sector: Optional[int] = None
    second_deadline: Optional[int] = None
    parent_rssi: Optional[float] = None
    backup_rssi: Optional[float] = None
    sector_anchor: Optional[int] = None
    # performance parameters learned from the first qualifying discovery
    learned: Optional[DiscoveryFrame] = None
    joined_via: Optional[str] = None

    def reset(self) -> None:
        """Forget routing state between collections; energy persists."""
        energy = self.energy_percent
        self.__init__(self.id)
        self.energy_percent = energy


# ---------------------------------------------------------------------------
# pure rules

def effective_quality(rssi: float, sender_energy: float, gamma_q: float, gamma_e: float) -> float:
    """Link quality after the low-energy downgrade to the floor of the good range."""
    if sender_energy < gamma_e and rssi >= gamma_q:
        return gamma_q
    return rssi


def first_period_update(state: NodeState, sender: int, quality: float, gamma_q: float) -> bool:
    """Parent selection during the first listening window. Returns True on update."""
    if quality < state.current_quality:
        return False
    state.current_quality = quality
    if quality >= gamma_q:
        state.parent = sender
    state.backup_parent = sender
    return True


def second_period_update(state: NodeState, sender: int, quality: float, gamma_q: float) -> bool:
    if quality >= gamma_q and quality >= state.current_quality:
        state.parent = sender
        state.current_quality = quality
        return True
    return False


def sector_active(sector: int, slot: int, reuse: int) -> bool:
    """Wave schedule: slot 0 carries sectors 3, 6, 9 for reuse 3, then 2, 5, 8, then 1, 4, 7."""
    return (sector + slot) % reuse == 0


def active_sectors(slot: int, max_hops: int, reuse: int) -> list[int]:
    return [s for s in range(1, max_hops + 1) if sector_active(s, slot, reuse)]


def collection_wait(node: NodeState, params: Optional[ProtocolParams] = None) -> int:
    """Milliseconds between the node's sector anchor and the collection epoch."""
    if node.sector is None:
        raise UnassignedSector(f"node {node.id} has no sector")
    if node.learned is not None:
        max_hops, discovery_time = node.learned.max_hops, node.learned.discovery_time
    elif params is not None:
        max_hops, discovery_time = params.max_hops, params.discovery_time
    else:
        raise UnassignedSector(f"node {node.id} has no collection parameters")
    return max(max_hops - node.sector, 0) * discovery_time


def transmit_slots(sector: int, params: ProtocolParams) -> list[int]:
    if not params.hrs_enabled:
        return [0]
    return [k for k in range(params.max_hops)
            if sector_active(sector, k, params.sector_reuse_distance)]


def coordination_draw(rng, discovery_time: int, guard: int) -> int:
    """Integer ms in [1, discovery_time - guard); degenerate windows fall back to [0, 1)."""
    lo = 1 if discovery_time > 1 else 0
    hi = max(lo + 1, discovery_time - guard)
    return int(rng.integers(lo, hi))


def take_frame_payloads(queue, max_payloads: int) -> list[PayloadRecord]:
    """Pop the longest run of head payloads that fits one frame."""
    taken: list[PayloadRecord] = []
    sizes: list[int] = []
    while queue and len(taken) < max_payloads:
        nxt = queue[0]
        if data_frame_bytes(sizes + [nxt.size]) > MAX_FRAME_BYTES:
            break
        taken.append(queue.popleft())
        sizes.append(nxt.size)
    return taken


def pack_frames(payloads, max_payloads: int, source: int, sector: int) -> list[Frame]:
    queue = deque(payloads)
    frames = []
    while queue:
        chunk = take_frame_payloads(queue, max_payloads)
        if not chunk:
            raise ValueError("payload larger than a frame")
        frames.append(make_frame(source, DataFrame(sector, tuple(p.data for p in chunk))))
    return frames


def forward_queue(node: NodeState, slot_start: int, params: ProtocolParams, rng,
                  window_ms: Optional[float] = None) -> tuple[int, list[TxRequest]]:
    """Start time (us) and the unicast requests that drain ``node``'s queue toward its parent."""
    if not node.data_queue:
        return slot_start, []
    window = params.collection_time if window_ms is None else window_ms
    offset = int(rng.random() * params.forward_window_fraction * window * 1000.0)
    frames = pack_frames(node.data_queue, params.max_payloads_per_packet, node.id, node.sector)
    return slot_start + offset, [TxRequest.unicast(f, node.parent) for f in frames]


# ---------------------------------------------------------------------------
# node state machines

class HbcpNode:
    """One sensor. ``sim`` offers now/at/record/mac/offsets and the drift factor list."""

    def __init__(self, state: NodeState, params: ProtocolParams, sim, drift: float = 1.0):
        self.state = state
        self.params = params
        self.sim = sim
        self.drift = drift
        self.window_end: Optional[int] = None
        self.released = False
        self.in_flight: list[PayloadRecord] = []
        self.last_slot_end: Optional[int] = None

    @property
    def id(self) -> int:
        return self.state.id

    def local(self, ms: float) -> int:
        """Global microseconds spanned by ``ms`` of this node's clock."""
        return int(round(ms * 1000.0 * self.drift))

    def on_frame(self, frame: Frame, rssi: float, src: int) -> None:
        if frame.is_discovery:
            self.on_discovery(frame.body, rssi, self.sim.now, src)
        else:
            self.on_data(frame.body, src)

    # -- discovery -------------------------------------------------------------
    def on_discovery(self, frame: DiscoveryFrame, rssi: float, at: int, src: int) -> None:
        st = self.state
        self.sim.record("Upcall", st.id, what="discovery", src=src, hop=frame.hop, rssi=rssi,
                        energy=frame.energy_level, ct=frame.coordination_time,
                        dt=frame.discovery_time, ga=frame.drop_threshold, q=frame.quality_threshold)
        if st.phase is Phase.FIRST_DISCOVERY and at >= st.discovery_deadline:
            self.close_first_window()
        if st.phase is Phase.SECOND_DISCOVERY and at >= st.second_deadline:
            self.close_second_window()
        if st.phase not in (Phase.ASLEEP, Phase.FIRST_DISCOVERY, Phase.SECOND_DISCOVERY):
            return
        if rssi < frame.drop_threshold:
            return

        if st.phase is Phase.ASLEEP:
            st.phase = Phase.FIRST_DISCOVERY
            st.learned = frame
            st.tentative_sector = frame.hop + 1
            st.discovery_deadline = at + self.local(frame.discovery_time - frame.coordination_time)
            self.sim.record("Timer", st.id, what="first_window", deadline=st.discovery_deadline,
                            t0=at, td=frame.discovery_time, tc=frame.coordination_time)
            self.sim.at(st.discovery_deadline, "Timer", st.id, self.close_first_window)

        gamma_q = frame.quality_threshold
        quality = effective_quality(rssi, frame.energy_level, gamma_q, self.params.gamma_e)
        if st.phase is Phase.FIRST_DISCOVERY:
            if frame.hop + 1 == st.tentative_sector and first_period_update(st, src, quality, gamma_q):
                st.backup_rssi = rssi
                if st.parent == src:
                    st.parent_rssi = rssi
        elif frame.hop == st.tentative_sector:
            if second_period_update(st, src, quality, gamma_q):
                st.parent_rssi = rssi

    def close_first_window(self) -> None:
        st = self.state
        if st.phase is not Phase.FIRST_DISCOVERY:
            return
        if st.parent is not None:
            self._join(st.tentative_sector, st.discovery_deadline, "first")
            return
        if st.tentative_sector >= st.learned.max_hops:
            # the deepest sector never announces, so a second window could not help
            st.parent = st.backup_parent
            st.parent_rssi = st.backup_rssi
            self._join(st.tentative_sector, st.discovery_deadline, "backup")
            return
        st.phase = Phase.SECOND_DISCOVERY
        st.second_deadline = st.discovery_deadline + self.local(st.learned.discovery_time)
        self.sim.record("Timer", st.id, what="second_window", deadline=st.second_deadline,
                        backup=st.backup_parent)
        self.sim.at(st.second_deadline, "Timer", st.id, self.close_second_window)

    def close_second_window(self) -> None:
        st = self.state
        if st.phase is not Phase.SECOND_DISCOVERY:
            return
        if st.parent is not None:
            self._join(st.tentative_sector + 1, st.second_deadline, "second")
        else:
            st.parent = st.backup_parent
            st.parent_rssi = st.backup_rssi
            self._join(st.tentative_sector, st.discovery_deadline, "backup")

    def _join(self, sector: int, anchor: int, via: str) -> None:
        st = self.state
        st.sector = sector
        st.sector_anchor = anchor
        st.joined_via = via
        st.phase = Phase.AWAIT_COLLECTION
        self.sim.record("Timer", st.id, what="join", sector=sector, parent=st.parent,
                        backup=st.backup_parent, via=via, parent_rssi=st.parent_rssi,
                        quality=st.current_quality)
        payload = PayloadRecord(st.id, make_payload(st.id, bytes(self.params.payload_bytes - 2)))
        st.data_queue.append(payload)
        self.sim.generated_at[st.id] = self.sim.now
        self.sim.record("Upcall", st.id, what="generate", origin=st.id)
        # a node settling on its backup link missed its own broadcast window
        if via != "backup":
            self.send_discovery(anchor)
        self._schedule_collection()

    def send_discovery(self, anchor: int) -> None:
        st = self.state
        if st.sector >= st.learned.max_hops:
            return
        tc = coordination_draw(self.sim.offsets, st.learned.discovery_time, self.params.discovery_guard)
        st.coordination_time_drawn = tc
        self.sim.at(anchor + self.local(tc), "Timer", st.id, self._broadcast_discovery, anchor)

    def _broadcast_discovery(self, anchor: int) -> None:
        st = self.state
        learned = st.learned
        body = DiscoveryFrame(
            hop=st.sector, energy_level=int(max(0.0, min(100.0, st.energy_percent))),
            coordination_time=st.coordination_time_drawn, max_hops=learned.max_hops,
            drop_threshold=learned.drop_threshold, quality_threshold=learned.quality_threshold,
            tx_power=learned.tx_power, discovery_time=learned.discovery_time,
            collection_time=learned.collection_time,
        )

        def stamp(end: int) -> Frame:
            # advertise the time actually spent since the anchor, MAC backoff and airtime
            # included, rounded up so hearers never place their deadline past the grid
            elapsed = math.ceil((end - anchor) / (1000.0 * self.drift) - 1e-9)
            return make_frame(st.id, replace(body, coordination_time=min(elapsed, learned.discovery_time)))

        # a broadcast that cannot leave before the window closes is dropped
        deadline = anchor + self.local(max(learned.discovery_time - 1, 0))
        self.sim.mac.submit(st.id, TxRequest(make_frame(st.id, body), stamp=stamp), deadline=deadline)

    # -- collection ------------------------------------------------------------
    def epoch(self) -> int:
        return self.state.sector_anchor + self.local(collection_wait(self.state))

    def _schedule_collection(self) -> None:
        st = self.state
        epoch = self.epoch()
        ct = st.learned.collection_time
        self.sim.at(epoch, "Timer", st.id, self._begin_collecting)
        if self.params.hrs_enabled:
            slots = transmit_slots(st.sector, self._slot_params())
            window = ct
            windows = [(epoch + self.local(k * ct), epoch + self.local((k + 1) * ct), k) for k in slots]
        else:
            window = ct * st.learned.max_hops
            windows = [(epoch, epoch + self.local(window), 0)]
        for start, end, k in windows:
            self.sim.at(start, "Timer", st.id, self._open_window, start, end, k, window)
        self.last_slot_end = windows[-1][1] if windows else epoch
        self.sim.at(self.last_slot_end, "Timer", st.id, self._finish)

    def _slot_params(self) -> ProtocolParams:
        learned = self.state.learned
        return ProtocolParams(max_hops=learned.max_hops, hrs_enabled=True,
                              sector_reuse_distance=self.params.sector_reuse_distance)

    def _begin_collecting(self) -> None:
        if self.state.phase is Phase.AWAIT_COLLECTION:
            self.state.phase = Phase.COLLECTING

    def _open_window(self, start: int, end: int, slot: int, window_ms: float) -> None:
        self.window_end = end
        self.released = False
        offset = self.local(self.sim.offsets.random() * self.params.forward_window_fraction * window_ms)
        self.sim.record("Timer", self.id, what="slot", slot=slot, start=start, end=end,
                        release=start + offset)
        self.sim.at(start + offset, "Timer", self.id, self._release, end)

    def _release(self, end: int) -> None:
        if self.window_end != end or self.sim.now >= end:
            return
        self.released = True
        self._pump()

    def _finish(self) -> None:
        self.released = False
        self.window_end = None
        self.state.phase = Phase.DONE

    def _pump(self) -> None:
        st = self.state
        if not self.released or self.in_flight or not st.data_queue:
            return
        if self.sim.now >= self.window_end:
            self.released = False
            return
        chunk = take_frame_payloads(st.data_queue, self.params.max_payloads_per_packet)
        self.in_flight = chunk
        frame = make_frame(st.id, DataFrame(st.sector, tuple(p.data for p in chunk)))
        self.sim.mac.submit(st.id, TxRequest.unicast(frame, st.parent), deadline=self.window_end,
                            on_done=self._tx_done)

    def _tx_done(self, result: str, request: TxRequest, attempts: int) -> None:
        chunk, self.in_flight = self.in_flight, []
        origins = [p.origin for p in chunk]
        self.sim.record("Upcall", self.id, what="tx_done", result=result, origins=origins,
                        attempts=attempts)
        if result == ACK_FAILED:
            self.sim.record("Upcall", self.id, what="drop_retry", origins=origins)
        elif result == EXPIRED:
            self.state.data_queue.extendleft(reversed(chunk))
            self.released = False
            return
        self._pump()

    def on_data(self, frame: DataFrame, src: int) -> int:
        """Queue relayed payloads; returns how many overflowed the queue."""
        st = self.state
        dropped = []
        for data in frame.payloads:
            record = PayloadRecord(int.from_bytes(data[:2], "little"), data)
            if len(st.data_queue) >= self.params.queue_capacity:
                dropped.append(record.origin)
            else:
                st.data_queue.append(record)
        self.sim.record("Upcall", st.id, what="data", src=src, origins=list(frame.origins),
                        overflow=dropped)
        for origin in dropped:
            self.sim.record("Upcall", st.id, what="drop_overflow", origin=origin)
        self._pump()
        return len(dropped)


class SinkNode:
    """Node 0: triggers the collection and records what arrives."""

    def __init__(self, state: NodeState, params: ProtocolParams, sim):
        self.state = state
        self.params = params
        self.sim = sim
        self.collecting = False
        self.delivered: dict[int, int] = {}
        self.duplicates: dict[int, int] = {}

    @property
    def id(self) -> int:
        return self.state.id

    def start_collection(self, at: Optional[int] = None) -> Frame:
        if self.collecting:
            raise CollectionInProgress("a collection is already running")
        self.collecting = True
        self.state.phase = Phase.COLLECTING
        self.state.sector = 0
        frame = make_frame(SINK_ID, self.params.discovery_frame(
            hop=0, energy=int(max(0.0, min(100.0, self.state.energy_percent)))))
        if self.sim is not None:
            self.sim.record("Timer", self.id, what="start_collection")
            self.sim.mac.submit(self.id, TxRequest(frame, BROADCAST))
        return frame

    def finish_collection(self) -> None:
        self.collecting = False
        self.state.phase = Phase.DONE

    def on_frame(self, frame: Frame, rssi: float, src: int) -> None:
        if not frame.is_discovery:
            self.on_data(frame.body, src)

    def on_data(self, frame: DataFrame, src: int) -> None:
        now = self.sim.now
        for origin in frame.origins:
            duplicate = origin in self.delivered
            if duplicate:
                self.duplicates[origin] = self.duplicates.get(origin, 0) + 1
            else:
                self.delivered[origin] = now
            self.sim.record("Upcall", self.id, what="sink_delivery", origin=origin, src=src,
                            duplicate=duplicate, latency=now - self.sim.generated_at.get(origin, now))
