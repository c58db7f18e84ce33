"""Unslotted CSMA with random backoff, link-layer acknowledgments and bounded
retransmissions, sitting between the node state machines and the radio model."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

from .core import BROADCAST, ConfigError, Frame, MAX_FRAME_BYTES
from .radio import LinkTable, RadioParams, Transmission, decodable

DELIVERED = "delivered"
ACK_FAILED = "ack_failed"
SENT_BROADCAST = "sent_broadcast"
EXPIRED = "expired"


class QueueFull(RuntimeError):
    """The node's MAC already holds a pending request."""


@dataclass(frozen=True)
class MacParams:
    initial_backoff_window: float = 10.0   # ms
    congestion_backoff_window: float = 30.0  # ms
    max_retransmissions: int = 32
    ack_timeout: float = 5.0  # ms
    ack_duration: float = 0.352  # ms
    byte_airtime: float = 32.0  # us per byte
    # acks are always delivered when the data frame was; False runs them through the radio
    ideal_acks: bool = True

    def validate(self, prefix: str = "mac") -> None:
        if self.max_retransmissions < 0:
            raise ConfigError(f"{prefix}.max_retransmissions", "must be >= 0")
        for name, unit in (("initial_backoff_window", "ms"), ("congestion_backoff_window", "ms"),
                           ("ack_timeout", "ms"), ("ack_duration", "ms"), ("byte_airtime", "us")):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{prefix}.{name}_{unit}", "must be > 0")
        if self.ack_duration >= self.ack_timeout:
            raise ConfigError(f"{prefix}.ack_timeout_ms", "must exceed ack_duration_ms")

    def airtime_us(self, nbytes: int) -> int:
        return int(round(nbytes * self.byte_airtime))


@dataclass(frozen=True)
class TxRequest:
    frame: Frame
    destination: int = BROADCAST
    acknowledged: bool = False
    # called with the frame's end time when it goes on air; returns the frame to send
    stamp: Optional[Callable[[int], Frame]] = field(default=None, compare=False)

    def __post_init__(self):
        if self.destination == BROADCAST and self.acknowledged:
            raise ValueError("broadcast requests cannot be acknowledged")

    @classmethod
    def unicast(cls, frame: Frame, destination: int) -> "TxRequest":
        return cls(frame, destination, True)


class _NodeMac:
    __slots__ = ("request", "deadline", "on_done", "attempts", "token", "sending", "waiting_ack")

    def __init__(self):
        self.request: Optional[TxRequest] = None
        self.deadline: Optional[int] = None
        self.on_done: Optional[Callable] = None
        self.attempts = 0
        self.token = 0
        self.sending: Optional[Transmission] = None
        self.waiting_ack = False


class MacLayer:
    """All per-node MAC instances of one simulation plus the shared medium.

    ``sim`` supplies ``now``, ``at(time, kind, subject, fn, *args)``, ``record(...)``,
    ``charge_tx``/``charge_rx`` and the ``backoff``/``reception`` RNG streams.
    ``on_receive(node, frame, rssi, src)`` is the upcall into the protocol layer.
    """

    def __init__(self, sim, table: LinkTable, radio: RadioParams, params: MacParams,
                 gamma_ga: float, on_receive: Callable):
        self.sim = sim
        self.table = table
        self.radio = radio
        self.params = params
        self.gamma_ga = gamma_ga
        self.on_receive = on_receive
        self.nodes = [_NodeMac() for _ in range(table.size)]
        self.recent: list[Transmission] = []
        self.ack_bytes = max(1, int(round(params.ack_duration * 1000.0 / params.byte_airtime)))
        self._max_air = params.airtime_us(MAX_FRAME_BYTES)
        self._init_us = params.initial_backoff_window * 1000.0
        self._cong_us = params.congestion_backoff_window * 1000.0
        self._ack_timeout_us = int(round(params.ack_timeout * 1000.0))
        self._audible = [table.audible_from(i, radio.gray_floor) for i in range(table.size)]

    # -- requests -----------------------------------------------------------
    def busy(self, node: int) -> bool:
        return self.nodes[node].request is not None

    def submit(self, node: int, request: TxRequest, deadline: Optional[int] = None,
               on_done: Optional[Callable] = None) -> None:
        m = self.nodes[node]
        if m.request is not None:
            raise QueueFull(f"node {node} already has a pending request")
        m.request = request
        m.deadline = deadline
        m.on_done = on_done
        m.attempts = 0
        m.token += 1
        self._backoff(node, self._init_us)

    def _backoff(self, node: int, window_us: float) -> None:
        m = self.nodes[node]
        delay = int(self.sim.backoff.random() * window_us)
        self.sim.at(self.sim.now + delay, "Timer", node, self._carrier_sense, node, m.token)

    def channel_busy(self, node: int) -> bool:
        now = self.sim.now
        floor = self.radio.gray_floor
        for t in self.recent:
            if t.start <= now < t.end and t.tx != node and self.table(t.tx, node) > floor:
                return True
        return False

    def _carrier_sense(self, node: int, token: int) -> None:
        m = self.nodes[node]
        if token != m.token or m.request is None:
            return
        if m.sending is not None or self.channel_busy(node):
            self._backoff(node, self._cong_us)
            return
        request = m.request
        duration = self.params.airtime_us(request.frame.size)
        now = self.sim.now
        if m.deadline is not None and now + duration > m.deadline:
            self._complete(node, EXPIRED)
            return
        m.attempts += 1
        frame = request.frame
        if request.stamp is not None:
            frame = request.stamp(now + duration)
            if frame.size != request.frame.size:
                raise ValueError("stamping must not change the frame size")
        kind = "discovery" if frame.is_discovery else "data"
        t = Transmission(node, frame, now, duration, request.destination, kind)
        self._start(t, attempt=m.attempts)

    def _start(self, t: Transmission, attempt: int = 1) -> None:
        self.nodes[t.tx].sending = t
        self.recent.append(t)
        nbytes = self.ack_bytes if t.kind == "ack" else t.frame.size
        self.sim.charge_tx(t.tx, nbytes)
        details = {"what": t.kind, "dst": t.destination, "bytes": nbytes, "end": t.end}
        if t.kind == "data":
            details["sector"] = t.frame.body.sector
            details["origins"] = list(t.frame.body.origins)
            details["attempt"] = attempt
        elif t.kind == "discovery":
            details["hop"] = t.frame.body.hop
        self.sim.record("TxStart", t.tx, **details)
        self.sim.at(t.end, "TxEnd", t.tx, self._end, t)

    # -- completion of a transmission on the medium ---------------------------
    def _overlapping(self, t: Transmission) -> list[Transmission]:
        return [u for u in self.recent if u is t or u.overlaps(t)]

    def _gets(self, t: Transmission, rx: int) -> bool:
        group = self._overlapping(t)
        return t in decodable(group, rx, self.table, self.radio, self.sim.reception, self.gamma_ga)

    def _end(self, t: Transmission) -> None:
        now = self.sim.now
        self.nodes[t.tx].sending = None
        nbytes = self.ack_bytes if t.kind == "ack" else t.frame.size
        for rx in self._audible[t.tx]:
            self.sim.charge_rx(rx, nbytes)

        if t.kind == "ack":
            sender = t.destination
            ok = self.params.ideal_acks or self._gets(t, sender)
            self.sim.record("TxEnd", t.tx, what="ack", dst=sender, delivered=ok)
            m = self.nodes[sender]
            if ok and m.waiting_ack and m.token == t.frame:
                m.waiting_ack = False
                self._complete(sender, DELIVERED)
        elif t.destination == BROADCAST:
            got = [rx for rx in self._audible[t.tx] if self._gets(t, rx)]
            self.sim.record("TxEnd", t.tx, what=t.kind, dst=t.destination, delivered=got)
            self._complete(t.tx, SENT_BROADCAST)
            for rx in got:
                self.notify_reception(rx, t.frame, self.table(t.tx, rx), t)
        else:
            dest = t.destination
            ok = self.table(t.tx, dest) > self.radio.gray_floor and self._gets(t, dest)
            self.sim.record("TxEnd", t.tx, what=t.kind, dst=dest, delivered=[dest] if ok else [])
            m = self.nodes[t.tx]
            m.waiting_ack = True
            self.sim.at(now + self._ack_timeout_us, "Timer", t.tx, self._ack_timeout, t.tx, m.token,
                        m.attempts)
            if ok:
                self.notify_reception(dest, t.frame, self.table(t.tx, dest), t)
        self._prune()

    def notify_reception(self, node: int, frame: Frame, rssi: float, t: Transmission) -> None:
        if t.destination not in (BROADCAST, node):
            return
        if t.destination == node:
            self._send_ack(node, t)
        self.on_receive(node, frame, rssi, t.tx)

    def _send_ack(self, node: int, t: Transmission) -> None:
        if self.nodes[node].sending is not None:
            self.sim.record("Timer", node, what="ack_skipped", dst=t.tx)
            return
        duration = int(round(self.params.ack_duration * 1000.0))
        # the ack carries the sender's request token so stale acks are ignored
        ack = Transmission(node, self.nodes[t.tx].token, self.sim.now, duration, t.tx, "ack")
        self._start(ack)

    def _ack_timeout(self, node: int, token: int, attempt: int) -> None:
        m = self.nodes[node]
        if token != m.token or not m.waiting_ack or m.attempts != attempt:
            return
        m.waiting_ack = False
        if m.attempts > self.params.max_retransmissions:
            self._complete(node, ACK_FAILED)
        else:
            self._backoff(node, self._init_us)

    def _complete(self, node: int, result: str) -> None:
        m = self.nodes[node]
        request, on_done, attempts = m.request, m.on_done, m.attempts
        m.request = None
        m.on_done = None
        m.waiting_ack = False
        m.token += 1
        if on_done is not None:
            on_done(result, request, attempts)

    def _prune(self) -> None:
        if len(self.recent) < 32:
            return
        horizon = self.sim.now - self._max_air
        self.recent = [u for u in self.recent if u.end > horizon]
