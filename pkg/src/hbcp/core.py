"""HBCP domain types and the binary frame codec.

Wire layout (little-endian, fixed offsets)::

    header      [0] protocol_id  [1] frame_type  [2..3] source  [4] packet_size
    discovery   [5] hop  [6] energy_level  [7..8] coordination_time  [9] max_hops
                [10] drop_threshold  [11] quality_threshold  [12] tx_power
                [13..14] discovery_time  [15..16] collection_time  [17] reserved
    data        [5] sector  [6] payload_count  [7..8] total_payload_size
                then payload_count size bytes, then the concatenated payloads

Every payload starts with the two-byte origin node id so the sink can attribute
aggregated readings.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Union

SINK_ID = 0
BROADCAST = 0xFFFF

PROTOCOL_ID = 171
MAX_FRAME_BYTES = 128

FRAME_DISCOVERY = 0
FRAME_DATA = 1

HEADER_BYTES = 5
DISCOVERY_BODY_BYTES = 13
DISCOVERY_FRAME_BYTES = HEADER_BYTES + DISCOVERY_BODY_BYTES
DATA_FIXED_BYTES = HEADER_BYTES + 4
ORIGIN_BYTES = 2

RSSI_MIN = -120.0
RSSI_MAX = 10.0

_HEADER = struct.Struct("<BBHB")
_DISCOVERY = struct.Struct("<BBHBbbbHHB")
_DATA = struct.Struct("<BBH")


class ConfigError(ValueError):
    """Invalid configuration value; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class FrameError(ValueError):
    """Base class for codec failures."""


class BadMagic(FrameError):
    pass


class Truncated(FrameError):
    pass


class InconsistentSize(FrameError):
    pass


class InconsistentPayloadCount(FrameError):
    pass


class Oversize(FrameError):
    pass


class InvalidFrame(FrameError):
    """A field violates a type invariant (range, ordering, reserved byte)."""


def quantize_rssi(value: float) -> float:
    """Round to 0.1 dBm and clamp to the representable range."""
    value = min(max(value, RSSI_MIN), RSSI_MAX)
    return round(value * 10.0) / 10.0


@dataclass(frozen=True)
class HbcpHeader:
    source: int
    packet_size: int
    protocol_id: int = PROTOCOL_ID


@dataclass(frozen=True)
class DiscoveryFrame:
    hop: int
    energy_level: int
    coordination_time: int
    max_hops: int
    drop_threshold: int
    quality_threshold: int
    tx_power: int
    discovery_time: int
    collection_time: int

    def validate(self) -> None:
        _check_uint("hop", self.hop, 8)
        _check_uint("max_hops", self.max_hops, 8)
        _check_uint("coordination_time", self.coordination_time, 16)
        _check_uint("discovery_time", self.discovery_time, 16)
        _check_uint("collection_time", self.collection_time, 16)
        _check_int8("drop_threshold", self.drop_threshold)
        _check_int8("quality_threshold", self.quality_threshold)
        _check_int8("tx_power", self.tx_power)
        if not 0 <= self.energy_level <= 100:
            raise InvalidFrame(f"energy_level {self.energy_level} outside 0..100")
        if self.hop > self.max_hops:
            raise InvalidFrame(f"hop {self.hop} exceeds max_hops {self.max_hops}")
        if self.coordination_time > self.discovery_time:
            raise InvalidFrame("coordination_time exceeds discovery_time")
        if self.quality_threshold <= self.drop_threshold:
            raise InvalidFrame("quality_threshold must be above drop_threshold")


@dataclass(frozen=True)
class DataFrame:
    sector: int
    payloads: tuple[bytes, ...]

    @property
    def payload_count(self) -> int:
        return len(self.payloads)

    @property
    def payload_sizes(self) -> tuple[int, ...]:
        return tuple(len(p) for p in self.payloads)

    @property
    def total_payload_size(self) -> int:
        return sum(len(p) for p in self.payloads)

    @property
    def origins(self) -> tuple[int, ...]:
        return tuple(payload_origin(p) for p in self.payloads)

    def validate(self) -> None:
        _check_uint("sector", self.sector, 8)
        if not self.payloads:
            raise InconsistentPayloadCount("data frame carries no payload")
        if len(self.payloads) > 0xFF:
            raise InconsistentPayloadCount("more than 255 payloads")
        for p in self.payloads:
            if not ORIGIN_BYTES <= len(p) <= 0xFF:
                raise InvalidFrame(f"payload size {len(p)} outside 2..255")


Body = Union[DiscoveryFrame, DataFrame]


@dataclass(frozen=True)
class Frame:
    header: HbcpHeader
    body: Body = field()

    @property
    def source(self) -> int:
        return self.header.source

    @property
    def is_discovery(self) -> bool:
        return isinstance(self.body, DiscoveryFrame)

    @property
    def size(self) -> int:
        return self.header.packet_size


def body_size(body: Body) -> int:
    if isinstance(body, DiscoveryFrame):
        return DISCOVERY_BODY_BYTES
    return 4 + len(body.payloads) + body.total_payload_size


def make_frame(source: int, body: Body) -> Frame:
    """Wrap ``body`` in a header whose packet_size matches the encoding."""
    return Frame(HbcpHeader(source=source, packet_size=HEADER_BYTES + body_size(body)), body)


def data_frame_bytes(payload_sizes) -> int:
    return DATA_FIXED_BYTES + sum(1 + s for s in payload_sizes)


def make_payload(origin: int, reading: bytes = b"") -> bytes:
    return struct.pack("<H", origin) + reading


def payload_origin(payload: bytes) -> int:
    return struct.unpack_from("<H", payload)[0]


def encode_frame(frame: Frame) -> bytes:
    header, body = frame.header, frame.body
    if header.protocol_id != PROTOCOL_ID:
        raise BadMagic(f"protocol_id {header.protocol_id} != {PROTOCOL_ID}")
    _check_uint("source", header.source, 16)
    body.validate()
    expected = HEADER_BYTES + body_size(body)
    if expected > MAX_FRAME_BYTES:
        raise Oversize(f"{expected} bytes exceeds the {MAX_FRAME_BYTES}-byte frame")
    if header.packet_size != expected:
        raise InconsistentSize(f"packet_size {header.packet_size} but body needs {expected}")

    if isinstance(body, DiscoveryFrame):
        out = _HEADER.pack(header.protocol_id, FRAME_DISCOVERY, header.source, expected)
        out += _DISCOVERY.pack(
            body.hop, body.energy_level, body.coordination_time, body.max_hops,
            body.drop_threshold, body.quality_threshold, body.tx_power,
            body.discovery_time, body.collection_time, 0,
        )
        return out
    out = bytearray(_HEADER.pack(header.protocol_id, FRAME_DATA, header.source, expected))
    out += _DATA.pack(body.sector, body.payload_count, body.total_payload_size)
    out += bytes(body.payload_sizes)
    for p in body.payloads:
        out += p
    return bytes(out)


def decode_frame(data: bytes) -> Frame:
    """Parse one frame; raises a :class:`FrameError` subclass on any violation."""
    data = bytes(data)
    if len(data) < HEADER_BYTES:
        raise Truncated(f"{len(data)} bytes is shorter than the header")
    protocol_id, frame_type, source, packet_size = _HEADER.unpack_from(data)
    if protocol_id != PROTOCOL_ID:
        raise BadMagic(f"protocol_id {protocol_id} != {PROTOCOL_ID}")
    if len(data) < packet_size:
        raise Truncated(f"packet_size {packet_size} but only {len(data)} bytes")
    if len(data) > packet_size:
        raise InconsistentSize(f"packet_size {packet_size} but {len(data)} bytes given")
    header = HbcpHeader(source=source, packet_size=packet_size)

    if frame_type == FRAME_DISCOVERY:
        if packet_size < DISCOVERY_FRAME_BYTES:
            raise Truncated("discovery body truncated")
        if packet_size != DISCOVERY_FRAME_BYTES:
            raise InconsistentSize(f"discovery frame must be {DISCOVERY_FRAME_BYTES} bytes")
        fields = _DISCOVERY.unpack_from(data, HEADER_BYTES)
        if fields[-1] != 0:
            raise InvalidFrame("reserved byte is not zero")
        body = DiscoveryFrame(*fields[:-1])
        body.validate()
        return Frame(header, body)

    if frame_type != FRAME_DATA:
        raise InvalidFrame(f"unknown frame type {frame_type}")
    if packet_size < DATA_FIXED_BYTES:
        raise Truncated("data body truncated")
    sector, count, total = _DATA.unpack_from(data, HEADER_BYTES)
    if count == 0:
        raise InconsistentPayloadCount("payload_count is zero")
    sizes_end = DATA_FIXED_BYTES + count
    if sizes_end > packet_size:
        raise InconsistentPayloadCount(f"payload_count {count} does not fit the packet")
    sizes = data[DATA_FIXED_BYTES:sizes_end]
    if sum(sizes) != total:
        raise InconsistentSize(f"payload sizes sum to {sum(sizes)}, header says {total}")
    if sizes_end + total != packet_size:
        raise InconsistentSize("payload bytes disagree with packet_size")
    payloads = []
    pos = sizes_end
    for s in sizes:
        payloads.append(data[pos:pos + s])
        pos += s
    body = DataFrame(sector=sector, payloads=tuple(payloads))
    body.validate()
    return Frame(header, body)


def _check_uint(name: str, value: int, bits: int) -> None:
    if not isinstance(value, int) or not 0 <= value < (1 << bits):
        raise InvalidFrame(f"{name}={value!r} is not an unsigned {bits}-bit integer")


def _check_int8(name: str, value: int) -> None:
    if not isinstance(value, int) or not -128 <= value <= 127:
        raise InvalidFrame(f"{name}={value!r} is not a signed 8-bit integer")
