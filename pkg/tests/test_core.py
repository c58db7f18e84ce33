import struct

import pytest
from hypothesis import given, settings, strategies as st

from hbcp.core import (
    BadMagic, DataFrame, DiscoveryFrame, FrameError, HbcpHeader, InconsistentPayloadCount,
    InconsistentSize, MAX_FRAME_BYTES, Oversize, Truncated, decode_frame, encode_frame,
    make_frame, make_payload, quantize_rssi,
)

TABLE1 = DiscoveryFrame(hop=0, energy_level=100, coordination_time=0, max_hops=10,
                        drop_threshold=-87, quality_threshold=-82, tx_power=0,
                        discovery_time=1000, collection_time=2000)


def test_discovery_layout_at_fixed_offsets():
    data = encode_frame(make_frame(0, TABLE1))
    assert len(data) == 18
    assert data[0] == 171 and data[1] == 0
    assert struct.unpack_from("<H", data, 2)[0] == 0 and data[4] == 18
    assert data[5] == 0 and data[6] == 100
    assert struct.unpack_from("<H", data, 7)[0] == 0
    assert data[9] == 10
    assert struct.unpack_from("<bbb", data, 10) == (-87, -82, 0)
    assert struct.unpack_from("<HH", data, 13) == (1000, 2000)
    assert data[17] == 0


def test_data_layout():
    body = DataFrame(3, (make_payload(7, b"ab"), make_payload(9)))
    data = encode_frame(make_frame(5, body))
    assert data[1] == 1 and data[5] == 3 and data[6] == 2
    assert struct.unpack_from("<H", data, 7)[0] == 6
    assert list(data[9:11]) == [4, 2]
    assert data[11:] == b"\x07\x00ab\x09\x00"
    assert decode_frame(data).body.origins == (7, 9)


def test_empty_payload_list_rejected():
    with pytest.raises(InconsistentPayloadCount):
        encode_frame(make_frame(1, DataFrame(1, ())))


def test_oversize_rejected():
    body = DataFrame(1, (make_payload(1, bytes(120)),))
    with pytest.raises(Oversize):
        encode_frame(make_frame(1, body))


def test_bad_magic():
    data = bytearray(encode_frame(make_frame(0, TABLE1)))
    data[0] = 170
    with pytest.raises(BadMagic):
        decode_frame(bytes(data))


def test_payload_sum_mismatch_is_inconsistent_size():
    data = bytearray(encode_frame(make_frame(2, DataFrame(1, (make_payload(2, b"xy"),)))))
    data[7] += 1
    with pytest.raises(InconsistentSize):
        decode_frame(bytes(data))


def test_truncated():
    data = encode_frame(make_frame(0, TABLE1))
    with pytest.raises(Truncated):
        decode_frame(data[:10])
    with pytest.raises(Truncated):
        decode_frame(data[:3])


def test_payload_count_overrun():
    data = bytearray(encode_frame(make_frame(2, DataFrame(1, (make_payload(2),)))))
    data[6] = 40
    with pytest.raises(InconsistentPayloadCount):
        decode_frame(bytes(data))


def test_header_mismatch_rejected_on_encode():
    frame = make_frame(0, TABLE1)
    bad = type(frame)(HbcpHeader(0, 19), TABLE1)
    with pytest.raises(InconsistentSize):
        encode_frame(bad)


def test_quantize_rssi():
    assert quantize_rssi(-80.04) == -80.0
    assert quantize_rssi(-200) == -120.0
    assert quantize_rssi(50) == 10.0


@st.composite
def discovery_bodies(draw):
    max_hops = draw(st.integers(0, 255))
    dt = draw(st.integers(0, 0xFFFF))
    ga = draw(st.integers(-128, 126))
    return DiscoveryFrame(
        hop=draw(st.integers(0, max_hops)), energy_level=draw(st.integers(0, 100)),
        coordination_time=draw(st.integers(0, dt)), max_hops=max_hops, drop_threshold=ga,
        quality_threshold=draw(st.integers(ga + 1, 127)), tx_power=draw(st.integers(-128, 127)),
        discovery_time=dt, collection_time=draw(st.integers(0, 0xFFFF)))


@st.composite
def data_bodies(draw):
    budget = MAX_FRAME_BYTES - 9
    payloads = []
    while budget >= 3:
        size = draw(st.integers(2, min(budget - 1, 40)))
        payloads.append(make_payload(draw(st.integers(0, 0xFFFF)), draw(st.binary(min_size=size - 2, max_size=size - 2))))
        budget -= size + 1
        if draw(st.booleans()):
            break
    return DataFrame(draw(st.integers(0, 255)), tuple(payloads))


frames = st.builds(make_frame, st.integers(0, 0xFFFF), st.one_of(discovery_bodies(), data_bodies()))


@settings(max_examples=1000, deadline=None)
@given(frames)
def test_round_trip_and_size_honesty(frame):
    data = encode_frame(frame)
    assert len(data) == frame.header.packet_size
    assert decode_frame(data) == frame


@settings(max_examples=1000, deadline=None)
@given(st.binary(max_size=140))
def test_decode_is_total(data):
    try:
        frame = decode_frame(data)
    except FrameError:
        return
    assert encode_frame(frame) == data


@settings(max_examples=300, deadline=None)
@given(frames, st.integers(0, 127), st.integers(0, 255))
def test_single_byte_corruption_never_crashes(frame, pos, value):
    data = bytearray(encode_frame(frame))
    data[pos % len(data)] = value
    try:
        decode_frame(bytes(data))
    except FrameError:
        pass
