import pytest
from hypothesis import given, strategies as st

from ftsim.errors import MalformedFrame, UnknownDestination
from ftsim.replication import PlacementMap
from ftsim.transport import (
    HEADER_SIZE, Envelope, FrameReader, Inbox, InstanceId, RouteOutcome, decode, encode, route,
)

# Hand-assembled frames: u32 len | u64 src | u16 rep | u64 dst | u16 rep | u64 send | u64 deliver | u32 seq | payload
GOLDEN = [
    (
        Envelope(InstanceId(1, 0), InstanceId(2, 1), 10, 12, 3, b"\x01\x02"),
        "00000002" "0000000000000001" "0000" "0000000000000002" "0001"
        "000000000000000a" "000000000000000c" "00000003" "0102",
    ),
    (
        Envelope(InstanceId(0, 0), InstanceId(0, 0), 0, 1, 0, b""),
        "00000000" "0000000000000000" "0000" "0000000000000000" "0000"
        "0000000000000000" "0000000000000001" "00000000",
    ),
    (
        Envelope(InstanceId(2**64 - 1, 65535), InstanceId(258, 2), 4096, 4097, 2**32 - 1, b"\x01\x00\x00\x00\x00\x00\x00\x00\x2a"),
        "00000009" "ffffffffffffffff" "ffff" "0000000000000102" "0002"
        "0000000000001000" "0000000000001001" "ffffffff" "01000000000000002a",
    ),
]


@pytest.mark.parametrize("env,hexstr", GOLDEN)
def test_golden_encoding(env, hexstr):
    assert encode(env).hex() == hexstr
    assert decode(bytes.fromhex(hexstr)) == env


def test_empty_payload_frame_is_44_bytes():
    assert HEADER_SIZE == 44
    assert len(encode(GOLDEN[1][0])) == 44


envelopes = st.builds(
    lambda se, sr, de, dr, send, gap, seq, payload: Envelope(
        InstanceId(se, sr), InstanceId(de, dr), send, send + gap, seq, payload
    ),
    st.integers(0, 2**64 - 1), st.integers(0, 2**16 - 1),
    st.integers(0, 2**64 - 1), st.integers(0, 2**16 - 1),
    st.integers(0, 2**63), st.integers(1, 2**62), st.integers(0, 2**32 - 1),
    st.binary(max_size=64),
)


@given(envelopes)
def test_round_trip(e):
    assert decode(encode(e)) == e


@given(envelopes, st.data())
def test_any_truncation_rejected(e, data):
    frame = encode(e)
    cut = data.draw(st.integers(0, len(frame) - 1))
    with pytest.raises(MalformedFrame):
        decode(frame[:cut])


def test_trailing_bytes_rejected():
    with pytest.raises(MalformedFrame):
        decode(encode(GOLDEN[0][0]) + b"\x00")


def test_oversized_length_rejected():
    frame = bytearray(encode(GOLDEN[1][0]))
    frame[0:4] = (2**20 + 1).to_bytes(4, "big")
    with pytest.raises(MalformedFrame):
        decode(bytes(frame))


def test_delivery_not_after_send_rejected():
    bad = GOLDEN[0][0]._replace(delivery_step=10)
    with pytest.raises(ValueError):
        encode(bad)
    raw = bytearray(encode(GOLDEN[0][0]))
    raw[4 + 28:4 + 36] = (10).to_bytes(8, "big")  # delivery field := send step
    with pytest.raises(MalformedFrame):
        decode(bytes(raw))


@given(st.lists(envelopes, max_size=8), st.integers(1, 50))
def test_frame_reader_reassembles_stream(envs, chunk):
    stream = b"".join(encode(e) for e in envs)
    reader = FrameReader()
    out = []
    for i in range(0, len(stream), chunk):
        out.extend(reader.feed(stream[i:i + chunk]))
    assert out == envs
    assert reader.pending == 0


def test_inbox_orders_by_sender_instance():
    box = Inbox()
    a = Envelope(InstanceId(5, 1), InstanceId(0, 0), 1, 3, 0, b"a")
    b = Envelope(InstanceId(5, 0), InstanceId(0, 0), 2, 3, 0, b"b")
    c = Envelope(InstanceId(2, 2), InstanceId(0, 0), 1, 3, 1, b"c")
    later = Envelope(InstanceId(1, 0), InstanceId(0, 0), 1, 4, 0, b"d")
    box.put_many([a, b, later])
    box.put(c)
    assert box.received == 4
    assert box.pop_due(3) == [c, b, a]
    assert len(box) == 1
    with pytest.raises(AssertionError):
        box.pop_due(5)


def test_inbox_take_for():
    box = Inbox()
    x = Envelope(InstanceId(1, 0), InstanceId(7, 1), 1, 3, 0, b"")
    y = Envelope(InstanceId(1, 0), InstanceId(7, 0), 1, 3, 0, b"")
    box.put_many([x, y])
    assert box.take_for(InstanceId(7, 1)) == [x]
    assert len(box) == 1
    assert box.clear() == 1


def test_route_outcomes():
    placement = PlacementMap(3, 1, {InstanceId(0, 0): 0, InstanceId(1, 0): 1, InstanceId(2, 0): 2})
    boxes = {0: Inbox(), 1: Inbox()}
    sent = []
    e = Envelope(InstanceId(0, 0), InstanceId(1, 0), 0, 1, 0, b"p")
    assert route(e, placement, boxes) == (RouteOutcome.SHARED_MEMORY, 1)
    assert len(boxes[1]) == 1
    assert route(e, placement, boxes, down={1}) == (RouteOutcome.LOST, 1)
    remote = e._replace(dst=InstanceId(2, 0))
    assert route(remote, placement, boxes, send_frame=lambda lp, f: sent.append((lp, f))) == (RouteOutcome.WIRE, 2)
    assert sent == [(2, encode(remote))]
    with pytest.raises(UnknownDestination):
        route(remote, placement, boxes)
    with pytest.raises(UnknownDestination):
        route(e._replace(dst=InstanceId(9, 0)), placement, boxes)
