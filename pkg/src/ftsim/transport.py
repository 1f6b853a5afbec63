"""Envelopes, their binary wire format, and LP-to-LP routing.

A frame on the wire is::

    u32 payload length
    u64 src entity | u16 src replica | u64 dst entity | u16 dst replica
    u64 send step  | u64 delivery step | u32 seq
    payload bytes

All integers are big-endian, so a frame with an empty payload is 44 bytes.
"""

from __future__ import annotations

import enum
import struct
import threading
from collections import defaultdict
from typing import Callable, Container, Iterator, Mapping, NamedTuple, Protocol

from .errors import MalformedFrame, UnknownDestination

_LENGTH = struct.Struct(">I")
_HEADER = struct.Struct(">QHQHQQI")
HEADER_SIZE = _LENGTH.size + _HEADER.size
MAX_PAYLOAD = 1 << 20


class InstanceId(NamedTuple):
    entity: int
    replica: int


class Envelope(NamedTuple):
    """One physical copy of a logical message, addressed instance to instance."""

    src: InstanceId
    dst: InstanceId
    send_step: int
    delivery_step: int
    seq: int
    payload: bytes

    @property
    def logical_id(self) -> tuple[int, int, int, int]:
        return (self.src.entity, self.dst.entity, self.send_step, self.seq)

    def sort_key(self) -> tuple[int, int, int, int]:
        return (self.src.entity, self.src.replica, self.send_step, self.seq)


def encode(e: Envelope) -> bytes:
    if e.delivery_step <= e.send_step:
        raise ValueError(f"delivery step {e.delivery_step} not after send step {e.send_step}")
    return (
        _LENGTH.pack(len(e.payload))
        + _HEADER.pack(
            e.src.entity, e.src.replica, e.dst.entity, e.dst.replica,
            e.send_step, e.delivery_step, e.seq,
        )
        + e.payload
    )


def decode(frame: bytes) -> Envelope:
    """Decode exactly one frame; trailing or missing bytes are an error."""
    if len(frame) < HEADER_SIZE:
        raise MalformedFrame(f"frame of {len(frame)} bytes is shorter than the {HEADER_SIZE}-byte header")
    (length,) = _LENGTH.unpack_from(frame, 0)
    if length > MAX_PAYLOAD:
        raise MalformedFrame(f"payload length {length} exceeds limit {MAX_PAYLOAD}")
    if len(frame) != HEADER_SIZE + length:
        raise MalformedFrame(f"length field says {HEADER_SIZE + length} bytes, frame has {len(frame)}")
    se, sr, de, dr, send, deliver, seq = _HEADER.unpack_from(frame, _LENGTH.size)
    if deliver <= send:
        raise MalformedFrame(f"delivery step {deliver} not after send step {send}")
    return Envelope(InstanceId(se, sr), InstanceId(de, dr), send, deliver, seq, bytes(frame[HEADER_SIZE:]))


class FrameReader:
    """Incremental splitter for a byte stream carrying back-to-back frames."""

    def __init__(self) -> None:
        self._buf = bytearray()

    def feed(self, data: bytes) -> Iterator[Envelope]:
        self._buf += data
        while len(self._buf) >= _LENGTH.size:
            (length,) = _LENGTH.unpack_from(self._buf, 0)
            if length > MAX_PAYLOAD:
                raise MalformedFrame(f"payload length {length} exceeds limit {MAX_PAYLOAD}")
            total = HEADER_SIZE + length
            if len(self._buf) < total:
                return
            frame = bytes(self._buf[:total])
            del self._buf[:total]
            yield decode(frame)

    @property
    def pending(self) -> int:
        return len(self._buf)


class Inbox:
    """Per-LP queue keyed by delivery step; safe for concurrent producers."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._by_step: dict[int, list[Envelope]] = defaultdict(list)
        self.received = 0

    def put(self, e: Envelope) -> None:
        with self._lock:
            self._by_step[e.delivery_step].append(e)
            self.received += 1

    def put_many(self, envelopes: list[Envelope]) -> None:
        with self._lock:
            for e in envelopes:
                self._by_step[e.delivery_step].append(e)
            self.received += len(envelopes)

    def pop_due(self, step: int) -> list[Envelope]:
        """Remove and return the envelopes due at ``step`` in canonical order."""
        with self._lock:
            stale = [s for s in self._by_step if s < step]
            if stale:
                raise AssertionError(f"inbox holds envelopes for past steps {sorted(stale)} at step {step}")
            due = self._by_step.pop(step, [])
        due.sort(key=Envelope.sort_key)
        return due

    def take_for(self, dst: InstanceId) -> list[Envelope]:
        """Remove every queued envelope addressed to ``dst`` (used when it migrates)."""
        with self._lock:
            taken: list[Envelope] = []
            for step in list(self._by_step):
                keep = []
                for e in self._by_step[step]:
                    (taken if e.dst == dst else keep).append(e)
                if keep:
                    self._by_step[step] = keep
                else:
                    del self._by_step[step]
            return taken

    def clear(self) -> int:
        with self._lock:
            n = sum(len(v) for v in self._by_step.values())
            self._by_step.clear()
            return n

    def __len__(self) -> int:
        with self._lock:
            return sum(len(v) for v in self._by_step.values())


class RouteOutcome(enum.Enum):
    SHARED_MEMORY = "shared-memory"
    WIRE = "wire"
    LOST = "lost"


class Placement(Protocol):
    def lp_of(self, instance: InstanceId) -> int: ...


def route(
    e: Envelope,
    placement: Placement,
    inboxes: Mapping[int, Inbox],
    down: Container[int] = (),
    send_frame: Callable[[int, bytes], None] | None = None,
) -> tuple[RouteOutcome, int]:
    """Hand ``e`` to the LP hosting its destination.

    ``inboxes`` holds the LPs living in this process. Any other LP is reached
    through ``send_frame``. Returns the outcome and the destination LP.
    """
    try:
        lp = placement.lp_of(e.dst)
    except KeyError:
        raise UnknownDestination(e.dst) from None
    if lp in down:
        return RouteOutcome.LOST, lp
    inbox = inboxes.get(lp)
    if inbox is not None:
        inbox.put(e)
        return RouteOutcome.SHARED_MEMORY, lp
    if send_frame is None:
        raise UnknownDestination(f"LP {lp} is neither local nor reachable over the wire")
    send_frame(lp, encode(e))
    return RouteOutcome.WIRE, lp
