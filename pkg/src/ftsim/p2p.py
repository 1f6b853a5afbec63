"""PING/PONG benchmark over a random directed overlay of fixed out-degree."""

from __future__ import annotations

import hashlib
import random
import struct
from dataclasses import dataclass, field

from .errors import ConfigError, OverlayInfeasible
from .replication import LogicalMessage

PING = 1
PONG = 2
_MSG = struct.Struct(">BQ")


@dataclass(frozen=True)
class P2PModelConfig:
    out_degree: int = 5
    ping_period: int = 10
    p_neighbor: float = 0.8
    latency_mu: float = 0.8
    latency_sigma: float = 0.5
    neighbor_update_period: int = 100

    def validate(self, num_peers: int) -> None:
        if not 0.0 <= self.p_neighbor <= 1.0:
            raise ConfigError(f"p-neighbor must lie in [0, 1], got {self.p_neighbor}")
        if self.latency_sigma < 0:
            raise ConfigError("latency-sigma must be non-negative")
        if self.ping_period < 1 or self.neighbor_update_period < 1:
            raise ConfigError("ping-period and neighbor-update-period must be at least 1")
        if self.out_degree < 1:
            raise ConfigError("out-degree must be at least 1")
        if self.out_degree >= num_peers:
            raise OverlayInfeasible(f"out-degree {self.out_degree} needs more than {num_peers} peers")


@dataclass(frozen=True)
class OverlayGraph:
    neighbors: tuple[tuple[int, ...], ...]

    @property
    def num_peers(self) -> int:
        return len(self.neighbors)

    def out_degrees(self) -> list[int]:
        return [len(n) for n in self.neighbors]


def build_overlay(n: int, out_degree: int, seed: int) -> OverlayGraph:
    if out_degree >= n:
        raise OverlayInfeasible(f"out-degree {out_degree} needs more than {n} peers")
    rng = random.Random(seed)
    rows = []
    for u in range(n):
        picks = rng.sample(range(n - 1), out_degree)
        rows.append(tuple(sorted(v + 1 if v >= u else v for v in picks)))
    return OverlayGraph(tuple(rows))


@dataclass
class PeerState:
    id: int
    neighbors: list[int]
    rng: random.Random
    # peer -> (running mean of one-way latency, sample count)
    estimates: dict[int, tuple[float, int]] = field(default_factory=dict)
    pending: set[tuple[int, int]] = field(default_factory=set)
    unmatched_pongs: int = 0
    malformed: int = 0

    def digest(self) -> bytes:
        h = hashlib.blake2b(digest_size=16)
        h.update(struct.pack(">QI", self.id, len(self.neighbors)))
        h.update(struct.pack(f">{len(self.neighbors)}Q", *self.neighbors))
        for peer in sorted(self.estimates):
            mean, count = self.estimates[peer]
            h.update(struct.pack(">QdQ", peer, mean, count))
        h.update(b"|")
        for target, step in sorted(self.pending):
            h.update(struct.pack(">QQ", target, step))
        h.update(struct.pack(">QQ", self.unmatched_pongs, self.malformed))
        version, mt, gauss = self.rng.getstate()
        h.update(struct.pack(f">B{len(mt)}I", version, *mt))
        h.update(repr(gauss).encode())
        return h.digest()


def encode_message(kind: int, ping_step: int) -> bytes:
    return _MSG.pack(kind, ping_step)


def decode_message(payload: bytes) -> tuple[int, int] | None:
    if len(payload) != _MSG.size:
        return None
    kind, step = _MSG.unpack(payload)
    return (kind, step) if kind in (PING, PONG) else None


def sample_delay(rng: random.Random, cfg: P2PModelConfig) -> int:
    return max(1, round(rng.lognormvariate(cfg.latency_mu, cfg.latency_sigma)))


def choose_target(state: PeerState, p: float, num_peers: int) -> int:
    """A neighbor with probability ``p``, otherwise a uniform non-neighbor.

    With no non-neighbor available (complete overlay) a neighbor is returned.
    """
    u = state.rng.random()
    nbrs = state.neighbors
    if u < p or len(nbrs) >= num_peers - 1:
        return nbrs[state.rng.randrange(len(nbrs))]
    taken = set(nbrs)
    while True:
        v = state.rng.randrange(num_peers)
        if v != state.id and v not in taken:
            return v


def update_neighbors(state: PeerState) -> bool:
    """Swap the worst-estimated neighbor for the best-estimated non-neighbor.

    Only neighbors and non-neighbors with at least one latency sample take
    part, ties go to the lowest id, and the swap happens only when it
    strictly improves the estimate.
    """
    est = state.estimates
    rated = [v for v in state.neighbors if v in est]
    candidates = [v for v in est if v != state.id and v not in state.neighbors]
    if not rated or not candidates:
        return False
    worst = min(rated, key=lambda v: (-est[v][0], v))
    best = min(candidates, key=lambda v: (est[v][0], v))
    if est[best][0] >= est[worst][0]:
        return False
    state.neighbors = sorted([v for v in state.neighbors if v != worst] + [best])
    return True


def peer_step(state: PeerState, t: int, cfg: P2PModelConfig, num_peers: int) -> list[LogicalMessage]:
    if t > 0 and t % cfg.neighbor_update_period == 0:
        update_neighbors(state)
    if t % cfg.ping_period:
        return []
    target = choose_target(state, cfg.p_neighbor, num_peers)
    delay = sample_delay(state.rng, cfg)
    state.pending.add((target, t))
    return [LogicalMessage(target, t + delay, encode_message(PING, t))]


def handle_ping(state: PeerState, src: int, ping_step: int, t: int, cfg: P2PModelConfig) -> LogicalMessage:
    delay = sample_delay(state.rng, cfg)
    return LogicalMessage(src, t + delay, encode_message(PONG, ping_step))


def handle_pong(state: PeerState, src: int, ping_step: int, t: int) -> bool:
    key = (src, ping_step)
    if key not in state.pending:
        state.unmatched_pongs += 1
        return False
    state.pending.discard(key)
    sample = (t - ping_step) / 2
    mean, count = state.estimates.get(src, (0.0, 0))
    count += 1
    state.estimates[src] = (mean + (sample - mean) / count, count)
    return True


class P2PModel:
    """Binds the peer handlers to the engine's entity-model interface."""

    def __init__(self, num_peers: int, cfg: P2PModelConfig, overlay_seed: int) -> None:
        cfg.validate(num_peers)
        self.num_peers = num_peers
        self.cfg = cfg
        self.overlay = build_overlay(num_peers, cfg.out_degree, overlay_seed)

    def init_state(self, entity: int, seed: int) -> PeerState:
        return PeerState(entity, list(self.overlay.neighbors[entity]), random.Random(seed))

    def on_message(self, state: PeerState, src: int, payload: bytes, t: int) -> list[LogicalMessage]:
        msg = decode_message(payload)
        if msg is None:
            state.malformed += 1
            return []
        kind, ping_step = msg
        if kind == PING:
            return [handle_ping(state, src, ping_step, t, self.cfg)]
        handle_pong(state, src, ping_step, t)
        return []

    def on_step(self, state: PeerState, t: int) -> list[LogicalMessage]:
        return peer_step(state, t, self.cfg, self.num_peers)

    def digest(self, state: PeerState) -> bytes:
        return state.digest()

    def stats(self, state: PeerState) -> dict[str, int]:
        return {"unmatched_pongs": state.unmatched_pongs, "malformed": state.malformed}
