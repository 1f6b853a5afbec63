"""Declarative fault schedules and the deterministic corruptions they apply."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import TYPE_CHECKING

from .errors import ConfigError
from .transport import Envelope

if TYPE_CHECKING:
    from .kernel import LpRuntime

FLIP_MASK = 0xA5
_FLIP_TABLE = bytes(b ^ FLIP_MASK for b in range(256))


class CorruptionMode(str, enum.Enum):
    FLIP_PAYLOAD = "flip-payload"
    DROP_ALL = "drop-all"
    DUPLICATE = "duplicate"
    GARBLE_SEQ = "garble-seq"


@dataclass(frozen=True)
class ByzantineFault:
    lp: int
    start: int
    corruption: CorruptionMode

    def __post_init__(self) -> None:
        object.__setattr__(self, "corruption", CorruptionMode(self.corruption))


@dataclass(frozen=True)
class FaultPlan:
    crashes: tuple[tuple[int, int], ...] = ()
    byzantine: tuple[ByzantineFault, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "crashes", tuple((int(lp), int(t)) for lp, t in self.crashes))
        object.__setattr__(self, "byzantine", tuple(self.byzantine))
        lps = [lp for lp, _ in self.crashes] + [b.lp for b in self.byzantine]
        if len(lps) != len(set(lps)):
            raise ConfigError(f"an LP appears more than once in the fault plan: {sorted(lps)}")
        if any(t < 0 for _, t in self.crashes) or any(b.start < 0 for b in self.byzantine):
            raise ConfigError("fault times must be non-negative")

    @property
    def faulty_lps(self) -> set[int]:
        return {lp for lp, _ in self.crashes} | {b.lp for b in self.byzantine}

    def validate(self, num_lps: int) -> None:
        bad = sorted(lp for lp in self.faulty_lps if not 0 <= lp < num_lps)
        if bad:
            raise ConfigError(f"fault plan names LPs outside 0..{num_lps - 1}: {bad}")

    def crashes_at(self, t: int) -> list[int]:
        return sorted(lp for lp, when in self.crashes if when == t)

    def crash_time(self, lp: int) -> int | None:
        for who, when in self.crashes:
            if who == lp:
                return when
        return None

    def corruption_for(self, lp: int, t: int) -> CorruptionMode | None:
        for b in self.byzantine:
            if b.lp == lp and t >= b.start:
                return b.corruption
        return None


def apply_crash(plan: FaultPlan, lp: LpRuntime, t: int) -> bool:
    """Crash ``lp`` if the plan schedules it for step ``t``. Returns whether it crashed."""
    if (lp.id, t) not in plan.crashes or lp.crashed:
        return False
    lp.crash()
    return True


def corrupt(e: Envelope, mode: CorruptionMode) -> list[Envelope]:
    if mode is CorruptionMode.FLIP_PAYLOAD:
        return [e._replace(payload=e.payload.translate(_FLIP_TABLE))]
    if mode is CorruptionMode.DROP_ALL:
        return []
    if mode is CorruptionMode.DUPLICATE:
        return [e, e]
    if mode is CorruptionMode.GARBLE_SEQ:
        return [e._replace(seq=(e.seq + 1) & 0xFFFFFFFF)]
    raise ValueError(mode)
