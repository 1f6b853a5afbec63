"""Flat ``key = value`` configuration files.

Blank lines and ``#`` comments are ignored. Keys may use ``-`` or ``_``.
``crash`` and ``byzantine`` may repeat or hold comma-separated lists::

    num-lps = 4
    failure-mode = crash
    f = 1
    crash = 2@500
    byzantine = 1@0:flip-payload
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Callable

from ..errors import ConfigError
from ..faults import ByzantineFault, CorruptionMode, FaultPlan
from ..kernel import SimConfig
from ..p2p import P2PModelConfig
from ..replication import FailureMode, ReplicationPolicy


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _list(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


# key -> (converter, repeatable)
KEYS: dict[str, tuple[Callable[[str], Any], bool]] = {
    "num-lps": (int, False),
    "num-entities": (int, False),
    "failure-mode": (FailureMode, False),
    "f": (int, False),
    "total-timesteps": (int, False),
    "seed": (int, False),
    "migration-enabled": (_bool, False),
    "migration-period": (int, False),
    "migration-threshold": (float, False),
    "lp-instance-cap": (int, False),
    "grace": (int, False),
    "out-degree": (int, False),
    "ping-period": (int, False),
    "p-neighbor": (float, False),
    "latency-mu": (float, False),
    "latency-sigma": (float, False),
    "neighbor-update-period": (int, False),
    "crash": (_list, True),
    "byzantine": (_list, True),
    "mode": (str, False),
    "endpoints": (_list, False),
    "record-deliveries": (_bool, False),
    "trace-digests": (_bool, False),
    "barrier-timeout": (float, False),
}


def normalize_key(key: str) -> str:
    return key.strip().lower().replace("_", "-")


def parse_items(text: str) -> dict[str, str]:
    """Raw key/value pairs; repeated list keys are joined with commas."""
    items: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key = normalize_key(key)
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        value = value.strip()
        if key in items:
            if not KEYS[key][1]:
                raise ConfigError(f"line {lineno}: key {key!r} given twice")
            items[key] = f"{items[key]},{value}"
        else:
            items[key] = value
    return items


def _crash(text: str) -> tuple[int, int]:
    lp, sep, t = text.partition("@")
    if not sep:
        raise ValueError(f"crash entry {text!r} is not LP@STEP")
    return int(lp), int(t)


def _byzantine(text: str) -> ByzantineFault:
    head, sep, mode = text.partition(":")
    lp, at, start = head.partition("@")
    if not sep or not at:
        raise ValueError(f"byzantine entry {text!r} is not LP@STEP:MODE")
    return ByzantineFault(int(lp), int(start), CorruptionMode(mode.strip()))


def config_from_items(items: dict[str, str]) -> SimConfig:
    values: dict[str, Any] = {}
    for key, raw in items.items():
        key = normalize_key(key)
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}")
        try:
            values[key] = KEYS[key][0](raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from None

    try:
        plan = FaultPlan(
            crashes=tuple(_crash(c) for c in values.get("crash", [])),
            byzantine=tuple(_byzantine(b) for b in values.get("byzantine", [])),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    defaults = P2PModelConfig()
    model = P2PModelConfig(
        out_degree=values.get("out-degree", defaults.out_degree),
        ping_period=values.get("ping-period", defaults.ping_period),
        p_neighbor=values.get("p-neighbor", defaults.p_neighbor),
        latency_mu=values.get("latency-mu", defaults.latency_mu),
        latency_sigma=values.get("latency-sigma", defaults.latency_sigma),
        neighbor_update_period=values.get("neighbor-update-period", defaults.neighbor_update_period),
    )
    base = SimConfig()
    return SimConfig(
        num_lps=values.get("num-lps", base.num_lps),
        num_entities=values.get("num-entities", base.num_entities),
        policy=ReplicationPolicy(values.get("failure-mode", FailureMode.NONE), values.get("f", 0)),
        total_timesteps=values.get("total-timesteps", base.total_timesteps),
        global_seed=values.get("seed", base.global_seed),
        migration_enabled=values.get("migration-enabled", base.migration_enabled),
        migration_period=values.get("migration-period", base.migration_period),
        migration_threshold=values.get("migration-threshold", base.migration_threshold),
        lp_instance_cap=values.get("lp-instance-cap"),
        model=model,
        fault_plan=plan,
        grace=values.get("grace", base.grace),
        exec_mode=values.get("mode", base.exec_mode),
        endpoints=tuple(values.get("endpoints", ())),
        record_deliveries=values.get("record-deliveries", base.record_deliveries),
        trace_digests=values.get("trace-digests", base.trace_digests),
        barrier_timeout=values.get("barrier-timeout", base.barrier_timeout),
    )


def parse_config(text: str) -> SimConfig:
    return config_from_items(parse_items(text))


def load_items(path: str | Path) -> dict[str, str]:
    return parse_items(Path(path).read_text())


def load_config(path: str | Path) -> SimConfig:
    return config_from_items(load_items(path))
