"""Repeated runs, CSV output, and report comparison."""

from __future__ import annotations

import csv
import dataclasses
import io
import statistics
from dataclasses import dataclass, field
from typing import IO, Any, Iterable

from scipy import stats as sps

from ..errors import IncompatibleReports
from ..kernel import SimConfig, run_simulation
from ..report import COUNTER_NAMES, SimReport
from .config import config_from_items, normalize_key

CONFIDENCE = 0.995

CONFIG_COLUMNS = (
    "exec_mode", "failure_mode", "f", "replicas", "num_lps", "num_entities",
    "total_timesteps", "migration_enabled", "faulty_lps",
)
NUMERIC_COLUMNS = ("wall_clock_s",) + COUNTER_NAMES + (
    "migrations", "placement_epochs", "unmatched_pongs", "malformed",
)
DIGEST_COLUMNS = ("state_digest", "delivery_digest", "report_digest")
CSV_COLUMNS = ("stat", "run", "seed", "sweep_key", "sweep_value") + CONFIG_COLUMNS + NUMERIC_COLUMNS + DIGEST_COLUMNS


def report_row(report: SimReport, run: int = 0) -> dict[str, Any]:
    cfg = report.config
    totals = report.totals()
    row: dict[str, Any] = {
        "stat": "run",
        "run": run,
        "seed": cfg.global_seed,
        "sweep_key": "",
        "sweep_value": "",
        "exec_mode": cfg.exec_mode,
        "failure_mode": cfg.policy.mode.value,
        "f": cfg.policy.f,
        "replicas": cfg.replicas,
        "num_lps": cfg.num_lps,
        "num_entities": cfg.num_entities,
        "total_timesteps": cfg.total_timesteps,
        "migration_enabled": int(cfg.migration_enabled),
        "faulty_lps": " ".join(str(lp) for lp in sorted(cfg.fault_plan.faulty_lps)),
        "wall_clock_s": round(report.wall_clock_seconds, 6),
        "migrations": report.migrations_applied,
        "placement_epochs": report.placement_epochs,
        "unmatched_pongs": report.model_stats.get("unmatched_pongs", 0),
        "malformed": report.model_stats.get("malformed", 0),
        "state_digest": report.state_digest()[:32],
        "delivery_digest": report.delivery_digest()[:32] if report.delivery_digests else "",
        "report_digest": report.digest()[:32],
    }
    row.update(dataclasses.asdict(totals))
    return row


def summarize(rows: list[dict[str, Any]], confidence: float = CONFIDENCE) -> list[dict[str, Any]]:
    """Mean row and Student-t confidence half-width row over ``rows``."""
    k = len(rows)
    mean: dict[str, Any] = {c: "" for c in CSV_COLUMNS}
    half: dict[str, Any] = {c: "" for c in CSV_COLUMNS}
    mean.update(stat="mean", run=k)
    half.update(stat=f"ci{confidence * 100:g}", run=k)
    for c in ("seed", "sweep_key", "sweep_value") + CONFIG_COLUMNS + DIGEST_COLUMNS:
        if len({r[c] for r in rows}) == 1:
            mean[c] = half[c] = rows[0][c]
    tcrit = sps.t.ppf(0.5 + confidence / 2, k - 1) if k > 1 else 0.0
    for c in NUMERIC_COLUMNS:
        xs = [float(r[c]) for r in rows]
        mean[c] = statistics.fmean(xs)
        half[c] = tcrit * statistics.stdev(xs) / k**0.5 if k > 1 else 0.0
    return [mean, half]


def run_experiment(config: SimConfig, reps: int = 1) -> list[dict[str, Any]]:
    """``reps`` runs with seeds ``seed .. seed+reps-1`` plus the two summary rows."""
    if reps < 1:
        raise ValueError("reps must be at least 1")
    rows = []
    for i in range(reps):
        cfg = dataclasses.replace(config, global_seed=config.global_seed + i)
        rows.append(report_row(run_simulation(cfg), run=i))
    return rows + summarize(rows)


def sweep(items: dict[str, str], key: str, values: Iterable[str], reps: int = 1, overrides: dict[str, str] | None = None) -> list[dict[str, Any]]:
    key = normalize_key(key)
    out = []
    for v in values:
        cfg = config_from_items({**items, **(overrides or {}), key: v})
        for row in run_experiment(cfg, reps):
            row["sweep_key"] = key
            row["sweep_value"] = v
            out.append(row)
    return out


def write_csv(rows: Iterable[dict[str, Any]], fh: IO[str]) -> None:
    writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, extrasaction="raise")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)


def rows_to_csv(rows: Iterable[dict[str, Any]]) -> str:
    buf = io.StringIO()
    write_csv(rows, buf)
    return buf.getvalue()


@dataclass
class ReportDiff:
    entity_digests: list[tuple[int, str, str]] = field(default_factory=list)
    delivery_digests: list[tuple[int, str, str]] = field(default_factory=list)
    counters: dict[str, tuple[int, int]] = field(default_factory=dict)

    @property
    def semantically_equal(self) -> bool:
        return not self.entity_digests and not self.delivery_digests

    @property
    def empty(self) -> bool:
        return self.semantically_equal and not self.counters

    def lines(self) -> list[str]:
        out = [f"entity {e}: state {a[:16]} != {b[:16]}" for e, a, b in self.entity_digests]
        out += [f"entity {e}: deliveries {a[:16]} != {b[:16]}" for e, a, b in self.delivery_digests]
        out += [f"{name}: {a} -> {b} ({b - a:+d})" for name, (a, b) in self.counters.items()]
        return out


def _model_key(cfg: SimConfig) -> tuple:
    return (cfg.num_entities, cfg.total_timesteps, cfg.model)


def compare_reports(a: SimReport, b: SimReport) -> ReportDiff:
    if _model_key(a.config) != _model_key(b.config):
        raise IncompatibleReports(
            f"reports come from different models: {_model_key(a.config)} vs {_model_key(b.config)}"
        )
    diff = ReportDiff()
    for e in sorted(a.entity_digests):
        if a.entity_digests[e] != b.entity_digests.get(e):
            diff.entity_digests.append((e, a.entity_digests[e], b.entity_digests.get(e, "")))
    if a.delivery_digests and b.delivery_digests:
        for e in sorted(a.delivery_digests):
            if a.delivery_digests[e] != b.delivery_digests.get(e):
                diff.delivery_digests.append((e, a.delivery_digests[e], b.delivery_digests.get(e, "")))
    ta, tb = dataclasses.asdict(a.totals()), dataclasses.asdict(b.totals())
    diff.counters = {k: (ta[k], tb[k]) for k in COUNTER_NAMES if ta[k] != tb[k]}
    return diff
