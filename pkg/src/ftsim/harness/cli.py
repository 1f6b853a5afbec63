"""``ftsim`` command line: run, sweep, reliability, compare."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from contextlib import contextmanager
from typing import IO, Iterator

from ..errors import ConfigError, FtSimError, IncompatibleReports, OverlayInfeasible, PlacementInfeasible
from ..kernel import run_simulation
from .config import config_from_items, load_items
from .experiment import compare_reports, run_experiment, sweep, write_csv
from .reliability import DAY, HOUR, ONE_YEAR_MTTF_RATE, WEEK, reliability_table

log = logging.getLogger("ftsim")

MODES = ("serial", "threads", "processes")


@contextmanager
def _output(path: str | None) -> Iterator[IO[str]]:
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def _overrides(args: argparse.Namespace) -> dict[str, str]:
    out = {}
    if args.seed is not None:
        out["seed"] = str(args.seed)
    if args.mode is not None:
        out["mode"] = args.mode
    for kv in args.set or []:
        key, sep, value = kv.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {kv!r}")
        out[key.strip()] = value.strip()
    return out


def _items(path: str, args: argparse.Namespace) -> dict[str, str]:
    items = load_items(path)
    items.update(_overrides(args))
    return items


def cmd_run(args: argparse.Namespace) -> int:
    config = config_from_items(_items(args.config, args))
    rows = run_experiment(config, args.reps)
    with _output(args.out) as fh:
        write_csv(rows, fh)
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    items = load_items(args.config)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    rows = sweep(items, args.key, values, args.reps, _overrides(args))
    with _output(args.out) as fh:
        write_csv(rows, fh)
    return 0


def cmd_reliability(args: argparse.Namespace) -> int:
    horizons = args.t or [HOUR, DAY, WEEK]
    rows = reliability_table(args.n or [10, 100, 1000], horizons, args.rate)
    with _output(args.out) as fh:
        writer = csv.DictWriter(fh, fieldnames=["n_lps", "failure_rate", "t_seconds", "reliability"])
        writer.writeheader()
        for row in rows:
            writer.writerow({**row, "reliability": repr(row["reliability"])})
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    reports = []
    for path in (args.a, args.b):
        config = config_from_items(_items(path, args))
        # delivery sets are part of the comparison
        reports.append(run_simulation(dataclasses.replace(config, record_deliveries=True)))
    diff = compare_reports(*reports)
    with _output(args.out) as fh:
        for line in diff.lines():
            print(line, file=fh)
        verdict = "equivalent" if diff.semantically_equal else "different"
        print(f"{verdict}: {len(diff.entity_digests)} state, {len(diff.delivery_digests)} delivery, "
              f"{len(diff.counters)} counter differences", file=fh)
    return 0 if diff.semantically_equal else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ftsim", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, reps: bool = True) -> None:
        p.add_argument("--seed", type=int, help="override the config's global seed")
        p.add_argument("--mode", choices=MODES, help="execution mode")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--out", help="output file (default stdout)")
        if reps:
            p.add_argument("--reps", type=int, default=1, help="repetitions with consecutive seeds")

    p = sub.add_parser("run", help="run one config")
    p.add_argument("config")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="vary one key over a list of values")
    p.add_argument("config")
    p.add_argument("--key", required=True)
    p.add_argument("--values", required=True, help="comma-separated")
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("reliability", help="tabulate R(N, t) = exp(-N*rate*t)")
    p.add_argument("--n", type=int, nargs="+")
    p.add_argument("--t", type=float, nargs="+", help="horizons in seconds")
    p.add_argument("--rate", type=float, default=ONE_YEAR_MTTF_RATE)
    p.add_argument("--out")
    p.set_defaults(func=cmd_reliability)

    p = sub.add_parser("compare", help="run two configs and diff their reports")
    p.add_argument("a")
    p.add_argument("b")
    common(p, reps=False)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, PlacementInfeasible, OverlayInfeasible, IncompatibleReports, OSError) as exc:
        print(f"ftsim: error: {exc}", file=sys.stderr)
        return 2
    except FtSimError as exc:
        print(f"ftsim: simulation failed: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
