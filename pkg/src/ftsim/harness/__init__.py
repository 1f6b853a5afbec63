"""Config loading, experiment batches, reliability curve and the CLI."""

from .config import load_config, parse_config
from .experiment import CSV_COLUMNS, ReportDiff, compare_reports, run_experiment, sweep, write_csv
from .reliability import ONE_YEAR_MTTF_RATE, ReliabilityQuery, reliability, reliability_table

__all__ = [
    "CSV_COLUMNS",
    "ONE_YEAR_MTTF_RATE",
    "ReliabilityQuery",
    "ReportDiff",
    "compare_reports",
    "load_config",
    "parse_config",
    "reliability",
    "reliability_table",
    "run_experiment",
    "sweep",
    "write_csv",
]
