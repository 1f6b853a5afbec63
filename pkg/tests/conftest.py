import dataclasses

import pytest

from ftsim import FailureMode, ReplicationPolicy, SimConfig


def make_config(mode="none", f=0, **kw):
    base = dict(num_lps=4, num_entities=30, total_timesteps=200, global_seed=7, exec_mode="serial", record_deliveries=True)
    base.update(kw)
    return SimConfig(policy=ReplicationPolicy(FailureMode(mode), f), **base)


def with_(config, **kw):
    return dataclasses.replace(config, **kw)


@pytest.fixture
def small_config():
    return make_config


_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rpartition("::")[2].partition("[")[0]
    if not name.startswith("test_criterion_"):
        return
    if report.when != "call" and report.passed:
        return
    num = int(name.split("_")[2])
    failed = _CRITERIA.get(num, ("PASS",))[0] == "FAIL" or not report.passed
    _CRITERIA[num] = ("FAIL" if failed else "PASS", name)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        verdict, name = _CRITERIA[num]
        terminalreporter.write_line(f"criterion {num:2d}: {verdict}  {name}")
