import pytest

from usdn_sim.config import parse_scenario
from usdn_sim.sim import run_scenario

SMALL = {
    "name": "small",
    "duration": 900,
    "topology": {"kind": "ring", "nodes": 10, "max_hops": 3},
    "flows": [{"source": "all", "interval": [20, 30], "start": 30}],
}


@pytest.fixture(scope="session")
def small_cfg():
    return parse_scenario(SMALL)


@pytest.fixture(scope="session")
def small_run(small_cfg):
    return run_scenario(small_cfg, 1)


@pytest.fixture(scope="session")
def small_baseline(small_cfg):
    return run_scenario(small_cfg.with_sdn(enabled=False), 1)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        ok, detail = mod.RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
