import time

import pytest

from dmpcsim.sim_harness import load_scenario, run_scenario


def scenario_path(name: str) -> str:
    import importlib.resources as ir

    return str(ir.files("dmpcsim") / "scenarios" / f"{name}.yaml")


class TimedRun:
    """A completed scenario run plus its wall-clock duration."""

    def __init__(self, name: str):
        self.config = load_scenario(scenario_path(name))
        start = time.perf_counter()
        self.log = run_scenario(self.config)
        self.runtime = time.perf_counter() - start


@pytest.fixture(scope="session")
def auv_run() -> TimedRun:
    return TimedRun("auv_diving")


@pytest.fixture(scope="session")
def auv_disturbance_run() -> TimedRun:
    return TimedRun("auv_diving_disturbance")


@pytest.fixture(scope="session")
def cav_run() -> TimedRun:
    return TimedRun("cav_platoon")


@pytest.fixture(scope="session")
def cav_hetero_run() -> TimedRun:
    return TimedRun("cav_platoon_hetero")


@pytest.fixture(scope="session")
def cav_mismatch_run() -> TimedRun:
    return TimedRun("cav_platoon_mismatch")


@pytest.fixture(scope="session")
def fixedpoint_run() -> TimedRun:
    return TimedRun("consensus_fixedpoint")
