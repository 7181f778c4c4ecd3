import numpy as np
import pytest

from riskrct.domain import EventLog, InteractionEvent, Layer
from riskrct.simulator import SimConfig


def make_log(rows):
    """rows of (day, hour, layer, actor, target[, violation])"""
    events = [InteractionEvent(r[0], r[1], Layer.parse(r[2]), r[3], r[4], *(r[5:] or (False,)))
              for r in rows]
    return EventLog.from_events(events)


@pytest.fixture(scope="session")
def small_config():
    return SimConfig(population=1500, horizon_days=200, seed=7)


@pytest.fixture(scope="session")
def small_world(small_config):
    from riskrct.study import warm_up
    return warm_up(small_config, 40)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


SMALL_TRIAL = dict(start_day=35, duration_days=6, follow_up_days=14)


@pytest.fixture(scope="session")
def small_trained():
    """A 1500-player world warmed up to day 35 and a quickly trained model."""
    from riskrct.gnn import TrainHyper
    from riskrct.riskmodel import TrainSettings
    from riskrct.stacker import GbdtHyper
    from riskrct.study import train_on_world
    cfg = SimConfig(population=1500, horizon_days=60, seed=11)
    ts = TrainSettings(gat=TrainHyper(epochs=30), gbdt=GbdtHyper(rounds=30))
    state, model = train_on_world(cfg, ts)
    return cfg, state, model


ACCEPTANCE_LINES: dict = {}


def record_acceptance(number: int, passed: bool, detail: str) -> str:
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
