import numpy as np
import pytest

from stackmeta.cli_io import load_config
from stackmeta.lqg_core import FollowerType, GameSpec
from stackmeta.meta_trainer import Task


def scalar_task(A=1.0, B_L=1.0, B_F=1.0, Q_F=1.0, R_F=1.0, Q_L=1.0, R_L=1.0, Q_Lf=1.0, T=1, x0=2.0, Sigma=0.5):
    spec = GameSpec(A=[[A]], B_L=[[B_L]], Sigma=[[Sigma]], Q_L=[[Q_L]], R_L=[[R_L]], Q_Lf=[[Q_Lf]], T=T, x0=[x0])
    return Task(spec, FollowerType(0, [[B_F]], [[Q_F]], [[R_F]]))


@pytest.fixture(scope="session")
def robot():
    return load_config("robot_teaming")


@pytest.fixture(scope="session")
def robot_tasks(robot):
    return robot.tasks


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def report_criterion():
    """Record the one-line verdict for an acceptance criterion."""
    def record(number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
