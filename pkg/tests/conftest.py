import pytest

from spkrefine.trainer import TrainConfig, train_kd

ACCEPTANCE_RESULTS = {}


@pytest.fixture(scope="session")
def trained():
    """Default toy distillation run, shared by the tests that need trained weights."""
    return train_kd(TrainConfig())


@pytest.fixture
def report():
    def record(criterion, passed, detail):
        ACCEPTANCE_RESULTS[criterion] = (passed, detail)
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {key}: {detail}")
