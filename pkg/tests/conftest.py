import numpy as np
import pytest

from tema_tta.harness import World, WorldConfig

SMALL_WORLD = WorldConfig(
    n_classes=5,
    input_dim=8,
    n_layers=3,
    n_corruptions=4,
    source_samples=4000,
    reference_samples=4000,
)


@pytest.fixture(scope="session")
def small_world():
    return World(SMALL_WORLD, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


_acceptance_lines = []


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    status = "PASS" if report.passed else "FAIL"
    _acceptance_lines.append(f"{status}  {name}")


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in _acceptance_lines:
        terminalreporter.write_line(line)


DEFAULT_MODES = ("source_only", "tbn", "tema_only", "fixed_alpha(0.5)", "full")


@pytest.fixture(scope="session")
def default_comparison():
    """Overall error per mode on the default continual scenario, seeds 0-2.

    Shared by every test that needs the desk-scale comparison; the table
    carries its own wall-clock in ``elapsed``.
    """
    import time

    from tema_tta.harness import ScenarioSpec, compare_modes

    start = time.perf_counter()
    table = compare_modes(WorldConfig(), ScenarioSpec(), DEFAULT_MODES, [200, 2], seeds=(0, 1, 2))
    table.elapsed = time.perf_counter() - start
    return table
