import numpy as np
import pytest

from hatnet.train import train_toy

# Filled by the acceptance module; echoed after the run so the verdict
# lines survive pytest's output capture.
acceptance_results = []

TOY_STEPS = 2000
TOY_BATCH = 32
TOY_LR = 1e-3
TOY_SEED = 0


@pytest.fixture(scope="session")
def toy_run(tmp_path_factory):
    """One full toy training run, shared by the learning and smoothing tests."""
    out = tmp_path_factory.mktemp("toy_run")
    result = train_toy(
        steps=TOY_STEPS,
        batch=TOY_BATCH,
        lr=TOY_LR,
        seed=TOY_SEED,
        weights_path=out / "toy.weights",
        metrics_path=out / "metrics.csv",
    )
    return result, out / "toy.weights", out / "metrics.csv"


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for line in acceptance_results:
        terminalreporter.write_line(line)
