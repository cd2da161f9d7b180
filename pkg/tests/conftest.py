import numpy as np
import pytest
from hypothesis import settings

from rerkit import AutoencoderConfig, SynthSpec, generate

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_config():
    """A config small enough for unit tests to train in well under a second."""
    return AutoencoderConfig(hidden_dims=[16], latent_dim=2, n_epochs=5, n_neighbors=10, learning_rate=3e-3)


@pytest.fixture(scope="session")
def small_dataset():
    return generate(SynthSpec(n_classes=3, samples_per_class=60, dim=8, seed=4))


_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one PASS/FAIL line per acceptance criterion for the session summary."""

    def record(number, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {detail}"
        _ACCEPTANCE_LINES.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
