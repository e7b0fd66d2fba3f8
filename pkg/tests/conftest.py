import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def random_pd(rng, d, jitter=0.1):
    b = rng.uniform(-1, 1, (d, d))
    return b @ b.T + jitter * np.eye(d)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    if mod is None:
        return
    terminalreporter.section("acceptance criteria")
    for number in range(1, 11):
        terminalreporter.write_line(mod.RESULTS.get(number, f"criterion {number:2d}: FAIL  (no result recorded)"))
