import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("default")

RUN_SLOW = os.environ.get("DMARL_RUN_SLOW", "") not in ("", "0")


def pytest_collection_modifyitems(config, items):
    if RUN_SLOW:
        return
    skip = pytest.mark.skip(reason="long run; set DMARL_RUN_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(n for n in dir(mod) if n.startswith("test_c")):
        number = int(name[6:8])
        status, detail = mod.RESULTS.get(number, ("SKIP", "not run in this session"))
        terminalreporter.write_line(f"[{status}] criterion {number:2d}: {detail}")
