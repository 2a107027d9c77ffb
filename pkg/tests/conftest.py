import os
import sys

import pytest
from hypothesis import HealthCheck, settings

from zcsd import zns

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def small_geometry():
    # 4 zones x 8 blocks x 512 bytes
    return zns.DeviceGeometry(block_size=512, zone_size=4096, zone_count=4)


@pytest.fixture
def small_device(small_geometry):
    return zns.create_device(small_geometry)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        status, title = mod.RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {status}  {title}")
