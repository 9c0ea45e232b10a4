import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from slicereserve.infra import build_fat_tree, load_topology  # noqa: E402
from slicereserve.slices import builtin_slice_catalog  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def fat_tree():
    return load_topology("fat-tree-15")


@pytest.fixture(scope="session")
def small_tree():
    return build_fat_tree(2)


@pytest.fixture(scope="session")
def catalog():
    return builtin_slice_catalog()


CRITERIA: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
