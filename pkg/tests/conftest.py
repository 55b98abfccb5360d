import os
import sys

import numpy as np
import pytest

from mspg_helmholtz.coefficients import builtin_example
from mspg_helmholtz.mesh import build_hierarchy


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def small_mesh():
    return build_hierarchy(coarse_cells=4, levels=2)


@pytest.fixture(scope="session")
def constant_k4():
    return builtin_example("constant", {"k": 4.0})


@pytest.fixture
def crandn(rng):
    """Draw standard complex normal arrays."""

    def draw(*shape):
        return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)

    return draw


def pytest_addoption(parser):
    parser.addoption(
        "--paper-scale", action="store_true", default=False,
        help="run full-size studies (k=32, h=2^-8); also enabled by MSPG_PAPER_SCALE=1",
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--paper-scale") or os.environ.get("MSPG_PAPER_SCALE") == "1":
        return
    skip = pytest.mark.skip(reason="full-scale study; enable with --paper-scale or MSPG_PAPER_SCALE=1")
    for item in items:
        if "paper_scale" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    lines = next(
        (m.VERDICTS for name, m in list(sys.modules.items()) if name.endswith("test_acceptance") and hasattr(m, "VERDICTS")),
        None,
    )
    if lines:
        terminalreporter.section("acceptance verdicts")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
