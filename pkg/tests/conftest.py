import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sceneflow import synthetic

settings.register_profile("repo", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, (ok, detail) in ACCEPTANCE.items():
        tag = {True: "PASS", False: "FAIL", None: "SKIP"}[ok]
        terminalreporter.write_line(f"[{tag}] {name}: {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def multiplane():
    spec = synthetic.multiplane_scene()
    return spec, synthetic.render(spec, with_last=False)[0]


@pytest.fixture(scope="session")
def street():
    """Four-frame street sequence (five rendered frames) with one mover."""
    spec = synthetic.street_scene(frames=4)
    return spec, synthetic.render(spec)


@pytest.fixture(scope="session")
def band_scene():
    spec = synthetic.occlusion_band_scene()
    return spec, synthetic.render(spec)


@pytest.fixture(scope="session")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("sceneflow")


def pytest_collection_modifyitems(config, items):
    if os.environ.get("SCENEFLOW_FAST"):
        skip = pytest.mark.skip(reason="SCENEFLOW_FAST set")
        for item in items:
            if "slow" in item.keywords:
                item.add_marker(skip)
