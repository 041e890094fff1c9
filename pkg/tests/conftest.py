import dataclasses
import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from valid_fusion import synth  # noqa: E402
from valid_fusion.geometry import Box2D  # noqa: E402
from valid_fusion.kitti_io import Detection, GroundTruthObject, Modality  # noqa: E402


def car(x0, y0, x1, y1, occlusion=0, truncation=0.0, cls="Car"):
    return GroundTruthObject(cls, truncation, occlusion, -10.0, Box2D(x0, y0, x1, y1))


def det(x0, y0, x1, y1, score, cls="Car", modality=Modality.LIDAR, frame="000000"):
    return Detection(cls, Box2D(x0, y0, x1, y1), score, modality, frame)


@pytest.fixture(scope="session")
def small_synth_config():
    return dataclasses.replace(synth.load_fixture("default"), n_frames=24)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory, small_synth_config):
    out = tmp_path_factory.mktemp("synth_small")
    paths = synth.generate_dataset(small_synth_config, str(out))
    return paths


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
