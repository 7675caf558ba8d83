import time

import pytest
from helpers import identity_mock

from adpt.config import RunConfig
from adpt.imaging import PreprocessConfig


def pytest_configure(config):
    config._adpt_session_start = time.monotonic()


def pytest_collection_modifyitems(config, items):
    items.sort(key=lambda item: item.get_closest_marker("run_last") is not None)


@pytest.fixture
def run_config(tmp_path):
    def make(**kw):
        kw.setdefault("input_dir", str(tmp_path / "in"))
        kw.setdefault("output_dir", str(tmp_path / "out"))
        kw.setdefault("provider", identity_mock())
        kw.setdefault("seed", 1)
        kw.setdefault("preprocess", PreprocessConfig(target_size=32))
        kw.setdefault("concurrency", 4)
        return RunConfig(**kw)

    return make
