import numpy as np
import pytest
import torch

from psfnet.model import ModelConfig
from psfnet.synthetic import make_dataset, make_scene


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return ModelConfig(channels=8, num_psfb=2, num_rdab=1)


@pytest.fixture
def scene():
    return make_scene(48, 64, seed=3)


@pytest.fixture
def dataset_root(tmp_path):
    root = tmp_path / "data"
    make_dataset(root, 2, h=40, w=48, seed=10)
    return root


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)


ACCEPTANCE = []


@pytest.fixture
def acceptance():
    """Record one ``PASS``/``FAIL`` line per acceptance criterion."""

    def record(name, ok, detail):
        ACCEPTANCE.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
