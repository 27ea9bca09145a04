import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def out_root(tmp_path, monkeypatch):
    monkeypatch.setenv("MASKXRL_OUTPUT_ROOT", str(tmp_path / "runs"))
    return tmp_path / "runs"
