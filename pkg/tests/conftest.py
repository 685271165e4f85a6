import sys
from pathlib import Path

import numpy as np
import pytest

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from circuit import build_repetition_code_memory, build_surface_code_memory
from experiments.profiles import profile_manager
from noise_model import sample_error_model


@pytest.fixture(scope="session")
def surface_d3():
    return build_surface_code_memory(3, 2)


@pytest.fixture(scope="session")
def repetition_d3():
    return build_repetition_code_memory(3, 2)


@pytest.fixture(scope="session")
def surface_model(surface_d3):
    return sample_error_model(7, surface_d3, P=2)


@pytest.fixture
def smoke_config(tmp_path):
    cfg = profile_manager.get_config("smoke")
    return cfg.with_overrides(**{"output.out_dir": str(tmp_path / "run")})


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
