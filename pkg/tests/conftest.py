import numpy as np
import pytest
from dataclasses import replace

from staa.model import ModelConfig, init_model
from staa.videoio import ClipSpec, generate_clip


@pytest.fixture(scope="session")
def default_config():
    return ModelConfig()


@pytest.fixture(scope="session")
def model(default_config):
    return init_model(default_config)


@pytest.fixture(scope="session")
def zero_model(default_config):
    m = init_model(default_config)
    return replace(m, params={k: np.zeros_like(v) for k, v in m.params.items()})


@pytest.fixture(scope="session")
def clip():
    return generate_clip(ClipSpec(8, 32, 32, seed=7, pattern="moving-square"))


@pytest.fixture(scope="session")
def noise_clip():
    return generate_clip(ClipSpec(8, 32, 32, seed=11, pattern="uniform-noise"))
