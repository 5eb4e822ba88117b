import numpy as np
import pytest

from motiongate.decoder import DecoderConfig, init
from motiongate.synthscene import SceneConfig, generate


@pytest.fixture(scope="session")
def reference_scene():
    """Seed-42 scene: 12x8 grid, C=64, T=10, 4x4 dynamic rectangle."""
    return generate(SceneConfig(grid_h=12, grid_w=8, dim=64, frames=10, dyn_rect=(2, 2, 4, 4), seed=42))


@pytest.fixture(scope="session")
def small_cfg():
    return DecoderConfig(num_layers=3, heads=2, dim=16, state_tokens=4, grid=(4, 3), seed=5)


@pytest.fixture(scope="session")
def small_model(small_cfg):
    return init(small_cfg)


@pytest.fixture(scope="session")
def small_scene():
    return generate(SceneConfig(grid_h=4, grid_w=3, dim=16, frames=4, dyn_rect=(1, 1, 2, 1), seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
