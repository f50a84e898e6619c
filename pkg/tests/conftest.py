import pytest

from wildiron.config import PipelineConfig
from wildiron.scene import SceneSpec, generate_scene, suite_spec


@pytest.fixture(scope="session")
def fast_config():
    cfg = PipelineConfig()
    cfg.descriptor.timing_repeats = 1
    return cfg


@pytest.fixture(scope="session")
def small_scene():
    return generate_scene(suite_spec(1, 1))


@pytest.fixture(scope="session")
def flat_scene():
    return generate_scene(SceneSpec(rng_seed=3))


@pytest.fixture(scope="session")
def small_perception(small_scene, fast_config):
    from wildiron.pipeline import perceive

    return perceive(small_scene.cloud, fast_config, "wild")


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import ACCEPTANCE

    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
