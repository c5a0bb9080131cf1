import dataclasses

import pytest

from jointloc.config import ChannelParams, ExperimentConfig, FineHyperparams, SceneParams


def small_config(**overrides) -> ExperimentConfig:
    """Default geometry with short fine training, for tests that only need a working pipeline."""
    cfg = ExperimentConfig(n_queries=20, fine=FineHyperparams(epochs=100), sweep_spacings=(1.5, 2.0))
    return dataclasses.replace(cfg, **overrides)


def noise_free(cfg: ExperimentConfig) -> ExperimentConfig:
    return cfg.replace(channel=dataclasses.replace(cfg.channel, shadowing_sigma=0.0),
                       scene=dataclasses.replace(cfg.scene, noise_sigma=0.0))


@pytest.fixture
def cfg():
    return small_config()


@pytest.fixture(scope="session")
def survey_small():
    from jointloc.sim import Environment, run_survey

    c = small_config()
    env = Environment.from_config(c)
    wifi, images = run_survey(c, env)
    return c, env, wifi, images


@pytest.fixture(scope="session")
def coarse_small(survey_small):
    from jointloc.coarse import train_classifier
    from jointloc.pipeline import partition_for

    c, env, wifi, images = survey_small
    return train_classifier(wifi, c.coarse), partition_for(c)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("[")[1].split("]")[0])):
            terminalreporter.write_line(line)
