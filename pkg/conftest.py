import numpy as np
import pytest
from hydra import compose, initialize_config_dir
from omegaconf import DictConfig

from aru.preprocessing.synthetic import SynthConfig, SyntheticData, synth_generate
from aru.tests.utils import CONFIG_DIR
from aru.utils.constants import HYDRA_VERSION_BASE


@pytest.fixture(scope="session")
def override_aru_test_config():
    def _override_aru_test_config(overrides: list[str]) -> DictConfig:
        """Return an optionally overriden copy of the aru test config.

        :return:
        """

        # needs a str, can't take a Path
        with initialize_config_dir(version_base=HYDRA_VERSION_BASE, config_dir=str(CONFIG_DIR)):
            cfg = compose(config_name="config", overrides=overrides)
        return cfg

    return _override_aru_test_config


@pytest.fixture(scope="session")
def aru_test_config(override_aru_test_config):
    return override_aru_test_config(overrides=["command=train"])


@pytest.fixture(scope="session")
def small_synthetic() -> SyntheticData:
    """Three short hourly series, enough for E=K=8 windows with validation and test
    ranges."""
    return synth_generate(SynthConfig(n_series=3, length=240, gamma=5.0, noise=0.5, seed=3))


@pytest.fixture(scope="function")
def rng() -> np.random.Generator:
    return np.random.default_rng(20231017)
