import numpy as np
import pytest

from trimarket.model import default_config
from trimarket.scenarios import SynthSpec, run_scenario, synth_data


@pytest.fixture(scope="session")
def base_cfg():
    return default_config(168)


@pytest.fixture(scope="session")
def base_data():
    return synth_data(SynthSpec())


@pytest.fixture(scope="session")
def base_result(base_cfg, base_data):
    # shared across tests; nothing mutates it
    return run_scenario(base_cfg, base_data, properties="full")


@pytest.fixture(scope="session")
def uncapped_cfg(base_cfg):
    return base_cfg.with_caps(g_cap=np.inf, r_cap=np.inf, c_cap=np.inf)


@pytest.fixture(scope="session")
def uncapped_result(uncapped_cfg, base_data):
    return run_scenario(uncapped_cfg, base_data, properties="core")
