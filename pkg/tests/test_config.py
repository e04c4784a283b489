import io

import numpy as np
import pytest

from pamtwin import config
from pamtwin.config import ConfigError
from pamtwin.harness import preset
from pamtwin.statics import DEFAULT_PARAMS


def test_scenario_round_trip(tmp_path):
    cfg = preset("a10", seed=3, duration=4.0)
    path = tmp_path / "a10.ini"
    config.save_scenario(path, cfg)
    back = config.load_scenario(path)
    assert config.dump_scenario(back) == config.dump_scenario(cfg)
    assert back.params == cfg.params
    assert back.seed == 3 and back.duration == 4.0
    assert tuple(back.stiffness.values) == (8.0, 5.5) and tuple(back.stiffness.times) == (15.0,)
    np.testing.assert_array_equal(back.noise.R_sim, cfg.noise.R_sim)
    np.testing.assert_array_equal(back.ukf.Q, cfg.ukf.Q)


def test_params_round_trip(tmp_path):
    p = DEFAULT_PARAMS.replace(J=0.02, A_21=3e-8)
    path = tmp_path / "p.ini"
    config.save_params(path, p)
    assert config.load_params(path) == p


def test_partial_config_keeps_defaults():
    cfg = config.load_scenario(io.StringIO("[scenario]\nduration = 2.5\n[model]\nJ = 0.03\n"))
    assert cfg.duration == 2.5
    assert cfg.params.J == 0.03 and cfg.params.r == DEFAULT_PARAMS.r
    assert cfg.estimator is True


@pytest.mark.parametrize("text", [
    "[scenario]\nbogus = 1\n",
    "[weather]\nrain = 1\n",
    "[model]\nj = 0.01\n",  # keys are case sensitive
    "[scenario]\nduration = fast\n",
    "[scenario]\nestimator = maybe\n",
    "[scenario]\nperiod = 0.0015\n",
    "[scenario]\nstiffness_values = 7, 6\n",
    "[model]\nJ = -1\n",
    "not an ini file",
])
def test_bad_config_raises(text):
    with pytest.raises(ConfigError):
        config.load_scenario(io.StringIO(text))


def test_missing_file_raises(tmp_path):
    with pytest.raises(ConfigError):
        config.load_scenario(tmp_path / "absent.ini")
