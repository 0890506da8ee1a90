import json

import numpy as np
import pytest

from forcereg.config import RunConfig, load_node_set, read_config_file, resolve, save_node_set
from forcereg.errors import ConfigError


def test_precedence(tmp_path):
    (tmp_path / "c.toml").write_text("k_ss = 0.02\nmax_iters = 50\n")
    file_values = read_config_file(tmp_path / "c.toml")
    cfg = resolve(file_values, {"k_ss": 0.05, "max_iters": None})
    assert cfg.k_ss == 0.05 and cfg.max_iters == 50 and cfg.poisson_ratio == 0.49


def test_json_and_unknown(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"poisson_ratio": 0.45}))
    assert resolve(read_config_file(tmp_path / "c.json")).poisson_ratio == 0.45
    with pytest.raises(ConfigError):
        resolve({"bogus": 1})
    (tmp_path / "bad.toml").write_text("k_ss = = 1\n")
    with pytest.raises(ConfigError):
        read_config_file(tmp_path / "bad.toml")
    with pytest.raises(ConfigError):
        resolve({"k_ss": -1.0})


def test_registration_config_mapping():
    rc = RunConfig(k_ss=0.1, seed=3).registration_config(force_mask=[1, 2])
    assert rc.k_ss == 0.1 and rc.rng_seed == 3 and list(rc.force_mask) == [1, 2]


def test_node_sets(tmp_path):
    save_node_set(tmp_path / "n.csv", [5, 1, 3])
    np.testing.assert_array_equal(load_node_set(tmp_path / "n.csv"), [1, 3, 5])
    (tmp_path / "plain.txt").write_text("4\n2, 9.0\n\n")
    np.testing.assert_array_equal(load_node_set(tmp_path / "plain.txt"), [2, 4])
