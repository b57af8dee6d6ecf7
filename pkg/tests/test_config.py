from pathlib import Path

import pytest

from fcrstack.config import ConfigError, ExperimentConfig, config_from_dict, load_config


def write(tmp_path, text):
    p = tmp_path / "exp.toml"
    p.write_text(text)
    return p


def test_defaults():
    cfg = config_from_dict({})
    assert cfg == ExperimentConfig()
    assert cfg.battery.p_nom == 10 and cfg.monte_carlo.n_draws == 50


def test_sections_and_seed_inheritance(tmp_path):
    cfg = load_config(write(tmp_path, """
seed = 11
[battery]
e_cap = 24
[train]
hidden = [32, 16]
episodes = 5
[monte_carlo]
seed = 2
"""))
    assert cfg.battery.e_cap == 24.0
    assert cfg.train.hidden == (32, 16) and cfg.train.seed == 11
    assert cfg.monte_carlo.seed == 2
    assert cfg.base_dir == tmp_path


def test_with_seed_overrides_everything():
    cfg = config_from_dict({"seed": 1}).with_seed(9)
    assert (cfg.seed, cfg.train.seed, cfg.monte_carlo.seed) == (9, 9, 9)


@pytest.mark.parametrize("raw, match", [
    ({"batery": {}}, "unknown top-level"),
    ({"battery": {"pnom": 10}}, r"\[battery\]: unknown key"),
    ({"battery": {"p_nom": "ten"}}, "battery.p_nom: expected a number"),
    ({"train": {"episodes": 1.5}}, "train.episodes: expected an integer"),
    ({"fcr": {"fcr_energy_settled": 1}}, "true/false"),
    ({"battery": {"eta_c": 1.5}}, r"\[battery\]"),
    ({"battery": {"e_cap": 5}}, "reserve"),
    ({"train": {"hidden": [1.5]}}, "list of integers"),
    ({"battery": 3}, "must be a table"),
])
def test_rejections(raw, match):
    with pytest.raises(ConfigError, match=match):
        config_from_dict(raw)


def test_bad_toml_and_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "seed = = 3"))
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.toml")


def test_data_paths_relative_to_config(tmp_path):
    cfg = load_config(write(tmp_path, '[data]\ndir = "d"\n'))
    p = cfg.data_paths()
    assert p["frequency"] == tmp_path / "d" / "frequency.csv"
    assert cfg.data_paths("/x")["fcr"] == Path("/x/fcr_prices.csv")
