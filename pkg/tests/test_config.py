import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from accap.config import PRESETS, ConfigError, RunConfig, coerce, field_types, load_config_file, resolve

# two distinct valid non-default values per key
ALTERNATIVES = {
    "d_h": (8, 16), "d_e": (8, 16), "d_emb": (8, 16), "value_hidden_layers": (1, 3),
    "init_scale": (0.05, 0.1), "lr": (1e-3, 2e-4), "lr_decay": (0.5, 1.0), "decay_every": (1, 3),
    "batch_size": (4, 16), "policy_epochs": (0, 3), "reward_epochs": (1, 2), "value_epochs": (0, 2),
    "joint_epochs": (1, 2), "advantage_mode": ("td0", "terminal"), "entropy_weight": (0.01, 0.1),
    "max_len": (8, 12), "margin": (0.1, 0.3), "alpha": (0.25, 0.75), "decoder": ("greedy", "sample"),
    "k": (2, 5), "beta": (0.0, 1.0), "n_scenes": (100, 500), "corpus_seed": (1, 2), "seed": (5, 6),
}


def test_alternatives_cover_every_key():
    assert set(ALTERNATIVES) == set(field_types())


@given(st.sampled_from(sorted(ALTERNATIVES)), st.booleans(), st.booleans())
def test_flag_beats_file_beats_default(key, use_file, use_flag):
    file_v, flag_v = ALTERNATIVES[key]
    cfg = resolve({key: file_v} if use_file else {}, {key: flag_v} if use_flag else {})
    expected = flag_v if use_flag else file_v if use_file else getattr(RunConfig(), key)
    assert getattr(cfg, key) == expected


def test_preset_sits_between_defaults_and_file():
    assert resolve(preset="wide512").d_h == 512
    assert resolve({"d_h": 32}, preset="wide512").d_h == 32
    assert resolve({"preset": "wide512"}).d_emb == 512
    assert PRESETS["desk"] == {}
    with pytest.raises(ConfigError):
        resolve(preset="huge")


def test_validation_rejects_out_of_range():
    for bad in ({"margin": 1.0}, {"alpha": 0.0}, {"beta": 1.5}, {"lr": 0.0}, {"max_len": 1},
                {"advantage_mode": "gae"}, {"k": 0}, {"n_scenes": 9}, {"lr_decay": 1.1}):
        with pytest.raises(ConfigError):
            resolve(bad)
    with pytest.raises(ConfigError):
        coerce("nonsense", 1)
    with pytest.raises(ConfigError):
        coerce("d_h", 2.5)
    assert coerce("lr", "0.001") == 0.001


def test_config_file_loading(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"d_h": 32, "advantage_mode": "td0"}))
    assert resolve(load_config_file(p)).advantage_mode == "td0"
    p.write_text(json.dumps({"d_h": [1]}))
    with pytest.raises(ConfigError):
        load_config_file(p)
    p.write_text("[1]")
    with pytest.raises(ConfigError):
        load_config_file(p)


def test_defaults():
    c = RunConfig()
    assert (c.lr, c.lr_decay, c.decay_every, c.max_len, c.margin, c.beta) == (5e-4, 0.9, 2, 16, 0.2, 0.4)
    assert c.to_dict()["d_h"] == 64
