import json

import pytest

from secoco.cli import build_parser
from secoco.errors import ConfigError
from secoco.settings import DEFAULT_SETTINGS_PATH, RunConfig, derive_seed, load_settings, settings_from_args


def test_bundled_settings_match_defaults():
    assert DEFAULT_SETTINGS_PATH.exists()
    assert load_settings().to_dict() == RunConfig().to_dict()


def test_settings_file_merges_over_defaults(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps({"seed": 4, "noise": {"p_typo": 0.2}, "train": {"mode": "base"}}), encoding="utf-8")
    run = load_settings(path)
    assert run.seed == 4
    assert run.noise.p_typo == 0.2 and run.noise.p_delete == 0.1
    assert run.train.mode == "base"


@pytest.mark.parametrize("payload", [
    {"nosuch": {}},
    {"noise": {"p_nothing": 1}},
    {"noise": 3},
    {"task": {"punctuation": "maybe"}},
])
def test_bad_settings_are_rejected(tmp_path, payload):
    path = tmp_path / "s.json"
    path.write_text(json.dumps(payload), encoding="utf-8")
    with pytest.raises(ConfigError):
        load_settings(path)


def test_missing_or_broken_settings_file(tmp_path):
    with pytest.raises(ConfigError):
        load_settings(tmp_path / "nope.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_settings(bad)


def test_command_line_overrides():
    args = build_parser().parse_args([
        "synth", "--seed", "9", "--noise.p_typo", "0.3", "--task.punctuation", "no",
        "--task.n_train", "12", "--noise.seed", "5",
    ])
    run = settings_from_args(args)
    assert run.seed == 9
    assert run.noise.p_typo == 0.3
    assert run.task.punctuation is False
    assert run.task.n_train == 12
    assert run.noise.seed == 5
    assert run.derive_seed("noise") == 5
    assert run.derive_seed("task") == derive_seed(9, "task")


def test_bad_override_value():
    args = build_parser().parse_args(["synth", "--task.n_train", "many"])
    with pytest.raises(ConfigError):
        settings_from_args(args)


def test_invalid_combination_fails_validation():
    args = build_parser().parse_args(["synth", "--model.d_model", "10", "--model.n_heads", "3"])
    with pytest.raises(ConfigError):
        settings_from_args(args)


def test_derived_seeds_are_stable_and_distinct():
    assert derive_seed(1, "noise") == derive_seed(1, "noise")
    assert derive_seed(1, "noise") != derive_seed(1, "task")
    assert derive_seed(1, "noise") != derive_seed(2, "noise")
    assert 0 <= derive_seed(123, "train") < 2 ** 32
