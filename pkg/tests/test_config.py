import copy

import pytest

from pcad.config import DEFAULTS, HELP, config_hash, describe, dump_config, load_config, set_dotted
from pcad.errors import ValidationError


def test_defaults_validate():
    cfg = load_config()
    assert cfg == DEFAULTS and cfg is not DEFAULTS


def test_file_and_overrides(tmp_path):
    f = tmp_path / "c.yaml"
    f.write_text("seed: 4\nfpfh: {m: 12}\n")
    cfg = load_config(f, set_dotted({}, "ocsvm.nu", 0.2))
    assert cfg["seed"] == 4 and cfg["fpfh"]["m"] == 12 and cfg["fpfh"]["bins"] == 11 and cfg["ocsvm"]["nu"] == 0.2
    j = tmp_path / "c.json"
    j.write_text('{"grid": {"rows": 32}}')
    assert load_config(j)["grid"]["rows"] == 32


def test_dump_round_trip(tmp_path):
    cfg = load_config(overrides={"seed": 3})
    dump_config(cfg, tmp_path / "d.yaml")
    assert load_config(tmp_path / "d.yaml") == cfg


@pytest.mark.parametrize("over", [
    {"bogus": 1},
    {"fpfh": {"bogus": 1}},
    {"fpfh": 3},
    {"fpfh": {"m": 0}},
    {"grid": {"bounds": [1, 0, 0, 1]}},
    {"coreset": {"fraction": 1.5}},
    {"gan": {"optimizer": "rmsprop"}},
    {"gan": {"d_act": "relu6"}},
    {"inversion": {"stages": [[0, 1e-4, 5]]}},
    {"missing": {"axis": "w"}},
    {"ocsvm": {"nu": 0}},
    {"eval": {"limit": 0}},
    {"calibration": {"quantiles": [1.5]}},
    {"synth": {"splits": {"train": {"scratch": 1}}}},
    {"synth": {"splits": {"holdout": {"none": 1}}}},
    {"synth": {"shape": "cube"}},
])
def test_rejects(over):
    with pytest.raises(ValidationError):
        load_config(overrides=copy.deepcopy(over))


def test_bad_files(tmp_path):
    with pytest.raises(ValidationError):
        load_config(tmp_path / "nope.yaml")
    (tmp_path / "list.yaml").write_text("- 1\n- 2\n")
    with pytest.raises(ValidationError):
        load_config(tmp_path / "list.yaml")
    (tmp_path / "broken.yaml").write_text("a: [1, 2\n")
    with pytest.raises(ValidationError):
        load_config(tmp_path / "broken.yaml")


def test_hash_tracks_content():
    a = load_config()
    assert config_hash(a) == config_hash(load_config())
    assert config_hash(a) != config_hash(load_config(overrides={"seed": 1}))
    assert config_hash(a, ["grid"]) == config_hash(load_config(overrides={"seed": 1}), ["grid"])


def test_every_key_documented():
    text = describe()
    for key in HELP:
        assert key in text

    def leaves(d, prefix=""):
        for k, v in d.items():
            if isinstance(v, dict) and prefix + k != "synth":
                yield from leaves(v, prefix + k + ".")
            else:
                yield prefix + k

    assert set(leaves(DEFAULTS)) <= set(HELP)
