import json

import pytest

from risvcom.config import ScenarioConfig, config_hash, json_schema, load_config
from risvcom.exceptions import ConfigError


def test_defaults_and_full_scale():
    cfg = ScenarioConfig()
    assert cfg.pilot_T == cfg.N_t and cfg.slot_nb == pytest.approx(1e-6)
    full = ScenarioConfig.full_scale()
    assert (full.N_t, full.N_r, full.M, full.K, full.N) == (16, 25, 100, 3, 32)
    assert ScenarioConfig.full_scale(K=4).K == 4


def test_json_env_and_override_precedence(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"M": 8, "I": 4, "I_list": [1, 2], "B_nb": 2000000}))
    cfg = load_config(path, env={"RISVCOM_I": "2", "RISVCOM_passive": "exhaustive", "OTHER": "x"}, seeds=3)
    assert (cfg.M, cfg.I, cfg.seeds, cfg.passive) == (8, 2, 3, "exhaustive")
    assert cfg.I_list == (1, 2) and isinstance(cfg.B_nb, float)


@pytest.mark.parametrize("doc", [{"nope": 1}, {"M": 0}, {"I": 40}, {"passive": "x"}, {"I_list": 3}, {"M": True}, [1, 2]])
def test_bad_documents_are_rejected(tmp_path, doc):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ConfigError):
        load_config(path, env={})


def test_unreadable_file_and_env_typo(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json", env={})
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json", env={})
    with pytest.raises(ConfigError):
        load_config(env={"RISVCOM_SEEDZ": "3"})


def test_hash_and_roundtrip():
    a, b = ScenarioConfig(), ScenarioConfig(seeds=3)
    assert config_hash(a) != config_hash(b)
    assert config_hash(ScenarioConfig(**{k: v for k, v in json.loads(a.to_json()).items()})) == config_hash(a)
    assert a.replace(M=32).M == 32
    with pytest.raises(ConfigError):
        a.replace(M=8)


def test_schema_forbids_extra_keys():
    jsonschema = pytest.importorskip("jsonschema")
    schema = json_schema()
    jsonschema.validate(ScenarioConfig().to_dict(), schema)
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate({"unknown": 1}, schema)
