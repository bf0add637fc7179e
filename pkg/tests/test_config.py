import pytest

from drifter.config import CliConfig, ConfigError, describe_defaults, dump_config, env_overrides, load_config


def write(tmp_path, text):
    p = tmp_path / "cfg.yaml"
    p.write_text(text)
    return str(p)


def test_defaults():
    cfg = load_config(None, environ={})
    assert cfg.source.window.mode == "by_time" and cfg.source.window.interval_ms == 600_000
    assert cfg.export.port == 9464
    ec = cfg.engine_config()
    assert ec.interaction_cap == 100 and ec.quantiles == (0.25, 0.5, 0.75, 0.95, 0.99)
    assert ec.rules[0].offset_interval == ec.rules[0].eval_window == 600_000


def test_unknown_key_is_line_anchored(tmp_path):
    path = write(tmp_path, "engine:\n  hll_precision: 12\n  interaction_cpa: 5\n")
    with pytest.raises(ConfigError) as info:
        load_config(path, environ={})
    assert f"{path}:3: engine.interaction_cpa" in str(info.value)


def test_invalid_port_names_key(tmp_path):
    path = write(tmp_path, "export:\n  port: 70000\n")
    with pytest.raises(ConfigError, match=r"cfg.yaml:2: export.port"):
        load_config(path, environ={})


def test_negative_cap(tmp_path):
    with pytest.raises(ConfigError, match="engine.interaction_cap"):
        load_config(write(tmp_path, "engine:\n  interaction_cap: -1\n"), environ={})


def test_yaml_syntax_error(tmp_path):
    with pytest.raises(ConfigError, match=r"cfg.yaml:2: YAML syntax error"):
        load_config(write(tmp_path, "export:\n\tport: 1\n"), environ={})


def test_by_count_rules_need_explicit_windows(tmp_path):
    path = write(tmp_path, "source:\n  window:\n    mode: by_count\n    count: 10\n")
    with pytest.raises(ConfigError, match="explicit"):
        load_config(path, environ={})
    ok = write(tmp_path, "source:\n  window: {mode: by_count, count: 10}\n"
                         "rules:\n  - {kind: relative_delta, threshold: 25, eval_window: 5, offset_interval: 5}\n")
    assert load_config(ok, environ={}).engine_config().window.count == 10


def test_env_and_explicit_overrides(tmp_path):
    env = {"DRIFTER_EXPORT__PORT": "9000", "DRIFTER_ENGINE__HLL_PRECISION": "10", "OTHER": "x"}
    assert env_overrides(env) == {"export.port": 9000, "engine.hll_precision": 10}
    cfg = load_config(write(tmp_path, "export:\n  port: 1234\n"), {"export.port": 4321}, environ=env)
    assert cfg.export.port == 4321 and cfg.engine.hll_precision == 10


def test_env_typo_rejected():
    with pytest.raises(ConfigError, match="engine.nope"):
        load_config(None, environ={"DRIFTER_ENGINE__NOPE": "1"})


def test_conflicts_and_deny_wins(tmp_path):
    cfg = load_config(write(tmp_path, "engine:\n  features:\n    allow: ['ad*', 'x']\n    deny: ['x']\n"),
                      environ={})
    assert cfg.filter_conflicts() == ["x"]
    assert not cfg.engine_config().admits("x")


def test_dump_roundtrip(tmp_path):
    cfg = load_config(None, environ={})
    again = load_config(write(tmp_path, dump_config(cfg)), environ={})
    assert again == cfg


def test_every_default_documented():
    text = describe_defaults()
    for key in ("source.window.interval_ms = 600000", "export.port = 9464", "engine.interaction_cap = 100",
                "engine.hll_precision = 12", "export.alert_log = 'alerts.jsonl'"):
        assert key in text
    assert "rules = [" in text


def test_model_rejects_extra():
    with pytest.raises(Exception):
        CliConfig.model_validate({"bogus": 1})
