import pytest

from riskrct.config import ConfigError, RunConfig, load_config, parse_config


def test_empty_file_gives_defaults():
    cfg = parse_config("")
    assert cfg.pipeline.threshold == 0.95
    assert cfg.pipeline.top_k == 100
    assert cfg.pipeline.cooldown_days == 9
    assert cfg.trial.duration_days == 138
    assert cfg.simulation.population == 20000
    assert cfg.simulation.female_ratio == 0.61


def test_threshold_out_of_range_names_field_and_bound():
    with pytest.raises(ConfigError) as e:
        parse_config("[pipeline]\nthreshold = 1.5\n")
    assert e.value.field == "pipeline.threshold"
    assert "(0, 1)" in str(e.value)


@pytest.mark.parametrize("text,field", [
    ("[pipeline]\nthresold = 0.9\n", "pipeline.thresold"),
    ("[pipelines]\nthreshold = 0.9\n", "pipelines"),
    ("[simulation]\npopulation = many\n", "simulation.population"),
    ("[simulation]\nresponse_tau = 0\n", "simulation.response_tau"),
    ("[trial]\nduration_days = 0\n", "trial.duration_days"),
    ("[analysis]\nwindows = 1-14,20-30\n", "analysis.windows"),
    ("[training]\neval_day = 40\n", "training.eval_day"),
])
def test_invalid_values(text, field):
    with pytest.raises(ConfigError) as e:
        parse_config(text)
    assert e.value.field == field


def test_horizon_must_cover_follow_up():
    with pytest.raises(ConfigError) as e:
        parse_config("[simulation]\nhorizon_days = 100\n")
    assert e.value.field == "simulation.horizon_days"


def test_roundtrip_is_a_fixed_point(tmp_path):
    cfg = parse_config("[simulation]\npopulation = 1234\nfemale_ratio = 0.7\n[gat]\noptimizer = gd\n")
    text = cfg.to_ini()
    again = parse_config(text)
    assert again == cfg
    assert again.to_ini() == text
    (tmp_path / "c.ini").write_text(text)
    assert load_config(tmp_path / "c.ini") == cfg


def test_hash_ignores_output_and_analysis():
    a = RunConfig()
    b = a.with_overrides(**{"output.directory": "elsewhere", "analysis.windows": "1-14"})
    c = a.with_overrides(**{"pipeline.top_k": 50})
    assert a.config_hash() == b.config_hash() != c.config_hash()
    assert a.header()["config_hash"] == a.config_hash()
