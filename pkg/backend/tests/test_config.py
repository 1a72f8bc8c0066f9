import pytest

from app.config import (
    build_device_config,
    build_pipeline_config,
    load_kv_file,
    merge_overrides,
    parse_kv_text,
)
from app.exceptions import ConfigError

SAMPLE = """
# bancada
mean_photon_number = 10
transmittance_early = 0.9   # perdas no ramo early

seed = 42
n_blocks=12
stop_on_alarm = false
"""


def test_parse_key_value_text():
    values = parse_kv_text(SAMPLE)
    assert values == {
        "mean_photon_number": "10",
        "transmittance_early": "0.9",
        "seed": "42",
        "n_blocks": "12",
        "stop_on_alarm": "false",
    }


def test_duplicate_key_is_an_error():
    with pytest.raises(ConfigError, match="duplicada"):
        parse_kv_text("seed = 1\nseed = 2\n", source="run.cfg")


@pytest.mark.parametrize("line", ["apenas texto", "= 3"])
def test_malformed_lines(line):
    with pytest.raises(ConfigError):
        parse_kv_text(line)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_kv_file(tmp_path / "nao_existe.cfg")


def test_values_are_coerced_by_the_models(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(SAMPLE, encoding="utf-8")
    cfg = build_pipeline_config(load_kv_file(path))
    assert cfg.seed == 42
    assert cfg.n_blocks == 12
    assert cfg.stop_on_alarm is False
    assert cfg.device.transmittance_early == 0.9
    assert cfg.device.mean_photon_number == 10.0
    assert cfg.master_seed == 42


def test_unknown_keys_are_rejected():
    with pytest.raises(ConfigError, match="desconhecidas"):
        build_device_config({"photons": "3"})
    with pytest.raises(ConfigError, match="desconhecidas"):
        build_pipeline_config({"seed": "1", "blocks": "3"})


def test_dead_time_longer_than_bin_separation_is_refused():
    with pytest.raises(ConfigError, match="dead_time_ns"):
        build_device_config({"dead_time_ns": "800"})


def test_invalid_values_name_the_field():
    with pytest.raises(ConfigError, match="n_blocks"):
        build_pipeline_config({"n_blocks": "0"})
    with pytest.raises(ConfigError, match="p_psi"):
        build_pipeline_config({"p_psi": "0.7", "p_phi": "0.7"})


def test_flags_override_file_values():
    merged = merge_overrides({"seed": "1", "n_blocks": "5"}, {"seed": "9", "n_blocks": None})
    assert merged == {"seed": "9", "n_blocks": "5"}


def test_master_seed_falls_back_to_device_seed():
    cfg = build_pipeline_config({"rng_seed": "77"})
    assert cfg.seed is None
    assert cfg.master_seed == 77


def test_engine_follows_settings():
    from sqlalchemy import inspect

    from app.config import settings
    from app.database import create_db_and_tables, engine, get_engine

    assert str(get_engine().url) == settings.database_url == "sqlite://"
    create_db_and_tables()
    assert {"runs", "sweep_points", "visibility_samples"} <= set(inspect(engine).get_table_names())
