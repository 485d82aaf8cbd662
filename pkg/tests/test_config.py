import math
from pathlib import Path

import pytest

from src.backend.errors import ConfigError
from src.config.run_config import config_hash, emit_config, load_config_dict, parse_config, validate
from src.config.schema import MODEL_SCHEMA, RUN_SCHEMA


def _with(base: dict, **sections) -> dict:
    return {**base, **sections}


class TestValidate:
    def test_fills_defaults(self):
        resolved = validate({"epsilon": 1, "alpha": 0}, MODEL_SCHEMA)
        assert resolved == {"epsilon": 1.0, "alpha": 0.0, "g": 0.0, "ebar0": 0.0, "beta": 1.0}
        assert isinstance(resolved["epsilon"], float)

    def test_unknown_keys_are_listed(self, minimal_config):
        data = _with(minimal_config, model={**minimal_config["model"], "omega": 1.0, "temp": 2.0})
        with pytest.raises(ConfigError) as err:
            validate(data, RUN_SCHEMA)
        assert err.value.path == "model"
        assert "['omega', 'temp']" in str(err.value)

    @pytest.mark.parametrize("model,path", [
        ({"epsilon": "0.5", "alpha": 0.1}, "model.epsilon"),
        ({"epsilon": 0.5, "alpha": True}, "model.alpha"),
        ({"epsilon": 0.0, "alpha": 0.1}, "model.epsilon"),
        ({"epsilon": 0.5, "alpha": -1.0}, "model.alpha"),
        ({"epsilon": 0.5}, "model.alpha"),
    ])
    def test_type_errors_carry_path(self, model, path):
        with pytest.raises(ConfigError) as err:
            validate({"generator": "lindblad", "model": model}, RUN_SCHEMA)
        assert err.value.path == path

    def test_enum_and_null(self, minimal_config):
        with pytest.raises(ConfigError) as err:
            validate(_with(minimal_config, generator="hierarchy"), RUN_SCHEMA)
        assert err.value.path == "generator"
        with pytest.raises(ConfigError) as err:
            validate(_with(minimal_config, integrator={"t_end": None}), RUN_SCHEMA)
        assert err.value.path == "integrator.t_end"

    def test_nested_array_paths(self, minimal_config):
        data = _with(minimal_config, bath={"kind": "discrete", "levels": [[0.0, 1.0], [0.5]], "sigma": 0.1})
        with pytest.raises(ConfigError) as err:
            validate(data, RUN_SCHEMA)
        assert err.value.path == "bath.levels.1"


class TestLoad:
    def test_minimal_config(self, minimal_config):
        config = load_config_dict(minimal_config)
        assert config.name == "ahsim"
        assert config.n_max == 40
        assert config.model.beta == 1.0
        assert math.isinf(config.bath.band)
        assert config.integrator.method == "rk4"
        assert config.integrator.dt == pytest.approx(0.01)
        assert config.grid is None and config.sweep is None
        assert config.output.prefix == "run"

    def test_phase_space_needs_grid(self, minimal_config):
        with pytest.raises(ConfigError) as err:
            load_config_dict(_with(minimal_config, generator="cme"))
        assert err.value.path == "grid"

    def test_grid_bounds(self, minimal_config):
        grid = {"x_min": 1.0, "x_max": -1.0, "p_min": -1.0, "p_max": 1.0}
        with pytest.raises(ConfigError) as err:
            load_config_dict(_with(minimal_config, generator="cme", grid=grid))
        assert err.value.path == "grid"

    def test_model_errors_become_config_errors(self, minimal_config):
        with pytest.raises(ConfigError) as err:
            load_config_dict(_with(minimal_config, model={"epsilon": 0.5, "alpha": 0.1, "beta": 0.0}))
        assert err.value.path == "model.beta"

    @pytest.mark.parametrize("bath,path", [
        ({"kind": "discrete", "sigma": 0.1}, "bath.levels"),
        ({"kind": "discrete", "levels": [[0.0, 1.0]]}, "bath.sigma"),
        ({"kind": "uniform", "e_min": 1.0, "e_max": 1.0}, "bath.e_max"),
    ])
    def test_bath_consistency(self, minimal_config, bath, path):
        with pytest.raises(ConfigError) as err:
            load_config_dict(_with(minimal_config, bath=bath))
        assert err.value.path == path

    def test_full_rates_need_infinite_band(self, minimal_config):
        grid = {"x_min": -4.0, "x_max": 4.0, "p_min": -4.0, "p_max": 4.0}
        data = _with(minimal_config, generator="cme", grid=grid,
                     bath={"band": 5.0}, semiclassical={"rate_variant": "full"})
        with pytest.raises(ConfigError) as err:
            load_config_dict(data)
        assert err.value.path == "semiclassical.rate_variant"
        data = _with(minimal_config, semiclassical={"rate_variant": "full"})
        with pytest.raises(ConfigError):
            load_config_dict(data)

    @pytest.mark.parametrize("initial,path", [
        ({"k": 4}, "initial.k"),
        ({"kind": "diagonal", "lambdas": [1.0, 0.0, 0.0], "thetas": [0.0] * 4}, "initial.lambdas"),
        ({"kind": "diagonal", "lambdas": [1.0, 0.0, 0.0, 0.0], "thetas": [0.0, 0.0, 0.0, -0.1]}, "initial.thetas"),
        ({"kind": "diagonal", "lambdas": [0.5, 0.0, 0.0, 0.0], "thetas": [0.0] * 4}, "initial"),
    ])
    def test_initial_state(self, minimal_config, initial, path):
        with pytest.raises(ConfigError) as err:
            load_config_dict(_with(minimal_config, basis={"n_max": 4}, initial=initial))
        assert err.value.path == path

    def test_sweep_values_checked_per_parameter(self, minimal_config):
        data = _with(minimal_config, sweep={"parameter": "epsilon", "values": [0.5, 0.0]})
        with pytest.raises(ConfigError) as err:
            load_config_dict(data)
        assert err.value.path == "sweep.values.1"

    def test_uniform_broadening_resolved(self, minimal_config):
        config = load_config_dict(_with(minimal_config, bath={"kind": "uniform", "n_levels": 100,
                                                              "e_min": -1.0, "e_max": 1.0}))
        assert config.bath.sigma == pytest.approx(0.04)
        assert emit_config(config)["bath"]["sigma"] == pytest.approx(0.04)


class TestParse:
    def test_levels_file_relative_to_config(self, tmp_path, minimal_config, write_config):
        (tmp_path / "levels.csv").write_text("E,V\n0.0,1.0\n")
        path = write_config(_with(minimal_config, bath={"kind": "discrete", "levels_file": "levels.csv", "sigma": 0.1}))
        config = parse_config(path)
        assert config.bath.levels_file == str((tmp_path / "levels.csv").resolve())

    def test_missing_levels_file(self, minimal_config, write_config):
        path = write_config(_with(minimal_config, bath={"kind": "discrete", "levels_file": "nope.csv", "sigma": 0.1}))
        with pytest.raises(ConfigError) as err:
            parse_config(path)
        assert err.value.path == "bath.levels_file"

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="config file not found"):
            parse_config(tmp_path / "absent.json")

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('{\n  "generator": "lindblad",\n  oops\n}')
        with pytest.raises(ConfigError, match="invalid JSON at line 3"):
            parse_config(path)

    def test_top_level_must_be_object(self, tmp_path):
        path = tmp_path / "list.json"
        path.write_text("[1, 2]")
        with pytest.raises(ConfigError, match="top level"):
            parse_config(path)


class TestEmit:
    def test_round_trip(self, minimal_config):
        data = _with(
            minimal_config,
            bath={"kind": "wideband", "band": 6.0},
            initial={"kind": "thermal"},
            sweep={"parameter": "g", "values": [0.5, 1.0]},
        )
        config = load_config_dict(data)
        assert load_config_dict(emit_config(config)) == config

    def test_round_trip_phase_space(self, minimal_config):
        grid = {"x_min": -4.0, "x_max": 4.0, "p_min": -3.0, "p_max": 3.0, "nx": 64}
        config = load_config_dict(_with(minimal_config, generator="lcme", grid=grid))
        emitted = emit_config(config)
        assert emitted["bath"]["band"] is None
        assert emitted["grid"]["np"] == 128
        assert emitted["integrator"]["dt"] == pytest.approx(0.01)
        assert load_config_dict(emitted) == config

    def test_hash_is_stable(self, minimal_config):
        first = load_config_dict(minimal_config)
        second = load_config_dict(emit_config(first))
        assert config_hash(first) == config_hash(second)
        assert config_hash(first) != config_hash(first.with_parameter("g", 1.0))


class TestWithParameter:
    def test_rederives_default_step(self, minimal_config):
        config = load_config_dict(minimal_config)
        changed = config.with_parameter("alpha", 0.2)
        assert changed.model.alpha == 0.2
        assert changed.integrator.dt == pytest.approx(0.05 * (0.5 / 0.04) / 1000.0)

    def test_keeps_explicit_step(self, minimal_config):
        config = load_config_dict(_with(minimal_config, integrator={"dt": 0.002},
                                        sweep={"parameter": "alpha", "values": [0.1]}))
        changed = config.with_parameter("alpha", 0.2)
        assert changed.integrator.dt == 0.002
        assert changed.sweep is None

    def test_explicit_step_equal_to_default_is_kept(self, minimal_config):
        config = load_config_dict(_with(minimal_config, integrator={"dt": 0.01}))
        assert not config.integrator.dt_derived
        assert config.with_parameter("alpha", 0.2).integrator.dt == 0.01


@pytest.mark.parametrize("path", sorted((Path(__file__).parent.parent / "configs").glob("*.json")),
                         ids=lambda p: p.stem)
def test_shipped_configs_parse(path):
    config = parse_config(path)
    assert load_config_dict(emit_config(config)) == config
