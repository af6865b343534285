from dataclasses import replace
from importlib.resources import files

import pytest

import msmpinn._exceptions as mexc
from msmpinn.config import (OutputConfig, apply_preset, config_digest,
                            default_config, dump_config, load_config,
                            parse_config, resolve)
from msmpinn.training import TrainConfig

TINY = {
    "problem": "rotation",
    "seeds": [0],
    "train": {"iterations": 1, "epochs_u": 6},
}


class TestDefaults:
    @pytest.mark.parametrize("problem, n_pde, pinn_n_pde", [
        ("allen_cahn", 200, 3200),
        ("rotation", 1000, 2200),
        ("burgers", 1200, 2400),
    ])
    def test_paper_budgets(self, problem, n_pde, pinn_n_pde):
        config = resolve(default_config(problem))
        assert config.train.n_pde == n_pde
        assert config.train.pinn_n_pde == pinn_n_pde
        assert config.train.iterations == 5
        assert config.train.learning_rate == 1e-3
        assert config.preset == "paper"

    def test_two_stage_adaptive_budget(self):
        train = default_config("burgers").train
        assert train.n_adaptive == 1200
        assert train.n_adaptive_later == 300

    def test_unknown_problem(self):
        with pytest.raises(mexc.UnknownProblemError) as exc_info:
            default_config("heat")
        exp_msg = ("Unknown problem 'heat', must be one of ['allen_cahn', "
                   "'rotation', 'burgers', 'fokker_planck', 'advection6d']")
        assert str(exc_info.value) == exp_msg


class TestPreset:
    def test_desk(self):
        paper = default_config("rotation")
        desk = apply_preset(paper, "desk")
        assert desk.preset == "desk"
        assert desk.train.epochs_u == 500
        assert desk.train.epochs_v == paper.train.epochs_v // 3
        assert desk.output.lattice_scale == 0.5
        assert desk.train.n_pde == paper.train.n_pde

    def test_same_preset_is_noop(self):
        desk = apply_preset(default_config("rotation"), "desk")
        assert apply_preset(desk, "desk") is desk

    def test_no_way_back(self):
        desk = apply_preset(default_config("rotation"), "desk")
        with pytest.raises(mexc.ConfigurationError) as exc_info:
            apply_preset(desk, "paper")
        exp_msg = ("A desk configuration cannot be scaled back to paper "
                   "budgets.")
        assert str(exc_info.value) == exp_msg


class TestParse:
    def test_missing_values_from_defaults(self):
        config = parse_config(TINY)
        assert config.train.iterations == 1
        assert config.train.epochs_u == 6
        assert config.train.n_pde == 1000
        assert config.seeds == (0,)
        assert config.method == "msm"

    def test_desk_document(self):
        config = parse_config({**TINY, "preset": "desk",
                               "train": {"iterations": 2}})
        assert config.train.epochs_u == 500
        assert config.output.lattice_scale == 0.5

    def test_sampling_table(self):
        config = parse_config({**TINY, "sampling": {"strategy": "uniform",
                                                    "uniform_fraction": 0.5}})
        assert config.train.strategy == "uniform"
        assert config.train.uniform_fraction == 0.5

    @pytest.mark.parametrize("document, exp_msg", [
        ({**TINY, "solver": "adam"},
         "Unknown keys in [top level]: ['solver']"),
        ({**TINY, "train": {"epochs": 3}},
         "Unknown keys in [train]: ['epochs']"),
        ({**TINY, "sampling": {"strategy": "uniform", "gamma2": 1}},
         "Unknown keys in [sampling]: ['gamma2']"),
        ({**TINY, "output": {"dir": "x"}},
         "Unknown keys in [output]: ['dir']"),
    ])
    def test_unknown_keys(self, document, exp_msg):
        with pytest.raises(mexc.UnknownKeysError) as exc_info:
            parse_config(document)
        assert str(exc_info.value) == exp_msg

    def test_train_key_in_sampling_table(self):
        with pytest.raises(mexc.UnknownKeysError):
            parse_config({**TINY, "sampling": {"epochs_u": 3}})

    def test_missing_problem(self):
        with pytest.raises(mexc.ConfigurationError) as exc_info:
            parse_config({"seeds": [0]})
        assert str(exc_info.value) == "Configuration must name a problem."

    def test_table_type(self):
        with pytest.raises(mexc.ConfigurationError) as exc_info:
            parse_config({**TINY, "output": 3})
        assert str(exc_info.value) == "[output] must be a table."

    @pytest.mark.parametrize("document, exp_msg", [
        ({**TINY, "method": "sgd"},
         "Invalid method 'sgd', must be one of ['msm', 'pinn']"),
        ({**TINY, "seeds": []}, "At least one seed is required."),
        ({**TINY, "seeds": [-1]}, "Seeds must be >= 0, got (-1,)."),
        ({**TINY, "output": {"lattice_scale": 0.25}},
         "lattice_scale must be 1.0 or 0.5, got 0.25."),
        ({**TINY, "train": {"gamma": 0.1}},
         "gamma must be at least 0.5, got 0.1."),
    ])
    def test_invalid_values(self, document, exp_msg):
        with pytest.raises(mexc.ConfigurationError) as exc_info:
            parse_config(document)
        assert str(exc_info.value) == exp_msg


class TestRoundTrip:
    @pytest.mark.parametrize("problem", ["allen_cahn", "rotation", "burgers",
                                         "fokker_planck", "advection6d"])
    def test_effective_config_reparses(self, problem, tmp_path):
        config = resolve(apply_preset(default_config(problem), "desk"))
        path = tmp_path / "config.toml"
        path.write_text(dump_config(config))
        assert load_config(path) == config

    def test_digest_tracks_content(self):
        config = default_config("rotation")
        other = replace(config, train=replace(config.train, epochs_u=7))
        assert config_digest(config) == config_digest(default_config(
            "rotation"))
        assert config_digest(config) != config_digest(other)
        assert len(config_digest(config)) == 12
        assert len(config_digest(config, None)) == 64


class TestLoad:
    def test_missing_file(self, tmp_path):
        path = tmp_path / "absent.toml"
        with pytest.raises(mexc.ConfigurationError) as exc_info:
            load_config(path)
        assert str(exc_info.value) == f"Configuration file {path} not found."

    def test_invalid_toml(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("problem = \n")
        with pytest.raises(mexc.ConfigurationError) as exc_info:
            load_config(path)
        assert str(exc_info.value).startswith(f"Invalid TOML in {path}")

    def test_bundled_config(self):
        config = load_config(files("msmpinn") / "tests" / "data" /
                             "tiny.toml")
        assert config.problem == "rotation"
        assert config.preset == "desk"
        assert config.train.width == 4
        assert config.train.strategy == "uniform"
        assert config.output.n_eval_mc == 500


def test_output_config_validation():
    with pytest.raises(mexc.ConfigurationError) as exc_info:
        OutputConfig(n_eval_mc=0)
    assert str(exc_info.value) == "n_eval_mc must be positive, got 0."


def test_rotation_paper_budget():
    assert default_config("rotation").train == TrainConfig(
        n_pde=1000, n_initial=500, n_boundary=400, n_adaptive=1000,
        n_adaptive_later=300, epochs_u=1500, pinn_n_pde=2200,
    )
