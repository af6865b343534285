from dataclasses import replace
from functools import lru_cache
import json
import os

import numpy as np
import pandas as pd
import pytest

import msmpinn._exceptions as mexc
import msmpinn.training as training
from msmpinn.config import apply_preset, default_config
from msmpinn.losses import ResidualSnapshot, loss_v_estimate
from msmpinn.network import init_network
from msmpinn.problems import get_problem, solution_values
from msmpinn.training import (JOINT_PROBE_PER_SLICE, TrainConfig,
                              TrainingSets, build_training_sets, msm_run,
                              pinn_run, train_u, train_v)

PROBLEMS = ["allen_cahn", "rotation", "burgers", "fokker_planck",
            "advection6d"]


@pytest.fixture(scope="module")
def rotation():
    return get_problem("rotation")


@pytest.fixture
def tiny_config():
    return TrainConfig(
        iterations=2, epochs_u=4, epochs_v=4, epochs_final=3, n_pde=20,
        n_initial=20, n_boundary=20, n_adaptive=10, n_adaptive_later=6,
        n_slices=3, hidden_layers=1, width=4, strategy="uniform",
    )


def _small_config(**kwargs):
    base = dict(iterations=1, epochs_u=2, epochs_v=2, epochs_final=1,
                n_pde=24, n_initial=24, n_boundary=24, n_adaptive=12,
                n_slices=3, hidden_layers=1, width=4)
    base.update(kwargs)
    return TrainConfig(**base)


class TestTrainConfig:
    def test_defaults_resolved_per_problem(self, rotation):
        config = TrainConfig().resolved(rotation)
        assert config.grad_mode == "exact"
        assert config.strategy == "prop_u0"
        assert config.pde_mode == "per_slice"
        assert config.epochs_final == config.epochs_u
        assert config.n_adaptive_later == config.n_adaptive

        burgers = TrainConfig().resolved(get_problem("burgers"))
        assert burgers.grad_mode == "finite_difference"
        assert burgers.strategy == "prop_grad_u0_sq"

    def test_matched_budget(self):
        problem = get_problem("allen_cahn")
        config = TrainConfig(iterations=5, n_pde=200,
                             n_adaptive=600).resolved(problem)
        assert config.pinn_n_pde == 3200

    def test_two_stage_budget(self, rotation):
        config = TrainConfig(iterations=5, n_pde=1000, n_adaptive=1000,
                             n_adaptive_later=300).resolved(rotation)
        assert config.pinn_n_pde == 1000 + 1000 + 4 * 300

    def test_joint_spacetime_integral_set_default(self, rotation):
        problem = get_problem("allen_cahn")
        assert TrainConfig().resolved(problem).n_probe == \
            JOINT_PROBE_PER_SLICE == 256
        assert TrainConfig(n_probe=8).resolved(problem).n_probe == 8
        assert TrainConfig().resolved(rotation).n_probe == 0

    def test_pinn_epochs(self):
        config = TrainConfig(iterations=5, epochs_u=1500, epochs_final=500)
        assert config.pinn_epochs == 8000

    def test_exact_mode_rejected(self):
        with pytest.raises(mexc.ConfigurationError) as exc_info:
            TrainConfig(grad_mode="exact").resolved(get_problem("burgers"))
        exp_msg = ("Exact residual gradients are unavailable for burgers; "
                   "use finite_difference.")
        assert str(exc_info.value) == exp_msg

    @pytest.mark.parametrize("kwargs, exp_msg", [
        (dict(n_pde=0), "n_pde must be positive, got 0."),
        (dict(epochs_u=-1), "epochs_u must be non-negative, got -1."),
        (dict(learning_rate=0.0), "learning_rate must be positive, got 0.0."),
        (dict(gamma=0.25), "gamma must be at least 0.5, got 0.25."),
        (dict(n_slices=1), "n_slices must be at least 2, got 1."),
        (dict(strategy="sobol"),
         "Invalid strategy 'sobol', must be one of "
         "['uniform', 'prop_u0', 'prop_grad_u0_sq']"),
    ])
    def test_invalid(self, kwargs, exp_msg):
        with pytest.raises(mexc.ConfigurationError) as exc_info:
            TrainConfig(**kwargs)
        assert str(exc_info.value) == exp_msg


class TestPhases:
    def test_zero_epochs(self, rotation, tiny_config):
        config = tiny_config.resolved(rotation)
        sets = build_training_sets(rotation, config, 0)
        net = init_network(config.layer_sizes(rotation), 0)
        trained, history = train_u(net, rotation, sets, config, 0)
        np.testing.assert_array_equal(trained.params, net.params)
        assert history == []

    def test_history_length(self, rotation, tiny_config):
        config = tiny_config.resolved(rotation)
        sets = build_training_sets(rotation, config, 0)
        net = init_network(config.layer_sizes(rotation), 0)
        calls = []
        _, history = train_u(net, rotation, sets, config, 7,
                             callback=lambda *args: calls.append(args))
        assert len(history) == 7
        assert [c[1] for c in calls] == list(range(7))
        assert {c[0] for c in calls} == {"u"}

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_solution_loss_decreases(self, seed):
        problem = get_problem("allen_cahn")
        config = TrainConfig(n_pde=200, n_initial=50, n_slices=3,
                             hidden_layers=2, width=16).resolved(problem)
        sets = build_training_sets(problem, config, seed)
        net = init_network(config.layer_sizes(problem), seed)
        _, history = train_u(net, problem, sets, config, 200)
        assert history[-1] < history[0]

    def test_mini_batches(self, rotation, tiny_config):
        config = replace(tiny_config, batch_size=8).resolved(rotation)
        sets = build_training_sets(rotation, config, 0)
        net = init_network(config.layer_sizes(rotation), 0)
        first = train_u(net, rotation, sets, config, 3,
                        np.random.default_rng(5))
        second = train_u(net, rotation, sets, config, 3,
                         np.random.default_rng(5))
        np.testing.assert_array_equal(first[0].params, second[0].params)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_velocity_follows_travelling_residual(self, seed):
        # residual pulse travelling right with unit speed inside [0, 3]
        times = np.linspace(0.0, 1.0, 5)
        x = np.linspace(0.0, 3.0, 61)
        xs, ts = np.meshgrid(x, times)
        xs, ts = xs.ravel(), ts.ravel()
        z = xs - 1.0 - ts
        r = np.exp(-z ** 2 / 0.18)
        r_x = -2.0 * z / 0.18 * r
        integrals = np.array([3.0 * np.mean(row ** 2)
                              for row in r.reshape(5, -1)])
        rates = np.gradient(integrals, times)
        snapshot = ResidualSnapshot(
            np.column_stack([xs, ts]), np.repeat(np.arange(5), len(x)), r,
            r_x[:, None], -r_x, integrals, rates,
        )
        config = TrainConfig(learning_rate=1e-2)
        net = init_network([2, 16, 1], seed)
        zero = net.with_params(np.zeros(net.n_params))
        trained, history = train_v(net, snapshot, config, 500)
        assert len(history) == 500
        assert loss_v_estimate(trained, snapshot) < \
            0.1 * loss_v_estimate(zero, snapshot)

    def test_divergence_aborts(self, rotation, tiny_config):
        config = replace(tiny_config, learning_rate=1e300).resolved(rotation)
        sets = build_training_sets(rotation, config, 0)
        net = init_network(config.layer_sizes(rotation), 0)
        with pytest.raises(mexc.TrainingDivergedError) as exc_info:
            train_u(net, rotation, sets, config, 5)
        assert exc_info.value.phase == "u"
        assert exc_info.value.epoch > 0


class TestTrainingSets:
    def test_velocity_points(self, rotation, tiny_config):
        config = tiny_config.resolved(rotation)
        sets = build_training_sets(rotation, config, 0)
        assert isinstance(sets, TrainingSets)
        first = sets.velocity_points(1)
        later = sets.velocity_points(2)
        assert len(first) == len(later) + len(sets.initial)
        assert (first.slice_index >= 0).all()

    def test_integral_only_points_skip_velocity(self):
        problem = get_problem("allen_cahn")
        config = _small_config().resolved(problem)
        sets = build_training_sets(problem, config, 0)
        assert len(sets.probe) == 256 * 3
        first = sets.velocity_points(1)
        assert "probe" not in set(first.origin)
        assert len(first) == len(sets.initial)

    def test_hard_constraint_has_no_boundary_set(self):
        problem = get_problem("allen_cahn")
        config = TrainConfig(n_pde=40, n_initial=10, n_probe=8,
                             n_slices=3).resolved(problem)
        sets = build_training_sets(problem, config, 0)
        assert len(sets.boundary) == 0
        assert len(sets.probe) == 24
        assert set(sets.pde.origin) == {"uniform_spacetime"}

    def test_spacetime_augmentation(self):
        problem = get_problem("fokker_planck")
        config = TrainConfig(n_pde=10, n_initial=10, n_boundary=8,
                             n_spacetime=7, n_slices=3).resolved(problem)
        sets = build_training_sets(problem, config, 0)
        assert sets.pde.counts() == {"uniform": 30, "uniform_spacetime": 7}


class TestMsmRun:
    def test_set_growth(self, rotation, tiny_config):
        result = msm_run(rotation, tiny_config, seed=0, lattice_scale=0.5)
        assert len(result.iterations) == 2
        assert len(result.trajectories) == 2
        size = 20 * 3
        for i, record in enumerate(result.iterations, start=1):
            n_new = 10 if i == 1 else 6
            assert record["n_new"] == n_new
            size += n_new * 3 - record["n_discarded"]
            assert record["n_pde_points"] == size
        assert len(result.sets.pde) == size
        adaptive = result.sets.pde.with_origin("adaptive")
        assert set(adaptive.iteration) == {1, 2}
        assert (result.sets.pde.with_origin("uniform").iteration == 0).all()
        assert len(result.history["u"]) == 2
        assert len(result.history["final"][0]) == 3
        assert set(result.errors) == {"rel_l2", "l_inf", "weighted"}

    def test_deterministic(self, rotation, tiny_config, tmp_path):
        first = msm_run(rotation, tiny_config, seed=3, lattice_scale=0.5)
        second = msm_run(rotation, tiny_config, seed=3, lattice_scale=0.5)
        first.save(tmp_path / "a")
        second.save(tmp_path / "b")
        with open(tmp_path / "a" / "metrics.json", "rb") as f:
            a = f.read()
        with open(tmp_path / "b" / "metrics.json", "rb") as f:
            b = f.read()
        assert a == b

    def test_seeds_differ(self, rotation, tiny_config):
        first = msm_run(rotation, tiny_config, seed=0, lattice_scale=0.5,
                        evaluate_iterations=False)
        second = msm_run(rotation, tiny_config, seed=1, lattice_scale=0.5,
                         evaluate_iterations=False)
        assert not np.array_equal(first.u_net.params, second.u_net.params)

    @pytest.mark.parametrize("strategy", [None, "uniform"])
    def test_no_iterations_matches_baseline(self, rotation, tiny_config,
                                            strategy):
        config = replace(tiny_config, iterations=0, strategy=strategy)
        msm = msm_run(rotation, config, seed=4, lattice_scale=0.5)
        pinn = pinn_run(rotation, config, seed=4, lattice_scale=0.5)
        assert msm.config.strategy == (strategy or "prop_u0")
        np.testing.assert_array_equal(msm.sets.initial.x,
                                      pinn.sets.initial.x)
        np.testing.assert_array_equal(msm.sets.pde.x, pinn.sets.pde.x)
        np.testing.assert_array_equal(msm.u_net.params, pinn.u_net.params)
        assert msm.errors == pinn.errors

    def test_artifacts(self, rotation, tiny_config, tmp_path):
        result = msm_run(rotation, tiny_config, seed=0, lattice_scale=0.5)
        result.save(tmp_path)
        for name in ["metrics.json", "history.csv", "u_net.json",
                     "v_net.json", "set_pde.csv", "set_initial.csv",
                     "set_boundary.csv", "trajectory_1.csv",
                     "trajectory_2.csv"]:
            assert os.path.exists(tmp_path / name)
        with open(tmp_path / "metrics.json") as f:
            metrics = json.load(f)
        assert metrics["method"] == "msm"
        assert metrics["n_pde_points"] == len(result.sets.pde)
        history = pd.read_csv(tmp_path / "history.csv")
        assert set(history.phase) == {"u", "v", "final"}
        assert len(history) == 2 * 4 + 2 * 4 + 3

    def test_invalid_problem_type(self, tiny_config):
        with pytest.raises(mexc.ContractError):
            msm_run("rotation", tiny_config)


class TestPinnRun:
    def test_matched_budget(self, rotation, tiny_config):
        result = pinn_run(rotation, tiny_config, seed=0, lattice_scale=0.5)
        config = tiny_config.resolved(rotation)
        assert len(result.sets.pde) == config.pinn_n_pde * 3
        assert set(result.sets.pde.origin) == {"uniform"}
        assert len(result.history["final"][0]) == config.pinn_epochs
        assert result.v_net is None
        report = result.error_report("abc")
        assert report.method == "pinn"
        assert report.config_digest == "abc"


@pytest.mark.parametrize("name", PROBLEMS)
def test_every_problem_runs(name):
    problem = get_problem(name)
    result = msm_run(problem, _small_config(), seed=0, lattice_scale=0.5,
                     n_eval_mc=500, evaluate_iterations=False)
    config = result.config
    assert np.isfinite(result.errors["rel_l2"])
    assert np.isfinite(result.errors["l_inf"])
    assert result.errors["weighted"] == (name == "advection6d")

    sets = result.sets
    base = sets.pde.with_origin("uniform", "uniform_spacetime")
    joint = config.pde_mode == "joint_spacetime"
    assert len(base) == (24 if joint else 24 * 3)
    record = result.iterations[0]
    adaptive = sets.pde.with_origin("adaptive")
    assert len(adaptive) == 12 * 3 - record["n_discarded"]
    assert len(sets.pde) == record["n_pde_points"]
    assert len(sets.initial) == 24
    if problem.hard_constraint is None:
        assert len(sets.boundary) > 0
    else:
        assert len(sets.boundary) == 0
    assert len(sets.probe) == (256 * 3 if joint else 0)
    assert len(result.trajectories) == 1
    assert result.v_net is not None


def test_velocity_loss_sees_training_points_only(monkeypatch):
    snapshots = []
    loss_v = training.loss_v_estimate

    def recording(pot, snapshot, indices=None):
        snapshots.append(snapshot)
        return loss_v(pot, snapshot, indices)

    monkeypatch.setattr(training, "loss_v_estimate", recording)
    result = msm_run(get_problem("allen_cahn"), _small_config(), seed=0,
                     lattice_scale=0.5, evaluate_iterations=False)
    assert len(snapshots) == 2
    for snapshot in snapshots:
        assert "probe" not in set(snapshot.origin)
        assert len(snapshot) == len(result.sets.initial)
        assert np.isfinite(snapshot.integrals).all()


@pytest.mark.slow
@pytest.mark.parametrize("problem", ["allen_cahn", "rotation", "burgers"])
def test_desk_preset_is_reproducible(problem, tmp_path):
    config = apply_preset(default_config(problem), "desk")
    problem = get_problem(problem)
    payloads = []
    for name in ("a", "b"):
        result = msm_run(problem, config.train, seed=0, lattice_scale=0.5)
        result.save(tmp_path / name, export_sets=False,
                    export_trajectories=False)
        with open(tmp_path / name / "metrics.json", "rb") as f:
            payloads.append(f.read())
    assert payloads[0] == payloads[1]


SEEDS = (0, 1, 2)


@lru_cache(maxsize=None)
def _full_run(name, method, seed):
    problem = get_problem(name)
    config = default_config(name).train
    run = msm_run if method == "msm" else pinn_run
    return run(problem, config, seed=seed)


def _median(name, method, key):
    return float(np.median([_full_run(name, method, seed).errors[key]
                            for seed in SEEDS]))


def _interface_offset(field, t):
    """Distance of the u = 1/2 crossing from x + y = t along x = y."""
    s = np.linspace(-1.0, 1.0, 4001)
    inputs = np.column_stack([s, s, np.full_like(s, t)])
    u = solution_values(field, get_problem("burgers"), inputs)
    crossing = np.flatnonzero(np.diff(np.sign(u - 0.5)))
    if crossing.size == 0:
        return np.inf
    i = crossing[0]
    s_half = s[i] + (0.5 - u[i]) * (s[i + 1] - s[i]) / (u[i + 1] - u[i])
    return abs(2.0 * s_half - t)


@pytest.mark.slow
class TestFullBudgets:
    def test_allen_cahn(self):
        assert _median("allen_cahn", "msm", "rel_l2") < 1.2e-2
        assert _median("allen_cahn", "msm", "l_inf") < 1.2e-1
        assert _median("allen_cahn", "msm", "rel_l2") < \
            _median("allen_cahn", "pinn", "rel_l2")

    def test_rotation(self):
        msm = _median("rotation", "msm", "l_inf")
        assert msm < 1e-1
        assert msm < _median("rotation", "pinn", "l_inf")

    def test_burgers_interface(self):
        result = _full_run("burgers", "msm", 0)
        times = np.linspace(0.0, 1.0, result.config.n_slices)
        offsets = [_interface_offset(result.u_net, t) for t in times]
        assert max(offsets) < 0.05

    @pytest.mark.parametrize("name", ["allen_cahn", "burgers",
                                      "fokker_planck"])
    def test_moving_samples_beat_baseline(self, name):
        wins = 0
        for seed in SEEDS:
            msm = _full_run(name, "msm", seed).errors
            pinn = _full_run(name, "pinn", seed).errors
            wins += (msm["rel_l2"] < pinn["rel_l2"] and
                     msm["l_inf"] < pinn["l_inf"])
        assert wins >= 2
        for key in ("rel_l2", "l_inf"):
            assert _median(name, "msm", key) < _median(name, "pinn", key)

    def test_advection6d(self):
        best = min(_full_run("advection6d", "msm", seed).errors["rel_l2"]
                   for seed in SEEDS)
        assert _full_run("advection6d", "msm", 0).errors["weighted"]
        assert best < 5e-2


@pytest.mark.slow
def test_burgers_samples_gather_at_front():
    config = apply_preset(default_config("burgers"), "desk").train
    result = msm_run(get_problem("burgers"), replace(config, iterations=1),
                     seed=0, lattice_scale=0.5, evaluate_iterations=False)
    pde = result.sets.pde

    def band_fraction(points):
        fractions = []
        for k in np.unique(points.slice_index):
            members = points.subset(points.slice_index == k)
            offset = members.x[:, 0] + members.x[:, 1] - members.t
            fractions.append(np.mean(np.abs(offset) / np.sqrt(2) < 0.1))
        return np.mean(fractions)

    assert band_fraction(pde.with_origin("adaptive")) >= \
        2 * band_fraction(pde.with_origin("uniform"))
