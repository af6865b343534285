from dataclasses import asdict, dataclass, field, replace
import os
import time
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from . import _exceptions as exc
from ._descriptions import VALID_GRAD_MODES, VALID_PDE_MODES, VALID_STRATEGIES
from .decorators import check_input_types
from .flow import FlowTrajectory, VelocityPotential, evolve_samples
from .losses import loss_u_estimate, loss_v_estimate, residual_snapshot
from .metrics import ErrorReport, evaluate
from .network import DenseNetwork, init_network, value_and_gradient
from .optim import AdamState, adam_step
from .problems import PdeProblem, default_lattice
from .sampling import (
    CollocationSet,
    TimeGrid,
    assemble_boundary_set,
    assemble_initial_set,
    assemble_pde_set,
    assemble_probe_set,
    sample_initial_points,
)
from .utils import write_csv, write_json, write_text

VALID_UNIFORM_MIX = ["retain_uniform"]
# joint space-time S has no per-slice points to estimate slice integrals
JOINT_PROBE_PER_SLICE = 256


@dataclass(frozen=True)
class TrainConfig:
    """Budgets and hyperparameters of one training run.

    Fields left as None are problem dependent and filled by
    :meth:`resolved`.
    """
    iterations: int = 5
    epochs_u: int = 1500
    epochs_v: int = 1000
    epochs_final: Optional[int] = None
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_ic: float = 1.0
    weight_bc: float = 1.0
    n_pde: int = 1000
    n_initial: int = 500
    n_boundary: int = 400
    n_adaptive: int = 1000
    n_adaptive_later: Optional[int] = None
    n_slices: int = 11
    pinn_n_pde: Optional[int] = None
    gamma: float = 1.0
    uniform_mix: str = "retain_uniform"
    grad_mode: Optional[str] = None
    fd_step: float = 1e-3
    substeps: int = 5
    batch_size: int = 0
    hidden_layers: int = 3
    width: int = 64
    strategy: Optional[str] = None
    uniform_fraction: float = 0.2
    pde_mode: Optional[str] = None
    n_probe: int = 0
    n_spacetime: int = 0

    def __post_init__(self):
        non_negative = ["iterations", "epochs_u", "epochs_v", "epochs_final",
                        "n_initial", "n_boundary", "n_adaptive_later",
                        "n_probe", "n_spacetime", "batch_size"]
        positive = ["n_pde", "n_adaptive", "pinn_n_pde", "substeps",
                    "hidden_layers", "width"]
        for name in non_negative + positive:
            value = getattr(self, name)
            if value is None:
                continue
            if int(value) != value:
                raise exc.ConfigurationError(
                    f"{name} must be an integer, got {value}."
                )
            kind = "positive" if name in positive else "non-negative"
            if value < 0 or (name in positive and value == 0):
                raise exc.ConfigurationError(
                    f"{name} must be {kind}, got {value}."
                )
        if self.n_slices < 2:
            raise exc.ConfigurationError(
                f"n_slices must be at least 2, got {self.n_slices}."
            )
        if not self.learning_rate > 0:
            raise exc.ConfigurationError(
                f"learning_rate must be positive, got {self.learning_rate}."
            )
        if self.gamma < 0.5:
            raise exc.ConfigurationError(
                f"gamma must be at least 0.5, got {self.gamma}."
            )
        if not self.fd_step > 0:
            raise exc.ConfigurationError(
                f"fd_step must be positive, got {self.fd_step}."
            )
        if not 0.0 <= self.uniform_fraction <= 1.0:
            raise exc.ConfigurationError(
                "uniform_fraction must lie in [0, 1], got "
                f"{self.uniform_fraction}."
            )
        choices = [
            ("strategy", VALID_STRATEGIES),
            ("grad_mode", VALID_GRAD_MODES),
            ("pde_mode", VALID_PDE_MODES),
            ("uniform_mix", VALID_UNIFORM_MIX),
        ]
        for name, valid in choices:
            value = getattr(self, name)
            if value is not None and value not in valid:
                raise exc.ConfigurationError(
                    f"Invalid {name} '{value}', must be one of {valid}"
                )

    @property
    def betas(self):
        return (self.adam_beta1, self.adam_beta2)

    @property
    def pinn_epochs(self) -> int:
        """Epochs of the baseline: every MSM solution-training epoch."""
        final = self.epochs_u if self.epochs_final is None \
            else self.epochs_final
        return self.iterations * self.epochs_u + final

    def layer_sizes(self, problem: PdeProblem) -> List[int]:
        return [problem.input_dim] + [self.width] * self.hidden_layers + [1]

    def resolved(self, problem: PdeProblem) -> "TrainConfig":
        """Fill problem-dependent defaults."""
        grad_mode = self.grad_mode
        if grad_mode is None:
            grad_mode = ("exact" if problem.residual_gradient is not None
                         else "finite_difference")
        if grad_mode == "exact" and problem.residual_gradient is None:
            raise exc.ConfigurationError(
                f"Exact residual gradients are unavailable for "
                f"{problem.name}; use finite_difference."
            )
        later = self.n_adaptive if self.n_adaptive_later is None \
            else self.n_adaptive_later
        pinn_n_pde = self.pinn_n_pde
        if pinn_n_pde is None:
            pinn_n_pde = self.n_pde
            if self.iterations:
                pinn_n_pde += self.n_adaptive + (self.iterations - 1) * later
        pde_mode = self.pde_mode or problem.pde_mode
        n_probe = self.n_probe
        if n_probe == 0 and pde_mode == "joint_spacetime":
            n_probe = JOINT_PROBE_PER_SLICE
        return replace(
            self,
            grad_mode=grad_mode,
            epochs_final=(self.epochs_u if self.epochs_final is None
                          else self.epochs_final),
            n_adaptive_later=later,
            strategy=self.strategy or problem.initial_strategy,
            pde_mode=pde_mode,
            pinn_n_pde=pinn_n_pde,
            n_probe=n_probe,
        )


@dataclass(frozen=True)
class TrainingSets:
    pde: CollocationSet
    initial: CollocationSet
    boundary: CollocationSet
    probe: CollocationSet

    def with_pde(self, pde: CollocationSet) -> "TrainingSets":
        return replace(self, pde=pde)

    def velocity_points(self, iteration: int) -> CollocationSet:
        """Points used to train the potential at an outer iteration.

        Every per-slice point of S; the first iteration also uses S0 on
        slice 0. Probe points only estimate the slice integrals.
        """
        parts = [self.pde.subset(self.pde.slice_index >= 0)]
        if iteration == 1:
            parts.append(self.initial)
        return CollocationSet.concat(parts)


def build_training_sets(problem: PdeProblem, config: TrainConfig, seed,
                        n_pde: Optional[int] = None) -> TrainingSets:
    """Draw S, S0, the boundary set and the probe set.

    :param config: Resolved configuration
    :type config: msmpinn.training.TrainConfig

    :param n_pde: Size of S (defaults to ``config.n_pde``)
    :type n_pde: int
    """
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    pde_ss, initial_ss, boundary_ss, probe_ss, spacetime_ss = seed.spawn(5)
    grid = TimeGrid(config.n_slices, problem.horizon)

    pde = assemble_pde_set(problem, n_pde or config.n_pde, grid,
                           config.pde_mode, pde_ss)
    if config.n_spacetime and config.pde_mode == "per_slice":
        joint = assemble_pde_set(problem, config.n_spacetime, grid,
                                 "joint_spacetime", spacetime_ss)
        pde = CollocationSet.concat([pde, joint])
    initial = assemble_initial_set(problem, config.strategy,
                                   config.n_initial, config.uniform_fraction,
                                   initial_ss)
    if problem.hard_constraint is not None:
        boundary = CollocationSet.empty(problem.spatial_dim)
    else:
        boundary = assemble_boundary_set(problem, config.n_boundary, grid,
                                         boundary_ss)
    probe = assemble_probe_set(problem, config.n_probe, grid, probe_ss)
    return TrainingSets(pde, initial, boundary, probe)


def _adam_phase(
    net: DenseNetwork,
    closure_for: Callable,
    n_points: int,
    config: TrainConfig,
    epochs: int,
    phase: str,
    rng: np.random.Generator,
    callback: Optional[Callable],
):
    state = AdamState.zeros(net.n_params)
    params = net.params
    history = []
    batched = 0 < config.batch_size < n_points
    for epoch in range(epochs):
        indices = None
        if batched:
            indices = np.sort(rng.choice(n_points, config.batch_size,
                                         replace=False))
        loss, grad = value_and_gradient(closure_for(indices), net,
                                        check_finite=False)
        grad_norm = float(np.linalg.norm(grad))
        if not (np.isfinite(loss) and np.isfinite(grad_norm)):
            raise exc.TrainingDivergedError(phase, epoch, loss, grad_norm)
        params, state = adam_step(params, grad, state, config.learning_rate,
                                  config.betas, config.adam_eps)
        net = net.with_params(params)
        history.append(loss)
        if callback is not None:
            callback(phase, epoch, loss)
    return net, history


def train_u(
    net: DenseNetwork,
    problem: PdeProblem,
    sets: TrainingSets,
    config: TrainConfig,
    epochs: int,
    rng: Optional[np.random.Generator] = None,
    callback: Optional[Callable] = None,
    phase: str = "u",
):
    """Adam steps on the solution loss.

    :param net: Solution network
    :type net: msmpinn.network.DenseNetwork

    :param sets: Training sets
    :type sets: msmpinn.training.TrainingSets

    :param epochs: Number of Adam steps
    :type epochs: int

    :param rng: Generator drawing mini-batches of S
    :type rng: np.random.Generator

    :param callback: Called as ``callback(phase, epoch, loss)`` after every
        step
    :type callback: Callable

    :returns: Trained network and per-epoch losses
    :rtype: (msmpinn.network.DenseNetwork, list)
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    pde = sets.pde

    def closure_for(indices):
        batch = pde if indices is None else pde.subset(indices)

        def closure(traced):
            return loss_u_estimate(traced, problem, batch, sets.initial,
                                   sets.boundary, config.weight_ic,
                                   config.weight_bc)
        return closure

    return _adam_phase(net, closure_for, len(pde), config, epochs, phase, rng,
                       callback)


def train_v(
    net: DenseNetwork,
    snapshot,
    config: TrainConfig,
    epochs: int,
    rng: Optional[np.random.Generator] = None,
    callback: Optional[Callable] = None,
):
    """Adam steps on the velocity loss against a frozen snapshot.

    :returns: Trained potential network and per-epoch losses
    :rtype: (msmpinn.network.DenseNetwork, list)
    """
    rng = rng if rng is not None else np.random.default_rng(0)

    def closure_for(indices):
        def closure(traced):
            return loss_v_estimate(traced, snapshot, indices)
        return closure

    return _adam_phase(net, closure_for, len(snapshot), config, epochs, "v",
                       rng, callback)


@dataclass
class RunResult:
    problem: str
    method: str
    seed: int
    config: TrainConfig
    u_net: DenseNetwork
    v_net: Optional[DenseNetwork]
    sets: TrainingSets
    trajectories: List[FlowTrajectory] = field(default_factory=list)
    iterations: List[dict] = field(default_factory=list)
    history: Dict[str, List[List[float]]] = field(default_factory=dict)
    errors: dict = field(default_factory=dict)
    wall_s: float = 0.0

    def metrics(self) -> dict:
        """JSON-ready summary; contains no timing so equal runs give equal
        bytes."""
        final = self.history.get("final", [[]])
        return {
            "problem": self.problem,
            "method": self.method,
            "seed": self.seed,
            "config": asdict(self.config),
            "iterations": self.iterations,
            "final_loss": final[-1][-1] if final and final[-1] else None,
            "errors": self.errors,
            "set_counts": self.sets.pde.counts(),
            "n_pde_points": len(self.sets.pde),
        }

    def history_frame(self) -> pd.DataFrame:
        rows = []
        for phase, runs in self.history.items():
            for iteration, losses in enumerate(runs, start=1):
                rows.extend((phase, iteration, epoch, loss)
                            for epoch, loss in enumerate(losses))
        return pd.DataFrame(rows,
                            columns=["phase", "iteration", "epoch", "loss"])

    def error_report(self, config_digest: str = "") -> ErrorReport:
        return ErrorReport(self.problem, self.method, self.seed,
                           self.errors.get("rel_l2", float("nan")),
                           self.errors.get("l_inf", float("nan")),
                           config_digest, self.wall_s)

    def save(self, directory, export_sets: bool = True,
             export_trajectories: bool = True,
             export_checkpoints: bool = True) -> None:
        """Write metrics.json, history.csv and the optional artifacts."""
        os.makedirs(directory, exist_ok=True)
        write_json(os.path.join(directory, "metrics.json"), self.metrics())
        write_csv(os.path.join(directory, "history.csv"),
                  self.history_frame())
        if export_checkpoints:
            write_text(os.path.join(directory, "u_net.json"),
                       self.u_net.to_json())
            if self.v_net is not None:
                write_text(os.path.join(directory, "v_net.json"),
                           self.v_net.to_json())
        if export_sets:
            for name in ("pde", "initial", "boundary"):
                write_csv(os.path.join(directory, f"set_{name}.csv"),
                          getattr(self.sets, name).to_dataframe())
        if export_trajectories:
            for i, trajectory in enumerate(self.trajectories, start=1):
                write_csv(os.path.join(directory, f"trajectory_{i}.csv"),
                          trajectory.to_dataframe())


def _iteration_record(iteration, loss_u, loss_v, n_new, trajectory,
                      added, sets) -> dict:
    return {
        "iteration": iteration,
        "loss_u": loss_u,
        "loss_v": loss_v,
        "n_new": n_new,
        "n_added": len(added),
        "n_discarded": trajectory.n_discarded,
        "n_pde_points": len(sets.pde),
    }


def _last(history: List[float]) -> Optional[float]:
    return history[-1] if history else None


def _network_seeds(seed_sequence: np.random.SeedSequence):
    """Initialization seeds of the solution and potential networks."""
    u_seed, v_seed = seed_sequence.generate_state(2)
    return int(u_seed), int(v_seed)


@check_input_types(["problem", "config"])
def msm_run(
    problem: PdeProblem,
    config: TrainConfig,
    seed: int = 0,
    lattice_scale: float = 1.0,
    n_eval_mc: int = 20_000,
    evaluate_iterations: bool = True,
    n_jobs: int = 1,
    callback: Optional[Callable] = None,
) -> RunResult:
    """Train a solution network with moving collocation samples.

    Each outer iteration trains the solution network, freezes a residual
    snapshot, trains the velocity potential against it, draws new initial
    samples, evolves them over the time grid and adds the surviving
    point-slices to S. A final solution-training phase follows.

    :param problem: Benchmark problem
    :type problem: msmpinn.problems.PdeProblem

    :param config: Training configuration
    :type config: msmpinn.training.TrainConfig

    :param seed: Seed of the run
    :type seed: int

    :param lattice_scale: 1.0 for full evaluation lattices, 0.5 for halved
    :type lattice_scale: float

    :param n_jobs: Threads used to evolve samples
    :type n_jobs: int

    :param callback: Progress hook ``callback(phase, epoch, loss)``
    :type callback: Callable

    :returns: Networks, sets, trajectories and metrics of the run
    :rtype: msmpinn.training.RunResult
    """
    start = time.perf_counter()
    config = config.resolved(problem)
    root = np.random.SeedSequence(seed)
    sets_ss, init_ss, new_ss, batch_ss = root.spawn(4)
    u_seed, v_seed = _network_seeds(init_ss)
    grid = TimeGrid(config.n_slices, problem.horizon)
    lattice = default_lattice(problem, lattice_scale)
    batch_rng = np.random.default_rng(batch_ss)

    sets = build_training_sets(problem, config, sets_ss)
    u = init_network(config.layer_sizes(problem), u_seed)
    v = init_network(config.layer_sizes(problem), v_seed)
    result = RunResult(problem.name, "msm", seed, config, u, v, sets,
                       history={"u": [], "v": [], "final": []})

    try:
        for i, iteration_ss in enumerate(new_ss.spawn(config.iterations),
                                         start=1):
            u, hist_u = train_u(u, problem, sets, config, config.epochs_u,
                                batch_rng, callback)
            result.u_net = u
            result.history["u"].append(hist_u)
            snapshot = residual_snapshot(u, problem, sets.velocity_points(i),
                                         grid, config.grad_mode,
                                         config.fd_step, config.gamma,
                                         integral_points=sets.probe)
            v, hist_v = train_v(v, snapshot, config, config.epochs_v,
                                batch_rng, callback)
            result.v_net = v
            result.history["v"].append(hist_v)

            n_new = config.n_adaptive if i == 1 else config.n_adaptive_later
            x0, _ = sample_initial_points(problem, config.strategy, n_new,
                                          config.uniform_fraction,
                                          iteration_ss)
            trajectory = evolve_samples(VelocityPotential(v), x0, grid,
                                        config.substeps, problem.domain,
                                        n_jobs=n_jobs)
            added = trajectory.to_collocation(i)
            sets = sets.with_pde(CollocationSet.concat([sets.pde, added]))
            result.sets = sets
            result.trajectories.append(trajectory)

            record = _iteration_record(i, _last(hist_u), _last(hist_v),
                                       n_new, trajectory, added, sets)
            if evaluate_iterations:
                record.update(evaluate(u, problem, lattice, n_eval_mc, seed))
            result.iterations.append(record)

        u, hist_final = train_u(u, problem, sets, config,
                                config.epochs_final, batch_rng, callback,
                                phase="final")
        result.u_net = u
        result.history["final"].append(hist_final)
    except exc.NumericError as error:
        result.wall_s = time.perf_counter() - start
        error.partial_result = result
        raise

    result.errors = evaluate(u, problem, lattice, n_eval_mc, seed)
    result.wall_s = time.perf_counter() - start
    return result


@check_input_types(["problem", "config"])
def pinn_run(
    problem: PdeProblem,
    config: TrainConfig,
    seed: int = 0,
    lattice_scale: float = 1.0,
    n_eval_mc: int = 20_000,
    callback: Optional[Callable] = None,
) -> RunResult:
    """Train the baseline on fixed sets of matched budget.

    The residual set has ``pinn_n_pde`` uniform points and training runs
    for as many epochs as all solution-training phases of the
    moving-sample run. S0 and the boundary set are drawn exactly as in
    :func:`msm_run`, so a run without outer iterations reproduces it.

    :param problem: Benchmark problem
    :type problem: msmpinn.problems.PdeProblem

    :param config: Training configuration
    :type config: msmpinn.training.TrainConfig

    :returns: Trained network, sets and metrics
    :rtype: msmpinn.training.RunResult
    """
    start = time.perf_counter()
    config = config.resolved(problem)
    root = np.random.SeedSequence(seed)
    sets_ss, init_ss, _, batch_ss = root.spawn(4)
    u_seed, _ = _network_seeds(init_ss)
    lattice = default_lattice(problem, lattice_scale)

    sets = build_training_sets(problem, config, sets_ss,
                               n_pde=config.pinn_n_pde)
    u = init_network(config.layer_sizes(problem), u_seed)
    result = RunResult(problem.name, "pinn", seed, config, u, None, sets,
                       history={"final": []})
    try:
        u, history = train_u(u, problem, sets, config, config.pinn_epochs,
                             np.random.default_rng(batch_ss), callback,
                             phase="pinn")
    except exc.NumericError as error:
        result.wall_s = time.perf_counter() - start
        error.partial_result = result
        raise
    result.u_net = u
    result.history["final"].append(history)
    result.errors = evaluate(u, problem, lattice, n_eval_mc, seed)
    result.wall_s = time.perf_counter() - start
    return result
