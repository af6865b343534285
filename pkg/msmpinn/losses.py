from dataclasses import dataclass
from typing import Callable, Optional, Sequence
import warnings

import numpy as np

from . import _exceptions as exc
from . import _tape as tape
from ._descriptions import VALID_GRAD_MODES
from .flow import potential_jet
from .problems import PdeProblem, solution_jet
from .sampling import CollocationSet, TimeGrid

INTEGRAL_ORIGINS = ("uniform", "probe")


def _mean_square(values):
    return tape.mean(values * values)


def _scalar(value):
    if isinstance(value, tape.Variable):
        return value
    return float(np.asarray(value).reshape(()))


def pde_residual(field, problem: PdeProblem, inputs: np.ndarray):
    """Residual of ``field`` at space-time ``inputs``."""
    jet = solution_jet(field, problem, inputs, order=problem.residual_order,
                       hessian="diag")
    return problem.residual(jet, inputs)


def loss_u_estimate(
    field,
    problem: PdeProblem,
    pde_set: CollocationSet,
    initial_set: CollocationSet,
    boundary_set: CollocationSet,
    beta_ic: float = 1.0,
    beta_bc: float = 1.0,
):
    """Empirical solution loss.

    Mean squared residual over ``pde_set`` plus ``beta_ic`` times the mean
    squared initial misfit over ``initial_set`` and ``beta_bc`` times the
    mean squared boundary misfit over ``boundary_set``. Both data terms are
    skipped when the problem has a hard constraint.

    :param field: Solution network (plain or traced) or any field exposing
        ``jet``

    :param problem: Benchmark problem
    :type problem: msmpinn.problems.PdeProblem

    :param pde_set: Residual collocation points S
    :type pde_set: msmpinn.sampling.CollocationSet

    :param initial_set: Initial-condition points S0
    :type initial_set: msmpinn.sampling.CollocationSet

    :param boundary_set: Boundary points
    :type boundary_set: msmpinn.sampling.CollocationSet

    :returns: Loss value (tape node when ``field`` is traced)
    """
    if len(pde_set) == 0:
        raise exc.CollocationSetExhaustedError("S")
    inputs = pde_set.inputs()
    total = _mean_square(pde_residual(field, problem, inputs))

    if problem.hard_constraint is None:
        if beta_ic and len(initial_set):
            ic_inputs = initial_set.inputs()
            misfit = (solution_jet(field, problem, ic_inputs, 0).value -
                      problem.initial_value(initial_set.x))
            total = total + beta_ic * _mean_square(misfit)
        if beta_bc and len(boundary_set):
            bc_inputs = boundary_set.inputs()
            misfit = (solution_jet(field, problem, bc_inputs, 0).value -
                      problem.boundary_value(bc_inputs))
            total = total + beta_bc * _mean_square(misfit)
    return _scalar(total)


def _frozen(array) -> np.ndarray:
    array = np.array(array, dtype=np.float64)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class ResidualSnapshot:
    """Residual data frozen after a solution-training phase.

    Per point: r, its spatial gradient and its time derivative. Per slice:
    the integral estimate of |r|^(2 gamma) and its time-difference quotient.
    """
    inputs: np.ndarray
    slice_index: np.ndarray
    r: np.ndarray
    grad_r: np.ndarray
    dt_r: np.ndarray
    integrals: np.ndarray
    rates: np.ndarray
    gamma: float = 1.0
    origin: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("inputs", "r", "grad_r", "dt_r", "integrals", "rates"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        slices = np.array(self.slice_index, dtype=np.int64)
        slices.setflags(write=False)
        object.__setattr__(self, "slice_index", slices)
        if self.origin is not None:
            origin = np.array(self.origin, dtype=object).reshape(-1)
            origin.setflags(write=False)
            object.__setattr__(self, "origin", origin)
        if (self.integrals < 0).any():
            raise exc.ContractError("Slice integrals must be non-negative.")
        if self.gamma < 0.5:
            raise exc.ConfigurationError(
                f"gamma must be at least 0.5, got {self.gamma}."
            )

    def __len__(self) -> int:
        return len(self.r)


def slice_integrals(r: np.ndarray, slice_index: np.ndarray, n_slices: int,
                    volume: float, gamma: float = 1.0) -> np.ndarray:
    """Monte Carlo estimates volume * mean |r|^(2 gamma) per slice."""
    integrals = np.empty(n_slices)
    for k in range(n_slices):
        members = r[slice_index == k]
        if members.size == 0:
            raise exc.EmptySliceError(k)
        integrals[k] = volume * np.mean(np.abs(members) ** (2.0 * gamma))
    return integrals


def difference_quotient(integrals: np.ndarray,
                        times: np.ndarray) -> np.ndarray:
    """Central difference quotient in the interior, one-sided at the ends."""
    rates = np.empty_like(integrals)
    rates[0] = (integrals[1] - integrals[0]) / (times[1] - times[0])
    rates[-1] = (integrals[-1] - integrals[-2]) / (times[-1] - times[-2])
    rates[1:-1] = ((integrals[2:] - integrals[:-2]) /
                   (times[2:] - times[:-2]))
    return rates


def _fd_gradient(residual_fn: Callable, inputs: np.ndarray,
                 steps: np.ndarray) -> np.ndarray:
    grad = np.empty_like(inputs)
    for axis, step in enumerate(steps):
        shift = np.zeros(inputs.shape[1])
        shift[axis] = step
        forward = np.asarray(residual_fn(inputs + shift))
        backward = np.asarray(residual_fn(inputs - shift))
        grad[:, axis] = (forward - backward) / (2.0 * step)
    return grad


def residual_snapshot(
    field,
    problem: PdeProblem,
    points: CollocationSet,
    grid: TimeGrid,
    grad_mode: str = "finite_difference",
    fd_step: float = 1e-3,
    gamma: float = 1.0,
    integral_origins: Sequence[str] = INTEGRAL_ORIGINS,
    residual_fn: Optional[Callable] = None,
    integral_points: Optional[CollocationSet] = None,
) -> ResidualSnapshot:
    """Freeze residual values and derivatives for velocity training.

    :param field: Trained solution network (or field exposing ``jet``)

    :param problem: Benchmark problem
    :type problem: msmpinn.problems.PdeProblem

    :param points: Per-slice points at which the snapshot is taken. Points
        with an origin in ``integral_origins`` also feed the slice integrals
    :type points: msmpinn.sampling.CollocationSet

    :param grid: Time grid of the slices
    :type grid: msmpinn.sampling.TimeGrid

    :param grad_mode: 'exact' (nested jets, first-order residuals only) or
        'finite_difference' (central, step ``fd_step`` times axis length)
    :type grad_mode: str

    :param gamma: Sampling exponent; the sampling density is |r|^(2 gamma)
    :type gamma: float

    :param residual_fn: Residual callable overriding ``field``
    :type residual_fn: Callable

    :param integral_points: Per-slice points that only feed the slice
        integrals and are left out of the snapshot
    :type integral_points: msmpinn.sampling.CollocationSet

    :returns: Frozen snapshot
    :rtype: msmpinn.losses.ResidualSnapshot
    """
    if grad_mode not in VALID_GRAD_MODES:
        raise exc.ConfigurationError(
            f"Unknown grad_mode '{grad_mode}', must be one of "
            f"{VALID_GRAD_MODES}"
        )
    per_slice = points.subset(points.slice_index >= 0)
    if len(per_slice) == 0:
        raise exc.EmptyPointSetError("residual snapshot")
    inputs = per_slice.inputs()
    d = problem.spatial_dim

    if residual_fn is None:
        def residual_fn(pts):
            return tape.value_of(pde_residual(field, problem, pts))

    if grad_mode == "exact":
        if problem.residual_gradient is None or field is None:
            raise exc.ConfigurationError(
                f"Exact residual gradients are unavailable for "
                f"{problem.name}; use finite_difference."
            )
        jet = solution_jet(field, problem, inputs, order=2, hessian="full")
        r = np.asarray(tape.value_of(problem.residual(jet, inputs)))
        full = np.asarray(problem.residual_gradient(jet, inputs))
    else:
        if not fd_step > 0:
            raise exc.ConfigurationError(
                f"fd_step must be positive, got {fd_step}."
            )
        r = np.asarray(residual_fn(inputs))
        lengths = np.append(problem.lengths, grid.horizon)
        full = _fd_gradient(residual_fn, inputs, fd_step * lengths)
    if not np.isfinite(r).all():
        bad = int(np.flatnonzero(~np.isfinite(r))[0])
        raise exc.NonFiniteValueError("residual snapshot", index=bad,
                                      point=inputs[bad])

    in_integral = np.isin(per_slice.origin, list(integral_origins))
    integral_r = [r[in_integral]]
    integral_slices = [per_slice.slice_index[in_integral]]
    if integral_points is not None:
        extra = integral_points.subset(integral_points.slice_index >= 0)
        if len(extra):
            extra_inputs = extra.inputs()
            extra_r = np.asarray(residual_fn(extra_inputs))
            if not np.isfinite(extra_r).all():
                bad = int(np.flatnonzero(~np.isfinite(extra_r))[0])
                raise exc.NonFiniteValueError("slice integrals", index=bad,
                                              point=extra_inputs[bad])
            integral_r.append(extra_r)
            integral_slices.append(extra.slice_index)
    integrals = slice_integrals(np.concatenate(integral_r),
                                np.concatenate(integral_slices),
                                grid.n_slices, problem.volume, gamma)
    rates = difference_quotient(integrals, grid.times)
    return ResidualSnapshot(inputs, per_slice.slice_index, r, full[:, :d],
                            full[:, d], integrals, rates, gamma,
                            per_slice.origin)


def loss_v_estimate(pot, snapshot: ResidualSnapshot,
                    indices: Optional[np.ndarray] = None):
    """Empirical velocity loss over the frozen snapshot.

    Mean over points of
    (2g dt_r + 2g grad_r . grad phi + r lap phi - r R / I)^2
    with g the sampling exponent and R, I read for the point's slice.
    Points on slices whose integral estimate vanishes are skipped.

    :param pot: Velocity potential (network, traced network or any object
        exposing ``jet``)

    :param snapshot: Residual snapshot
    :type snapshot: msmpinn.losses.ResidualSnapshot

    :param indices: Optional subset of snapshot points (mini-batch)
    :type indices: np.ndarray

    :returns: Loss value (tape node when ``pot`` is traced)
    """
    slices = snapshot.slice_index
    usable = snapshot.integrals[slices] > 0
    if indices is not None:
        mask = np.zeros(len(snapshot), dtype=bool)
        mask[indices] = True
        n_skipped = int((mask & ~usable).sum())
        usable = usable & mask
    else:
        n_skipped = int((~usable).sum())
    if n_skipped:
        warnings.warn(
            f"Skipped {n_skipped} points on slices with a zero residual "
            "integral estimate.",
            RuntimeWarning,
        )
    idx = np.flatnonzero(usable)
    if idx.size == 0:
        raise exc.EmptyPointSetError("velocity loss")

    inputs = snapshot.inputs[idx]
    d = inputs.shape[1] - 1
    r = snapshot.r[idx]
    k = slices[idx]
    jet = potential_jet(pot, inputs, order=2)
    velocity = jet.grad[:, :d]
    divergence = jet.laplacian(d)

    g = snapshot.gamma
    transport = tape.sum(snapshot.grad_r[idx] * velocity, axis=1)
    source = r * snapshot.rates[k] / snapshot.integrals[k]
    defect = (2.0 * g * snapshot.dt_r[idx] + 2.0 * g * transport +
              r * divergence - source)
    return _scalar(_mean_square(defect))
