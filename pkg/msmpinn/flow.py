from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional
import warnings

from joblib import Parallel, delayed
import numpy as np
import pandas as pd
from scipy.integrate import trapezoid

from . import _exceptions as exc
from . import _tape as tape
from .network import DenseNetwork, InputJet, _BaseNetwork, input_jet
from .sampling import CollocationSet, TimeGrid


@dataclass(frozen=True)
class VelocityPotential:
    """Scalar potential whose spatial gradient is the sample velocity."""
    net: DenseNetwork

    @property
    def spatial_dim(self) -> int:
        return self.net.input_dim - 1


def potential_jet(pot, inputs, order: int) -> InputJet:
    inputs = np.atleast_2d(inputs)
    if isinstance(pot, VelocityPotential):
        pot = pot.net
    if isinstance(pot, _BaseNetwork):
        return input_jet(pot, inputs, order=order, hessian="diag")
    if hasattr(pot, "jet"):
        return pot.jet(inputs, order=order, hessian="diag")
    raise exc.ContractError(
        f"Cannot differentiate potential of type {type(pot).__name__}."
    )


def velocity_at(pot, inputs: np.ndarray):
    """Sample velocity v = grad_x phi at space-time ``inputs``.

    :param pot: Potential (VelocityPotential, network, traced network or
        any object exposing ``jet``)

    :param inputs: Space-time points, shape (n, d+1)
    :type inputs: np.ndarray

    :returns: Velocities of shape (n, d); a tape node when ``pot`` is a
        traced network
    """
    jet = potential_jet(pot, inputs, order=1)
    d = np.atleast_2d(inputs).shape[1] - 1
    return jet.grad[:, :d]


def divergence_at(pot, inputs: np.ndarray):
    """Velocity divergence, i.e. the spatial Laplacian of the potential."""
    jet = potential_jet(pot, inputs, order=2)
    d = np.atleast_2d(inputs).shape[1] - 1
    return jet.laplacian(d)


@dataclass(frozen=True)
class FlowTrajectory:
    """Positions of evolved samples on every slice of a time grid.

    ``alive`` is monotone along each row: a point that left the domain
    stays dead on every later slice and its position is frozen.
    """
    times: np.ndarray
    positions: np.ndarray
    alive: np.ndarray
    logdet: Optional[np.ndarray] = None

    @property
    def initial_points(self) -> np.ndarray:
        return self.positions[:, 0, :]

    @property
    def final_points(self) -> np.ndarray:
        return self.positions[:, -1, :]

    @property
    def n_points(self) -> int:
        return self.positions.shape[0]

    @property
    def n_discarded(self) -> int:
        """Number of dead (point, slice) pairs."""
        return int((~self.alive).sum())

    def to_collocation(self, iteration: int) -> CollocationSet:
        """Alive point-slices as adaptive collocation points."""
        idx, k = np.nonzero(self.alive)
        n = len(idx)
        return CollocationSet(
            self.positions[idx, k, :], self.times[k], k,
            np.full(n, "adaptive", dtype=object), np.full(n, iteration),
        )

    def to_dataframe(self) -> pd.DataFrame:
        n, n_t, d = self.positions.shape
        cols = {
            "point_id": np.repeat(np.arange(n), n_t),
            "slice": np.tile(np.arange(n_t), n),
            "t": np.tile(self.times, n),
        }
        flat = self.positions.reshape(n * n_t, d)
        for i in range(d):
            cols[f"x{i + 1}"] = flat[:, i]
        cols["alive"] = self.alive.reshape(-1)
        cols["logdet"] = (self.logdet.reshape(-1) if self.logdet is not None
                          else np.full(n * n_t, np.nan))
        return pd.DataFrame(cols)

    def save(self, path) -> None:
        self.to_dataframe().to_csv(path, index=False)


def _as_fields(velocity, divergence):
    if isinstance(velocity, (VelocityPotential, _BaseNetwork)) or \
            hasattr(velocity, "jet"):
        pot = velocity

        def potential_velocity(inputs):
            return velocity_at(pot, inputs)

        def potential_divergence(inputs):
            return divergence_at(pot, inputs)

        return potential_velocity, divergence or potential_divergence
    return velocity, divergence


def _rk4_chunk(velocity, divergence, x0, times, substeps, domain,
               track_logdet, offset=0):
    n, d = x0.shape
    n_t = len(times)
    positions = np.empty((n, n_t, d))
    alive = np.ones((n, n_t), dtype=bool)
    logdet = np.zeros((n, n_t)) if track_logdet else None
    positions[:, 0, :] = x0
    if domain is not None:
        alive[:, 0] = ((x0 >= domain[:, 0]) & (x0 <= domain[:, 1])).all(1)

    x = x0.copy()
    ell = np.zeros(n)
    live = alive[:, 0].copy()

    def rates(points, t):
        inputs = np.column_stack([points, np.full(len(points), t)])
        v = np.asarray(tape.value_of(velocity(inputs))).reshape(len(points),
                                                                 d)
        if not track_logdet:
            return v, None
        return v, np.asarray(tape.value_of(divergence(inputs))).reshape(-1)

    for k in range(n_t - 1):
        h = (times[k + 1] - times[k]) / substeps
        idx = np.flatnonzero(live)
        xs, ls = x[idx], ell[idx]
        for step in range(substeps):
            t = times[k] + step * h
            k1, l1 = rates(xs, t)
            k2, l2 = rates(xs + 0.5 * h * k1, t + 0.5 * h)
            k3, l3 = rates(xs + 0.5 * h * k2, t + 0.5 * h)
            k4, l4 = rates(xs + h * k3, t + h)
            xs = xs + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if track_logdet:
                ls = ls + h / 6.0 * (l1 + 2.0 * l2 + 2.0 * l3 + l4)
        bad = np.flatnonzero(~np.isfinite(xs).all(axis=1))
        if bad.size:
            raise exc.NonFiniteValueError(
                "trajectory", index=offset + int(idx[bad[0]]),
                point=xs[bad[0]], slice_index=k + 1,
            )
        x[idx] = xs
        ell[idx] = ls
        if domain is not None:
            inside = ((x >= domain[:, 0]) & (x <= domain[:, 1])).all(axis=1)
            live &= inside
        positions[:, k + 1, :] = x
        alive[:, k + 1] = live
        if track_logdet:
            logdet[:, k + 1] = ell
    return positions, alive, logdet


def evolve_samples(
    velocity,
    x0: np.ndarray,
    grid: TimeGrid,
    substeps: int = 5,
    domain: Optional[np.ndarray] = None,
    track_logdet: bool = False,
    divergence: Optional[Callable] = None,
    n_jobs: int = 1,
) -> FlowTrajectory:
    """Integrate dX/dt = v(X, t) from t=0 over every slice of ``grid``.

    Classical RK4 with ``substeps`` steps per grid interval. With
    ``track_logdet`` the log-determinant of the flow Jacobian is integrated
    alongside as d/dt logdet = div v, using the divergence at the RK4 stage
    positions. Points leaving the closed ``domain`` are marked dead from the
    first slice at which they are outside and no longer moved.

    :param velocity: Callable mapping (n, d+1) inputs to (n, d)
        velocities, or a potential (VelocityPotential / network / object
        exposing ``jet``)

    :param x0: Initial points, shape (n, d)
    :type x0: np.ndarray

    :param grid: Slices on which positions are recorded
    :type grid: msmpinn.sampling.TimeGrid

    :param substeps: RK4 steps per grid interval
    :type substeps: int

    :param domain: Bounds of shape (d, 2); no discarding when None
    :type domain: np.ndarray

    :param track_logdet: Whether to integrate the log-det channel
    :type track_logdet: bool

    :param divergence: Callable returning div v at (n, d+1) inputs; derived
        from the potential when ``velocity`` is one
    :type divergence: Callable

    :param n_jobs: Number of threads over point chunks
    :type n_jobs: int

    :returns: Trajectory with positions (n, N_t, d)
    :rtype: msmpinn.flow.FlowTrajectory
    """
    if substeps < 1:
        raise exc.ConfigurationError(
            f"substeps must be at least 1, got {substeps}."
        )
    velocity, divergence = _as_fields(velocity, divergence)
    if track_logdet and divergence is None:
        raise exc.ConfigurationError(
            "track_logdet needs a divergence for plain velocity callables."
        )
    x0 = np.array(x0, dtype=np.float64, ndmin=2)
    if domain is not None:
        domain = np.asarray(domain, dtype=np.float64)
    times = grid.times

    n_chunks = max(1, min(n_jobs, len(x0)))
    if n_chunks == 1:
        results = [_rk4_chunk(velocity, divergence, x0, times, substeps,
                              domain, track_logdet)]
    else:
        chunks = np.array_split(np.arange(len(x0)), n_chunks)
        results = Parallel(n_jobs=n_chunks, prefer="threads")(
            delayed(_rk4_chunk)(velocity, divergence, x0[c], times,
                                substeps, domain, track_logdet, int(c[0]))
            for c in chunks
        )
    positions = np.concatenate([r[0] for r in results])
    alive = np.concatenate([r[1] for r in results])
    logdet = (np.concatenate([r[2] for r in results]) if track_logdet
              else None)

    trajectory = FlowTrajectory(times, positions, alive, logdet)
    if domain is not None and trajectory.n_discarded:
        n_lost = int((~alive[:, -1]).sum())
        warnings.warn(
            f"{n_lost} of {len(x0)} evolved samples left the domain and "
            "were discarded.",
            RuntimeWarning,
        )
    return trajectory


def pushforward_density(p0: Callable,
                        trajectory: FlowTrajectory) -> np.ndarray:
    """Density carried along trajectories by the change of variables.

    p_t(X_t) = p0(X_0) exp(-logdet_t).

    :returns: Densities of shape (n, N_t)
    """
    if trajectory.logdet is None:
        raise exc.ConfigurationError(
            "Trajectory was evolved without the log-det channel."
        )
    base = np.asarray(p0(trajectory.initial_points)).reshape(-1, 1)
    return base * np.exp(-trajectory.logdet)


class PushforwardResult(NamedTuple):
    estimate: float
    analytic: float
    stderr: float

    @property
    def z_score(self) -> float:
        if self.stderr == 0:
            return 0.0 if self.estimate == self.analytic else np.inf
        return abs(self.estimate - self.analytic) / self.stderr


def _quadrature(fn: Callable, box: np.ndarray, n_grid: int) -> float:
    axes = [np.linspace(lo, hi, n_grid) for lo, hi in box]
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)
    values = np.asarray(fn(points)).reshape(mesh[0].shape)
    for axis in reversed(axes):
        values = trapezoid(values, axis, axis=-1)
    return float(values)


def pushforward_check(
    velocity,
    sample_p0: Callable,
    density_pt: Callable,
    test_fn: Callable,
    n_samples: int,
    t: float,
    box: np.ndarray,
    seed: int = 0,
    substeps: int = 20,
    n_grid: int = 2001,
) -> PushforwardResult:
    """Compare a Monte Carlo estimate of E[test_fn(X_t)] over evolved
    samples with the quadrature of test_fn against the transported density.

    :param velocity: Velocity callable or potential
    :param sample_p0: Function (Generator, n) -> (n, d) initial samples
    :param density_pt: Density of X_t at (n, d) points
    :param test_fn: Test function of (n, d) points
    :param n_samples: Number of particles
    :param t: Time at which to compare; 0 compares the initial samples
        with density_pt directly
    :param box: Quadrature box of shape (d, 2)
    :param n_grid: Quadrature nodes per axis

    :returns: Estimate, analytic value and Monte Carlo standard error
    :rtype: msmpinn.flow.PushforwardResult
    """
    rng = np.random.default_rng(seed)
    x0 = np.array(sample_p0(rng, n_samples), dtype=np.float64, ndmin=2)
    if x0.shape[0] != n_samples:
        x0 = x0.reshape(n_samples, -1)
    if t < 0:
        raise exc.ConfigurationError(f"t must be non-negative, got {t}.")
    if t == 0:
        final = x0
    else:
        final = evolve_samples(velocity, x0, TimeGrid(2, t),
                               substeps=substeps).final_points
    values = np.asarray(test_fn(final)).reshape(-1)
    estimate = float(values.mean())
    stderr = float(values.std(ddof=1) / np.sqrt(n_samples))

    def integrand(points):
        return (np.asarray(test_fn(points)).reshape(-1) *
                np.asarray(density_pt(points)).reshape(-1))

    analytic = _quadrature(integrand, np.asarray(box, dtype=np.float64),
                           n_grid)
    return PushforwardResult(estimate, analytic, stderr)
