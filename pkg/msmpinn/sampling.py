from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence, Tuple
import warnings

import numpy as np
import pandas as pd

from . import _exceptions as exc
from ._descriptions import VALID_PDE_MODES, VALID_STRATEGIES
from .problems import PdeProblem

ORIGINS = ["uniform", "uniform_spacetime", "density", "adaptive", "boundary",
           "probe"]

MIN_ACCEPTANCE_RATE = 1e-4


@dataclass(frozen=True)
class TimeGrid:
    n_slices: int
    horizon: float = 1.0

    def __post_init__(self):
        if self.n_slices < 2:
            raise exc.ConfigurationError(
                f"A time grid needs at least 2 slices, got {self.n_slices}."
            )
        if not self.horizon > 0:
            raise exc.ConfigurationError(
                f"Horizon must be positive, got {self.horizon}."
            )

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.n_slices)


class CollocationSet:
    def __init__(
        self,
        x: np.ndarray,
        t: np.ndarray,
        slice_index: np.ndarray,
        origin: np.ndarray,
        iteration: np.ndarray,
    ):
        """Tagged space-time points.

        Arrays are frozen on construction; sets only grow by concatenation.

        :param x: Spatial coordinates, shape (n, d)
        :type x: np.ndarray

        :param t: Times, shape (n,)
        :type t: np.ndarray

        :param slice_index: Time-grid slice per point, -1 for points drawn
            jointly in space-time
        :type slice_index: np.ndarray

        :param origin: Origin tag per point
        :type origin: np.ndarray

        :param iteration: Outer iteration that created each point (0 for
            the initial sets)
        :type iteration: np.ndarray
        """
        x = np.array(x, dtype=np.float64, ndmin=2)
        n = x.shape[0]
        arrays = {
            "t": np.array(t, dtype=np.float64).reshape(-1),
            "slice_index": np.array(slice_index, dtype=np.int64).reshape(-1),
            "origin": np.array(origin, dtype=object).reshape(-1),
            "iteration": np.array(iteration, dtype=np.int64).reshape(-1),
        }
        for name, arr in arrays.items():
            if arr.shape[0] != n:
                raise exc.DimensionMismatchError(n, arr.shape[0], name)
        unknown = set(arrays["origin"]) - set(ORIGINS)
        if unknown:
            raise exc.ContractError(f"Unknown origin tags: {sorted(unknown)}")
        self.x = x
        self.t = arrays["t"]
        self.slice_index = arrays["slice_index"]
        self.origin = arrays["origin"]
        self.iteration = arrays["iteration"]
        for arr in (self.x, self.t, self.slice_index, self.origin,
                    self.iteration):
            arr.setflags(write=False)

    @classmethod
    def empty(cls, spatial_dim: int) -> "CollocationSet":
        return cls(np.empty((0, spatial_dim)), [], [], [], [])

    @classmethod
    def concat(cls, sets: Sequence["CollocationSet"]) -> "CollocationSet":
        dims = {s.spatial_dim for s in sets}
        if len(dims) != 1:
            raise exc.ContractError(
                f"Cannot concatenate sets of dimensions {sorted(dims)}."
            )
        return cls(
            np.concatenate([s.x for s in sets]),
            np.concatenate([s.t for s in sets]),
            np.concatenate([s.slice_index for s in sets]),
            np.concatenate([s.origin for s in sets]),
            np.concatenate([s.iteration for s in sets]),
        )

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def spatial_dim(self) -> int:
        return self.x.shape[1]

    def inputs(self) -> np.ndarray:
        """Space-time inputs (n, d+1) with time last."""
        return np.column_stack([self.x, self.t])

    def subset(self, mask: np.ndarray) -> "CollocationSet":
        return CollocationSet(self.x[mask], self.t[mask],
                              self.slice_index[mask], self.origin[mask],
                              self.iteration[mask])

    def at_slice(self, k: int) -> "CollocationSet":
        return self.subset(self.slice_index == k)

    def with_origin(self, *origins: str) -> "CollocationSet":
        return self.subset(np.isin(self.origin, origins))

    def counts(self) -> Dict[str, int]:
        values, counts = np.unique(self.origin.astype(str),
                                   return_counts=True)
        return {str(v): int(c) for v, c in zip(values, counts)}

    def to_dataframe(self) -> pd.DataFrame:
        cols = {f"x{i + 1}": self.x[:, i] for i in range(self.spatial_dim)}
        cols["t"] = self.t
        cols["slice"] = self.slice_index
        cols["origin"] = self.origin.astype(str)
        cols["iteration"] = self.iteration
        return pd.DataFrame(cols)

    def save(self, path) -> None:
        """Write the set as CSV with columns x1..xd, t, slice, origin,
        iteration."""
        self.to_dataframe().to_csv(path, index=False)


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def _seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def _validate_box(box) -> np.ndarray:
    box = np.asarray(box, dtype=np.float64)
    if box.ndim != 2 or box.shape[1] != 2:
        raise exc.ConfigurationError(
            f"Box must have shape (d, 2), got {box.shape}."
        )
    if not (box[:, 0] < box[:, 1]).all():
        raise exc.ConfigurationError(f"Degenerate box {box.tolist()}.")
    return box


def sample_uniform_box(box, n: int, seed) -> np.ndarray:
    """Draw i.i.d. uniform points from an axis-aligned box.

    :param box: Bounds of shape (d, 2)
    :type box: np.ndarray

    :param n: Number of points
    :type n: int

    :param seed: Seed or Generator
    :type seed: int

    :returns: Points of shape (n, d)
    :rtype: np.ndarray
    """
    box = _validate_box(box)
    if n <= 0:
        raise exc.ConfigurationError(f"n must be positive, got {n}.")
    rng = _rng(seed)
    return rng.uniform(box[:, 0], box[:, 1], size=(n, box.shape[0]))


def _gaussian_draw(rng, mean, std, box, n):
    x = rng.normal(mean, std, size=(n, box.shape[0]))
    inside = ((x >= box[:, 0]) & (x <= box[:, 1])).all(axis=1)
    return x, inside


def sample_proportional(
    density: Callable,
    box,
    n: int,
    seed,
    bound: Optional[float] = None,
    proposal: Optional[Tuple[np.ndarray, float]] = None,
    n_probe: int = 100_000,
    max_proposals: int = 10_000_000,
) -> np.ndarray:
    """Rejection sampling of points with density proportional to
    ``density`` restricted to ``box``.

    :param density: Non-negative function of an (m, d) array
    :type density: Callable

    :param box: Bounds of shape (d, 2)
    :type box: np.ndarray

    :param n: Number of points
    :type n: int

    :param seed: Seed or Generator
    :type seed: int

    :param bound: Upper bound of ``density`` (of ``density / proposal``
        when a proposal is given). Estimated as 1.2 times the maximum over
        ``n_probe`` proposal draws if not provided
    :type bound: float

    :param proposal: Optional isotropic Gaussian proposal (mean, std). The
        default proposal is uniform on the box
    :type proposal: (np.ndarray, float)

    :param max_proposals: Proposal count after which a low acceptance rate
        raises
    :type max_proposals: int

    :returns: Points of shape (n, d)
    :rtype: np.ndarray
    """
    box = _validate_box(box)
    if n <= 0:
        raise exc.ConfigurationError(f"n must be positive, got {n}.")
    rng = _rng(seed)

    if proposal is None:
        def draw(m):
            x = rng.uniform(box[:, 0], box[:, 1], size=(m, box.shape[0]))
            return x, np.ones(m, dtype=bool)

        def ratio(x):
            return density(x)
    else:
        mean = np.asarray(proposal[0], dtype=np.float64)
        std = float(proposal[1])

        def draw(m):
            return _gaussian_draw(rng, mean, std, box, m)

        def ratio(x):
            log_q = -((x - mean) ** 2).sum(axis=1) / (2.0 * std ** 2)
            return density(x) * np.exp(-log_q)

    if bound is None:
        probes, inside = draw(n_probe)
        probe_values = ratio(probes[inside]) if inside.any() else [0.0]
        bound = 1.2 * float(np.max(probe_values))
    if not bound > 0:
        raise exc.AcceptanceRateError(0.0, n_probe)

    chunk = max(10_000, 2 * n)
    accepted, n_accepted, n_proposed = [], 0, 0
    warned = False
    while n_accepted < n:
        x, inside = draw(chunk)
        u = rng.uniform(size=chunk)
        values = np.zeros(chunk)
        values[inside] = ratio(x[inside])
        if not warned and (values > bound).any():
            warnings.warn(
                f"Density exceeded the rejection bound {bound:.6g}; samples "
                "are slightly biased towards the density peak.",
                RuntimeWarning,
            )
            warned = True
        keep = inside & (u * bound < values)
        accepted.append(x[keep])
        n_accepted += int(keep.sum())
        n_proposed += chunk
        rate = n_accepted / n_proposed
        if n_proposed >= max_proposals and rate < MIN_ACCEPTANCE_RATE:
            raise exc.AcceptanceRateError(rate, n_proposed)
    return np.concatenate(accepted)[:n]


def initial_density(problem: PdeProblem, strategy: str) -> Callable:
    """Initial-sampling density of a strategy (None for uniform)."""
    if strategy not in VALID_STRATEGIES:
        raise exc.ConfigurationError(
            f"Unknown strategy '{strategy}', must be one of "
            f"{VALID_STRATEGIES}"
        )
    if strategy == "prop_u0":
        return lambda x: np.clip(problem.initial_value(x), 0.0, None)
    if strategy == "prop_grad_u0_sq":
        return problem.initial_gradient_sq
    return None


def sample_initial_points(
    problem: PdeProblem,
    strategy: str,
    n: int,
    uniform_fraction: float,
    seed,
) -> Tuple[np.ndarray, np.ndarray]:
    """Spatial points of an initial draw and their origin tags."""
    if not 0.0 <= uniform_fraction <= 1.0:
        raise exc.ConfigurationError(
            f"uniform_fraction must lie in [0, 1], got {uniform_fraction}."
        )
    density = initial_density(problem, strategy)
    if density is None:
        n_uniform = n
    else:
        n_uniform = int(np.floor(uniform_fraction * n))
    n_density = n - n_uniform
    uniform_ss, density_ss = _seed_sequence(seed).spawn(2)

    parts, origin = [], []
    if n_uniform:
        parts.append(sample_uniform_box(problem.domain, n_uniform,
                                        uniform_ss))
        origin += ["uniform"] * n_uniform
    if n_density:
        proposal = None
        if strategy == "prop_u0" and problem.gaussian_track is not None:
            center, std = problem.gaussian_track
            proposal = (center(np.zeros(1))[0], std)
        parts.append(sample_proportional(density, problem.domain, n_density,
                                         density_ss, proposal=proposal))
        origin += ["density"] * n_density
    if not parts:
        return np.empty((0, problem.spatial_dim)), np.array([], dtype=object)
    return np.concatenate(parts), np.array(origin, dtype=object)


def assemble_initial_set(
    problem: PdeProblem,
    strategy: str,
    n_initial: int,
    uniform_fraction: float,
    seed,
) -> CollocationSet:
    """Build the initial-condition set S0 at t=0.

    :param problem: Benchmark problem
    :type problem: msmpinn.problems.PdeProblem

    :param strategy: One of uniform, prop_u0, prop_grad_u0_sq
    :type strategy: str

    :param n_initial: Number of points N0
    :type n_initial: int

    :param uniform_fraction: Share of uniformly drawn points
    :type uniform_fraction: float

    :param seed: Seed or SeedSequence
    :type seed: int

    :returns: Points tagged uniform or density, all at slice 0
    :rtype: msmpinn.sampling.CollocationSet
    """
    x, origin = sample_initial_points(problem, strategy, n_initial,
                                      uniform_fraction, seed)
    n = len(x)
    return CollocationSet(x, np.zeros(n), np.zeros(n, dtype=int), origin,
                          np.zeros(n, dtype=int))


def _face_points(problem: PdeProblem, n: int, rng) -> np.ndarray:
    domain = problem.domain
    d = problem.spatial_dim
    lengths = problem.lengths
    faces = [(axis, side) for axis in range(d) for side in (0, 1)]
    if problem.stratified_boundary:
        if n % len(faces):
            raise exc.ConfigurationError(
                f"N_b={n} cannot be split evenly over {len(faces)} faces."
            )
        chosen = np.repeat(np.arange(len(faces)), n // len(faces))
    else:
        measure = np.array([np.prod(np.delete(lengths, axis))
                            for axis, _ in faces])
        chosen = rng.choice(len(faces), size=n, p=measure / measure.sum())
    x = rng.uniform(domain[:, 0], domain[:, 1], size=(n, d))
    for k, (axis, side) in enumerate(faces):
        x[chosen == k, axis] = domain[axis, side]
    return x


def assemble_boundary_set(
    problem: PdeProblem,
    n_boundary: int,
    grid: TimeGrid,
    seed,
) -> CollocationSet:
    """Draw N_b boundary points and replicate them on every time slice.

    Faces are chosen with probability proportional to their measure, except
    for problems with a stratified boundary where every face receives the
    same number of points.
    """
    if n_boundary == 0:
        return CollocationSet.empty(problem.spatial_dim)
    x = _face_points(problem, n_boundary, _rng(seed))
    return _replicate(x, grid, "boundary", iteration=0)


def _replicate(x: np.ndarray, grid: TimeGrid, origin: str,
               iteration: int) -> CollocationSet:
    n, n_t = len(x), grid.n_slices
    return CollocationSet(
        np.tile(x, (n_t, 1)),
        np.repeat(grid.times, n),
        np.repeat(np.arange(n_t), n),
        np.full(n * n_t, origin, dtype=object),
        np.full(n * n_t, iteration),
    )


def assemble_pde_set(
    problem: PdeProblem,
    n: int,
    grid: TimeGrid,
    mode: str,
    seed,
) -> CollocationSet:
    """Build the uniform residual set S.

    :param problem: Benchmark problem
    :type problem: msmpinn.problems.PdeProblem

    :param n: Number of points N
    :type n: int

    :param grid: Time grid
    :type grid: msmpinn.sampling.TimeGrid

    :param mode: 'per_slice' replicates N spatial points on every slice,
        'joint_spacetime' draws N points uniformly on the space-time box
    :type mode: str

    :param seed: Seed or SeedSequence
    :type seed: int

    :returns: Uniform collocation set
    :rtype: msmpinn.sampling.CollocationSet
    """
    if mode not in VALID_PDE_MODES:
        raise exc.ConfigurationError(
            f"Unknown mode '{mode}', must be one of {VALID_PDE_MODES}"
        )
    if n == 0:
        return CollocationSet.empty(problem.spatial_dim)
    if mode == "per_slice":
        x = sample_uniform_box(problem.domain, n, seed)
        return _replicate(x, grid, "uniform", iteration=0)
    box = np.vstack([problem.domain, [[0.0, grid.horizon]]])
    pts = sample_uniform_box(box, n, seed)
    return CollocationSet(pts[:, :-1], pts[:, -1], np.full(n, -1),
                          np.full(n, "uniform_spacetime", dtype=object),
                          np.zeros(n, dtype=int))


def assemble_probe_set(problem: PdeProblem, n_per_slice: int,
                       grid: TimeGrid, seed) -> CollocationSet:
    """Per-slice uniform points used only for slice integral estimates."""
    if n_per_slice == 0:
        return CollocationSet.empty(problem.spatial_dim)
    x = sample_uniform_box(problem.domain, n_per_slice, seed)
    return _replicate(x, grid, "probe", iteration=0)
