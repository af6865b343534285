from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from . import _exceptions as exc
from .problems import Lattice, PdeProblem, exact_grid, solution_values
from .sampling import sample_proportional

REPORT_COLUMNS = ["problem", "method", "seed", "rel_l2", "l_inf", "wall_s"]


def _trapezoid_weights(axis: np.ndarray) -> np.ndarray:
    w = np.empty_like(axis)
    gaps = np.diff(axis)
    w[0] = 0.5 * gaps[0]
    w[-1] = 0.5 * gaps[-1]
    w[1:-1] = 0.5 * (gaps[:-1] + gaps[1:])
    return w


def lattice_weights(lattice: Lattice) -> np.ndarray:
    """Tensor-product trapezoid weights over space and time."""
    weights = np.ones(())
    for axis in list(lattice.axes) + [lattice.times]:
        weights = np.multiply.outer(weights, _trapezoid_weights(axis))
    return weights


def on_lattice(field, lattice: Lattice,
               problem: Optional[PdeProblem] = None) -> np.ndarray:
    """Values of ``field`` on ``lattice``; arrays of lattice shape pass
    through unchanged."""
    if isinstance(field, np.ndarray) and field.shape == lattice.shape:
        return field
    values = solution_values(field, problem, lattice.inputs())
    return np.asarray(values).reshape(lattice.shape)


def rel_l2(field, reference, lattice: Lattice,
           problem: Optional[PdeProblem] = None) -> float:
    """Relative L2 error with trapezoid weights in space-time.

    :param field: Candidate solution (network, callable or lattice array)

    :param reference: Reference solution (callable or lattice array)

    :param lattice: Evaluation lattice
    :type lattice: msmpinn.problems.Lattice

    :param problem: Problem whose hard constraint applies to networks
    :type problem: msmpinn.problems.PdeProblem

    :returns: ||u - u*|| / ||u*||
    :rtype: float
    """
    u = on_lattice(field, lattice, problem)
    ref = on_lattice(reference, lattice, problem)
    w = lattice_weights(lattice)
    denominator = float(np.sum(w * ref * ref))
    if denominator == 0:
        raise exc.ZeroReferenceNormError()
    return float(np.sqrt(np.sum(w * (u - ref) ** 2) / denominator))


def l_inf(field, reference, lattice: Lattice,
          problem: Optional[PdeProblem] = None) -> float:
    """Maximum absolute error over the lattice nodes."""
    u = on_lattice(field, lattice, problem)
    ref = on_lattice(reference, lattice, problem)
    return float(np.max(np.abs(u - ref)))


def sample_solution_weighted(problem: PdeProblem, n: int,
                             seed) -> np.ndarray:
    """Space-time points drawn with density proportional to the exact
    solution.

    Solutions that are a moving Gaussian use the Gaussian itself as the
    proposal, so only points leaving the box are rejected.
    """
    if problem.exact is None:
        raise exc.ConfigurationError(
            f"{problem.name} has no closed-form solution."
        )
    rng = np.random.default_rng(seed)
    if problem.gaussian_track is None:
        return sample_proportional(problem.exact, problem.spacetime_box, n,
                                   rng)
    center, std = problem.gaussian_track
    domain = problem.domain
    accepted, n_accepted = [], 0
    chunk = max(10_000, 2 * n)
    while n_accepted < n:
        t = rng.uniform(0.0, problem.horizon, size=chunk)
        x = center(t) + std * rng.standard_normal((chunk, problem.spatial_dim))
        inside = ((x >= domain[:, 0]) & (x <= domain[:, 1])).all(axis=1)
        accepted.append(np.column_stack([x, t])[inside])
        n_accepted += int(inside.sum())
    return np.concatenate(accepted)[:n]


def weighted_errors(field, problem: PdeProblem, n_mc: int = 20_000,
                    seed: int = 0) -> Tuple[float, float]:
    """Errors at Monte Carlo points concentrated where the solution is
    large.

    :param field: Candidate solution (network or callable)

    :param problem: Problem with a closed-form solution
    :type problem: msmpinn.problems.PdeProblem

    :param n_mc: Number of Monte Carlo points
    :type n_mc: int

    :returns: Weighted relative L2 error and weighted maximum error
    :rtype: (float, float)
    """
    points = sample_solution_weighted(problem, n_mc, seed)
    u = solution_values(field, problem, points)
    ref = problem.exact(points)
    denominator = float(np.sum(ref * ref))
    if denominator == 0:
        raise exc.ZeroReferenceNormError()
    diff = u - ref
    return (float(np.sqrt(np.sum(diff * diff) / denominator)),
            float(np.max(np.abs(diff))))


def evaluate(field, problem: PdeProblem, lattice: Optional[Lattice],
             n_mc: int = 20_000, seed: int = 0) -> dict:
    """Error measures of ``field`` against the problem's reference."""
    if lattice is None:
        rel, inf = weighted_errors(field, problem, n_mc, seed)
        return {"rel_l2": rel, "l_inf": inf, "weighted": True}
    reference = exact_grid(problem, lattice)
    return {
        "rel_l2": rel_l2(field, reference, lattice, problem),
        "l_inf": l_inf(field, reference, lattice, problem),
        "weighted": False,
    }


@dataclass(frozen=True)
class ErrorReport:
    problem: str
    method: str
    seed: int
    rel_l2: float
    l_inf: float
    config_digest: str = ""
    wall_s: float = 0.0

    def __post_init__(self):
        if self.rel_l2 < 0 or self.l_inf < 0:
            raise exc.ContractError("Errors must be non-negative.")


def build_report(results: Sequence[ErrorReport]) -> pd.DataFrame:
    """One row per (problem, method, seed) plus a median row per
    (problem, method).

    :param results: Per-run error reports
    :type results: Sequence[msmpinn.metrics.ErrorReport]

    :returns: Report table with columns problem, method, seed, rel_l2,
        l_inf, wall_s
    :rtype: pd.DataFrame
    """
    if not results:
        return pd.DataFrame(columns=REPORT_COLUMNS)
    rows = pd.DataFrame([asdict(r) for r in results])[REPORT_COLUMNS]
    rows = rows.sort_values(["problem", "method", "seed"], kind="stable")
    rows["seed"] = rows["seed"].astype(str)
    medians = (
        rows.groupby(["problem", "method"], sort=True)[
            ["rel_l2", "l_inf", "wall_s"]]
        .median()
        .reset_index()
    )
    medians["seed"] = "median"
    table = pd.concat([rows, medians[REPORT_COLUMNS]], ignore_index=True)
    return table.reset_index(drop=True)


def report_records(table: pd.DataFrame) -> List[dict]:
    return table.to_dict(orient="records")


def lattice_frame(field, problem: PdeProblem,
                  lattice: Lattice) -> pd.DataFrame:
    """Values of ``field`` on ``lattice`` with columns x1..xd, t, u."""
    inputs = lattice.inputs()
    cols = {f"x{i + 1}": inputs[:, i] for i in range(problem.spatial_dim)}
    cols["t"] = inputs[:, -1]
    cols["u"] = solution_values(field, problem, inputs)
    return pd.DataFrame(cols)
