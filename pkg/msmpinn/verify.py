"""Numerical self-checks of the autodiff, flow, transport and loss code."""
import time
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence
import warnings

import numpy as np
from scipy.stats import norm

from . import _tape as tape
from . import flow
from ._descriptions import VALID_SUITES
from . import _exceptions as exc
from .losses import ResidualSnapshot, loss_u_estimate, loss_v_estimate
from .network import forward, init_network, input_jet, value_and_gradient
from .problems import ExactField, get_problem
from .sampling import CollocationSet, TimeGrid

SOFT_BUDGET_S = 300.0


class CheckResult(NamedTuple):
    name: str
    passed: bool
    detail: str

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": bool(self.passed),
                "detail": self.detail}


def _close(a, b, rtol: float, atol: float) -> bool:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = np.maximum(np.abs(a), np.abs(b))
    return bool(np.all(np.abs(a - b) <= rtol * scale + atol))


def _max_rel(a, b, atol: float = 1e-8) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / (np.maximum(np.abs(a), np.abs(b))
                                         + atol)))


def _random_network(rng: np.random.Generator, max_dim: int = 3,
                    max_width: int = 8):
    dim = int(rng.integers(1, max_dim + 1))
    depth = int(rng.integers(1, 3))
    widths = [int(rng.integers(2, max_width + 1)) for _ in range(depth)]
    net = init_network([dim] + widths + [1], int(rng.integers(2 ** 31)))
    # Non-zero biases exercise the even part of tanh
    params = net.params + 0.3 * rng.standard_normal(net.n_params)
    return net.with_params(params)


def fd_gradient(fn: Callable, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of a batched field along every input axis.

    ``fn`` maps (n, dim) to (n, ...); the derivative axis is appended last.
    """
    columns = []
    for i in range(x.shape[1]):
        e = np.zeros(x.shape[1])
        e[i] = h
        columns.append((np.asarray(fn(x + e)) - np.asarray(fn(x - e))) /
                       (2.0 * h))
    return np.stack(columns, axis=-1)


def check_input_derivatives(n_networks: int = 100,
                            seed: int = 0) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    worst_grad = worst_hess = worst_sym = 0.0
    grad_ok = hess_ok = sym_ok = True
    for _ in range(n_networks):
        net = _random_network(rng)
        x = rng.uniform(-1.0, 1.0, size=(4, net.input_dim))
        jet = input_jet(net, x, order=2, hessian="full")
        fd_g = fd_gradient(lambda z: forward(net, z), x)
        # Hessian columns from differences of the exact gradient
        fd_h = fd_gradient(lambda z: input_jet(net, z, order=1).grad, x)
        grad_ok &= _close(jet.grad, fd_g, 1e-6, 1e-8)
        hess_ok &= _close(jet.hess, fd_h, 1e-6, 1e-8)
        asym = np.max(np.abs(jet.hess - np.swapaxes(jet.hess, 1, 2)))
        sym_ok &= asym < 1e-12 * (1.0 + np.max(np.abs(jet.hess)))
        worst_grad = max(worst_grad, _max_rel(jet.grad, fd_g))
        worst_hess = max(worst_hess, _max_rel(jet.hess, fd_h))
        worst_sym = max(worst_sym, float(asym))
    return [
        CheckResult("input gradient vs finite differences", grad_ok,
                    f"max relative deviation {worst_grad:.3g}"),
        CheckResult("input Hessian vs finite differences", hess_ok,
                    f"max relative deviation {worst_hess:.3g}"),
        CheckResult("Hessian symmetry", sym_ok,
                    f"max asymmetry {worst_sym:.3g}"),
    ]


def _jet_closure(x):
    def closure(traced):
        jet = input_jet(traced, x, order=2, hessian="diag")
        dim = x.shape[1]
        r = jet.d(dim - 1) - 0.1 * jet.laplacian(dim) + jet.value * jet.value
        return tape.mean(r * r)
    return closure


def check_param_gradient(n_networks: int = 10, n_coords: int = 20,
                         seed: int = 1, h: float = 1e-6) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    ok, worst = True, 0.0
    for _ in range(n_networks):
        net = _random_network(rng)
        x = rng.uniform(-1.0, 1.0, size=(8, net.input_dim))
        closure = _jet_closure(x)
        _, grad = value_and_gradient(closure, net)
        coords = rng.choice(net.n_params, size=min(n_coords, net.n_params),
                            replace=False)
        fd = np.empty(len(coords))
        for j, c in enumerate(coords):
            step = np.zeros(net.n_params)
            step[c] = h
            up = value_and_gradient(closure, net.with_params(net.params +
                                                             step))[0]
            down = value_and_gradient(closure, net.with_params(net.params -
                                                               step))[0]
            fd[j] = (up - down) / (2.0 * h)
        ok &= _close(grad[coords], fd, 1e-6, 1e-8)
        worst = max(worst, _max_rel(grad[coords], fd))
    return [CheckResult("parameter gradient through jets vs finite "
                        "differences", ok,
                        f"max relative deviation {worst:.3g}")]


def autodiff_suite() -> List[CheckResult]:
    return check_input_derivatives() + check_param_gradient()


def _linear_flow_error(substeps: int) -> float:
    trajectory = flow.evolve_samples(lambda z: z[:, :1], [[0.5]],
                                     TimeGrid(2, 1.0), substeps=substeps)
    return abs(trajectory.final_points[0, 0] - 0.5 * np.e)


def flow_suite() -> List[CheckResult]:
    results = []
    trajectory = flow.evolve_samples(
        lambda z: z[:, :1], [[0.5]], TimeGrid(2, 1.0), substeps=100,
        track_logdet=True, divergence=lambda z: np.ones(len(z)),
    )
    x1 = trajectory.final_points[0, 0]
    results.append(CheckResult(
        "linear flow endpoint and log-det",
        abs(x1 - 0.5 * np.e) < 1e-9 and
        abs(trajectory.logdet[0, -1] - 1.0) < 1e-9,
        f"X1={x1:.12f}, logdet={trajectory.logdet[0, -1]:.12f}",
    ))

    ratio = _linear_flow_error(5) / _linear_flow_error(10)
    results.append(CheckResult("RK4 convergence order", ratio >= 8.0,
                               f"error ratio per halving {ratio:.3g}"))

    trajectory = flow.evolve_samples(
        lambda z: np.column_stack([-z[:, 1], z[:, 0]]), [[1.0, 0.0]],
        TimeGrid(2, 1.0), substeps=100, track_logdet=True,
        divergence=lambda z: np.zeros(len(z)),
    )
    end = trajectory.final_points[0]
    results.append(CheckResult(
        "rigid rotation endpoint",
        _close(end, [np.cos(1.0), np.sin(1.0)], 0.0, 1e-9) and
        abs(trajectory.logdet[0, -1]) < 1e-8,
        f"X1={end.tolist()}",
    ))

    # Potential network: log-det against the finite-difference Jacobian of
    # the flow map, divergence against the finite-difference Laplacian
    rng = np.random.default_rng(3)
    pot = flow.VelocityPotential(init_network([3, 8, 8, 1], 11))
    x0 = rng.uniform(0.2, 0.8, size=(5, 2))
    grid = TimeGrid(3, 0.5)
    trajectory = flow.evolve_samples(pot, x0, grid, substeps=20,
                                     track_logdet=True)

    def flow_map(points):
        return flow.evolve_samples(pot, points, grid,
                                   substeps=20).final_points

    jac = fd_gradient(flow_map, x0, h=1e-5)
    fd_logdet = np.log(np.abs(np.linalg.det(jac)))
    results.append(CheckResult(
        "log-det channel vs finite-difference flow Jacobian",
        _close(trajectory.logdet[:, -1], fd_logdet, 1e-5, 1e-7),
        f"max relative deviation "
        f"{_max_rel(trajectory.logdet[:, -1], fd_logdet):.3g}",
    ))

    inputs = np.column_stack([x0, np.full(len(x0), 0.3)])
    div = np.asarray(tape.value_of(flow.divergence_at(pot, inputs)))

    def spatial_velocity(z):
        return flow.velocity_at(pot, z)

    vel_jac = fd_gradient(spatial_velocity, inputs, h=1e-5)
    fd_div = vel_jac[:, 0, 0] + vel_jac[:, 1, 1]
    curl = vel_jac[:, 0, 1] - vel_jac[:, 1, 0]
    results.append(CheckResult(
        "divergence vs finite-difference Laplacian",
        _close(div, fd_div, 1e-5, 1e-7),
        f"max relative deviation {_max_rel(div, fd_div):.3g}",
    ))
    results.append(CheckResult(
        "curl-free velocity", bool(np.max(np.abs(curl)) < 1e-8),
        f"max curl {np.max(np.abs(curl)):.3g}",
    ))
    return results


def transport_suite(n_samples: int = 100_000) -> List[CheckResult]:
    results = []
    t = 1.0
    linear = flow.pushforward_check(
        lambda z: z[:, :1],
        lambda rng, n: rng.standard_normal((n, 1)),
        lambda x: norm.pdf(x[:, 0], scale=np.exp(t)),
        lambda x: x[:, 0] ** 2,
        n_samples, t, box=[[-40.0, 40.0]], seed=0, substeps=20,
        n_grid=40_001,
    )
    results.append(CheckResult(
        "linear-flow pushforward second moment",
        linear.z_score <= 3.0 and abs(linear.analytic - np.e ** 2) < 1e-6,
        f"estimate {linear.estimate:.5f}, analytic {linear.analytic:.5f}, "
        f"stderr {linear.stderr:.3g}",
    ))

    rotation = flow.pushforward_check(
        lambda z: np.column_stack([-z[:, 1], z[:, 0]]),
        lambda rng, n: rng.standard_normal((n, 2)) + np.array([1.0, 0.0]),
        lambda x: norm.pdf(x[:, 0], loc=np.cos(t)) *
        norm.pdf(x[:, 1], loc=np.sin(t)),
        lambda x: x[:, 0],
        n_samples // 5, t, box=[[-9.0, 11.0], [-10.0, 10.0]], seed=1,
        substeps=20, n_grid=401,
    )
    results.append(CheckResult(
        "rigid-rotation pushforward mean",
        rotation.z_score <= 3.0 and abs(rotation.analytic - np.cos(t)) < 1e-6,
        f"estimate {rotation.estimate:.5f}, analytic "
        f"{rotation.analytic:.5f}",
    ))

    x0 = np.random.default_rng(2).standard_normal((1000, 1))
    trajectory = flow.evolve_samples(
        lambda z: z[:, :1], x0, TimeGrid(2, t), substeps=50,
        track_logdet=True, divergence=lambda z: np.ones(len(z)),
    )
    carried = flow.pushforward_density(lambda x: norm.pdf(x[:, 0]),
                                       trajectory)[:, -1]
    exact = norm.pdf(trajectory.final_points[:, 0], scale=np.exp(t))
    results.append(CheckResult(
        "density carried along trajectories",
        _close(carried, exact, 1e-6, 0.0),
        f"max relative deviation {_max_rel(carried, exact, 0.0):.3g}",
    ))
    return results


def _constant_residual_snapshot() -> ResidualSnapshot:
    grid = TimeGrid(11, 1.0)
    x = np.linspace(0.05, 0.95, 10)
    t = np.repeat(grid.times, len(x))
    r = np.exp(t)
    return ResidualSnapshot(
        inputs=np.column_stack([np.tile(x, grid.n_slices), t]),
        slice_index=np.repeat(np.arange(grid.n_slices), len(x)),
        r=r, grad_r=np.zeros((len(r), 1)), dt_r=r,
        integrals=np.exp(2 * grid.times), rates=2 * np.exp(2 * grid.times),
    )


def losses_suite() -> List[CheckResult]:
    results = []
    zero_pot = init_network([2, 4, 1], 0).with_params(np.zeros(17))
    loss = loss_v_estimate(zero_pot, _constant_residual_snapshot())
    results.append(CheckResult("velocity loss vanishes for a uniform "
                               "residual", loss < 1e-20, f"loss {loss:.3g}"))

    rng = np.random.default_rng(4)
    for name in ("rotation", "burgers", "fokker_planck", "advection6d"):
        problem = get_problem(name)
        box = problem.spacetime_box
        points = rng.uniform(box[:, 0], box[:, 1],
                             size=(100, problem.input_dim))
        jet = ExactField(problem).jet(points, order=2, hessian="diag")
        r = np.abs(problem.residual(jet, points))
        results.append(CheckResult(f"{name} exact solution annihilates the "
                                   "residual", bool(r.max() < 1e-5),
                                   f"max |r| {r.max():.3g}"))

    problem = get_problem("rotation")
    grid = TimeGrid(3, 1.0)
    x = rng.uniform(problem.domain[:, 0], problem.domain[:, 1], size=(10, 2))
    n = len(x) * grid.n_slices
    pde = CollocationSet(np.tile(x, (grid.n_slices, 1)),
                         np.repeat(grid.times, len(x)),
                         np.repeat(np.arange(grid.n_slices), len(x)),
                         ["uniform"] * n, [0] * n)
    initial = pde.at_slice(0)
    boundary = CollocationSet.empty(2)
    exact_loss = loss_u_estimate(ExactField(problem), problem, pde, initial,
                                 boundary)
    results.append(CheckResult("solution loss vanishes at the exact "
                               "solution", exact_loss < 1e-10,
                               f"loss {exact_loss:.3g}"))

    net = init_network([3, 4, 4, 1], 5)

    def closure(traced):
        return loss_u_estimate(traced, problem, pde, initial, pde)

    _, grad = value_and_gradient(closure, net)
    coords = rng.choice(net.n_params, size=10, replace=False)
    fd = []
    for c in coords:
        step = np.zeros(net.n_params)
        step[c] = 1e-6
        up = value_and_gradient(closure, net.with_params(net.params + step))
        down = value_and_gradient(closure,
                                  net.with_params(net.params - step))
        fd.append((up[0] - down[0]) / 2e-6)
    results.append(CheckResult("solution loss gradient vs finite "
                               "differences",
                               _close(grad[coords], fd, 1e-5, 1e-8),
                               f"max relative deviation "
                               f"{_max_rel(grad[coords], fd):.3g}"))
    return results


SUITES: Dict[str, Callable[[], List[CheckResult]]] = {
    "autodiff": autodiff_suite,
    "flow": flow_suite,
    "transport": transport_suite,
    "losses": losses_suite,
}


def run_suites(names: Optional[Sequence[str]] = None,
               echo: Optional[Callable[[str], None]] = None) -> dict:
    """Run verification suites and collect a machine-readable summary.

    :param names: Suites to run (all when empty)
    :type names: Sequence[str]

    :param echo: Called with one progress line per suite
    :type echo: Callable

    :returns: ``{"passed": bool, "suites": {name: {"passed", "checks",
        "elapsed_s"}}}``
    :rtype: dict
    """
    names = list(names) if names else list(VALID_SUITES)
    unknown = set(names) - set(VALID_SUITES)
    if unknown:
        raise exc.ConfigurationError(
            f"Unknown suites {sorted(unknown)}, must be among {VALID_SUITES}"
        )
    summary = {"suites": {}}
    start = time.perf_counter()
    for name in names:
        suite_start = time.perf_counter()
        checks = SUITES[name]()
        passed = all(c.passed for c in checks)
        summary["suites"][name] = {
            "passed": passed,
            "checks": [c.to_dict() for c in checks],
            "elapsed_s": round(time.perf_counter() - suite_start, 3),
        }
        if echo is not None:
            echo(f"{name}: {'PASS' if passed else 'FAIL'} "
                 f"({sum(c.passed for c in checks)}/{len(checks)})")
    elapsed = time.perf_counter() - start
    if elapsed > SOFT_BUDGET_S:
        warnings.warn(
            f"Verification took {elapsed:.0f} s, over the "
            f"{SOFT_BUDGET_S:.0f} s budget.",
            RuntimeWarning,
        )
    summary["passed"] = all(s["passed"] for s in summary["suites"].values())
    return summary
