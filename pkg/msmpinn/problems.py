from dataclasses import dataclass, field
from functools import lru_cache, partial
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import erf, expit

from . import _exceptions as exc
from . import _tape as tape
from ._descriptions import VALID_PROBLEMS
from .network import InputJet, _BaseNetwork, input_jet


@dataclass(frozen=True)
class PdeProblem:
    """Benchmark definition: domain, operator, data and reference."""
    name: str
    spatial_dim: int
    domain: np.ndarray
    horizon: float
    coefficients: Dict[str, float]
    residual: Callable
    residual_order: int
    initial_value: Callable
    initial_gradient_sq: Callable
    boundary_value: Callable
    initial_strategy: str
    pde_mode: str = "per_slice"
    exact: Optional[Callable] = None
    exact_jet: Optional[Callable] = None
    reference: Optional[Callable] = None
    hard_constraint: Optional[Callable] = None
    residual_gradient: Optional[Callable] = None
    stratified_boundary: bool = False
    # (center(t), std) for solutions that are a moving isotropic Gaussian
    gaussian_track: Optional[tuple] = field(default=None, compare=False)
    aux: Optional[object] = field(default=None, compare=False)

    def __post_init__(self):
        domain = np.asarray(self.domain, dtype=np.float64)
        if domain.shape != (self.spatial_dim, 2):
            raise exc.ConfigurationError(
                f"Domain of {self.name} must have shape "
                f"({self.spatial_dim}, 2), got {domain.shape}."
            )
        if not (domain[:, 0] < domain[:, 1]).all():
            raise exc.ConfigurationError(
                f"Degenerate domain for {self.name}: {domain.tolist()}"
            )
        if not self.horizon > 0:
            raise exc.ConfigurationError(
                f"Horizon must be positive, got {self.horizon}."
            )
        object.__setattr__(self, "domain", domain)

    @property
    def input_dim(self) -> int:
        return self.spatial_dim + 1

    @property
    def lengths(self) -> np.ndarray:
        return self.domain[:, 1] - self.domain[:, 0]

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    @property
    def spacetime_box(self) -> np.ndarray:
        return np.vstack([self.domain, [[0.0, self.horizon]]])

    def contains(self, x: np.ndarray) -> np.ndarray:
        """Mask of spatial points inside the closed domain."""
        x = np.atleast_2d(x)
        return ((x >= self.domain[:, 0]) & (x <= self.domain[:, 1])).all(
            axis=1)


@dataclass(frozen=True)
class FokkerPlanckAux:
    sigma: float
    ring_radius: float
    normalizer: float

    def __post_init__(self):
        if not self.normalizer > 0:
            raise exc.ConfigurationError("Normalizer K must be positive.")

    @property
    def diffusion(self) -> float:
        return 0.5 * self.sigma ** 2

    def _frame(self, points: np.ndarray):
        t = points[:, 2]
        decay = np.exp(-t)
        z = points[:, :2] - decay[:, None]
        p = (z ** 2).sum(axis=1) - self.ring_radius ** 2
        return z, p, decay

    def drift(self, points: np.ndarray) -> np.ndarray:
        z, p, decay = self._frame(points)
        return -4.0 * z * p[:, None] - decay[:, None]

    def drift_divergence(self, points: np.ndarray) -> np.ndarray:
        z, p, _ = self._frame(points)
        return -8.0 * p - 8.0 * (z ** 2).sum(axis=1)


@dataclass(frozen=True)
class Lattice:
    """Tensor-product evaluation lattice (spatial axes, then time)."""
    axes: List[np.ndarray]
    times: np.ndarray

    @property
    def shape(self) -> tuple:
        return tuple(len(a) for a in self.axes) + (len(self.times),)

    def inputs(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, self.times, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def halved(self) -> "Lattice":
        def half(a):
            n = (len(a) - 1) // 2 + 1
            return np.linspace(a[0], a[-1], n)
        return Lattice([half(a) for a in self.axes], self.times)


# -- residual operators ------------------------------------------------------

def residual_allen_cahn(jet: InputJet, points: np.ndarray,
                        alpha: float = 0.001, beta: float = 5.0):
    """r = u_t - alpha u_xx + beta (u^3 - u)."""
    u = jet.value
    return jet.d(1) - alpha * jet.dd(0) + beta * (u * u * u - u)


def residual_rotation(jet: InputJet, points: np.ndarray):
    """r = u_t - u_x sin t + u_y cos t."""
    t = points[:, 2]
    return jet.d(2) - jet.d(0) * np.sin(t) + jet.d(1) * np.cos(t)


def residual_burgers(jet: InputJet, points: np.ndarray, alpha: float = 0.001):
    """r = u_t - alpha (u_xx + u_yy) + u (u_x + u_y)."""
    return (jet.d(2) - alpha * jet.laplacian(2) +
            jet.value * (jet.d(0) + jet.d(1)))


def residual_fokker_planck(jet: InputJet, points: np.ndarray,
                           aux: FokkerPlanckAux):
    """r = u_t + (div f) u + f . grad u - D lap u."""
    f = aux.drift(points)
    transport = f[:, 0] * jet.d(0) + f[:, 1] * jet.d(1)
    return (jet.d(2) + aux.drift_divergence(points) * jet.value +
            transport - aux.diffusion * jet.laplacian(2))


def residual_advection_nd(jet: InputJet, points: np.ndarray):
    """r = u_t + sum_i u_{x_i}."""
    d = points.shape[1] - 1
    return jet.d(d) + tape.sum(jet.grad[:, :d], axis=1)


def residual_gradient_rotation(jet: InputJet, points: np.ndarray):
    """Exact space-time gradient of the rotation residual."""
    t = points[:, 2]
    s, c = np.sin(t), np.cos(t)
    h = jet.hess
    grad = h[:, 2, :] - h[:, 0, :] * s[:, None] + h[:, 1, :] * c[:, None]
    grad[:, 2] += -jet.grad[:, 0] * c - jet.grad[:, 1] * s
    return grad


def residual_gradient_advection_nd(jet: InputJet, points: np.ndarray):
    """Exact space-time gradient of the advection residual."""
    d = points.shape[1] - 1
    return jet.hess[:, d, :] + jet.hess[:, :d, :].sum(axis=1)


# -- initial data and exact solutions ----------------------------------------

def _exp_jet(w, gw, hw, scale, order, hessian) -> InputJet:
    u = scale * np.exp(w)
    if order == 0:
        return InputJet(u)
    grad = u[:, None] * gw
    if order == 1:
        return InputJet(u, grad)
    hess = u[:, None, None] * (np.einsum("bp,bq->bpq", gw, gw) + hw)
    if hessian == "diag":
        return InputJet(u, grad, hess_diag=np.einsum("bpp->bp", hess))
    return InputJet(u, grad, hess)


def _center_distance(points, center, velocity, accel):
    """q = |x - c(t)|^2 with its space-time gradient and Hessian."""
    n, dim = points.shape
    d = dim - 1
    z = points[:, :d] - center
    q = (z ** 2).sum(axis=1)
    gq = np.empty((n, dim))
    gq[:, :d] = 2.0 * z
    gq[:, d] = -2.0 * (z * velocity).sum(axis=1)
    hq = np.zeros((n, dim, dim))
    hq[:, np.arange(d), np.arange(d)] = 2.0
    hq[:, :d, d] = -2.0 * velocity
    hq[:, d, :d] = -2.0 * velocity
    hq[:, d, d] = (2.0 * (velocity ** 2).sum(axis=1) -
                   2.0 * (z * accel).sum(axis=1))
    return q, gq, hq


def _rotation_center(t):
    c, s = np.cos(t), np.sin(t)
    return (np.stack([c, s], axis=1), np.stack([-s, c], axis=1),
            np.stack([-c, -s], axis=1))


def _diagonal_center(t, d):
    ones = np.ones((len(t), d))
    return t[:, None] * ones, ones, np.zeros((len(t), d))


def _ring_center(t):
    decay = np.exp(-t)[:, None] * np.ones((len(t), 2))
    return decay, -decay, decay


def _gaussian_jet(points, center_fn, alpha, order=2, hessian="full"):
    q, gq, hq = _center_distance(points, *center_fn(points[:, -1]))
    return _exp_jet(-q / alpha, -gq / alpha, -hq / alpha, 1.0, order,
                    hessian)


def _ring_jet(points, aux: FokkerPlanckAux, order=2, hessian="full"):
    q, gq, hq = _center_distance(points, *_ring_center(points[:, -1]))
    a = 2.0 / aux.sigma ** 2
    p = q - aux.ring_radius ** 2
    w = -a * p * p
    gw = -2.0 * a * p[:, None] * gq
    hw = -2.0 * a * (np.einsum("bp,bq->bpq", gq, gq) + p[:, None, None] * hq)
    return _exp_jet(w, gw, hw, 1.0 / aux.normalizer, order, hessian)


def _logistic_jet(points, alpha, order=2, hessian="full"):
    gs = np.array([1.0, 1.0, -1.0]) / (2.0 * alpha)
    s = (points @ gs)
    u = expit(-s)
    if order == 0:
        return InputJet(u)
    u_s = -u * (1.0 - u)
    grad = u_s[:, None] * gs
    if order == 1:
        return InputJet(u, grad)
    u_ss = u * (1.0 - u) * (1.0 - 2.0 * u)
    if hessian == "diag":
        return InputJet(u, grad, hess_diag=u_ss[:, None] * gs ** 2)
    return InputJet(u, grad, u_ss[:, None, None] * np.outer(gs, gs))


def _value_of(jet_fn):
    def value(points):
        return jet_fn(points, order=0).value
    return value


def _at_time_zero(x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(x)
    return np.column_stack([x, np.zeros(len(x))])


def _initial_from_exact(jet_fn):
    def initial_value(x):
        return jet_fn(_at_time_zero(x), order=0).value

    def initial_gradient_sq(x):
        jet = jet_fn(_at_time_zero(x), order=1)
        d = np.atleast_2d(x).shape[1]
        return (jet.grad[:, :d] ** 2).sum(axis=1)
    return initial_value, initial_gradient_sq


def allen_cahn_initial_jet(points: np.ndarray,
                           hessian: str = "full") -> InputJet:
    """Jet of u0(x) = x^2 cos(pi x) as a field of (x, t)."""
    x = points[:, 0]
    c, s = np.cos(np.pi * x), np.sin(np.pi * x)
    value = x * x * c
    grad = np.zeros((len(x), 2))
    grad[:, 0] = 2 * x * c - np.pi * x * x * s
    diag = np.zeros((len(x), 2))
    diag[:, 0] = 2 * c - 4 * np.pi * x * s - np.pi ** 2 * x * x * c
    if hessian == "diag":
        return InputJet(value, grad, hess_diag=diag)
    hess = np.zeros((len(x), 2, 2))
    hess[:, 0, 0] = diag[:, 0]
    return InputJet(value, grad, hess)


def hard_constraint_allen_cahn(raw: InputJet, points: np.ndarray,
                               u0_jet: Optional[InputJet] = None) -> InputJet:
    """Jet of u = t (x^2 - 1) y + u0(x) from the jet of the raw output y.

    The product rule is applied entry by entry, so the returned jet is exact
    and traced derivatives flow through it.
    """
    x, t = points[:, 0], points[:, 1]
    hessian = "full" if raw.hess is not None else "diag"
    if u0_jet is None:
        u0_jet = allen_cahn_initial_jet(points, hessian)
    g = t * (x * x - 1.0)
    value = g * raw.value + u0_jet.value
    if raw.grad is None:
        return InputJet(value)

    gg = np.stack([2.0 * x * t, x * x - 1.0], axis=1)
    y = tape.expand_trailing(raw.value, 1)
    grad = y * gg + g[:, None] * raw.grad + u0_jet.grad
    if raw.hess is None and raw.hess_diag is None:
        return InputJet(value, grad)

    if raw.hess is not None:
        hg = np.zeros((len(x), 2, 2))
        hg[:, 0, 0] = 2.0 * t
        hg[:, 0, 1] = hg[:, 1, 0] = 2.0 * x
        cross = tape.einsum("bp,bq->bpq", gg, raw.grad)
        cross_t = tape.einsum("bp,bq->bqp", gg, raw.grad)
        hess = (tape.expand_trailing(raw.value, 2) * hg + cross + cross_t +
                g[:, None, None] * raw.hess + u0_jet.hess)
        return InputJet(value, grad, hess)

    hg_diag = np.stack([2.0 * t, np.zeros_like(t)], axis=1)
    diag = (y * hg_diag + 2.0 * gg * raw.grad +
            g[:, None] * raw.hess_diag + u0_jet.hess_diag)
    return InputJet(value, grad, hess_diag=diag)


# -- Fokker-Planck normalizer ------------------------------------------------

@lru_cache(maxsize=16)
def fokker_planck_normalizer(
    sigma: float = 0.1,
    ring_radius: float = 0.5,
    box: tuple = ((-1.0, 3.0), (-1.0, 3.0)),
    n_grid: int = 2001,
) -> float:
    """K = integral of exp(-2/sigma^2 ((x-1)^2 + (y-1)^2 - r^2)^2).

    Trapezoid rule on an ``n_grid`` x ``n_grid`` lattice over ``box``.
    """
    xs = np.linspace(box[0][0], box[0][1], n_grid)
    ys = np.linspace(box[1][0], box[1][1], n_grid)
    dx2 = ((xs - 1.0) ** 2)[:, None] + ((ys - 1.0) ** 2)[None, :]
    integrand = np.exp(-2.0 / sigma ** 2 * (dx2 - ring_radius ** 2) ** 2)
    return float(trapezoid(trapezoid(integrand, ys, axis=1), xs))


def fokker_planck_normalizer_closed_form(sigma: float = 0.1,
                                         ring_radius: float = 0.5) -> float:
    """Polar-coordinate value of K over the whole plane."""
    a = 2.0 / sigma ** 2
    return float(0.5 * np.pi * np.sqrt(np.pi / a) *
                 (1.0 + erf(ring_radius ** 2 * np.sqrt(a))))


# -- problem registry --------------------------------------------------------

def _allen_cahn() -> PdeProblem:
    from ._reference import allen_cahn_reference_interpolator

    alpha, beta = 0.001, 5.0

    def initial_value(x):
        x = np.atleast_2d(x)[:, 0]
        return x * x * np.cos(np.pi * x)

    def initial_gradient_sq(x):
        return allen_cahn_initial_jet(_at_time_zero(x), "diag").grad[:, 0] ** 2

    def boundary_value(points):
        return -np.ones(len(points))

    def reference(points):
        return allen_cahn_reference_interpolator()(points)

    return PdeProblem(
        name="allen_cahn",
        spatial_dim=1,
        domain=np.array([[-1.0, 1.0]]),
        horizon=1.0,
        coefficients={"alpha": alpha, "beta": beta},
        residual=partial(residual_allen_cahn, alpha=alpha, beta=beta),
        residual_order=2,
        initial_value=initial_value,
        initial_gradient_sq=initial_gradient_sq,
        boundary_value=boundary_value,
        initial_strategy="uniform",
        pde_mode="joint_spacetime",
        reference=reference,
        hard_constraint=hard_constraint_allen_cahn,
    )


def _rotation() -> PdeProblem:
    alpha = 0.01
    jet_fn = partial(_gaussian_jet, center_fn=_rotation_center, alpha=alpha)
    initial_value, initial_gradient_sq = _initial_from_exact(jet_fn)
    exact = _value_of(jet_fn)
    return PdeProblem(
        name="rotation",
        spatial_dim=2,
        domain=np.array([[-0.2, 1.2], [-0.2, 1.2]]),
        horizon=1.0,
        coefficients={"alpha": alpha},
        residual=residual_rotation,
        residual_order=1,
        initial_value=initial_value,
        initial_gradient_sq=initial_gradient_sq,
        boundary_value=exact,
        initial_strategy="prop_u0",
        exact=exact,
        exact_jet=jet_fn,
        reference=exact,
        residual_gradient=residual_gradient_rotation,
        gaussian_track=(lambda t: _rotation_center(t)[0],
                        np.sqrt(alpha / 2.0)),
    )


def _burgers() -> PdeProblem:
    alpha = 0.001
    jet_fn = partial(_logistic_jet, alpha=alpha)
    initial_value, initial_gradient_sq = _initial_from_exact(jet_fn)
    exact = _value_of(jet_fn)
    return PdeProblem(
        name="burgers",
        spatial_dim=2,
        domain=np.array([[-1.0, 1.0], [-1.0, 1.0]]),
        horizon=1.0,
        coefficients={"alpha": alpha},
        residual=partial(residual_burgers, alpha=alpha),
        residual_order=2,
        initial_value=initial_value,
        initial_gradient_sq=initial_gradient_sq,
        boundary_value=exact,
        initial_strategy="prop_grad_u0_sq",
        exact=exact,
        exact_jet=jet_fn,
        reference=exact,
    )


def _fokker_planck() -> PdeProblem:
    sigma, ring_radius = 0.1, 0.5
    aux = FokkerPlanckAux(sigma, ring_radius,
                          fokker_planck_normalizer(sigma, ring_radius))
    jet_fn = partial(_ring_jet, aux=aux)
    initial_value, initial_gradient_sq = _initial_from_exact(jet_fn)
    exact = _value_of(jet_fn)
    return PdeProblem(
        name="fokker_planck",
        spatial_dim=2,
        domain=np.array([[0.2, 1.8], [0.2, 1.8]]),
        horizon=1.0,
        coefficients={"sigma": sigma, "r": ring_radius,
                      "D": aux.diffusion, "K": aux.normalizer},
        residual=partial(residual_fokker_planck, aux=aux),
        residual_order=2,
        initial_value=initial_value,
        initial_gradient_sq=initial_gradient_sq,
        boundary_value=exact,
        initial_strategy="prop_u0",
        exact=exact,
        exact_jet=jet_fn,
        reference=exact,
        aux=aux,
    )


def _advection6d(d: int = 6) -> PdeProblem:
    alpha = 0.01
    jet_fn = partial(_gaussian_jet,
                     center_fn=partial(_diagonal_center, d=d), alpha=alpha)
    initial_value, initial_gradient_sq = _initial_from_exact(jet_fn)
    exact = _value_of(jet_fn)
    return PdeProblem(
        name="advection6d",
        spatial_dim=d,
        domain=np.tile([-0.2, 1.2], (d, 1)),
        horizon=1.0,
        coefficients={"alpha": alpha},
        residual=residual_advection_nd,
        residual_order=1,
        initial_value=initial_value,
        initial_gradient_sq=initial_gradient_sq,
        boundary_value=exact,
        initial_strategy="prop_u0",
        exact=exact,
        exact_jet=jet_fn,
        reference=exact,
        residual_gradient=residual_gradient_advection_nd,
        stratified_boundary=True,
        gaussian_track=(lambda t: _diagonal_center(t, d)[0],
                        np.sqrt(alpha / 2.0)),
    )


_REGISTRY = {
    "allen_cahn": _allen_cahn,
    "rotation": _rotation,
    "burgers": _burgers,
    "fokker_planck": _fokker_planck,
    "advection6d": _advection6d,
}


@lru_cache(maxsize=None)
def get_problem(name: str) -> PdeProblem:
    """Look up a benchmark problem by name.

    :param name: One of allen_cahn, rotation, burgers, fokker_planck,
        advection6d
    :type name: str

    :returns: Problem definition
    :rtype: msmpinn.problems.PdeProblem
    """
    if name not in _REGISTRY:
        raise exc.UnknownProblemError(name, VALID_PROBLEMS)
    return _REGISTRY[name]()


# -- fields ------------------------------------------------------------------

class ExactField:
    def __init__(self, problem: PdeProblem):
        """Closed-form solution of ``problem`` exposed as a field."""
        if problem.exact_jet is None:
            raise exc.ConfigurationError(
                f"{problem.name} has no closed-form solution."
            )
        self.problem = problem

    def jet(self, inputs, order: int = 2, hessian: str = "full"):
        return self.problem.exact_jet(np.atleast_2d(inputs), order=order,
                                      hessian=hessian)

    def __call__(self, inputs) -> np.ndarray:
        return self.problem.exact(np.atleast_2d(inputs))


def solution_jet(field, problem: PdeProblem, inputs: np.ndarray,
                 order: int = 2, hessian: str = "diag") -> InputJet:
    """Jet of the solution represented by ``field`` at ``inputs``.

    Networks are passed through the problem's hard constraint when it has
    one; any other object must provide ``jet(inputs, order, hessian)``.
    """
    if isinstance(field, _BaseNetwork):
        raw = input_jet(field, inputs, order=order, hessian=hessian)
        if problem.hard_constraint is not None:
            return problem.hard_constraint(raw, inputs)
        return raw
    if hasattr(field, "jet"):
        return field.jet(inputs, order=order, hessian=hessian)
    raise exc.ContractError(
        f"Cannot differentiate field of type {type(field).__name__}."
    )


def solution_values(field, problem: PdeProblem,
                    inputs: np.ndarray) -> np.ndarray:
    """Values of the solution represented by ``field`` at ``inputs``."""
    inputs = np.atleast_2d(inputs)
    if isinstance(field, _BaseNetwork):
        return tape.value_of(solution_jet(field, problem, inputs, 0).value)
    if callable(field):
        return np.asarray(field(inputs), dtype=np.float64)
    return solution_jet(field, problem, inputs, 0).value


def exact_solution(problem: PdeProblem, inputs: np.ndarray) -> np.ndarray:
    """Closed-form solution at space-time ``inputs``."""
    if problem.exact is None:
        raise exc.ConfigurationError(
            f"{problem.name} has no closed-form solution; use exact_grid."
        )
    return problem.exact(np.atleast_2d(inputs))


def default_lattice(problem: PdeProblem,
                    scale: float = 1.0) -> Optional[Lattice]:
    """Evaluation lattice of a problem (None for Monte Carlo problems)."""
    if problem.spatial_dim == 1:
        lattice = Lattice([np.linspace(*problem.domain[0], 257)],
                          np.linspace(0.0, problem.horizon, 101))
    elif problem.spatial_dim == 2:
        lattice = Lattice([np.linspace(*bounds, 101)
                           for bounds in problem.domain],
                          np.linspace(0.0, problem.horizon, 11))
    else:
        return None
    if scale == 0.5:
        lattice = lattice.halved()
    elif scale != 1.0:
        raise exc.ConfigurationError(
            f"Lattice scale must be 1.0 or 0.5, got {scale}."
        )
    return lattice


def exact_grid(problem: PdeProblem, lattice: Lattice) -> np.ndarray:
    """Reference solution on ``lattice``, shaped like the lattice."""
    if problem.reference is None:
        raise exc.ConfigurationError(f"{problem.name} has no reference.")
    return problem.reference(lattice.inputs()).reshape(lattice.shape)


def lattice_from_counts(problem: PdeProblem, n_points: int,
                        n_slices: int) -> Lattice:
    """Uniform lattice with ``n_points`` per spatial axis."""
    return Lattice([np.linspace(*bounds, n_points)
                    for bounds in problem.domain],
                   np.linspace(0.0, problem.horizon, n_slices))


__all__: Sequence[str] = [
    "PdeProblem", "FokkerPlanckAux", "Lattice", "ExactField", "get_problem",
    "residual_allen_cahn", "residual_rotation", "residual_burgers",
    "residual_fokker_planck", "residual_advection_nd",
    "hard_constraint_allen_cahn", "exact_solution", "exact_grid",
    "fokker_planck_normalizer", "solution_jet", "solution_values",
]
