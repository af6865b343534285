from abc import ABC
import json
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import _exceptions as exc
from . import _tape as tape

VALID_HESSIAN_MODES = ["full", "diag"]


class _BaseNetwork(ABC):
    __slots__ = "layer_sizes", "weights", "biases"

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_weights(self) -> int:
        return sum(a * b for a, b in zip(self.layer_sizes[:-1],
                                         self.layer_sizes[1:]))

    @property
    def n_biases(self) -> int:
        return sum(self.layer_sizes[1:])

    @property
    def n_params(self) -> int:
        return self.n_weights + self.n_biases


class DenseNetwork(_BaseNetwork):
    __slots__ = "seed", "activation"

    def __init__(
        self,
        layer_sizes: Sequence[int],
        weights: List[np.ndarray],
        biases: List[np.ndarray],
        seed: Optional[int] = None,
    ):
        """Dense network with tanh hidden layers and a linear output.

        :param layer_sizes: Widths from input to output layer
        :type layer_sizes: Sequence[int]

        :param weights: Per-layer matrices of shape (out, in)
        :type weights: List[np.ndarray]

        :param biases: Per-layer vectors of length out
        :type biases: List[np.ndarray]

        :param seed: Seed the parameters were drawn with (optional)
        :type seed: int
        """
        layer_sizes = _validate_layer_sizes(layer_sizes)
        if len(weights) != len(layer_sizes) - 1 or \
                len(biases) != len(layer_sizes) - 1:
            raise exc.ConfigurationError(
                "Number of weight/bias arrays does not match layer_sizes."
            )
        weights = [np.array(w, dtype=np.float64) for w in weights]
        biases = [np.array(b, dtype=np.float64) for b in biases]
        for i, (w, b) in enumerate(zip(weights, biases)):
            expected = (layer_sizes[i + 1], layer_sizes[i])
            if w.shape != expected or b.shape != (layer_sizes[i + 1],):
                raise exc.ConfigurationError(
                    f"Layer {i} has weight shape {w.shape} and bias shape "
                    f"{b.shape}, expected {expected} and "
                    f"({layer_sizes[i + 1]},)."
                )
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise exc.NonFiniteValueError(f"parameters of layer {i}")
        self.layer_sizes = layer_sizes
        self.weights = weights
        self.biases = biases
        self.seed = seed
        self.activation = "tanh"

    @property
    def params(self) -> np.ndarray:
        """Flat parameter vector: all weights, then all biases."""
        return flatten(self.weights, self.biases)

    def with_params(self, params: np.ndarray) -> "DenseNetwork":
        """Return a new network carrying ``params``."""
        weights, biases = unflatten(self.layer_sizes, params)
        return DenseNetwork(self.layer_sizes, weights, biases, self.seed)

    def traced(self) -> "_TracedNetwork":
        return _TracedNetwork(self.layer_sizes,
                              tape.leaves(self.weights),
                              tape.leaves(self.biases))

    def save(self, path: str) -> None:
        """Saves the network to file as JSON.

        Floats are written with their shortest round-trip representation,
        so loading reproduces the parameters bit for bit.

        :param path: Location to save
        :type path: os.PathLike
        """
        with open(path, "w") as f:
            f.write(self.to_json())

    def to_json(self) -> str:
        payload = {
            "layer_sizes": list(self.layer_sizes),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "activation": self.activation,
            "seed": self.seed,
        }
        return json.dumps(payload)

    @classmethod
    def load(cls, path: str) -> "DenseNetwork":
        """Create DenseNetwork from JSON checkpoint."""
        with open(path, "r") as f:
            payload = json.load(f)
        if payload.get("activation", "tanh") != "tanh":
            raise exc.ConfigurationError(
                f"Unsupported activation '{payload['activation']}'."
            )
        return cls(payload["layer_sizes"], payload["weights"],
                   payload["biases"], payload.get("seed"))

    def __eq__(self, other: "DenseNetwork") -> bool:
        return (
            self.layer_sizes == other.layer_sizes and
            np.array_equal(self.params, other.params)
        )


class _TracedNetwork(_BaseNetwork):
    """Network whose parameters are tape leaves."""

    def __init__(self, layer_sizes, weights, biases):
        self.layer_sizes = layer_sizes
        self.weights = weights
        self.biases = biases
        # input batches seen, for locating non-finite points
        self.batches = []

    def gradient(self) -> np.ndarray:
        def grad_or_zero(v):
            return np.zeros_like(v.value) if v.grad is None else v.grad
        return flatten([grad_or_zero(w) for w in self.weights],
                       [grad_or_zero(b) for b in self.biases])


class InputJet:
    __slots__ = "value", "grad", "hess", "hess_diag"

    def __init__(self, value, grad=None, hess=None, hess_diag=None):
        """Values and input derivatives of a scalar field at a batch.

        Time is the last input coordinate.

        :param value: Field values, shape (n,)
        :param grad: First derivatives, shape (n, dim)
        :param hess: Full second derivatives, shape (n, dim, dim)
        :param hess_diag: Pure second derivatives, shape (n, dim). Derived
            from ``hess`` when only the full matrix is given.
        """
        self.value = value
        self.grad = grad
        self.hess = hess
        if hess_diag is None and hess is not None:
            dim = tape.value_of(hess).shape[-1]
            hess_diag = tape.einsum("bpq,pq->bp", hess, np.eye(dim))
        self.hess_diag = hess_diag

    def d(self, i: int):
        """First derivative along input ``i``."""
        return self.grad[:, i]

    def dd(self, i: int):
        """Pure second derivative along input ``i``."""
        return self.hess_diag[:, i]

    def laplacian(self, dims: int):
        """Sum of pure second derivatives over the first ``dims`` inputs."""
        return tape.sum(self.hess_diag[:, :dims], axis=1)

    def __len__(self) -> int:
        return tape.value_of(self.value).shape[0]


def _validate_layer_sizes(layer_sizes: Sequence[int]) -> List[int]:
    sizes = list(layer_sizes) if layer_sizes is not None else []
    if len(sizes) < 2:
        raise exc.ConfigurationError(
            "layer_sizes must contain at least an input and an output size."
        )
    if any(int(s) != s or s <= 0 for s in sizes):
        raise exc.ConfigurationError(
            f"layer_sizes must be positive integers, got {sizes}."
        )
    return [int(s) for s in sizes]


def flatten(weights: Sequence, biases: Sequence) -> np.ndarray:
    return np.concatenate(
        [np.ravel(w) for w in weights] + [np.ravel(b) for b in biases]
    )


def unflatten(
    layer_sizes: Sequence[int],
    params: np.ndarray
) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """Split a flat parameter vector into weight matrices and biases."""
    params = np.asarray(params, dtype=np.float64)
    pairs = list(zip(layer_sizes[:-1], layer_sizes[1:]))
    n_expected = sum(a * b + b for a, b in pairs)
    if params.shape != (n_expected,):
        raise exc.DimensionMismatchError(n_expected, params.size,
                                         "parameter vector")
    weights, biases, offset = [], [], 0
    for fan_in, fan_out in pairs:
        size = fan_in * fan_out
        weights.append(params[offset:offset + size].reshape(fan_out, fan_in))
        offset += size
    for _, fan_out in pairs:
        biases.append(params[offset:offset + fan_out].copy())
        offset += fan_out
    return weights, biases


def init_network(layer_sizes: Sequence[int], seed: int) -> DenseNetwork:
    """Create a network with Glorot-uniform weights and zero biases.

    :param layer_sizes: Widths from input to output layer, e.g.
        ``[3, 64, 64, 64, 1]``
    :type layer_sizes: Sequence[int]

    :param seed: Random seed; equal seeds give bit-identical networks
    :type seed: int

    :returns: Initialised network
    :rtype: msmpinn.network.DenseNetwork
    """
    layer_sizes = _validate_layer_sizes(layer_sizes)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return DenseNetwork(layer_sizes, weights, biases, seed)


def _as_batch(net: _BaseNetwork, inputs) -> Tuple[np.ndarray, bool]:
    x = np.asarray(inputs, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise exc.DimensionMismatchError(net.input_dim, x.shape[-1])
    if isinstance(net, _TracedNetwork):
        net.batches.append(x)
    return x, single


def _propagate(net: _BaseNetwork, x: np.ndarray, order: int, hessian: str):
    """Push value, Jacobian and Hessian through every layer.

    A ``None`` Jacobian stands for the identity and a ``None`` Hessian for
    zero, which only holds before the first affine layer.
    """
    batch = x.shape[0]
    n_layers = len(net.weights)
    value, jac, hess = x, None, None
    for layer, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = tape.einsum("bi,ji->bj", value, w) + b
        jz = hz = None
        if order >= 1:
            if jac is None:
                jz = tape.einsum("ji,b->bji", w, np.ones(batch))
            else:
                jz = tape.einsum("bip,ji->bjp", jac, w)
            if order >= 2 and hess is not None:
                if hessian == "full":
                    hz = tape.einsum("bipq,ji->bjpq", hess, w)
                else:
                    hz = tape.einsum("bip,ji->bjp", hess, w)

        if layer == n_layers - 1:
            value, jac, hess = z, jz, hz
            break

        s = tape.tanh(z)
        d1 = 1.0 - s * s
        d2 = -2.0 * s * d1
        value = s
        if order >= 1:
            jac = tape.expand_trailing(d1, 1) * jz
        if order >= 2:
            if hessian == "full":
                hess = tape.expand_trailing(d2, 2) * tape.einsum(
                    "bjp,bjq->bjpq", jz, jz)
                extra = 2
            else:
                hess = tape.expand_trailing(d2, 1) * (jz * jz)
                extra = 1
            if hz is not None:
                hess = hess + tape.expand_trailing(d1, extra) * hz
    return value, jac, hess


def forward(net: _BaseNetwork, inputs) -> np.ndarray:
    """Evaluate the network.

    :param net: Network to evaluate
    :type net: msmpinn.network.DenseNetwork

    :param inputs: One input vector or an (n, input_dim) batch
    :type inputs: np.ndarray

    :returns: Output value (float for a single input, (n,) for a batch)
    """
    x, single = _as_batch(net, inputs)
    value, _, _ = _propagate(net, x, order=0, hessian="diag")
    out = value[:, 0]
    if single and not isinstance(out, tape.Variable):
        return float(out[0])
    return out


def input_jet(
    net: _BaseNetwork,
    inputs,
    order: int = 2,
    hessian: str = "full",
) -> InputJet:
    """Exact value, input gradient and input Hessian of the network.

    :param net: Network to differentiate
    :type net: msmpinn.network.DenseNetwork

    :param inputs: One input vector or an (n, input_dim) batch
    :type inputs: np.ndarray

    :param order: Highest derivative order to compute (0, 1 or 2)
    :type order: int

    :param hessian: 'full' for the whole Hessian or 'diag' for only the
        pure second derivatives
    :type hessian: str

    :returns: Batched jet (a single input is treated as a batch of one)
    :rtype: msmpinn.network.InputJet
    """
    if order not in (0, 1, 2):
        raise exc.ContractError(f"order must be 0, 1 or 2, got {order}.")
    if hessian not in VALID_HESSIAN_MODES:
        raise exc.ContractError(
            f"hessian must be one of {VALID_HESSIAN_MODES}, got '{hessian}'."
        )
    x, _ = _as_batch(net, inputs)
    n_in = net.input_dim
    value, jac, hess = _propagate(net, x, order, hessian)
    grad = full = diag = None
    if order >= 1:
        grad = jac[:, 0, :]
    if order >= 2:
        if hessian == "full":
            full = hess[:, 0, :, :] if hess is not None else \
                np.zeros((x.shape[0], n_in, n_in))
        else:
            diag = hess[:, 0, :] if hess is not None else \
                np.zeros((x.shape[0], n_in))
    return InputJet(value[:, 0], grad, full, diag)


def _non_finite_point(loss, traced: Sequence[_TracedNetwork]):
    """Row and input of the first non-finite per-point intermediate."""
    node = tape.first_non_finite(loss)
    if node is None:
        return None, None
    for net in traced:
        for x in net.batches:
            if node.shape[0] == len(x):
                rows = ~np.isfinite(node.value.reshape(len(x), -1))
                row = int(np.flatnonzero(rows.any(axis=1))[0])
                return row, x[row]
    return None, None


def _differentiate(
    loss_closure: Callable,
    nets: Sequence[DenseNetwork],
    check_finite: bool,
) -> Tuple[float, List[np.ndarray]]:
    traced = [net.traced() for net in nets]
    loss = loss_closure(*traced)
    if isinstance(loss, tape.Variable):
        loss.backward()
        value = float(np.asarray(loss.value).reshape(()))
    else:
        value = float(np.asarray(loss).reshape(()))
    grads = [t.gradient() for t in traced]
    if not check_finite:
        return value, grads
    if not np.isfinite(value):
        index, point = (_non_finite_point(loss, traced)
                        if isinstance(loss, tape.Variable) else (None, None))
        raise exc.NonFiniteValueError("loss value", index=index, point=point)
    bad = np.flatnonzero(~np.isfinite(np.concatenate(grads)))
    if bad.size:
        raise exc.NonFiniteValueError("parameter gradient", index=bad[0])
    return value, grads


def value_and_gradient(
    loss_closure: Callable,
    net: DenseNetwork,
    check_finite: bool = True,
) -> Tuple[float, np.ndarray]:
    """Evaluate a scalar loss and its gradient with respect to ``net``.

    :param loss_closure: Function of a (traced) network returning a scalar
        built from forward/input_jet evaluations and arithmetic
    :type loss_closure: Callable

    :param net: Network whose parameters are differentiated
    :type net: msmpinn.network.DenseNetwork

    :param check_finite: Raise on a non-finite loss or gradient. A
        non-finite loss names the first input point with a non-finite
        intermediate when one exists
    :type check_finite: bool

    :returns: Loss value and flat gradient (weights first, then biases)
    :rtype: (float, np.ndarray)
    """
    value, grads = _differentiate(loss_closure, [net], check_finite)
    return value, grads[0]


def param_gradient(
    loss_closure: Callable,
    nets: Union[DenseNetwork, Sequence[DenseNetwork]],
) -> Union[np.ndarray, List[np.ndarray]]:
    """Exact reverse-mode gradient of ``loss_closure`` at the parameters.

    Derivatives flow through jet entries as well, so closures reading input
    gradients or Hessians are differentiated exactly.

    :param nets: One network, or several whose traced copies are passed to
        ``loss_closure`` in order
    :type nets: msmpinn.network.DenseNetwork or list

    :returns: Flat gradient, or one flat gradient per network
    """
    if isinstance(nets, DenseNetwork):
        return value_and_gradient(loss_closure, nets)[1]
    nets = list(nets)
    if not nets:
        raise exc.ContractError("param_gradient needs at least one network.")
    return _differentiate(loss_closure, nets, True)[1]
