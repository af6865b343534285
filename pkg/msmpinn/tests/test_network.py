import json

from hypothesis import given, settings, strategies as st
import numpy as np
import pytest

import msmpinn._exceptions as mexc
from msmpinn import _tape as tape
from msmpinn.network import (DenseNetwork, flatten, forward, init_network,
                             input_jet, param_gradient, unflatten,
                             value_and_gradient)
from msmpinn.verify import fd_gradient


def _chain(n_layers=2):
    """1-1-...-1 network with unit weights and zero biases."""
    sizes = [1] * (n_layers + 1)
    return DenseNetwork(sizes, [np.ones((1, 1))] * n_layers,
                        [np.zeros(1)] * n_layers)


def _zero_net(sizes):
    net = init_network(sizes, 0)
    return net.with_params(np.zeros(net.n_params))


class TestInitNetwork:
    def test_default_architecture_counts(self):
        net = init_network([2, 64, 64, 64, 1], 7)
        assert net.n_weights == 2 * 64 + 64 * 64 * 2 + 64
        assert net.n_weights == 8384
        assert net.n_biases == 193
        assert net.params.shape == (8384 + 193,)

    def test_glorot_bounds_and_zero_biases(self):
        net = init_network([3, 64, 1], 0)
        assert np.abs(net.weights[0]).max() <= np.sqrt(6 / 67)
        assert np.abs(net.weights[1]).max() <= np.sqrt(6 / 65)
        assert all((b == 0).all() for b in net.biases)

    def test_deterministic(self):
        a = init_network([2, 64, 64, 64, 1], 7)
        b = init_network([2, 64, 64, 64, 1], 7)
        assert np.array_equal(a.params, b.params)
        assert a == b

    def test_seeds_differ(self):
        a = init_network([2, 64, 64, 64, 1], 7)
        b = init_network([2, 64, 64, 64, 1], 8)
        assert not np.array_equal(a.params, b.params)

    @pytest.mark.parametrize("sizes", [[], [3], None])
    def test_too_few_layers(self, sizes):
        exp_msg = ("layer_sizes must contain at least an input and an "
                   "output size.")
        with pytest.raises(mexc.ConfigurationError) as exc_info:
            init_network(sizes, 0)
        assert str(exc_info.value) == exp_msg

    def test_non_positive_layer(self):
        exp_msg = "layer_sizes must be positive integers, got [2, 0, 1]."
        with pytest.raises(mexc.ConfigurationError) as exc_info:
            init_network([2, 0, 1], 0)
        assert str(exc_info.value) == exp_msg

    def test_flatten_round_trip(self):
        net = init_network([3, 5, 4, 1], 1)
        weights, biases = unflatten(net.layer_sizes, net.params)
        assert np.array_equal(flatten(weights, biases), net.params)

    def test_unflatten_wrong_length(self):
        with pytest.raises(mexc.DimensionMismatchError) as exc_info:
            unflatten([2, 3, 1], np.zeros(5))
        assert exc_info.value.expected == 13
        assert exc_info.value.observed == 5


class TestForward:
    def test_zero_network(self):
        net = _zero_net([3, 8, 8, 1])
        assert forward(net, [0.3, -1.2, 4.0]) == 0.0

    def test_single_hidden_unit(self):
        net = _chain(2)
        assert forward(net, [0.0]) == 0.0
        assert forward(net, [1.0]) == pytest.approx(0.76159, abs=1e-5)

    def test_two_hidden_units(self):
        assert forward(_chain(3), [1.0]) == pytest.approx(0.64210, abs=1e-5)

    def test_batch_matches_jet_value(self):
        net = init_network([3, 6, 6, 1], 2)
        x = np.random.default_rng(0).uniform(-1, 1, (10, 3))
        jet = input_jet(net, x)
        np.testing.assert_array_equal(forward(net, x), jet.value)

    def test_dimension_mismatch(self):
        net = init_network([2, 4, 1], 0)
        exp_msg = "Expected input of dimension 2, got 3."
        with pytest.raises(mexc.DimensionMismatchError) as exc_info:
            forward(net, [1.0, 2.0, 3.0])
        assert str(exc_info.value) == exp_msg


class TestInputJet:
    def test_zero_network(self):
        jet = input_jet(_zero_net([3, 8, 1]), np.ones((2, 3)))
        assert not jet.grad.any()
        assert not jet.hess.any()

    def test_single_hidden_unit_at_origin(self):
        jet = input_jet(_chain(2), [0.0])
        np.testing.assert_array_equal(jet.grad, [[1.0]])
        np.testing.assert_array_equal(jet.hess, [[[0.0]]])

    def test_diag_matches_full(self):
        net = init_network([3, 7, 5, 1], 4)
        x = np.random.default_rng(1).uniform(-1, 1, (6, 3))
        full = input_jet(net, x, hessian="full")
        diag = input_jet(net, x, hessian="diag")
        np.testing.assert_allclose(diag.hess_diag,
                                   np.diagonal(full.hess, axis1=1, axis2=2),
                                   rtol=1e-13, atol=1e-15)
        assert diag.hess is None

    def test_invalid_order(self):
        with pytest.raises(mexc.ContractError) as exc_info:
            input_jet(_chain(2), [0.0], order=3)
        assert str(exc_info.value) == "order must be 0, 1 or 2, got 3."

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2 ** 31 - 1),
           dim=st.integers(1, 3),
           width=st.integers(2, 8))
    def test_matches_finite_differences(self, seed, dim, width):
        rng = np.random.default_rng(seed)
        net = init_network([dim, width, width, 1], seed)
        net = net.with_params(net.params +
                              0.3 * rng.standard_normal(net.n_params))
        x = rng.uniform(-1, 1, (3, dim))
        jet = input_jet(net, x)
        fd_g = fd_gradient(lambda z: forward(net, z), x)
        fd_h = fd_gradient(lambda z: input_jet(net, z, order=1).grad, x)
        np.testing.assert_allclose(jet.grad, fd_g, rtol=1e-6, atol=1e-8)
        np.testing.assert_allclose(jet.hess, fd_h, rtol=1e-6, atol=1e-8)
        asym = np.abs(jet.hess - np.swapaxes(jet.hess, 1, 2)).max()
        assert asym < 1e-12 * (1 + np.abs(jet.hess).max())

    def test_pure(self):
        net = init_network([2, 5, 1], 3)
        a = input_jet(net, [[0.1, 0.2]])
        b = input_jet(net, [[0.1, 0.2]])
        assert np.array_equal(a.hess, b.hess)


class TestParamGradient:
    def test_stationary_zero_network(self):
        net = _zero_net([2, 4, 4, 1])

        def closure(traced):
            value = forward(traced, np.array([[0.5, 0.25]]))
            return tape.sum(value * value)

        assert not param_gradient(closure, net).any()

    def test_single_hidden_unit(self):
        # Parameter order: W1, W2, b1, b2
        grad = param_gradient(
            lambda traced: tape.sum(forward(traced, np.array([[1.0]]))),
            _chain(2),
        )
        assert grad[3] == pytest.approx(1.0)
        assert grad[1] == pytest.approx(np.tanh(1.0))
        assert grad[1] == pytest.approx(0.76159, abs=1e-5)

    def test_through_jet_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        net = init_network([2, 6, 6, 1], 5)
        x = rng.uniform(-1, 1, (8, 2))

        def closure(traced):
            jet = input_jet(traced, x, hessian="diag")
            r = jet.d(1) - 0.01 * jet.dd(0) + jet.value * jet.d(0)
            return tape.mean(r * r)

        value, grad = value_and_gradient(closure, net)
        assert value == pytest.approx(closure(net))
        h = 1e-6
        for c in rng.choice(net.n_params, 20, replace=False):
            step = np.zeros(net.n_params)
            step[c] = h
            fd = (closure(net.with_params(net.params + step)) -
                  closure(net.with_params(net.params - step))) / (2 * h)
            assert grad[c] == pytest.approx(fd, rel=1e-6, abs=1e-8)

    def test_non_finite_loss(self):
        net = init_network([1, 2, 1], 0)
        with pytest.raises(mexc.NonFiniteValueError) as exc_info:
            value_and_gradient(
                lambda traced: tape.sum(forward(traced, [[0.0]])) / 0.0, net
            )
        assert str(exc_info.value) == ("Non-finite value encountered in "
                                       "loss value.")

    def test_non_finite_loss_names_point(self):
        net = init_network([2, 3, 1], 0)
        x = np.array([[0.1, 0.2], [0.5, -0.5], [0.3, 0.4]])

        def closure(traced):
            return tape.mean(forward(traced, x) / np.array([1.0, 0.0, 1.0]))

        with pytest.raises(mexc.NonFiniteValueError) as exc_info:
            param_gradient(closure, [net])
        assert exc_info.value.index == 1
        np.testing.assert_array_equal(exc_info.value.point, [0.5, -0.5])
        assert str(exc_info.value) == ("Non-finite value encountered in "
                                       "loss value at point 1 [0.5, -0.5].")

    def test_several_networks(self):
        u = init_network([2, 4, 1], 1)
        v = init_network([2, 3, 1], 2)
        x = np.array([[0.1, 0.2], [0.3, -0.4]])

        def closure(traced_u, traced_v):
            return tape.sum(forward(traced_u, x) * forward(traced_v, x))

        grad_u, grad_v = param_gradient(closure, [u, v])
        assert len(grad_u) == u.n_params
        assert len(grad_v) == v.n_params
        np.testing.assert_allclose(
            grad_u,
            param_gradient(
                lambda t: tape.sum(forward(t, x) * forward(v, x)), u),
            rtol=1e-12,
        )
        np.testing.assert_allclose(
            grad_v,
            param_gradient(
                lambda t: tape.sum(forward(u, x) * forward(t, x)), v),
            rtol=1e-12,
        )

    def test_no_networks(self):
        with pytest.raises(mexc.ContractError) as exc_info:
            param_gradient(lambda: 0.0, [])
        assert str(exc_info.value) == ("param_gradient needs at least one "
                                       "network.")


class TestCheckpoint:
    def test_round_trip_is_bit_exact(self, tmp_path):
        net = init_network([3, 16, 16, 1], 9)
        path = tmp_path / "net.json"
        net.save(path)
        loaded = DenseNetwork.load(path)
        assert loaded == net
        assert loaded.seed == 9

        payload = json.loads(path.read_text())
        assert payload["activation"] == "tanh"
        assert payload["layer_sizes"] == [3, 16, 16, 1]

    def test_unsupported_activation(self, tmp_path):
        path = tmp_path / "net.json"
        payload = json.loads(_chain(2).to_json())
        payload["activation"] = "relu"
        path.write_text(json.dumps(payload))
        with pytest.raises(mexc.ConfigurationError) as exc_info:
            DenseNetwork.load(path)
        assert str(exc_info.value) == "Unsupported activation 'relu'."
