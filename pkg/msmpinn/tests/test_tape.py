import numpy as np
import pytest

import msmpinn._tape as tape


def _grad_of(fn, *values):
    leaves = [tape.Variable(v) for v in values]
    out = fn(*leaves)
    out.backward()
    return [leaf.grad for leaf in leaves]


def test_plain_arrays_stay_plain():
    out = tape.tanh(np.ones(3)) * 2.0 + tape.sum(np.ones((2, 2)), axis=0)[0]
    assert isinstance(out, np.ndarray)


def test_product_and_quotient():
    a, b = np.array([1.0, 2.0]), np.array([3.0, 4.0])
    ga, gb = _grad_of(lambda x, y: tape.sum(x * y / (x + y)), a, b)
    np.testing.assert_allclose(ga, b ** 2 / (a + b) ** 2)
    np.testing.assert_allclose(gb, a ** 2 / (a + b) ** 2)


def test_broadcast_gradient_is_reduced():
    a = np.ones((4, 3))
    b = np.array([1.0, 2.0, 3.0])
    ga, gb = _grad_of(lambda x, y: tape.sum(x * y), a, b)
    np.testing.assert_array_equal(ga, np.tile(b, (4, 1)))
    np.testing.assert_array_equal(gb, np.full(3, 4.0))


def test_ndarray_on_the_left_defers_to_variable():
    v = tape.Variable(np.array([2.0, 3.0]))
    out = np.array([1.0, 1.0]) * v
    assert isinstance(out, tape.Variable)


def test_shared_node_accumulates():
    x = np.array([0.3, -0.7])
    (g,) = _grad_of(lambda v: tape.sum(tape.tanh(v) * tape.tanh(v)), x)
    s = np.tanh(x)
    np.testing.assert_allclose(g, 2 * s * (1 - s ** 2))


def test_einsum_gradients():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(5, 3)), rng.normal(size=(4, 3))
    ga, gb = _grad_of(lambda x, y: tape.sum(tape.einsum("bi,ji->bj", x, y)),
                      a, b)
    np.testing.assert_allclose(ga, np.tile(b.sum(axis=0), (5, 1)))
    np.testing.assert_allclose(gb, np.tile(a.sum(axis=0), (4, 1)))


def test_einsum_with_dropped_index_broadcasts():
    w = np.arange(6.0).reshape(2, 3)
    (g,) = _grad_of(
        lambda v: tape.sum(tape.einsum("ji,b->bji", v, np.ones(4))), w
    )
    np.testing.assert_array_equal(g, np.full((2, 3), 4.0))


def test_einsum_rejects_repeated_index():
    with pytest.raises(ValueError) as exc_info:
        tape.einsum("ii->i", tape.Variable(np.eye(2)))
    assert str(exc_info.value) == "Repeated index in 'ii' is unsupported."


def test_mean_and_getitem():
    x = np.arange(4.0)
    (g,) = _grad_of(lambda v: tape.mean(v[1:3] * v[1:3]), x)
    np.testing.assert_allclose(g, [0.0, 1.0, 2.0, 0.0])
