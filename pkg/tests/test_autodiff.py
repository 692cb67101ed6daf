import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from openkws import autodiff as ad
from openkws.exceptions import GraphStateError, ShapeError

from gradcheck import numeric_grad, relative_error


def test_identity_forward():
    g = ad.Graph()
    x = g.leaf(3.0, name="x", trainable=True)
    assert g.forward(x) == 3.0


def test_mean_of_ones():
    g = ad.Graph()
    out = ad.mean(g.constant(np.ones((2, 2))))
    assert g.forward(out) == 1.0


def test_relu_sum():
    g = ad.Graph()
    out = ad.relu(g.constant(-2.0)) + ad.relu(g.constant(5.0))
    assert g.forward(out) == 5.0


def test_square_gradient():
    g = ad.Graph()
    x = g.parameter("x", 3.0)
    y = ad.square(x)
    assert g.backward(y)["x"][0, 0] == 6.0


def test_inactive_relu_gradient():
    g = ad.Graph()
    x = g.parameter("x", -1.0)
    assert g.backward(ad.relu(x))["x"][0, 0] == 0.0


def test_mean_matvec_matches_finite_differences():
    rng = np.random.default_rng(0)
    params = {"W": rng.standard_normal((3, 3))}
    v = rng.standard_normal((3, 1))

    def f(p):
        g = ad.Graph()
        return ad.mean(g.constant(p["W"]) @ g.constant(v)).item()

    g = ad.Graph()
    loss = ad.mean(g.parameter("W", params["W"]) @ g.constant(v))
    analytic = g.backward(loss)["W"]
    # finite differences of a linear function are exact up to rounding
    assert relative_error(analytic, numeric_grad(f, params, "W")) < 1e-5


def test_deferred_binding_and_rebinding():
    g = ad.Graph()
    x = g.leaf(name="x", trainable=True)
    y = ad.sum_all(ad.square(x))
    assert y.value is None
    g.bind("x", [[1.0, 2.0]])
    assert g.forward(y) == 5.0
    np.testing.assert_array_equal(g.backward(y)["x"], [[2.0, 4.0]])
    g.bind("x", [[3.0, 0.0]])
    with pytest.raises(GraphStateError):
        g.backward(y)
    assert g.forward(y) == 9.0


def test_backward_before_forward_is_state_error():
    g = ad.Graph()
    x = g.leaf(name="x", trainable=True)
    y = ad.mean(x)
    with pytest.raises(GraphStateError):
        g.backward(y)


def test_forward_with_unbound_leaf():
    g = ad.Graph()
    ad.mean(g.leaf(name="x"))
    with pytest.raises(GraphStateError, match="unbound"):
        g.forward()


def test_shape_error_names_node():
    g = ad.Graph()
    a = g.constant(np.ones((2, 3)))
    b = g.constant(np.ones((2, 3)))
    with pytest.raises(ShapeError, match=r"node 2 \(matmul\)"):
        a @ b


def test_shape_error_at_forward_after_rebinding():
    g = ad.Graph()
    a = g.leaf(np.ones((2, 3)), name="a")
    b = g.constant(np.ones((3, 1)))
    out = ad.mean(a @ b)
    g.bind("a", np.ones((2, 2)))
    with pytest.raises(ShapeError, match="matmul"):
        g.forward(out)


def test_unreachable_trainable_leaf_gets_zero_gradient():
    g = ad.Graph()
    x = g.parameter("x", [[1.0, 2.0]])
    g.parameter("unused", [[5.0]])
    grads = g.backward(ad.sum_all(x))
    np.testing.assert_array_equal(grads["unused"], [[0.0]])


def test_shared_node_accumulates_gradient():
    g = ad.Graph()
    x = g.parameter("x", 2.0)
    y = x * x + x
    assert g.backward(y)["x"][0, 0] == 5.0


def test_backward_needs_scalar_output():
    g = ad.Graph()
    x = g.parameter("x", [[1.0, 2.0]])
    with pytest.raises(ShapeError):
        g.backward(ad.relu(x))


def test_mixing_graphs_rejected():
    a = ad.Graph().constant(1.0)
    b = ad.Graph().constant(1.0)
    with pytest.raises(ValueError):
        ad.add(a, b)


# Each case: (input shapes, builder, input transform keeping away from kinks/poles)
def _pos(x):
    return np.abs(x) + 0.5


def _away_from(lo):
    return lambda x: np.where(np.abs(x - lo) < 0.05, x + 0.2, x)


PRIMITIVES = {
    "matmul": ([(3, 4), (4, 2)], lambda a, b: ad.matmul(a, b), None),
    "add_broadcast": ([(3, 4), (1, 4)], lambda a, b: ad.add(a, b), None),
    "sub_broadcast": ([(3, 1), (1, 4)], lambda a, b: ad.sub(a, b), None),
    "mul_broadcast": ([(3, 4), (3, 1)], lambda a, b: ad.mul(a, b), None),
    "scale": ([(3, 4)], lambda a: ad.scale(a, -1.7), None),
    "add_scalar": ([(3, 4)], lambda a: ad.add_scalar(a, 0.3), None),
    "relu": ([(3, 4)], ad.relu, _away_from(0.0)),
    "hinge": ([(3, 4)], lambda a: ad.hinge(a, 0.3), _away_from(0.3)),
    "sigmoid": ([(3, 4)], ad.sigmoid, None),
    "exp": ([(3, 4)], ad.exp, None),
    "log": ([(3, 4)], ad.log, _pos),
    "square": ([(3, 4)], ad.square, None),
    "clip_min": ([(3, 4)], lambda a: ad.clip_min(a, 0.1), _away_from(0.1)),
    "row_softmax": ([(3, 4)], ad.row_softmax, None),
    "row_log_softmax": ([(3, 4)], ad.row_log_softmax, None),
    "row_max": ([(4, 5)], ad.row_max, None),
    "row_max_exclude": ([(4, 5)], lambda a: ad.row_max(a, exclude=[0, -1, 4, 2]), None),
    "select": ([(4, 3)], lambda a: ad.select(a, [0, 2, 2, 3], [1, 0, 0, 2]), None),
    "transpose": ([(3, 4)], ad.transpose, None),
    "normalize_rows": ([(3, 4)], ad.normalize_rows, None),
    "sum": ([(3, 4)], ad.sum_all, None),
    "mean": ([(3, 4)], ad.mean, None),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients_match_finite_differences(name):
    shapes, build, transform = PRIMITIVES[name]
    worst = 0.0
    for trial in range(100):
        rng = np.random.default_rng([trial, len(name)])
        params = {f"x{i}": rng.standard_normal(s) for i, s in enumerate(shapes)}
        if transform is not None:
            params = {k: transform(v) for k, v in params.items()}
        g0 = ad.Graph()
        probe = build(*[g0.constant(v) for v in params.values()])
        weights = rng.standard_normal(probe.shape)

        def f(p):
            g = ad.Graph()
            out = build(*[g.constant(p[k]) for k in sorted(p)])
            return ad.sum_all(ad.mul(out, g.constant(weights))).item()

        g = ad.Graph()
        nodes = [g.parameter(k, params[k]) for k in sorted(params)]
        grads = g.backward(ad.sum_all(ad.mul(build(*nodes), g.constant(weights))))
        for k in params:
            worst = max(worst, relative_error(grads[k], numeric_grad(f, params, k)))
    assert worst <= 1e-4, f"{name}: max relative error {worst:.2e}"


@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
              elements=st.floats(-50, 50)))
def test_row_softmax_is_a_distribution(x):
    out = ad.row_softmax(ad.Graph().constant(x)).value
    assert np.all(out >= 0)
    np.testing.assert_allclose(out.sum(axis=1), 1.0, rtol=0, atol=1e-12)


@pytest.mark.parametrize("n_cols", [1, 2, 3, 4])
def test_row_max_gradient_is_one_hot_lowest_tie(n_cols):
    # every row over a 3-level alphabet, exhaustively
    rows = np.array(list(itertools.product([0.0, 1.0, 2.0], repeat=n_cols)))
    g = ad.Graph()
    x = g.parameter("x", rows)
    grad = g.backward(ad.sum_all(ad.row_max(x)))["x"]
    for row, grow in zip(rows, grad):
        expected = np.zeros(n_cols)
        expected[np.flatnonzero(row == row.max())[0]] = 1.0
        np.testing.assert_array_equal(grow, expected)


def test_row_max_exclude_only_column_rejected():
    g = ad.Graph()
    with pytest.raises(ShapeError):
        ad.row_max(g.constant(np.ones((2, 1))), exclude=[0, -1])


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_forward_is_bit_deterministic(seed):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((5, 3))
    x = rng.standard_normal((4, 5))

    def run():
        g = ad.Graph()
        out = ad.row_softmax(ad.relu(g.constant(x) @ g.parameter("w", w)))
        return g.forward(ad.mean(ad.log(ad.clip_min(out, 1e-12))))

    assert run() == run()


def test_values_are_finite_float64_matrices():
    g = ad.Graph()
    x = g.constant([1.0, -2.0, 3.0])
    assert x.shape == (1, 3)
    for node in (ad.sigmoid(ad.scale(x, 800.0)), ad.row_softmax(ad.scale(x, 900.0)),
                 ad.row_log_softmax(ad.scale(x, 900.0))):
        assert node.value.dtype == np.float64
        assert np.all(np.isfinite(node.value))
