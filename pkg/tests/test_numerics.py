import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from pegcn import numerics as nx
from pegcn.numerics import NonFiniteError, ShapeError, Tensor


def rand(rng, *shape):
    return rng.standard_normal(shape)


def weighted(op, weight):
    """Scalar ``sum(op(p) * weight)`` so every output entry feeds the gradient."""
    return lambda p: nx.sum(nx.mul(op(p), weight))


def test_matmul_hand():
    out = nx.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
    np.testing.assert_array_equal(out.data, [[3.0], [7.0]])


def test_softmax_uniform():
    np.testing.assert_allclose(nx.softmax(Tensor(np.zeros(3))).data, [1 / 3] * 3, rtol=0, atol=1e-15)


def test_relu_definition():
    np.testing.assert_array_equal(nx.relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        nx.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_general_broadcast_rejected():
    with pytest.raises(ShapeError, match="add"):
        nx.add(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 1))))


def test_leading_batch_broadcast_allowed():
    out = nx.add(Tensor(np.ones((4, 2, 3))), Tensor(np.arange(6.0).reshape(2, 3)))
    assert out.shape == (4, 2, 3)


def test_value_and_grad_square():
    val, g = nx.value_and_grad(lambda p: nx.mul(p["w"], p["w"]), {"w": np.array(3.0)})
    assert val == 9.0
    assert g["w"] == 6.0


def test_unused_param_gets_zero_grad():
    _, g = nx.value_and_grad(lambda p: nx.sum(p["a"]), {"a": np.ones(3), "b": np.ones((2, 2))})
    np.testing.assert_array_equal(g["b"], np.zeros((2, 2)))


def test_non_scalar_loss_rejected():
    with pytest.raises(ShapeError):
        nx.value_and_grad(lambda p: p["a"], {"a": np.ones(3)})


def test_non_finite_names_primitive():
    with pytest.raises(NonFiniteError, match="exp"), np.errstate(over="ignore"):
        nx.value_and_grad(lambda p: nx.sum(nx.exp(p["a"])), {"a": np.array([1000.0])})


def test_softmax_ce_gradient_identity():
    rng = np.random.default_rng(0)
    logits = rng.standard_normal(5)
    onehot = np.eye(5)[2]

    def loss(p):
        return nx.scale(nx.sum(nx.mul(nx.log_softmax(p["z"]), onehot)), -1.0)

    _, g = nx.value_and_grad(loss, {"z": logits})
    sm = np.exp(logits - logits.max())
    sm /= sm.sum()
    np.testing.assert_allclose(g["z"], sm - onehot, atol=1e-14)


def test_two_layer_map_17_params():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((5, 2))
    params = {"W1": rng.standard_normal((2, 3)), "b1": rng.standard_normal(3),
              "W2": rng.standard_normal((3, 2)), "b2": rng.standard_normal(2)}
    assert sum(v.size for v in params.values()) == 17

    def f(p):
        h = nx.tanh(nx.add(nx.matmul(Tensor(x), p["W1"]), p["b1"]))
        return nx.mean(nx.add(nx.matmul(h, p["W2"]), p["b2"]))

    assert nx.finite_diff_check(f, params, 1e-5) < 1e-4


def test_fd_check_square_and_constant():
    assert nx.finite_diff_check(lambda p: nx.mul(p["w"], p["w"]), {"w": np.array([1.7])}) < 1e-8
    assert nx.finite_diff_check(lambda p: nx.scale(nx.sum(p["w"]), 0.0), {"w": np.ones(3)}) == 0.0


def test_fd_check_rejects_bad_eps():
    with pytest.raises(ValueError):
        nx.finite_diff_check(lambda p: nx.sum(p["w"]), {"w": np.ones(1)}, eps=0.0)


PRIMITIVES = {
    "add": (lambda p: nx.add(p["a"], p["b"]), {"a": (3, 4), "b": (4,)}),
    "sub": (lambda p: nx.sub(p["a"], p["b"]), {"a": (3, 4), "b": (3, 4)}),
    "mul": (lambda p: nx.mul(p["a"], p["b"]), {"a": (2, 3, 4), "b": (3, 4)}),
    "scale": (lambda p: nx.scale(p["a"], -2.5), {"a": (3, 2)}),
    "matmul": (lambda p: nx.matmul(p["a"], p["b"]), {"a": (2, 3, 4), "b": (4, 5)}),
    "batched_matmul": (lambda p: nx.matmul(p["a"], p["b"]), {"a": (2, 3, 4), "b": (2, 4, 2)}),
    "relu": (lambda p: nx.relu(p["a"]), {"a": (4, 5)}),
    "tanh": (lambda p: nx.tanh(p["a"]), {"a": (4, 5)}),
    "sigmoid": (lambda p: nx.sigmoid(p["a"]), {"a": (4, 5)}),
    "softmax0": (lambda p: nx.softmax(p["a"], axis=0), {"a": (4, 5)}),
    "softmax1": (lambda p: nx.softmax(p["a"], axis=-1), {"a": (4, 5)}),
    "log_softmax": (lambda p: nx.log_softmax(p["a"], axis=1), {"a": (3, 5)}),
    "exp": (lambda p: nx.exp(p["a"]), {"a": (3, 3)}),
    "log": (lambda p: nx.log(nx.exp(p["a"]), floor=1e-12), {"a": (3, 3)}),
    "sum": (lambda p: nx.sum(p["a"], axis=(0, 2)), {"a": (2, 3, 4)}),
    "mean": (lambda p: nx.mean(p["a"], axis=1, keepdims=True), {"a": (2, 3, 4)}),
    "reshape": (lambda p: nx.reshape(p["a"], (6, 4)), {"a": (2, 3, 4)}),
    "transpose": (lambda p: nx.transpose(p["a"], (2, 0, 1)), {"a": (2, 3, 4)}),
    "slice": (lambda p: nx.getitem(p["a"], (slice(None), slice(None, None, 2))), {"a": (2, 5, 3)}),
    "gather": (lambda p: nx.getitem(p["a"], ([0, 2, 2],)), {"a": (4, 3)}),
    "concat": (lambda p: nx.concat([p["a"], p["b"]], axis=1), {"a": (2, 3), "b": (2, 4)}),
    "unfold": (lambda p: nx.unfold_time(p["a"], 3, 2, 1), {"a": (2, 7, 3, 2)}),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients(name):
    op, shapes = PRIMITIVES[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    params = {k: rand(rng, *s) for k, s in shapes.items()}
    if name == "relu":  # keep entries off the kink
        params["a"] = np.where(np.abs(params["a"]) < 0.1, 0.5, params["a"])
    out_shape = op({k: Tensor(v) for k, v in params.items()}).shape
    w = rand(rng, *out_shape)
    assert nx.finite_diff_check(weighted(op, w), params, 1e-5) < 1e-6


@pytest.mark.parametrize("training", [True, False])
def test_batch_norm_gradient(training):
    rng = np.random.default_rng(7)
    x = rng.standard_normal((3, 4, 2, 5))
    w_items = np.array([1.0, 0.0, 1.0])
    params = {"x": x, "g": rng.standard_normal(5), "b": rng.standard_normal(5)}
    rm, rv = rng.standard_normal(5), rng.uniform(0.5, 2.0, 5)
    out_w = rng.standard_normal(x.shape)

    def f(p):
        y, _ = nx.batch_norm(p["x"], p["g"], p["b"], rm, rv, training, 1e-5, w_items)
        return nx.sum(nx.mul(y, out_w))

    assert nx.finite_diff_check(f, params, 1e-5) < 1e-6


def test_batch_norm_inference_identity():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((4, 3, 6))
    g, b = rng.standard_normal(6), rng.standard_normal(6)
    y, stats = nx.batch_norm(Tensor(x), Tensor(g), Tensor(b), np.zeros(6), np.ones(6), False, 0.0)
    assert stats is None
    np.testing.assert_allclose(y.data, x * g + b, rtol=0, atol=1e-15)


def test_batch_norm_weights_exclude_items():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((3, 5, 2))
    ref, _ = nx.batch_norm(Tensor(x[[0, 2]]), Tensor(np.ones(2)), Tensor(np.zeros(2)),
                           None, None, True)
    got, (mu, var, count) = nx.batch_norm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)),
                                          None, None, True, weights=np.array([1.0, 0.0, 1.0]))
    np.testing.assert_allclose(got.data[[0, 2]], ref.data, atol=1e-12)
    assert count == 10


def test_unfold_matches_loop_convolution():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((2, 10, 3, 4))
    W = rng.standard_normal((5 * 4, 6))
    out = nx.matmul(nx.unfold_time(Tensor(x), 5, 2, 2), Tensor(W)).data
    xp = np.pad(x, ((0, 0), (2, 2), (0, 0), (0, 0)))
    Wk = W.reshape(5, 4, 6)
    ref = np.zeros((2, 5, 3, 6))
    for t in range(5):
        for k in range(5):
            ref[:, t] += xp[:, 2 * t + k] @ Wk[k]
    np.testing.assert_allclose(out, ref, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=6),
                  elements=st.floats(-50, 50)),
       st.integers(0, 2))
def test_softmax_rows_are_distributions(x, axis):
    axis = axis % x.ndim
    y = nx.softmax(Tensor(x), axis=axis).data
    np.testing.assert_allclose(y.sum(axis=axis), 1.0, rtol=0, atol=1e-12)
    assert np.all(y > 0) and np.all(y < 1 + 1e-15)


def test_value_and_grad_deterministic():
    rng = np.random.default_rng(9)
    params = {"W": rng.standard_normal((8, 8)), "x": rng.standard_normal((4, 8))}

    def f(p):
        return nx.mean(nx.tanh(nx.matmul(p["x"], p["W"])))

    v1, g1 = nx.value_and_grad(f, params)
    v2, g2 = nx.value_and_grad(f, params)
    assert v1 == v2
    for k in g1:
        assert g1[k].tobytes() == g2[k].tobytes()
