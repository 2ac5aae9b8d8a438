import math

import numpy as np
import pytest

from reftts import tensor as T
from reftts.errors import ConfigurationError, ContractError, ShapeMismatchError
from reftts.tensor import (
    AdamState,
    Graph,
    Tensor,
    adam_step,
    backward,
    clip_grad_norm,
    grad_check,
)


def rand(rng, *shape):
    return rng.standard_normal(shape)


# ---------------------------------------------------------------------------
# matmul


def test_matmul_identity():
    eye = Tensor(np.eye(2))
    out = T.matmul(eye, Tensor(np.eye(2)))
    assert np.array_equal(out.data, np.eye(2))


def test_matmul_hand_case():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = Tensor([[1.0], [1.0]])
    assert np.array_equal(T.matmul(a, b).data, [[3.0], [7.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeMismatchError) as exc:
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))
    assert "(2, 3)" in str(exc.value) and "(4, 2)" in str(exc.value)


def test_matmul_grad_of_sum_is_ones_times_bt():
    rng = np.random.default_rng(7)
    a = Tensor(rand(rng, 3, 4), requires_grad=True)
    b_data = rand(rng, 4, 2)
    g = Graph()
    with g:
        loss = T.sum_all(T.matmul(a, Tensor(b_data)))
    backward(g, loss)
    expected = np.ones((3, 2)) @ b_data.T
    assert np.allclose(a.grad, expected, atol=1e-12)

    params = {"a": a, "b": Tensor(b_data, requires_grad=True)}
    err = grad_check(lambda p: T.sum_all(T.matmul(p["a"], p["b"])), params)
    assert err < 1e-6


def test_matmul_associativity():
    rng = np.random.default_rng(3)
    a, b, c = rand(rng, 5, 5), rand(rng, 5, 5), rand(rng, 5, 5)
    lhs = (a @ b) @ c
    rhs = a @ (b @ c)
    assert np.abs(lhs - rhs).max() < 1e-9


# ---------------------------------------------------------------------------
# elementwise


def test_add_sub_values():
    assert np.array_equal((Tensor([1.0, 2.0]) + Tensor([3.0, 4.0])).data, [4.0, 6.0])
    assert np.array_equal((Tensor([1.0, 2.0]) - Tensor([3.0, 1.0])).data, [-2.0, 1.0])


def test_relu_values():
    out = T.relu(Tensor([-1.0, 0.0, 2.0]))
    assert np.array_equal(out.data, [0.0, 0.0, 2.0])


def test_broadcast_singleton_axis():
    a = Tensor(np.ones((3, 4)))
    row = Tensor(np.arange(4.0).reshape(1, 4))
    out = a + row
    assert out.shape == (3, 4)
    assert np.array_equal(out.data[2], 1.0 + np.arange(4.0))


def test_broadcast_rank_mismatch_rejected():
    with pytest.raises(ShapeMismatchError):
        T.add(Tensor(np.ones((3, 4))), Tensor(np.ones(4)))
    with pytest.raises(ShapeMismatchError):
        T.mul(Tensor(np.ones((3, 4))), Tensor(np.ones((2, 4))))


def test_mul_gradient_check():
    rng = np.random.default_rng(11)
    params = {
        "a": Tensor(rand(rng, 3, 4), requires_grad=True),
        "b": Tensor(rand(rng, 3, 4), requires_grad=True),
    }
    err = grad_check(lambda p: T.sum_all(T.mul(p["a"], p["b"])), params)
    assert err < 1e-6


def test_broadcast_gradient_reduces_over_stretched_axis():
    rng = np.random.default_rng(13)
    params = {
        "x": Tensor(rand(rng, 4, 3), requires_grad=True),
        "row": Tensor(rand(rng, 1, 3), requires_grad=True),
    }
    err = grad_check(lambda p: T.sum_all(T.mul(p["x"], p["row"])), params)
    assert err < 1e-6


# ---------------------------------------------------------------------------
# softmax


def test_softmax_symmetry_and_stability():
    assert np.allclose(T.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])
    big = T.softmax(Tensor([1000.0, 1000.0])).data
    assert np.all(np.isfinite(big)) and np.allclose(big, [0.5, 0.5])


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(5)
    for _ in range(20):
        out = T.softmax(Tensor(rand(rng, 4, 6) * 10)).data
        assert np.abs(out.sum(axis=-1) - 1.0).max() <= 1e-12
        assert np.all(out > 0) and np.all(out < 1)


def test_softmax_jacobian_vs_finite_differences():
    rng = np.random.default_rng(17)
    x0 = rand(rng, 5)
    for i in range(5):
        pick = np.zeros(5)
        pick[i] = 1.0
        params = {"x": Tensor(x0.copy(), requires_grad=True)}
        err = grad_check(
            lambda p: T.sum_all(T.mul(T.softmax(p["x"]), Tensor(pick))), params
        )
        assert err < 1e-6


# ---------------------------------------------------------------------------
# layer_norm


def test_layer_norm_constant_row_is_zero():
    x = Tensor(np.full((2, 6), 3.7))
    out = T.layer_norm(x, Tensor(np.ones(6)), Tensor(np.zeros(6)))
    assert np.abs(out.data).max() < 1e-9


def test_layer_norm_output_mean_matches_bias():
    rng = np.random.default_rng(23)
    x = Tensor(rand(rng, 4, 8))
    out = T.layer_norm(x, Tensor(np.ones(8)), Tensor(np.zeros(8)))
    assert np.abs(out.data.mean(axis=-1)).max() < 1e-9


def test_layer_norm_gradient_check():
    rng = np.random.default_rng(29)
    params = {
        "x": Tensor(rand(rng, 2, 6), requires_grad=True),
        "g": Tensor(rand(rng, 6), requires_grad=True),
        "b": Tensor(rand(rng, 6), requires_grad=True),
    }
    err = grad_check(
        lambda p: T.sum_all(T.mul(T.layer_norm(p["x"], p["g"], p["b"]), Tensor(rand(np.random.default_rng(1), 2, 6)))),
        params,
    )
    assert err < 1e-5


# ---------------------------------------------------------------------------
# conv1d


def test_conv1d_delta_kernel_is_identity():
    rng = np.random.default_rng(31)
    x = rand(rng, 9, 1)
    k = np.array([0.0, 1.0, 0.0]).reshape(3, 1, 1)
    out = T.conv1d(Tensor(x), Tensor(k))
    assert np.allclose(out.data, x)


def test_conv1d_box_kernel_hand_case():
    x = np.ones((3, 1))
    k = np.ones((3, 1, 1))
    out = T.conv1d(Tensor(x), Tensor(k))
    assert np.allclose(out.data.ravel(), [2.0, 3.0, 2.0])


def test_conv1d_even_kernel_rejected():
    with pytest.raises(ConfigurationError):
        T.conv1d(Tensor(np.ones((4, 1))), Tensor(np.ones((2, 1, 1))))


def test_conv1d_gradient_check():
    rng = np.random.default_rng(37)
    probe = rand(rng, 7, 2)
    params = {
        "x": Tensor(rand(rng, 7, 3), requires_grad=True),
        "k": Tensor(rand(rng, 3, 3, 2), requires_grad=True),
    }
    err = grad_check(
        lambda p: T.sum_all(T.mul(T.conv1d(p["x"], p["k"]), Tensor(probe))), params
    )
    assert err < 1e-5


# ---------------------------------------------------------------------------
# mse


def test_mse_zero_and_hand_value():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    assert T.mse(x, Tensor(x.data.copy())).item() == 0.0
    assert T.mse(Tensor([0.0, 0.0]), Tensor([2.0, 0.0])).item() == 2.0


def test_mse_gradient_matches_closed_form_and_fd():
    rng = np.random.default_rng(41)
    a = Tensor(rand(rng, 3, 4), requires_grad=True)
    b_data = rand(rng, 3, 4)
    g = Graph()
    with g:
        loss = T.mse(a, Tensor(b_data))
    backward(g, loss)
    assert np.allclose(a.grad, 2.0 * (a.data - b_data) / 12.0, atol=1e-12)
    err = grad_check(lambda p: T.mse(p["a"], Tensor(b_data)), {"a": a})
    assert err < 1e-6


def test_mse_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        T.mse(Tensor(np.zeros((2, 2))), Tensor(np.zeros((2, 3))))


# ---------------------------------------------------------------------------
# structural ops


def test_gather_rows_and_scatter_gradient():
    rng = np.random.default_rng(43)
    table = Tensor(rand(rng, 5, 3), requires_grad=True)
    idx = np.array([1, 1, 4, 0])
    g = Graph()
    with g:
        out = T.gather_rows(table, idx)
        loss = T.sum_all(out)
    assert np.array_equal(out.data, table.data[idx])
    backward(g, loss)
    expected = np.zeros((5, 3))
    np.add.at(expected, idx, np.ones((4, 3)))
    assert np.array_equal(table.grad, expected)


def test_slice_concat_transpose_reshape_gradcheck():
    rng = np.random.default_rng(47)
    probe = rand(rng, 4, 6)
    params = {"x": Tensor(rand(rng, 4, 6), requires_grad=True)}

    def f(p):
        left = T.slice_cols(p["x"], 0, 2)
        right = T.slice_cols(p["x"], 2, 6)
        back = T.concat_cols([left, right])
        twisted = T.transpose(T.reshape(back, (6, 4)))
        return T.sum_all(T.mul(T.reshape(twisted, (4, 6)), Tensor(probe)))

    assert grad_check(f, params) < 1e-6


# ---------------------------------------------------------------------------
# backward


def test_backward_sum_gives_ones():
    x = Tensor(np.arange(12.0).reshape(3, 4), requires_grad=True)
    g = Graph()
    with g:
        loss = T.sum_all(x)
    backward(g, loss)
    assert np.array_equal(x.grad, np.ones((3, 4)))


def test_backward_linear_model_closed_form():
    rng = np.random.default_rng(53)
    w = Tensor(rand(rng, 4, 4), requires_grad=True)
    x = rand(rng, 4, 2)
    y = rand(rng, 4, 2)
    g = Graph()
    with g:
        loss = T.mse(T.matmul(w, Tensor(x)), Tensor(y))
    backward(g, loss)
    residual = w.data @ x - y
    expected = (2.0 / residual.size) * residual @ x.T
    assert np.allclose(w.grad, expected, atol=1e-12)


def test_backward_rejects_nonscalar_loss():
    x = Tensor(np.ones(3), requires_grad=True)
    g = Graph()
    with g:
        out = T.relu(x)
    with pytest.raises(ContractError):
        backward(g, out)


def test_backward_twice_is_bit_identical():
    rng = np.random.default_rng(59)
    x = Tensor(rand(rng, 3, 3), requires_grad=True)
    w = Tensor(rand(rng, 3, 3), requires_grad=True)
    g = Graph()
    with g:
        loss = T.mse(T.matmul(x, w), Tensor(rand(rng, 3, 3)))
    backward(g, loss)
    first = {"x": x.grad.copy(), "w": w.grad.copy()}
    backward(g, loss)
    assert np.array_equal(first["x"], x.grad)
    assert np.array_equal(first["w"], w.grad)


def test_no_graph_means_no_tracking():
    x = Tensor(np.ones(3), requires_grad=True)
    out = T.relu(x)  # outside any Graph context
    assert out.requires_grad is False


# ---------------------------------------------------------------------------
# clip_grad_norm


def test_clip_below_threshold_unchanged():
    grads = {"a": np.array([0.3, 0.4])}
    norm = clip_grad_norm(grads, 1.0)
    assert norm == 0.5
    assert np.array_equal(grads["a"], [0.3, 0.4])


def test_clip_hand_case():
    grads = {"a": np.array([3.0, 4.0])}
    norm = clip_grad_norm(grads, 1.0)
    assert abs(norm - 1.0) < 1e-12
    assert np.allclose(grads["a"], [0.6, 0.8], atol=1e-12)


def test_clip_norm_equals_min_of_pre_and_threshold():
    rng = np.random.default_rng(61)
    for _ in range(20):
        grads = {
            "a": rand(rng, 3, 4),
            "b": rand(rng, 7),
        }
        pre = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        post = clip_grad_norm(grads, 1.0)
        assert abs(post - min(pre, 1.0)) < 1e-12


def test_clip_idempotent():
    rng = np.random.default_rng(67)
    grads = {"a": rand(rng, 10) * 5}
    clip_grad_norm(grads, 1.0)
    once = grads["a"].copy()
    clip_grad_norm(grads, 1.0)
    assert np.allclose(grads["a"], once, atol=1e-15)


# ---------------------------------------------------------------------------
# adam


def test_adam_zero_gradient_keeps_params():
    p = {"w": Tensor(np.array([1.0, -2.0]), requires_grad=True)}
    state = AdamState.for_params(p, learning_rate=0.1)
    adam_step(p, {"w": np.zeros(2)}, state)
    assert np.array_equal(p["w"].data, [1.0, -2.0])
    assert state.step_count == 1


def test_adam_first_step_moves_by_learning_rate():
    # hand-computed: m_hat = v_hat = 1 after one unit-gradient step
    p = {"w": Tensor(np.array([0.0]), requires_grad=True)}
    state = AdamState.for_params(p, learning_rate=0.1)
    adam_step(p, {"w": np.array([1.0])}, state)
    assert abs(p["w"].data[0] - (-0.1)) < 1e-9


def test_adam_converges_on_quadratic():
    p = {"w": Tensor(np.array([0.0]), requires_grad=True)}
    state = AdamState.for_params(p, learning_rate=0.1)
    for _ in range(200):
        grad = 2.0 * (p["w"].data - 3.0)
        adam_step(p, {"w": grad}, state)
    assert abs(p["w"].data[0] - 3.0) < 0.1


# ---------------------------------------------------------------------------
# grad_check oracle


def test_grad_check_exact_on_quadratic():
    x = Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True)
    err = grad_check(lambda p: T.sum_all(T.mul(p["x"], p["x"])), {"x": x})
    assert err < 1e-8


def test_grad_check_eps_contract():
    x = Tensor(np.ones(2), requires_grad=True)
    with pytest.raises(ConfigurationError):
        grad_check(lambda p: T.sum_all(p["x"]), {"x": x}, eps=1e-2)


def test_relu_kink_avoided_by_jitter():
    # exact-zero coordinates sit on the relu kink where central differences
    # disagree with the subgradient; jitter moves measure-zero points off it
    rng = np.random.default_rng(71)
    x = np.zeros(5)
    x += (rng.random(5) + 0.5) * 1e-2 * np.where(rng.random(5) < 0.5, -1.0, 1.0)
    params = {"x": Tensor(x, requires_grad=True)}
    err = grad_check(lambda p: T.sum_all(T.relu(p["x"])), params, eps=1e-5)
    assert err < 1e-6


def test_every_op_grad_check_ten_seeds():
    for seed in range(10):
        rng = np.random.default_rng(1000 + seed)
        probe34 = rand(rng, 3, 4)
        probe53 = rand(rng, 5, 3)
        cases = {
            "matmul": (
                {"a": Tensor(rand(rng, 3, 4), requires_grad=True),
                 "b": Tensor(rand(rng, 4, 2), requires_grad=True)},
                lambda p: T.sum_all(T.matmul(p["a"], p["b"])),
            ),
            "add": (
                {"a": Tensor(rand(rng, 3, 4), requires_grad=True),
                 "b": Tensor(rand(rng, 3, 4), requires_grad=True)},
                lambda p: T.sum_all(T.mul(T.add(p["a"], p["b"]), Tensor(probe34))),
            ),
            "sub": (
                {"a": Tensor(rand(rng, 3, 4), requires_grad=True),
                 "b": Tensor(rand(rng, 3, 4), requires_grad=True)},
                lambda p: T.sum_all(T.mul(T.sub(p["a"], p["b"]), Tensor(probe34))),
            ),
            "mul": (
                {"a": Tensor(rand(rng, 3, 4), requires_grad=True),
                 "b": Tensor(rand(rng, 3, 4), requires_grad=True)},
                lambda p: T.sum_all(T.mul(T.mul(p["a"], p["b"]), Tensor(probe34))),
            ),
            "relu": (
                {"a": Tensor(rand(rng, 3, 4) + 0.05, requires_grad=True)},
                lambda p: T.sum_all(T.mul(T.relu(p["a"]), Tensor(probe34))),
            ),
            "exp": (
                {"a": Tensor(rand(rng, 3, 4), requires_grad=True)},
                lambda p: T.sum_all(T.mul(T.exp(p["a"]), Tensor(probe34))),
            ),
            "softmax": (
                {"a": Tensor(rand(rng, 3, 4), requires_grad=True)},
                lambda p: T.sum_all(T.mul(T.softmax(p["a"]), Tensor(probe34))),
            ),
            "layer_norm": (
                {"x": Tensor(rand(rng, 3, 4), requires_grad=True),
                 "g": Tensor(rand(rng, 4), requires_grad=True),
                 "b": Tensor(rand(rng, 4), requires_grad=True)},
                lambda p: T.sum_all(
                    T.mul(T.layer_norm(p["x"], p["g"], p["b"]), Tensor(probe34))
                ),
            ),
            "conv1d": (
                {"x": Tensor(rand(rng, 5, 2), requires_grad=True),
                 "k": Tensor(rand(rng, 3, 2, 3), requires_grad=True)},
                lambda p: T.sum_all(
                    T.mul(T.conv1d(p["x"], p["k"]), Tensor(probe53))
                ),
            ),
            "mse": (
                {"a": Tensor(rand(rng, 3, 4), requires_grad=True),
                 "b": Tensor(rand(rng, 3, 4), requires_grad=True)},
                lambda p: T.mse(p["a"], p["b"]),
            ),
        }
        for name, (params, f) in cases.items():
            err = grad_check(f, params)
            assert err < 1e-5, f"{name} failed at seed {seed}: {err}"


# ---------------------------------------------------------------------------
# Tensor invariants


def test_tensor_shape_matches_data_length():
    t = Tensor(np.zeros((3, 5)))
    assert int(np.prod(t.shape)) == t.size


def test_scalar_loss_shape():
    loss = T.mse(Tensor([1.0]), Tensor([2.0]))
    assert loss.data.shape == ()
    assert loss.item() == 1.0
