import numpy as np
import pytest

import resilient_tgcn.autodiff as ad
from resilient_tgcn.autodiff import (
    AdamState,
    ShapeError,
    Value,
    adam_step,
    backward,
    finite_difference_check,
    load_checkpoint,
    save_checkpoint,
)


def scalar(x):
    return float(x.data[0, 0])


def test_matmul_identity():
    x = ad.constant(np.arange(9.0).reshape(3, 3))
    out = ad.matmul(ad.constant(np.eye(3)), x)
    assert np.array_equal(out.data, x.data)


def test_hadamard_zeros_and_grad():
    x = ad.parameter(np.ones((2, 3)))
    out = ad.hadamard(x, ad.constant(np.zeros((2, 3))))
    assert np.array_equal(out.data, np.zeros((2, 3)))
    backward(ad.sum_all(out))
    assert np.array_equal(x.grad, np.zeros((2, 3)))


def test_matmul_grad_all_twos():
    # d/dA sum(A @ ones(2,2)) = all-2 matrix
    a = ad.parameter([[1.0, 2.0], [3.0, 4.0]])
    loss = ad.sum_all(ad.matmul(a, ad.constant(np.ones((2, 2)))))
    backward(loss)
    assert np.allclose(a.grad, 2.0 * np.ones((2, 2)))
    report = finite_difference_check(
        lambda: ad.sum_all(ad.matmul(a, ad.constant(np.ones((2, 2))))), [a]
    )
    assert report.passed


def test_sigmoid_at_zero():
    assert scalar(ad.sigmoid(ad.constant([[0.0]]))) == 0.5


def test_softmax_uniform_rows():
    out = ad.softmax_rows(ad.constant([[0.0, 0.0, 0.0]]))
    assert np.allclose(out.data, np.full((1, 3), 1.0 / 3.0), atol=1e-15)


def test_softmax_rows_sum_to_one_positive():
    rng = np.random.default_rng(0)
    out = ad.softmax_rows(ad.constant(rng.standard_normal((5, 7)) * 10))
    assert np.all(out.data > 0)
    assert np.allclose(out.data.sum(axis=1), 1.0, atol=1e-12)


def test_tanh_gradient_value():
    x = ad.parameter([[0.7]])
    backward(ad.sum_all(ad.tanh_act(x)))
    expected = 1.0 - np.tanh(0.7) ** 2
    assert abs(x.grad[0, 0] - expected) < 1e-12
    report = finite_difference_check(lambda: ad.sum_all(ad.tanh_act(x)), [x])
    assert report.max_rel_err < 1e-5


def test_backward_sum_gives_ones():
    x = ad.parameter(np.zeros((3, 2)))
    backward(ad.sum_all(x))
    assert np.array_equal(x.grad, np.ones((3, 2)))


def test_backward_fanout_accumulates():
    y = ad.parameter(np.ones((2, 2)))
    backward(ad.sum_all(ad.add(y, y)))
    assert np.array_equal(y.grad, 2.0 * np.ones((2, 2)))


def test_backward_requires_scalar():
    x = ad.parameter(np.ones((2, 2)))
    with pytest.raises(ShapeError):
        backward(ad.add(x, x))


def test_backward_deterministic_bitwise():
    rng = np.random.default_rng(1)
    params = [ad.parameter(rng.standard_normal((4, 4))) for _ in range(3)]

    def loss():
        out = params[0]
        for p in params[1:]:
            out = ad.sigmoid(ad.matmul(out, p))
        return ad.sum_all(out)

    backward(loss())
    first = [p.grad.copy() for p in params]
    backward(loss())
    for a, p in zip(first, params):
        assert np.array_equal(a, p.grad)


def test_untracked_leaves_keep_none_grad():
    x = ad.parameter(np.ones((2, 2)))
    c = ad.constant(np.ones((2, 2)))
    backward(ad.sum_all(ad.hadamard(x, c)))
    assert c.grad is None


def test_shape_errors_report_both_shapes():
    a = ad.constant(np.ones((2, 3)))
    b = ad.constant(np.ones((2, 2)))
    with pytest.raises(ShapeError, match=r"2, 3"):
        ad.add(a, b)
    with pytest.raises(ShapeError, match=r"matmul"):
        ad.matmul(a, ad.constant(np.ones((2, 2))))


def _random_op_cases(rng):
    """(name, builder, params) triples exercising every differentiable op."""
    r, c = int(rng.integers(1, 5)), int(rng.integers(1, 5))
    a = ad.parameter(rng.standard_normal((r, c)))
    b = ad.parameter(rng.standard_normal((r, c)))
    m = ad.parameter(rng.standard_normal((c, r)))
    bias = ad.parameter(rng.standard_normal((1, c)))
    wide = ad.parameter(rng.standard_normal((r, c * 2)))
    tall = ad.parameter(rng.standard_normal((r * c, 1)))
    return [
        ("matmul", lambda: ad.sum_all(ad.matmul(a, m)), [a, m]),
        ("add", lambda: ad.sum_all(ad.add(a, b)), [a, b]),
        ("sub", lambda: ad.sum_all(ad.sub(a, b)), [a, b]),
        ("add_bias", lambda: ad.sum_all(ad.add_bias(a, bias)), [a, bias]),
        ("hadamard", lambda: ad.sum_all(ad.hadamard(a, b)), [a, b]),
        ("concat_cols", lambda: ad.sum_all(ad.tanh_act(ad.concat_cols(a, b))), [a, b]),
        ("scale", lambda: ad.sum_all(ad.scale(a, -1.7)), [a]),
        ("transpose", lambda: ad.sum_all(ad.sigmoid(ad.transpose(a))), [a]),
        ("stack_cols", lambda: ad.sum_all(ad.sigmoid(ad.stack_cols(a))), [a]),
        ("unstack_cols", lambda: ad.sum_all(ad.tanh_act(ad.unstack_cols(tall, r))), [tall]),
        ("mean_all", lambda: ad.mean_all(ad.hadamard(a, a)), [a]),
        ("sigmoid", lambda: ad.sum_all(ad.sigmoid(a)), [a]),
        ("tanh", lambda: ad.sum_all(ad.tanh_act(a)), [a]),
        ("relu", lambda: ad.sum_all(ad.relu(a)), [a]),
        ("leaky_relu", lambda: ad.sum_all(ad.leaky_relu(a, 0.2)), [a]),
        ("elu", lambda: ad.sum_all(ad.elu(a)), [a]),
        ("softmax", lambda: ad.sum_all(ad.hadamard(ad.softmax_rows(wide), wide)), [wide]),
    ]


def test_every_op_passes_gradient_check_20_shapes():
    for trial in range(20):
        rng = np.random.default_rng(100 + trial)
        for name, f, params in _random_op_cases(rng):
            report = finite_difference_check(f, params, seed=trial)
            assert report.passed, f"{name} trial {trial}: {report}"


def test_adam_zero_gradient_leaves_param_unchanged():
    p = ad.parameter(np.full((2, 2), 3.0))
    state = AdamState.for_params([p], learning_rate=0.1)
    p.grad = np.zeros((2, 2))
    adam_step([p], state)
    assert np.array_equal(p.data, np.full((2, 2), 3.0))
    assert state.step_count == 1
    assert p.grad is None


def test_adam_first_step_is_signed_learning_rate():
    # constant gradient g: m_hat = g, v_hat = g^2, update = lr*g/(|g|+eps)
    p = ad.parameter(np.zeros((1, 3)))
    g = np.array([[0.5, -2.0, 7.0]])
    state = AdamState.for_params([p], learning_rate=1e-3)
    p.grad = g.copy()
    adam_step([p], state)
    expected = -1e-3 * g / (np.abs(g) + state.epsilon)
    assert np.allclose(p.data, expected, atol=1e-12)


def test_adam_converges_on_quadratic_bowl():
    rng = np.random.default_rng(2)
    w = ad.parameter(rng.standard_normal((4, 4)))
    state = AdamState.for_params([w], learning_rate=0.05)
    for _ in range(200):
        backward(ad.sum_all(ad.hadamard(w, w)))
        adam_step([w], state)
    assert np.sqrt((w.data ** 2).sum()) < 1e-2


def test_adam_shape_mismatch():
    p = ad.parameter(np.zeros((2, 2)))
    state = AdamState.for_params([ad.parameter(np.zeros((3, 3)))])
    with pytest.raises(ShapeError):
        adam_step([p], state)


def test_fd_check_linear_is_machine_precision():
    x = ad.parameter(np.arange(6.0).reshape(2, 3))
    report = finite_difference_check(lambda: ad.sum_all(ad.scale(x, 3.0)), [x])
    assert report.max_rel_err < 1e-9


def test_fd_check_sigmoid_chain():
    rng = np.random.default_rng(3)
    w1 = ad.parameter(rng.standard_normal((3, 4)))
    w2 = ad.parameter(rng.standard_normal((4, 2)))
    x = ad.constant(rng.standard_normal((5, 3)))

    def f():
        return ad.mean_all(ad.sigmoid(ad.matmul(ad.sigmoid(ad.matmul(x, w1)), w2)))

    report = finite_difference_check(f, [w1, w2], h=1e-5)
    assert report.max_rel_err < 1e-5


def test_fd_check_rejects_bad_h():
    x = ad.parameter(np.ones((1, 1)))
    with pytest.raises(ValueError):
        finite_difference_check(lambda: ad.sum_all(x), [x], h=0.0)


def test_no_grad_builds_no_tape():
    x = ad.parameter(np.ones((2, 2)))
    with ad.no_grad():
        out = ad.sigmoid(x)
    assert not out.requires_grad
    assert out._parents == ()


def test_checkpoint_roundtrip_exact(tmp_path):
    rng = np.random.default_rng(4)
    params = {"W0": ad.parameter(rng.standard_normal((3, 5))),
              "b": ad.parameter(rng.standard_normal((1, 5)))}
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, params, meta={"seed": 11, "step_count": 42})
    loaded, meta = load_checkpoint(path)
    assert meta == {"seed": "11", "step_count": "42"}
    for name, p in params.items():
        assert np.array_equal(loaded[name], p.data)


def test_value_requires_2d():
    with pytest.raises(ShapeError):
        Value(np.ones(3))
