import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cookie.errors import DimensionError, InputError, NumericError
from cookie.numerics import (
    Activation,
    AdamState,
    MlpParams,
    MlpSpec,
    adam_step,
    grad_check,
    init_mlp,
    l2_normalize_rows,
    l2_normalize_rows_backward,
    logsumexp_rows,
    mlp_backward,
    mlp_forward,
    softmax_rows,
)


def _linear(w, b):
    spec = MlpSpec((w.shape[1], w.shape[0]))
    return spec, MlpParams([np.asarray(w, float)], [np.asarray(b, float)])


def test_identity_layer():
    spec, p = _linear(np.eye(2), np.zeros(2))
    np.testing.assert_array_equal(mlp_forward(spec, p, [[3.0, -1.0]]), [[3.0, -1.0]])


def test_hand_matrix_multiply():
    spec, p = _linear(np.array([[1, 2], [3, 4]]), np.zeros(2))
    np.testing.assert_array_equal(mlp_forward(spec, p, [[1.0, 1.0]]), [[3.0, 7.0]])


def test_zero_weights_return_bias():
    spec, p = _linear(np.zeros((3, 4)), np.array([1.0, -2.0, 0.5]))
    out = mlp_forward(spec, p, np.random.default_rng(0).normal(size=(5, 4)))
    assert np.all(out == np.array([1.0, -2.0, 0.5]))


def test_spec_validation():
    with pytest.raises(InputError):
        MlpSpec((3,))
    with pytest.raises(InputError):
        MlpSpec((3, 0, 1))
    with pytest.raises(InputError):
        MlpSpec((3, 4, 1), (Activation.RELU, Activation.TANH))
    spec = MlpSpec((3, 4, 5, 1))
    assert spec.activations == (Activation.RELU, Activation.RELU)
    assert spec.activation(2) is Activation.IDENTITY
    assert MlpSpec.from_json(spec.to_json()) == spec


def test_forward_shape_error_names_layer():
    spec = MlpSpec((3, 4, 2))
    p = init_mlp(spec, np.random.default_rng(0))
    with pytest.raises(DimensionError):
        mlp_forward(spec, p, np.ones((2, 5)))
    p.weights[1] = np.ones((2, 5))
    with pytest.raises(DimensionError, match="layer 1"):
        mlp_forward(spec, p, np.ones((2, 3)))


def test_linear_backward_closed_form():
    rng = np.random.default_rng(1)
    w = rng.normal(size=(2, 3))
    spec, p = _linear(w, rng.normal(size=2))
    x = rng.normal(size=(4, 3))
    g = rng.normal(size=(4, 2))
    grads, dx = mlp_backward(spec, p, x, g)
    np.testing.assert_allclose(grads.weights[0], g.T @ x)
    np.testing.assert_allclose(grads.biases[0], g.sum(axis=0))
    np.testing.assert_allclose(dx, g @ w)


def test_relu_blocks_negative_preactivation():
    spec = MlpSpec((1, 1, 1))
    p = MlpParams([np.array([[1.0]]), np.array([[1.0]])], [np.array([-5.0]), np.array([0.0])])
    grads, dx = mlp_backward(spec, p, np.array([[1.0]]), np.array([[1.0]]))
    assert dx[0, 0] == 0.0
    assert grads.weights[0][0, 0] == 0.0


@pytest.mark.parametrize("act", [Activation.RELU, Activation.TANH, Activation.IDENTITY])
def test_three_layer_backward_matches_finite_differences(act):
    rng = np.random.default_rng(2)
    spec = MlpSpec((5, 7, 6, 3), (act, act))
    params = init_mlp(spec, rng)
    params = MlpParams([w for w in params.weights], [rng.normal(scale=0.1, size=b.shape) for b in params.biases])
    x = rng.normal(size=(8, 5))
    target = rng.normal(size=(8, 3))

    def loss(arrays):
        p = MlpParams.from_arrays(arrays[1:])
        out = mlp_forward(spec, p, arrays[0])
        r = out - target
        grads, dx = mlp_backward(spec, p, arrays[0], r)
        return 0.5 * float((r * r).sum()), [dx] + grads.arrays()

    assert grad_check(loss, [x] + params.arrays()) < 1e-4


def test_grad_check_exact_for_linear_and_detects_corruption():
    x = np.array([0.3, -1.2, 2.0])

    def linear(a):
        return float(a[0] @ x), [x]

    def doubled(a):
        return float(a[0] @ a[0]), [4.0 * a[0]]

    w = np.array([1.0, 2.0, -0.5])
    assert grad_check(linear, [w]) <= 1e-10
    # analytic 4w vs numeric 2w: relative error 0.5 on entries with |4w| >= 1
    assert grad_check(doubled, [w]) == pytest.approx(0.5, abs=1e-6)


def test_grad_check_rejects_bad_input():
    with pytest.raises(InputError):
        grad_check(lambda a: (0.0, [a[0]]), [np.ones(2)], eps=0.0)
    with pytest.raises(NumericError):
        grad_check(lambda a: (float("nan"), [a[0]]), [np.ones(2)])


def test_adam_first_step_moves_by_lr():
    state = AdamState.init([np.zeros(1)], lr=0.01)
    for g in (3.7, -0.02):
        new, st2 = adam_step([np.array([1.0])], [np.array([g])], state)
        assert new[0][0] == pytest.approx(1.0 - 0.01 * np.sign(g), abs=1e-8)
        assert st2.t == 1


def test_adam_zero_gradient_is_identity():
    p = [np.array([1.5, -2.0]), np.array([[0.3]])]
    state = AdamState.init(p)
    for _ in range(10):
        p2, state = adam_step(p, [np.zeros(2), np.zeros((1, 1))], state)
        assert all(np.array_equal(a, b) for a, b in zip(p, p2))
    assert state.t == 10


def test_adam_two_steps_on_quadratic():
    # plain-float replay of the bias-corrected update on f(w) = w^2
    expected = [0.9000000005, 0.8004122286917927]
    w = [np.array([1.0])]
    state = AdamState.init(w, lr=0.1)
    seen = []
    for _ in range(2):
        w, state = adam_step(w, [2.0 * w[0]], state)
        seen.append(w[0][0])
    assert seen[0] < 1.0 and seen[1] < seen[0]
    np.testing.assert_allclose(seen, expected, rtol=0, atol=1e-15)


def test_adam_non_finite_gradient_names_tensor():
    state = AdamState.init([np.zeros(2), np.zeros(2)])
    with pytest.raises(NumericError, match="bias0"):
        adam_step([np.zeros(2), np.zeros(2)], [np.zeros(2), np.array([np.inf, 0])], state, names=["w0", "bias0"])


def test_adam_is_pure():
    p = [np.array([1.0, 2.0])]
    state = AdamState.init(p)
    a, _ = adam_step(p, [np.array([0.5, -0.5])], state)
    b, _ = adam_step(p, [np.array([0.5, -0.5])], state)
    assert np.array_equal(a[0], b[0])
    assert state.t == 0 and np.array_equal(p[0], [1.0, 2.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-700, 700), min_size=2, max_size=6))
def test_softmax_rows_normalized_and_lse_stable(row):
    s = np.array([row])
    p = softmax_rows(s)
    assert np.all(np.isfinite(p))
    assert p.sum() == pytest.approx(1.0, abs=1e-12)
    assert logsumexp_rows(s)[0] >= max(row) - 1e-9


def test_l2_normalize_backward_matches_finite_differences():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(4, 3))
    up = rng.normal(size=(4, 3))

    def loss(a):
        return float((l2_normalize_rows(a[0]) * up).sum()), [l2_normalize_rows_backward(a[0], up)]

    assert grad_check(loss, [x]) < 1e-8
    np.testing.assert_allclose(np.linalg.norm(l2_normalize_rows(x), axis=1), 1.0)
