"""Network engine: forward/backward exactness, ADAM behavior, initialization."""

import math

import numpy as np
import pytest

from ncp.errors import NumericError
from ncp.nets import (
    AdamState,
    LrSchedule,
    MlpParams,
    MlpSpec,
    adam_step,
    init_params,
    mlp_backward,
    mlp_forward,
)
from ncp.rng import stream


def scalar_forward(params, spec, x_row):
    # independent re-implementation: plain loops, no vectorization
    out = list(x_row)
    n = spec.n_layers
    for i in range(n):
        w, b = params.weights[i], params.biases[i]
        nxt = []
        for j in range(w.shape[1]):
            acc = b[j]
            for k in range(w.shape[0]):
                acc += out[k] * w[k, j]
            nxt.append(acc)
        if i < n - 1:
            slope = float(params.slopes[i])
            nxt = [v if v > 0 else slope * v for v in nxt]
        out = nxt
    return np.array(out)


def test_forward_zero_params_zero_output():
    spec = MlpSpec(3, (4,), 2)
    params = init_params(spec, stream(0, "z"))
    for w in params.weights:
        w[:] = 0.0
    y, _ = mlp_forward(params, spec, np.ones((5, 3)))
    assert np.all(y == 0.0)


def test_forward_identity_layer_positive_input():
    spec = MlpSpec(3, (), 3)
    params = MlpParams([np.eye(3)], [np.zeros(3)], [])
    x = np.abs(stream(1, "x").normal(size=(4, 3))) + 0.1
    y, _ = mlp_forward(params, spec, x)
    assert np.array_equal(y, x)


def test_forward_matches_scalar_reimplementation():
    spec = MlpSpec(4, (6, 5), 3)
    params = init_params(spec, stream(3, "s"))
    x = stream(4, "x").normal(size=(7, 4))
    y, _ = mlp_forward(params, spec, x)
    for i in range(7):
        ref = scalar_forward(params, spec, x[i])
        assert np.abs(y[i] - ref).max() < 1e-12


def test_backward_zero_upstream():
    spec = MlpSpec(3, (4,), 2)
    params = init_params(spec, stream(5, "b"))
    x = stream(6, "x").normal(size=(5, 3))
    _, cache = mlp_forward(params, spec, x)
    grads, dx = mlp_backward(params, spec, cache, np.zeros((5, 2)))
    assert all(np.all(a == 0) for a in grads.arrays())
    assert np.all(dx == 0)


def test_backward_single_linear_layer_closed_form():
    spec = MlpSpec(3, (), 2)
    params = MlpParams([stream(7, "w").normal(size=(3, 2))], [np.zeros(2)], [])
    x = stream(8, "x").normal(size=(6, 3))
    up = stream(9, "u").normal(size=(6, 2))
    _, cache = mlp_forward(params, spec, x)
    grads, dx = mlp_backward(params, spec, cache, up)
    assert np.abs(grads.weights[0] - x.T @ up).max() < 1e-14
    assert np.abs(grads.biases[0] - up.sum(axis=0)).max() < 1e-14
    assert np.abs(dx - up @ params.weights[0].T).max() < 1e-14


@pytest.mark.parametrize("seed", range(10))
def test_backward_matches_finite_differences(seed):
    # relative error defined with an rtol/atol floor: 1e-4 relative above
    # 1e-4 gradient magnitude, 1e-8 absolute below (64-bit FD noise floor)
    spec = MlpSpec(3, (5, 4), 2)
    params = init_params(spec, stream(seed, "fd"))
    x = stream(seed, "fdx").normal(size=(4, 3))
    up = stream(seed, "fdu").normal(size=(4, 2))

    def loss():
        y, _ = mlp_forward(params, spec, x)
        return float(np.sum(y * up))

    _, cache = mlp_forward(params, spec, x)
    grads, _ = mlp_backward(params, spec, cache, up)
    eps = 1e-5
    worst = 0.0
    for arr, garr in zip(params.arrays(), grads.arrays()):
        flat = arr.ravel()
        gflat = np.asarray(garr).ravel()
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            lp = loss()
            flat[j] = orig - eps
            lm = loss()
            flat[j] = orig
            fd = (lp - lm) / (2 * eps)
            worst = max(worst, abs(fd - gflat[j]) / max(abs(fd), abs(gflat[j]), 1e-4))
    assert worst < 1e-4


def test_prelu_subgradient_at_zero_uses_positive_branch():
    spec = MlpSpec(1, (1,), 1)
    params = MlpParams(
        [np.array([[1.0]]), np.array([[1.0]])],
        [np.zeros(1), np.zeros(1)],
        [np.array(0.25)],
    )
    x = np.array([[0.0]])
    _, cache = mlp_forward(params, spec, x)
    _, dx = mlp_backward(params, spec, cache, np.ones((1, 1)))
    assert dx[0, 0] == 1.0


def test_batch_order_invariance():
    spec = MlpSpec(3, (8,), 2)
    params = init_params(spec, stream(11, "p"))
    x = stream(12, "x").normal(size=(9, 3))
    perm = stream(13, "perm").permutation(9)
    y, _ = mlp_forward(params, spec, x)
    y_perm, _ = mlp_forward(params, spec, x[perm])
    assert np.array_equal(y[perm], y_perm)


# ---------------------------------------------------------------------------
# ADAM


def make_quadratic():
    spec = MlpSpec(2, (), 1)
    params = MlpParams([np.array([[3.0], [-2.0]])], [np.array([0.5])], [])
    return spec, params


def test_adam_zero_gradient_keeps_params():
    spec = MlpSpec(2, (3,), 1)
    params = init_params(spec, stream(20, "a"))
    before = [a.copy() for a in params.arrays()]
    state = AdamState.for_params(params)
    grads = params.zeros_like()
    adam_step(params, grads, state, LrSchedule())
    for a, b in zip(params.arrays(), before):
        assert np.array_equal(a, b)


def test_adam_first_step_is_signed_learning_rate():
    spec = MlpSpec(1, (), 1)
    params = MlpParams([np.array([[1.0]])], [np.array([0.0])], [])
    state = AdamState.for_params(params)
    grads = MlpParams([np.array([[0.37]])], [np.array([0.0])], [])
    adam_step(params, grads, state, LrSchedule(((None, 1e-2),)))
    # bias-corrected first step is -lr * g/|g| up to epsilon
    assert params.weights[0][0, 0] == pytest.approx(1.0 - 1e-2, abs=1e-8)


def test_adam_deterministic_over_100_steps():
    def run():
        spec = MlpSpec(2, (4,), 1)
        params = init_params(spec, stream(33, "det"))
        state = AdamState.for_params(params)
        rng = stream(34, "g")
        for _ in range(100):
            grads = MlpParams(
                [rng.normal(size=w.shape) for w in params.weights],
                [rng.normal(size=b.shape) for b in params.biases],
                [np.array(rng.normal()) for _ in params.slopes],
            )
            adam_step(params, grads, state, LrSchedule())
        return params

    a, b = run(), run()
    for x, y in zip(a.arrays(), b.arrays()):
        assert np.array_equal(x, y)


def test_adam_rejects_non_finite_gradients():
    spec, params = make_quadratic()
    state = AdamState.for_params(params)
    grads = MlpParams([np.array([[np.nan], [0.0]])], [np.array([0.0])], [])
    with pytest.raises(NumericError):
        adam_step(params, grads, state, LrSchedule())


def test_adam_descends_fixed_quadratic_monotonically_after_warmup():
    # minimize ||w - target||^2 via exact gradients
    target = np.array([[0.3], [-1.2]])
    spec, params = make_quadratic()
    state = AdamState.for_params(params)
    sched = LrSchedule(((None, 1e-2),))
    losses = []
    for _ in range(200):
        diff = params.weights[0] - target
        losses.append(float(np.sum(diff * diff)))
        grads = MlpParams([2 * diff], [np.zeros(1)], [])
        adam_step(params, grads, state, sched)
    tail = losses[10:]
    assert all(b < a + 1e-15 for a, b in zip(tail, tail[1:]))


def test_lr_schedule_breakpoints():
    sched = LrSchedule(((1000, 1e-4), (None, 1e-5)))
    assert sched.lr_at(1) == 1e-4
    assert sched.lr_at(1000) == 1e-4
    assert sched.lr_at(1001) == 1e-5


# ---------------------------------------------------------------------------
# Initialization


def test_init_reproducible_and_zero_biases():
    spec = MlpSpec(8, (16,), 4)
    a = init_params(spec, stream(50, "i"))
    b = init_params(spec, stream(50, "i"))
    for x, y in zip(a.arrays(), b.arrays()):
        assert np.array_equal(x, y)
    for bias in a.biases:
        assert np.all(bias == 0.0)
    for slope in a.slopes:
        assert float(slope) == 0.25


def test_init_weight_variance_he_scaled():
    spec = MlpSpec(256, (300,), 256)
    params = init_params(spec, stream(51, "v"))
    for w in params.weights:
        fan_in = w.shape[0]
        assert abs(w.var() - 2.0 / fan_in) / (2.0 / fan_in) < 0.10
