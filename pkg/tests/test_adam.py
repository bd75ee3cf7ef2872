"""Adam optimizer: first-step properties and a scalar-oracle trajectory."""

import numpy as np
import pytest

from ricecnn.tensor import AdamState, ShapeError, Tensor, adam_step


def make_param(values, trainable=True):
    return {"p": Tensor(np.asarray(values, dtype=np.float64), trainable=trainable, name="p")}


def test_zero_gradient_leaves_parameters_unchanged():
    params = make_param([1.0, -2.0, 3.0])
    state = AdamState(params)
    params["p"].grad = np.zeros(3)
    adam_step(params, state, lr=0.5)
    assert np.array_equal(params["p"].data, [1.0, -2.0, 3.0])
    assert state.step == 1


def test_missing_gradient_treated_as_zero():
    params = make_param([4.0])
    adam_step(params, AdamState(params), lr=0.1)
    assert params["p"].data == pytest.approx([4.0])


def test_first_step_magnitude_is_lr_times_sign():
    params = make_param([1.0, 1.0, 1.0])
    state = AdamState(params)
    g = np.array([0.3, -7.0, 1e-4])
    params["p"].grad = g.copy()
    adam_step(params, state, lr=0.01)
    step = params["p"].data - 1.0
    # bias-corrected m/sqrt(v) ratio is exactly g/|g| up to epsilon
    assert step == pytest.approx(-0.01 * np.sign(g), rel=1e-2)


def test_non_trainable_parameter_untouched():
    params = make_param([5.0], trainable=False)
    state = AdamState(params)
    params["p"].grad = np.array([10.0])
    adam_step(params, state, lr=1.0)
    assert params["p"].data == pytest.approx([5.0])


def test_shape_mismatch_raises():
    params = make_param([1.0, 2.0])
    state = AdamState(params)
    params["p"].data = np.zeros(3)
    params["p"].grad = np.zeros(3)
    with pytest.raises(ShapeError):
        adam_step(params, state, lr=0.1)


def scalar_adam_oracle(x0, grad_fn, lr, steps, beta1=0.9, beta2=0.999, eps=1e-7):
    """Textbook scalar Adam, written independently of the package."""
    x, m, v = x0, 0.0, 0.0
    trajectory = []
    for t in range(1, steps + 1):
        g = grad_fn(x)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1**t)
        vhat = v / (1 - beta2**t)
        x -= lr * mhat / (np.sqrt(vhat) + eps)
        trajectory.append(x)
    return trajectory


def test_quadratic_descent_matches_scalar_oracle():
    """100 steps on f(x)=x^2 from x=1 with lr 0.1 ends inside |x|<0.1, and the
    package's trajectory tracks the independent oracle step for step."""
    oracle = scalar_adam_oracle(1.0, lambda x: 2.0 * x, lr=0.1, steps=100)
    assert abs(oracle[-1]) < 0.1

    params = make_param([1.0])
    state = AdamState(params)
    for t in range(100):
        params["p"].grad = 2.0 * params["p"].data
        adam_step(params, state, lr=0.1)
        assert params["p"].data.item() == pytest.approx(oracle[t], rel=1e-12)
    assert abs(params["p"].data.item()) < 0.1
    assert state.step == 100


def test_step_counter_strictly_increments():
    params = make_param([0.0])
    state = AdamState(params)
    for expected in (1, 2, 3):
        params["p"].grad = np.array([1.0])
        adam_step(params, state, lr=0.01)
        assert state.step == expected
