#!/usr/bin/env python3
"""
Tests for the autodiff core: gradients, grad_check, Adam, ParamStore and Rng.
"""

import sys

import numpy as np

from autodiff import (Adam, GradientError, ParamStore, Rng, Tensor, adam_step, forward_backward,
                      grad_check, logmeanexp, no_grad)
from test_setup import run_tests


def test_square_derivative():
    x = Tensor(3.0, requires_grad=True)
    (x * x).backward()
    assert x.grad == 6.0


def test_softplus_derivative_at_zero():
    x = Tensor(0.0, requires_grad=True)
    x.softplus().backward()
    assert abs(float(x.grad) - 0.5) < 1e-15


def test_affine_norm_matches_finite_differences():
    rng = Rng(3)
    params = ParamStore()
    W = params.add("W", rng.normal((2, 2)))
    b = params.add("b", rng.normal(2))
    x = Tensor(rng.normal(2))
    report = grad_check(lambda: (x @ W + b).square().sum(), params, eps=1e-5, rtol=1e-4)
    assert report.passed, report.deviations


def test_forward_backward_returns_one_gradient_per_parameter():
    params = ParamStore()
    a = params.add("a", np.array([1.0, 2.0]))
    params.add("unused", np.ones(3))
    loss = (a * a).sum()
    grads = forward_backward(loss, params)
    assert set(grads) == {"a", "unused"}
    assert np.array_equal(grads["a"], np.array([2.0, 4.0]))
    assert np.array_equal(grads["unused"], np.zeros(3))
    assert float(loss) == 5.0


def test_backward_rejects_non_scalar_output():
    x = Tensor(np.ones(3), requires_grad=True)
    try:
        (x * 2.0).backward()
        raise AssertionError("expected GradientError")
    except GradientError:
        pass


def test_backward_rejects_detached_output():
    x = Tensor(np.ones(3))
    try:
        x.sum().backward()
        raise AssertionError("expected GradientError")
    except GradientError:
        pass


def test_no_grad_records_no_tape():
    x = Tensor(2.0, requires_grad=True)
    with no_grad():
        y = x * x
    assert not y.requires_grad
    assert (x * x).requires_grad


def test_broadcast_gradients_sum_back():
    a = Tensor(np.ones((3, 4)), requires_grad=True)
    b = Tensor(np.ones(4), requires_grad=True)
    (a * b).sum().backward()
    assert b.grad.shape == (4,)
    assert np.array_equal(b.grad, np.full(4, 3.0))


def test_repeat_rows_layout_and_gradient():
    a = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    tiled = a.repeat_rows(3)
    assert tiled.shape == (6, 3)
    # row k*n + i holds row i
    assert np.array_equal(tiled.data[4], a.data[0])
    tiled.sum().backward()
    assert np.array_equal(a.grad, np.full((2, 3), 3.0))


def test_logmeanexp_is_stable():
    values = Tensor(np.array([[1000.0], [1000.0 + np.log(3.0)]]))
    out = logmeanexp(values, axis=0)
    assert np.isclose(float(out.data[0]), 1000.0 + np.log(2.0))


def test_grad_check_constant_loss_passes():
    params = ParamStore()
    params.add("w", np.array([0.3, -1.2]))
    report = grad_check(lambda: Tensor(4.0), params)
    assert report.passed
    assert report.deviations["w"] == 0.0


def test_grad_check_detects_corrupted_gradient():
    params = ParamStore()
    w = params.add("w", np.array([0.3, -1.2, 0.7]))
    loss_fn = lambda: (w.tanh() * w).sum()
    analytic = forward_backward(loss_fn(), params)
    analytic["w"] = analytic["w"] + 0.1
    report = grad_check(loss_fn, params, analytic=analytic)
    assert not report.passed
    assert report.failures == ["w"]


def test_grad_check_rejects_non_finite_loss():
    params = ParamStore()
    w = params.add("w", np.array([-1.0]))
    try:
        grad_check(lambda: w.log().sum(), params)
        raise AssertionError("expected GradientError")
    except GradientError:
        pass


def test_adam_zero_gradient_leaves_parameters():
    params = ParamStore()
    params.add("p", np.array([0.5, -0.5]))
    adam_step(params, {"p": np.zeros(2)}, lr=1e-3, t=1)
    assert np.array_equal(params["p"].data, np.array([0.5, -0.5]))


def test_adam_first_step_is_learning_rate():
    params = ParamStore()
    params.add("p", np.array([0.0]))
    adam_step(params, {"p": np.array([1.0])}, lr=1e-3, t=1)
    assert np.isclose(params["p"].data[0], -1e-3, rtol=1e-6)


def test_adam_two_steps_decrease_monotonically():
    params = ParamStore()
    params.add("p", np.array([0.0]))
    optimizer = adam_step(params, {"p": np.array([1.0])}, lr=1e-3, t=1)
    first = params["p"].data[0]
    adam_step(params, {"p": np.array([1.0])}, lr=1e-3, t=2, optimizer=optimizer)
    assert params["p"].data[0] < first < 0.0


def test_adam_names_nan_parameter():
    params = ParamStore()
    params.add("hyper0.fc1.W", np.zeros(2))
    optimizer = Adam(params)
    try:
        optimizer.step({"hyper0.fc1.W": np.array([np.nan, 0.0])})
        raise AssertionError("expected GradientError")
    except GradientError as e:
        assert "hyper0.fc1.W" in str(e)


def test_adam_rejected_step_changes_nothing():
    params = ParamStore()
    params.add("a", np.array([1.0]))
    params.add("b", np.array([2.0]))
    optimizer = Adam(params, lr=0.1)
    try:
        optimizer.step({"a": np.array([1.0]), "b": np.array([np.nan])})
        raise AssertionError("expected GradientError")
    except GradientError:
        pass
    assert params["a"].data[0] == 1.0 and params["b"].data[0] == 2.0
    assert optimizer.t == 0
    assert optimizer.m["a"][0] == 0.0 and optimizer.v["a"][0] == 0.0
    optimizer.step({"a": np.array([1.0]), "b": np.array([1.0])})
    assert optimizer.t == 1 and np.isclose(params["a"].data[0], 0.9, rtol=1e-6)


def test_param_store_count_and_uniqueness():
    params = ParamStore()
    params.add("W", np.zeros((3, 4)))
    params.add("b", np.zeros(4))
    assert params.count == 16
    try:
        params.add("W", np.zeros(1))
        raise AssertionError("expected KeyError")
    except KeyError:
        pass


def test_param_store_state_dict_copies():
    params = ParamStore()
    params.add("w", np.array([1.0, 2.0]))
    state = params.state_dict()
    params["w"].data = params["w"].data + 1.0
    assert np.array_equal(state["w"], np.array([1.0, 2.0]))
    params.load_state_dict(state)
    assert np.array_equal(params["w"].data, np.array([1.0, 2.0]))


def test_merged_store_shares_tensors():
    first, second = ParamStore(), ParamStore()
    first.add("W", np.zeros(2))
    second.add("W", np.ones(3))
    merged = ParamStore.merged({"m0": first, "m1": second})
    assert merged.names() == ["m0.W", "m1.W"]
    assert merged.count == 5
    assert merged["m1.W"] is second["W"]


def test_rng_same_seed_same_draws():
    assert np.array_equal(Rng(7).normal(5), Rng(7).normal(5))
    a = Rng.for_run(7, "ic_fdn", "sine", "init")
    b = Rng.for_run(7, "ic_fdn", "sine", "init")
    assert np.array_equal(a.uniform(-1, 1, 4), b.uniform(-1, 1, 4))


def test_rng_streams_are_independent():
    base = Rng(7)
    assert not np.array_equal(base.child("init").normal(5), base.child("shuffle").normal(5))
    assert not np.array_equal(Rng.for_run(7, "bayes", "sine", "init").normal(5),
                              Rng.for_run(7, "bayes", "step", "init").normal(5))


def test_bernoulli_rate():
    draws = Rng(1).bernoulli(0.3, 100000)
    assert set(np.unique(draws)) <= {0.0, 1.0}
    assert abs(draws.mean() - 0.3) < 0.01


def main():
    tests = [
        test_square_derivative,
        test_softplus_derivative_at_zero,
        test_affine_norm_matches_finite_differences,
        test_forward_backward_returns_one_gradient_per_parameter,
        test_backward_rejects_non_scalar_output,
        test_backward_rejects_detached_output,
        test_no_grad_records_no_tape,
        test_broadcast_gradients_sum_back,
        test_repeat_rows_layout_and_gradient,
        test_logmeanexp_is_stable,
        test_grad_check_constant_loss_passes,
        test_grad_check_detects_corrupted_gradient,
        test_grad_check_rejects_non_finite_loss,
        test_adam_zero_gradient_leaves_parameters,
        test_adam_first_step_is_learning_rate,
        test_adam_two_steps_decrease_monotonically,
        test_adam_names_nan_parameter,
        test_adam_rejected_step_changes_nothing,
        test_param_store_count_and_uniqueness,
        test_param_store_state_dict_copies,
        test_merged_store_shares_tensors,
        test_rng_same_seed_same_draws,
        test_rng_streams_are_independent,
        test_bernoulli_rate,
    ]
    return run_tests("Autodiff Core Tests", tests)


if __name__ == "__main__":
    sys.exit(0 if main() else 1)
