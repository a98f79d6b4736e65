import numpy as np
import pytest

from vimd import tensor as T
from vimd.checks import FULL_LOSS_TOL, PRIMITIVE_TOL, gradient_suite
from vimd.exceptions import DomainError
from vimd.gradcheck import grad_check, numerical_grad, relative_error
from vimd.tensor import Tensor


def square_sum(t):
    return T.tsum(T.mul(t, t))


def test_linear_function_has_exact_differences():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    np.testing.assert_allclose(numerical_grad(lambda t: T.mul(t, 3.0), x), 3.0, rtol=1e-9)
    assert grad_check(lambda t: T.tsum(T.mul(t, 3.0)), x) < 1e-9


def test_wrong_gradient_is_detected():
    x = Tensor(np.linspace(0.5, 1.5, 4))
    numeric = numerical_grad(square_sum, x)
    np.testing.assert_allclose(numeric, 2 * x.data, rtol=1e-8)
    assert relative_error(np.ones(4), numeric) > 0.1
    assert grad_check(square_sum, x) < 1e-8


def test_input_dtype_is_restored():
    x = Tensor(np.ones(3, np.float32))
    grad_check(square_sum, x)
    assert x.data.dtype == np.float32


@pytest.mark.parametrize("step", [1e-5, 0.05, 0.0, -1e-3])
def test_step_outside_range(step):
    with pytest.raises(DomainError):
        grad_check(square_sum, Tensor(np.ones(2)), step=step)


def test_relative_error_floor():
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
    # a coordinate far below the largest gradient is judged against the floor
    assert relative_error([1.0, 1e-9], [1.0, 2e-9]) < 1e-6


def test_suite_primitives_pass_one_seed():
    results = gradient_suite(seed=0, include_full_loss=False)
    assert len(results) > 20
    assert all(r.tolerance == PRIMITIVE_TOL for r in results)
    bad = [(r.component, r.error) for r in results if not r.passed]
    assert not bad


@pytest.mark.slow
def test_suite_is_stable_across_seeds():
    errors = {}
    for seed in range(10):
        for r in gradient_suite(seed=seed, include_full_loss=seed < 2):
            errors.setdefault(r.component, []).append(r.error)
    assert max(errors["full_loss"]) <= FULL_LOSS_TOL
    worst = {k: max(v) for k, v in errors.items() if k != "full_loss"}
    assert max(worst.values()) <= PRIMITIVE_TOL, worst
