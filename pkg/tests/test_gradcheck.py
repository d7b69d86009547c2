import numpy as np
import pytest

from hwmamba.errors import NumericError, ParameterError
from hwmamba.gradcheck import finite_diff_check
from hwmamba.tensor import Tensor, log


def test_quadratic_exact(rng):
    x = Tensor(rng.normal(size=5), requires_grad=True)
    assert finite_diff_check(lambda v: (v * v).sum(), x, step=1e-5) < 1e-6


def test_constant_function():
    x = Tensor([1.0, 2.0], requires_grad=True)
    assert finite_diff_check(lambda v: Tensor(3.0), x) == 0.0


def test_detects_wrong_gradient():
    from hwmamba.tensor import record

    def bad_square(v):
        return record(v.data ** 2, (v,), lambda g: (g * v.data,), "bad")

    x = Tensor([1.0, 2.0], requires_grad=True)
    assert finite_diff_check(lambda v: bad_square(v).sum(), x) > 0.1


def test_restores_inputs(rng):
    data = rng.normal(size=4)
    x = Tensor(data, requires_grad=True)
    finite_diff_check(lambda v: (v * v).sum(), x)
    np.testing.assert_array_equal(x.data, data)


def test_sampled_coordinates(rng):
    x = Tensor(rng.normal(size=100), requires_grad=True)
    assert finite_diff_check(lambda v: (v * v * v).sum(), x, max_coords=5) < 1e-6


def test_bad_step():
    with pytest.raises(ParameterError):
        finite_diff_check(lambda v: v.sum(), Tensor([1.0], requires_grad=True), step=0.0)


def test_non_finite_evaluation():
    x = Tensor([1e-6], requires_grad=True)
    with pytest.raises(NumericError):
        finite_diff_check(lambda v: log(v).sum(), x, step=1e-3)
