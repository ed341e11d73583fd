import numpy as np
import pytest

from mclcr import tensor as T
from mclcr.gradcheck import GradCheckReport, NonDeterministicError, grad_check, relative_error
from mclcr.tensor import Tensor


def test_linear_map_is_exact(rng):
    w = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    x = Tensor(rng.normal(size=(5, 4)))
    c = rng.normal(size=(5, 3))
    report = grad_check(lambda: T.tsum(T.matmul(x, w) * c), {"w": w}, max_coords=None)
    assert report.worst <= 1e-8
    assert report.checked == {"w": 12}


def test_rejects_non_positive_eps(rng):
    w = Tensor(rng.normal(size=3), requires_grad=True)
    for eps in (0.0, -1e-3):
        with pytest.raises(ValueError):
            grad_check(lambda: T.tsum(w * w), {"w": w}, eps=eps)


def test_detects_non_determinism(rng):
    w = Tensor(rng.normal(size=3), requires_grad=True)
    noise = np.random.default_rng(0)

    def f():
        return T.tsum(T.dropout(w, 0.5, noise, training=True))

    with pytest.raises(NonDeterministicError):
        grad_check(f, {"w": w})


def test_detects_wrong_gradient(rng):
    w = Tensor(rng.normal(size=4) + 3.0, requires_grad=True)

    def broken():
        # forward is w**2, but the recorded backward claims d/dw = 1
        out = T._make(w.data ** 2, "broken", (w,), lambda g: (g,))
        return T.tsum(out)

    assert not grad_check(broken, {"w": w}).passed(1e-4)


def test_sampling_limits_coordinates(rng):
    w = Tensor(rng.normal(size=(10, 10)), requires_grad=True)
    report = grad_check(lambda: T.tsum(T.exp(w)), {"w": w}, max_coords=7)
    assert report.checked["w"] == 7


def test_parameters_restored(rng):
    data = rng.normal(size=(3, 3))
    w = Tensor(data.copy(), requires_grad=True)
    grad_check(lambda: T.tsum(T.gelu(w)), {"w": w}, max_coords=None)
    assert np.array_equal(w.data, data)


def test_relative_error_formula():
    assert relative_error(0.0, 0.0) == 0.0
    assert relative_error(1.0, 1.0) == 0.0
    assert relative_error(1.0, -1.0) == 1.0
    assert relative_error(1e-9, 0.0) == pytest.approx(0.1)
    assert GradCheckReport({}, {}).worst == 0.0
