import numpy as np
import pytest

from tpgsr.engine.tensor import Tensor, get_default_dtype, is_grad_enabled, no_grad, precision
from tpgsr.exceptions import GraphError


def test_quadratic_gradient():
    w = Tensor([1.0, 2.0], requires_grad=True)
    loss = (w * w).sum()
    loss.backward()
    np.testing.assert_allclose(w.grad, [2.0, 4.0])


def test_gradients_accumulate_across_graphs():
    w = Tensor([3.0], requires_grad=True)
    (w * 2.0).sum().backward()
    (w * 2.0).sum().backward()
    np.testing.assert_allclose(w.grad, [4.0])


def test_second_backward_on_same_graph_is_rejected():
    w = Tensor([1.0, 2.0], requires_grad=True)
    loss = (w * w).sum()
    loss.backward()
    with pytest.raises(GraphError):
        loss.backward()


def test_backward_needs_scalar():
    w = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(GraphError) as excinfo:
        (w * w).backward()
    assert "scalar" in str(excinfo.value)


def test_backward_without_differentiable_leaves():
    with pytest.raises(GraphError):
        Tensor([1.0]).sum().backward()


def test_broadcast_gradient_is_reduced():
    a = Tensor(np.ones((2, 3)), requires_grad=True)
    b = Tensor(np.arange(3.0), requires_grad=True)
    (a + b).sum().backward()
    np.testing.assert_allclose(b.grad, [2.0, 2.0, 2.0])
    np.testing.assert_allclose(a.grad, np.ones((2, 3)))


def test_shared_subexpression_gradient():
    x = Tensor([2.0], requires_grad=True)
    y = x * 3.0
    (y * y + y).sum().backward()
    # d/dx (9x^2 + 3x) = 18x + 3
    np.testing.assert_allclose(x.grad, [39.0])


def test_no_grad_records_nothing():
    w = Tensor([1.0], requires_grad=True)
    with no_grad():
        assert not is_grad_enabled()
        out = w * 2.0
    assert is_grad_enabled()
    assert not out.requires_grad
    assert out.is_leaf


def test_detach_stops_gradient():
    w = Tensor([1.0, 1.0], requires_grad=True)
    frozen = (w * 5.0).detach()
    assert not frozen.requires_grad
    ((w * 1.0) + frozen).sum().backward()
    np.testing.assert_allclose(w.grad, [1.0, 1.0])


def test_requires_grad_only_toggles_on_leaves():
    w = Tensor([1.0], requires_grad=True)
    out = w * 2.0
    with pytest.raises(GraphError):
        out.requires_grad = False
    w.requires_grad = False
    assert w.grad is None


def test_precision_context():
    assert get_default_dtype() == np.float32
    with precision("f64"):
        assert Tensor([1.0]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32


def test_integer_data_takes_default_dtype():
    assert Tensor([1, 2, 3]).dtype == np.float32
