import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vimd import tensor as T
from vimd.exceptions import ContractError, ShapeError
from vimd.tensor import Tensor, backward, no_grad


def naive_matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for p in range(k):
                out[i, j] += a[i, p] * b[p, j]
    return out


def test_matmul_identity():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal((a @ Tensor(np.eye(2))).data, a.data)


def test_matmul_hand_value():
    out = Tensor([[1.0, 2.0], [3.0, 4.0]]) @ Tensor([[5.0], [6.0]])
    np.testing.assert_array_equal(out.data, [[17.0], [39.0]])


def test_matmul_gradient_example():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]], requires_grad=True)
    b = Tensor([[5.0], [6.0]], requires_grad=True)
    backward(T.tsum(a @ b))
    np.testing.assert_allclose(a.grad, [[5.0, 6.0], [5.0, 6.0]])
    np.testing.assert_allclose(b.grad, [[4.0], [6.0]])


def test_matmul_shape_error_names_both_dims():
    with pytest.raises(ShapeError, match=r"3.*4|4.*3"):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((4, 5)))


@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_matmul_matches_triple_loop(m, k, n, seed):
    r = np.random.default_rng(seed)
    a, b = r.uniform(-1, 1, (m, k)), r.uniform(-1, 1, (k, n))
    np.testing.assert_allclose((Tensor(a) @ Tensor(b)).data, naive_matmul(a, b), atol=1e-5)


def test_backward_sum_gives_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    backward(T.tsum(x))
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_backward_square_sum():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    backward(T.tsum(x * x))
    np.testing.assert_allclose(x.grad, [2.0, 4.0, 6.0])


def test_backward_rejects_non_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ContractError):
        backward(x * 2.0)


def test_backward_rejects_unrecorded_loss():
    with pytest.raises(ContractError):
        backward(Tensor(1.0))


def test_no_grad_records_nothing():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with no_grad():
        y = T.tsum(x * x)
    assert not y.requires_grad
    with pytest.raises(ContractError):
        backward(y)


def test_reused_input_accumulates_gradient():
    x = Tensor([1.5, -2.0], requires_grad=True)
    backward(T.tsum(x * x + x * 3.0 + x))
    np.testing.assert_allclose(x.grad, 2 * x.data + 4.0)


def test_leaf_gradients_accumulate_across_backward_calls():
    x = Tensor([1.0, 2.0], requires_grad=True)
    backward(T.tsum(x))
    backward(T.tsum(x * 2.0))
    np.testing.assert_allclose(x.grad, [3.0, 3.0])


def test_broadcast_gradient_is_reduced():
    x = Tensor(np.ones((3, 4)), requires_grad=True)
    b = Tensor(np.ones(4), requires_grad=True)
    backward(T.tsum(x + b))
    np.testing.assert_array_equal(b.grad, np.full(4, 3.0))


def test_default_dtype_is_float32_and_float64_preserved():
    assert Tensor([1, 2]).dtype == np.float32
    assert Tensor(np.ones(2)).dtype == np.float64
    s = T.tsum(Tensor(np.ones(3)))
    assert (s * 0.5).dtype == np.float64


def test_graph_nodes_visited_in_reverse_order():
    x = Tensor([1.0], requires_grad=True)
    y = T.exp(x)
    z = y * 2.0
    graph = z._graph
    assert y._node < z._node
    order = [op for op, _, _ in graph.nodes]
    assert order == ["exp", "mul"]
    backward(T.tsum(z))
    assert graph.nodes == []


def test_getitem_advanced_index_gradient():
    x = Tensor(np.arange(4.0), requires_grad=True)
    backward(T.tsum(x[np.array([0, 0, 3])]))
    np.testing.assert_array_equal(x.grad, [2.0, 0.0, 0.0, 1.0])


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)),
              elements=st.floats(-10, 10, allow_nan=False)))
def test_forward_values_stay_finite(a):
    x = Tensor(a, requires_grad=True)
    y = T.tsum(T.exp(T.clamp(x, -5, 5)) * x - x / 3.0)
    assert np.isfinite(y.data).all()
    backward(y)
    assert np.isfinite(x.grad).all()
