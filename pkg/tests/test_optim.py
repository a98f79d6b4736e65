import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vimd.exceptions import ContractError, DomainError
from vimd.optim import AdamW, adamw_step, cosine_lr, decays
from vimd.tensor import Tensor


def param(value, grad=None):
    p = Tensor(np.array(value, dtype=np.float32), requires_grad=True)
    p.grad = None if grad is None else np.array(grad, dtype=np.float32)
    return p


def test_first_step_moves_by_learning_rate():
    w = param([[1.0]], [[1.0]])
    AdamW({"w": w}, lr=0.1, weight_decay=0.0).step()
    assert w.data[0, 0] == pytest.approx(0.9, abs=1e-6)


def test_zero_gradient_without_decay_is_noop():
    w = param([[1.0, -2.0]], [[0.0, 0.0]])
    AdamW({"w": w}, lr=0.1, weight_decay=0.0).step()
    np.testing.assert_array_equal(w.data, [[1.0, -2.0]])


def test_decoupled_decay_with_zero_gradient():
    w = param([[2.0, -4.0]], [[0.0, 0.0]])
    AdamW({"w": w}, lr=0.1, weight_decay=0.05).step()
    np.testing.assert_allclose(w.data, np.array([[2.0, -4.0]]) * (1 - 0.1 * 0.05), rtol=1e-6)


def test_decay_mask_rules():
    assert decays("blocks.0.in_proj_x", param([[1.0]]))
    assert not decays("blocks.0.fw.A_log", param([[1.0]]))
    assert not decays("pos_embed", param([[1.0]]))
    assert not decays("head.bias", param([1.0]))


def test_frozen_parameter_untouched():
    w = param([[1.0]], [[1.0]])
    w.requires_grad = False
    AdamW({"w": w}, lr=0.1).step()
    assert w.data[0, 0] == 1.0


def test_gradient_shape_mismatch():
    w = param([[1.0, 2.0]], [[1.0]])
    with pytest.raises(ContractError):
        AdamW({"w": w}).step()


def test_functional_step_matches_method():
    a, b = param([[1.0, 2.0]], [[0.3, -0.2]]), param([[1.0, 2.0]], [[0.3, -0.2]])
    sa, sb = AdamW({"w": a}, lr=0.01), AdamW({"w": b}, lr=0.01)
    for _ in range(3):
        sa.step()
        adamw_step({"w": b}, sb, 0.01)
    np.testing.assert_array_equal(a.data, b.data)
    with pytest.raises(ContractError):
        adamw_step({"other": b}, sb, 0.01)


def test_state_round_trip():
    w = param([[1.0, 2.0]], [[0.3, -0.2]])
    opt = AdamW({"w": w}, lr=0.01)
    opt.step()
    twin_w = param(w.data.copy(), [[0.3, -0.2]])
    twin = AdamW({"w": twin_w}, lr=0.01)
    twin.load_state_tensors(opt.state_tensors(), opt.step_count)
    w.grad = twin_w.grad.copy()
    opt.step()
    twin.step()
    np.testing.assert_array_equal(w.data, twin_w.data)
    with pytest.raises(ContractError):
        twin.load_state_tensors({}, 1)


def test_cosine_examples():
    assert cosine_lr(0, 10, 1e-3) == 1e-3
    assert cosine_lr(5, 10, 1e-3) == pytest.approx(5e-4, abs=1e-15)
    last = cosine_lr(9, 10, 1e-3)
    assert last == pytest.approx(1e-3 * 0.5 * (1 + math.cos(math.pi * 0.9)))
    assert last > 0


@given(st.integers(1, 300), st.floats(1e-8, 1.0))
def test_cosine_nonincreasing(total, lr):
    values = [cosine_lr(e, total, lr) for e in range(total)]
    assert all(b <= a for a, b in zip(values, values[1:]))
    assert all(v > 0 for v in values)


@pytest.mark.parametrize("epoch,total", [(-1, 5), (5, 5), (0, 0)])
def test_cosine_domain(epoch, total):
    with pytest.raises(DomainError):
        cosine_lr(epoch, total, 1e-3)
