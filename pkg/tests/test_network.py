import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vimd.encoder import vim_block
from vimd.exceptions import ShapeError
from vimd.network import (
    TOY, VIM_TINY, VimConfig, VimModel, classify_head, encode, flops_estimate, param_count, patch_embed, predict,
)
from vimd.tensor import Tensor

SMALL = VimConfig(embed_dim=8, depth=2, patch_size=8, num_classes=3, d_state=4, input_side=32)


def image(rng, cfg=SMALL, batch=None):
    shape = (3, cfg.input_side, cfg.input_side) if batch is None else (batch, 3, cfg.input_side, cfg.input_side)
    return Tensor(rng.uniform(0, 1, shape).astype(np.float32))


@pytest.mark.parametrize("side,patch,z,cls", [(224, 16, 196, 98), (32, 16, 4, 2), (64, 8, 64, 32)])
def test_class_token_sits_mid_sequence(side, patch, z, cls):
    cfg = VimConfig(embed_dim=8, depth=0, patch_size=patch, num_classes=2, d_state=2, input_side=side)
    assert cfg.num_patches == z
    assert cfg.seq_len == z + 1
    assert cfg.cls_index == cls


def test_zero_image_embedding_is_position_plus_class(rng):
    model = VimModel(SMALL)
    model.patch_bias.data[:] = 0.0
    H0 = model.embed(Tensor(np.zeros((3, 32, 32), np.float32))).data
    pos, mid = model.pos_embed.data, SMALL.cls_index
    rows = [i for i in range(SMALL.seq_len) if i != mid]
    np.testing.assert_array_equal(H0[rows], pos[rows])
    np.testing.assert_array_equal(H0[mid], model.cls_token.data + pos[mid])


def test_patch_tokens_are_raster_ordered(rng):
    model = VimModel(SMALL)
    x = image(rng)
    H0 = model.embed(x).data - model.pos_embed.data
    J = SMALL.patch_size
    w = model.patch_weight.data.reshape(8, -1)
    for k in range(SMALL.num_patches):
        r, c = divmod(k, SMALL.grid)
        patch = x.data[:, r * J:(r + 1) * J, c * J:(c + 1) * J].reshape(-1)
        row = k if k < SMALL.cls_index else k + 1
        np.testing.assert_allclose(H0[row], w @ patch + model.patch_bias.data, atol=1e-5)


def test_indivisible_side_is_shape_error(rng):
    m = VimModel(SMALL)
    with pytest.raises(ShapeError):
        patch_embed(Tensor(np.zeros((3, 30, 30), np.float32)), m.patch_weight, m.patch_bias, m.cls_token,
                    m.pos_embed)
    with pytest.raises(ShapeError):
        VimConfig(input_side=30, patch_size=8)


def test_odd_patch_count_rejected():
    with pytest.raises(ShapeError):
        VimConfig(input_side=24, patch_size=8)


def test_depth_zero_returns_only_embedding(rng):
    H0 = Tensor(rng.normal(size=(5, 8)).astype(np.float32))
    states = encode(H0, [])
    assert len(states) == 1 and states.depth == 0
    assert states[0] is H0


def test_zeroed_second_block_repeats_first_layer(rng):
    model = VimModel(SMALL)
    model.blocks[1].out_proj.data[:] = 0.0
    _, states = model(image(rng))
    np.testing.assert_array_equal(states[2].data, states[1].data)


def test_recomputing_each_layer_is_bit_identical(rng):
    model = VimModel(SMALL)
    _, states = model(image(rng))
    assert len(states) == SMALL.depth + 1
    for i, block in enumerate(model.blocks, start=1):
        np.testing.assert_array_equal(vim_block(states[i - 1], block).data, states[i].data)


def test_head_reads_only_the_class_token(rng):
    model = VimModel(SMALL)
    H = rng.normal(size=(SMALL.seq_len, 8)).astype(np.float32)
    base = model.head(Tensor(H)).data
    for row in range(SMALL.seq_len):
        if row == SMALL.cls_index:
            continue
        moved = H.copy()
        moved[row] += rng.normal(size=8).astype(np.float32) * 10
        np.testing.assert_array_equal(model.head(Tensor(moved)).data, base)
    moved = H.copy()
    moved[SMALL.cls_index] += 1.0
    assert not np.array_equal(model.head(Tensor(moved)).data, base)


def test_zero_head_gives_zero_logits(rng):
    H = Tensor(rng.normal(size=(5, 8)).astype(np.float32))
    out = classify_head(H, Tensor(np.zeros((8, 200), np.float32)), Tensor(np.zeros(200, np.float32)))
    assert out.shape == (200,)
    np.testing.assert_array_equal(out.data, 0.0)


def test_forward_is_deterministic_and_batch_consistent(rng):
    model = VimModel(SMALL)
    x = image(rng, batch=3)
    a, _ = model(x)
    b, _ = model(x)
    np.testing.assert_array_equal(a.data, b.data)
    single, _ = model(Tensor(x.data[1]))
    np.testing.assert_allclose(single.data, a.data[1], atol=1e-5)


@given(st.sampled_from([(16, 8), (32, 8), (32, 16), (48, 8)]), st.integers(0, 2))
def test_every_layer_has_the_sequence_shape(side_patch, depth):
    side, patch = side_patch
    cfg = VimConfig(embed_dim=4, depth=depth, patch_size=patch, num_classes=2, d_state=2, input_side=side)
    _, states = VimModel(cfg)(np.zeros((3, side, side), np.float32))
    assert all(layer.shape == ((side // patch) ** 2 + 1, 4) for layer in states)


def test_wrong_image_shape(rng):
    with pytest.raises(ShapeError):
        VimModel(SMALL)(np.zeros((3, 16, 16), np.float32))


def test_predict_examples():
    assert predict(np.array([0.1, 2.3, -1.0])) == 1
    assert predict(np.zeros(4)) == 0
    np.testing.assert_array_equal(predict(np.array([[0.0, 1.0], [3.0, 3.0]])), [1, 0])
    with pytest.raises(ShapeError):
        predict(np.zeros(0))


@given(st.lists(st.integers(-1000, 1000), min_size=1, max_size=10), st.integers(-10**6, 10**6),
       st.integers(1, 50))
def test_predict_invariant_under_increasing_maps(logits, shift, scale):
    x = np.array(logits, dtype=np.float64)
    assert predict(x + shift) == predict(x)
    assert predict(x * scale) == predict(x)
    assert predict(np.tanh(x / 2000.0)) == predict(x)


@given(st.integers(1, 16), st.integers(0, 3), st.sampled_from([4, 8]), st.integers(1, 6), st.integers(1, 8),
       st.integers(1, 3), st.booleans())
def test_param_count_formula_matches_model(dim, depth, patch, classes, d_state, expand, final_norm):
    cfg = VimConfig(embed_dim=dim, depth=depth, patch_size=patch, num_classes=classes, d_state=d_state,
                    expand=expand, input_side=2 * patch * 2, final_norm=final_norm)
    assert param_count(cfg) == VimModel(cfg).num_parameters()


def test_toy_param_count():
    assert param_count(TOY) == VimModel(TOY).num_parameters() == 155396


def test_vim_tiny_budget():
    assert param_count(VIM_TINY) == 7_148_008
    assert abs(param_count(VIM_TINY) - 6.99e6) <= 0.05 * 6.99e6
    assert flops_estimate(VIM_TINY) > 0


def test_copy_is_independent(rng):
    model = VimModel(SMALL)
    twin = model.copy()
    x = image(rng)
    np.testing.assert_array_equal(model(x)[0].data, twin(x)[0].data)
    twin.head_bias.data += 1.0
    assert not np.array_equal(model(x)[0].data, twin(x)[0].data)
