import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from PIL import Image

from vimd import tensor as T
from vimd.exceptions import ImageIOError, ShapeError
from vimd.optim import AdamW
from vimd.sr import (
    SrGenerator, bicubic_matrix, bicubic_resize, cubic_kernel, load_image, save_image, sr_generate,
    super_resolve, synthesize_lr,
)
from vimd.tensor import Tensor, backward


def test_cubic_kernel_knots():
    np.testing.assert_allclose(cubic_kernel(np.array([0.0, 1.0, 2.0, 2.5])), [1.0, 0.0, 0.0, 0.0], atol=1e-15)
    assert cubic_kernel(np.array([0.5]))[0] == pytest.approx(0.5625)


@given(st.integers(1, 80), st.integers(1, 80), st.booleans())
def test_rows_sum_to_one(n_in, n_out, antialias):
    W = bicubic_matrix(n_in, n_out, antialias)
    assert W.shape == (n_out, n_in)
    np.testing.assert_allclose(W.sum(axis=1), 1.0, atol=1e-6)


@given(st.floats(0, 1), st.integers(1, 40), st.integers(1, 40))
def test_constant_image_stays_constant(value, h, w):
    out = bicubic_resize(np.full((3, 12, 12), value), h, w)
    assert out.shape == (3, h, w)
    np.testing.assert_allclose(out, value, atol=1e-9)


def test_lr_synthesis_shape():
    assert synthesize_lr(np.zeros((3, 224, 224), np.float32), 56).shape == (3, 56, 56)


@pytest.mark.parametrize("side,small", [(224, 56), (64, 16)])
def test_ramp_survives_down_and_up(side, small):
    ramp = np.tile(np.linspace(0.0, 1.0, side), (side, 1))[None].repeat(3, axis=0)
    back = bicubic_resize(bicubic_resize(ramp, small, small), side, side)
    inner = (slice(None), slice(4, -4), slice(4, -4))
    assert np.abs(back[inner] - ramp[inner]).mean() <= 1e-2


def test_upsampling_interpolates_sample_points():
    # with x4 upsampling and half-pixel centres, no output lands on an input sample;
    # a x1 resize must return the input unchanged
    img = np.random.default_rng(0).uniform(size=(3, 9, 9))
    np.testing.assert_allclose(bicubic_resize(img, 9, 9), img, atol=1e-12)


def test_fresh_generator_equals_bicubic(rng):
    gen = SrGenerator(channels=8, n_blocks=1)
    x = rng.uniform(0.1, 0.9, (2, 3, 8, 8)).astype(np.float32)
    expected = np.clip(bicubic_resize(x, 32, 32), 0, 1)
    np.testing.assert_array_equal(gen(x).data, expected)
    np.testing.assert_array_equal(SrGenerator(mode="bicubic")(x).data, expected)


def test_output_is_4x_and_clamped(rng):
    gen = SrGenerator(channels=8, n_blocks=1)
    gen.params["tail.w"].data[:] = rng.normal(size=gen.params["tail.w"].shape).astype(np.float32)
    out = gen(rng.uniform(0, 1, (3, 14, 14)).astype(np.float32)).data
    assert out.shape == (3, 56, 56)
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_side_contract():
    gen = SrGenerator(mode="bicubic")
    assert sr_generate(np.zeros((3, 56, 56), np.float32), gen, out_side=224).shape == (3, 224, 224)
    with pytest.raises(ShapeError):
        sr_generate(np.zeros((3, 50, 50), np.float32), gen, out_side=224)
    with pytest.raises(ShapeError):
        gen(np.zeros((1, 8, 8), np.float32))


def test_frozen_generator_is_untouched_by_a_training_step(rng):
    gen = SrGenerator(channels=8, n_blocks=1, frozen=True)
    before = gen.state_dict()
    x = Tensor(rng.uniform(0, 1, (2, 3, 8, 8)).astype(np.float32), requires_grad=True)
    backward(T.tsum(gen(x)))
    assert all(p.grad is None for p in gen.parameters())
    assert x.grad is not None and np.any(x.grad != 0)
    AdamW(gen.named_parameters(), lr=0.1).step()
    for k, v in gen.state_dict().items():
        np.testing.assert_array_equal(v, before[k])


def test_unfrozen_generator_learns(rng):
    gen = SrGenerator(channels=8, n_blocks=1, frozen=False)
    before = gen.state_dict()
    x = Tensor(rng.uniform(0.2, 0.8, (2, 3, 8, 8)).astype(np.float32))
    backward(T.tsum(gen(x)))
    AdamW(gen.named_parameters(), lr=0.1).step()
    assert not np.array_equal(gen.state_dict()["tail.w"], before["tail.w"])


def test_super_resolve_batches(rng):
    x = rng.uniform(0, 1, (5, 3, 4, 4)).astype(np.float32)
    gen = SrGenerator(mode="bicubic")
    np.testing.assert_array_equal(super_resolve(x, gen, batch_size=2), gen(x).data)


def test_png_round_trip(tmp_path, rng):
    img = rng.uniform(0, 1, (3, 11, 7)).astype(np.float32)
    save_image(img, tmp_path / "sub" / "a.png")
    back = load_image(tmp_path / "sub" / "a.png")
    assert back.dtype == np.float32 and back.shape == (3, 11, 7)
    assert np.abs(back - img).max() <= 1 / 255


def test_grayscale_is_replicated(tmp_path):
    Image.fromarray(np.arange(16, dtype=np.uint8).reshape(4, 4) * 10, mode="L").save(tmp_path / "g.png")
    img = load_image(tmp_path / "g.png")
    assert img.shape == (3, 4, 4)
    np.testing.assert_array_equal(img[0], img[1])
    np.testing.assert_array_equal(img[1], img[2])


def test_bad_files_raise_image_errors(tmp_path):
    (tmp_path / "x.png").write_text("not an image")
    with pytest.raises(ImageIOError, match="x.png"):
        load_image(tmp_path / "x.png")
    with pytest.raises(ImageIOError, match="missing.png"):
        load_image(tmp_path / "missing.png")
    with pytest.raises(ShapeError):
        save_image(np.zeros((4, 2, 2)), tmp_path / "y.png")
