import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from vimd.checkpoint import (
    MAGIC, VERSION, Checkpoint, decode_checkpoint, encode_checkpoint, load_model, load_model_state,
    read_checkpoint, save_checkpoint, write_checkpoint,
)
from vimd.exceptions import CheckpointError, ContractError
from vimd.network import VimConfig, VimModel
from vimd.optim import AdamW
from vimd.sr import SrGenerator

SMALL = VimConfig(embed_dim=8, depth=1, patch_size=8, num_classes=3, d_state=4, input_side=32)


def test_layout_matches_the_documented_format():
    blob = encode_checkpoint(Checkpoint({"a": 1}, {"w": np.array([[1.5, -2.0]], np.float32)}))
    assert blob[:4] == MAGIC
    version, meta_len = struct.unpack_from("<IQ", blob, 4)
    assert version == VERSION
    assert blob[16:16 + meta_len] == b'{"a":1}'
    pos = 16 + meta_len
    (name_len,) = struct.unpack_from("<I", blob, pos)
    assert blob[pos + 4:pos + 4 + name_len] == b"w"
    pos += 4 + name_len
    assert struct.unpack_from("<I2Q", blob, pos) == (2, 1, 2)
    pos += 4 + 16
    assert struct.unpack_from("<2f", blob, pos) == (1.5, -2.0)
    assert len(blob) == pos + 8


@given(st.dictionaries(st.text(min_size=1, max_size=8),
                       arrays(np.float32, array_shapes(min_dims=0, max_dims=3, max_side=4),
                              elements=st.floats(-1e6, 1e6, width=32)), max_size=4))
def test_tensor_round_trip_is_bit_exact(tensors):
    ckpt = Checkpoint({"k": [1, 2.5, "x"]}, tensors)
    back = decode_checkpoint(encode_checkpoint(ckpt))
    assert back.metadata == ckpt.metadata
    assert set(back.tensors) == set(tensors)
    for k, v in tensors.items():
        assert back.tensors[k].shape == v.shape
        assert back.tensors[k].tobytes() == v.tobytes()
    assert encode_checkpoint(back) == encode_checkpoint(ckpt)


def saved_model(tmp_path, rng):
    model = VimModel(SMALL, seed=3)
    opt = AdamW(model.named_parameters(), lr=0.01)
    for p in model.parameters():
        p.grad = rng.normal(size=p.shape).astype(np.float32)
    opt.step()
    path = save_checkpoint(tmp_path / "m.ckpt", model, opt, {"note": "x"}, {"epoch": 3},
                           sr=SrGenerator(channels=4, n_blocks=1))
    return model, path


def test_forward_is_bit_identical_after_reload(tmp_path, rng):
    model, path = saved_model(tmp_path, rng)
    x = rng.uniform(0, 1, (2, 3, 32, 32)).astype(np.float32)
    before, states_before = model(x)
    loaded, ckpt = load_model(path)
    after, states_after = loaded(x)
    assert before.data.tobytes() == after.data.tobytes()
    for a, b in zip(states_before, states_after):
        assert a.data.tobytes() == b.data.tobytes()
    assert ckpt.metadata["state"] == {"epoch": 3}
    assert ckpt.metadata["optimizer"]["step"] == 1
    assert set(ckpt.group("sr")) == set(SrGenerator(channels=4, n_blocks=1).params)


def test_save_load_save_is_byte_identical(tmp_path, rng):
    _, path = saved_model(tmp_path, rng)
    again = write_checkpoint(read_checkpoint(path), tmp_path / "again.ckpt")
    assert again.read_bytes() == path.read_bytes()


def test_version_mismatch(tmp_path, rng):
    _, path = saved_model(tmp_path, rng)
    blob = bytearray(path.read_bytes())
    blob[4:8] = struct.pack("<I", VERSION + 1)
    with pytest.raises(CheckpointError, match="version"):
        decode_checkpoint(bytes(blob))


@pytest.mark.parametrize("keep", [2, 10, 40, -3])
def test_truncation(tmp_path, rng, keep):
    _, path = saved_model(tmp_path, rng)
    blob = path.read_bytes()
    with pytest.raises(CheckpointError):
        decode_checkpoint(blob[:keep])


def test_bad_magic_and_missing_file(tmp_path):
    with pytest.raises(CheckpointError, match="magic"):
        decode_checkpoint(b"NOPE" + bytes(20))
    with pytest.raises(CheckpointError, match="not found"):
        read_checkpoint(tmp_path / "absent.ckpt")


def test_unknown_and_missing_tensor_names(tmp_path, rng):
    _, path = saved_model(tmp_path, rng)
    ckpt = read_checkpoint(path)
    extra = Checkpoint(ckpt.metadata, {**ckpt.tensors, "model.bogus": np.zeros(1, np.float32)})
    with pytest.raises(CheckpointError, match="bogus"):
        load_model_state(extra, VimModel(SMALL))
    short = Checkpoint(ckpt.metadata, {k: v for k, v in ckpt.tensors.items() if k != "model.head.bias"})
    with pytest.raises(CheckpointError, match="head.bias"):
        load_model_state(short, VimModel(SMALL))


def test_mismatched_config_names_the_dimension(tmp_path, rng):
    _, path = saved_model(tmp_path, rng)
    wider = VimModel(VimConfig(embed_dim=16, depth=1, patch_size=8, num_classes=3, d_state=4, input_side=32))
    with pytest.raises(ContractError, match="embed_dim"):
        load_model_state(read_checkpoint(path), wider)


def test_non_float_tensor_rejected():
    with pytest.raises(CheckpointError):
        encode_checkpoint(Checkpoint({}, {"i": np.arange(3)}))


def test_write_is_atomic(tmp_path):
    path = write_checkpoint(Checkpoint({}, {}), tmp_path / "c.ckpt")
    assert path.is_file()
    assert not list(tmp_path.glob("*.tmp"))
