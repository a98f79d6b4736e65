"""Binary named-tensor checkpoints.

Layout (all integers little-endian)::

    b"VIMD" | u32 version | u64 n | n bytes UTF-8 JSON metadata
    then, until EOF, tensor records:
    u32 name_len | name (UTF-8) | u32 rank | u64 dim * rank | float32 payload
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .exceptions import CheckpointError, ContractError

MAGIC = b"VIMD"
VERSION = 1


@dataclass
class Checkpoint:
    metadata: dict = field(default_factory=dict)
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def group(self, prefix: str) -> dict[str, np.ndarray]:
        """Tensors under ``prefix.`` with the prefix stripped."""
        p = prefix + "."
        return {k[len(p):]: v for k, v in self.tensors.items() if k.startswith(p)}


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    meta = json.dumps(ckpt.metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<IQ", VERSION, len(meta)), meta]
    for name, arr in ckpt.tensors.items():
        arr = np.asarray(arr)
        if not np.issubdtype(arr.dtype, np.floating):
            raise CheckpointError(f"tensor {name!r} has non-float dtype {arr.dtype}")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_checkpoint(buf: bytes, source: str = "<bytes>") -> Checkpoint:
    view = memoryview(buf)
    pos = 0

    def take(n: int, what: str) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError(f"{source}: truncated file while reading {what} (offset {pos})")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(4, "magic")) != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint (bad magic)")
    version, meta_len = struct.unpack("<IQ", take(12, "header"))
    if version != VERSION:
        raise CheckpointError(f"{source}: unsupported format version {version} (expected {VERSION})")
    try:
        metadata = json.loads(bytes(take(meta_len, "metadata")).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{source}: corrupt metadata block: {exc}") from exc
    tensors: dict[str, np.ndarray] = {}
    while pos < len(view):
        (name_len,) = struct.unpack("<I", take(4, "tensor name length"))
        name = bytes(take(name_len, "tensor name")).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4, f"rank of {name!r}"))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank, f"dims of {name!r}"))
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        payload = take(4 * count, f"payload of {name!r}")
        if name in tensors:
            raise CheckpointError(f"{source}: duplicate tensor {name!r}")
        tensors[name] = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(dims)
    return Checkpoint(metadata, tensors)


def write_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode_checkpoint(ckpt))
    tmp.replace(path)
    return path


def read_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes(), str(path))


# ---------------------------------------------------------------------------
# model-level helpers


def save_checkpoint(path, model, optimizer=None, config: Optional[Mapping] = None,
                    state: Optional[Mapping] = None, extra: Optional[Mapping[str, np.ndarray]] = None,
                    sr=None) -> Path:
    """Persist model parameters, optional optimizer moments, config and training state."""
    meta = {
        "kind": "vimd-checkpoint",
        "model_config": model.config.to_dict(),
        "config": dict(config or {}),
        "state": dict(state or {}),
    }
    tensors = {f"model.{k}": v.data for k, v in model.named_parameters().items()}
    if optimizer is not None:
        meta["optimizer"] = {
            "step": optimizer.step_count, "lr": optimizer.lr, "betas": [optimizer.beta1, optimizer.beta2],
            "eps": optimizer.eps, "weight_decay": optimizer.weight_decay,
        }
        tensors.update(optimizer.state_tensors())
    if sr is not None:
        meta["sr_config"] = sr.config()
        tensors.update({f"sr.{k}": v for k, v in sr.state_dict().items()})
    for k, v in (extra or {}).items():
        tensors[f"extra.{k}"] = v
    return write_checkpoint(Checkpoint(meta, tensors), path)


def check_config_match(stored: Mapping, expected: Mapping, what: str = "model") -> None:
    """Raise naming the first architectural field that differs."""
    for key in sorted(set(stored) | set(expected)):
        if stored.get(key) != expected.get(key):
            raise ContractError(
                f"{what} config mismatch on {key!r}: checkpoint has {stored.get(key)!r}, expected {expected.get(key)!r}"
            )


def load_model_state(ckpt: Checkpoint, model) -> None:
    """Load ``model.*`` tensors into ``model`` after checking the architecture."""
    check_config_match(ckpt.metadata.get("model_config", {}), model.config.to_dict())
    state = ckpt.group("model")
    own = model.named_parameters()
    unknown = sorted(set(state) - set(own))
    if unknown:
        raise CheckpointError(f"checkpoint contains unknown tensor {unknown[0]!r}")
    missing = sorted(set(own) - set(state))
    if missing:
        raise CheckpointError(f"checkpoint is missing tensor {missing[0]!r}")
    model.load_state_dict(state)


def load_model(path):
    """Build a :class:`~vimd.network.VimModel` from a checkpoint file."""
    from .network import VimConfig, VimModel

    ckpt = read_checkpoint(path)
    if "model_config" not in ckpt.metadata:
        raise CheckpointError(f"{path}: metadata has no model_config")
    model = VimModel(VimConfig.from_dict(ckpt.metadata["model_config"]))
    load_model_state(ckpt, model)
    return model, ckpt
