"""Image datasets: directory trees, LR caches, splits and the bundled texture set."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .exceptions import ContractError, ImageIOError
from .sr import bicubic_resize, load_image, save_image, synthesize_lr

IMAGE_SUFFIXES = (".png",)
CACHE_MANIFEST = "lr_manifest.json"


@dataclass
class ImageDataset:
    """Images ``[N, 3, H, W]`` in [0, 1] with integer labels."""

    images: np.ndarray
    labels: np.ndarray
    class_names: list[str]

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise ContractError(f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def side(self) -> int:
        return int(self.images.shape[-1])

    def subset(self, idx) -> "ImageDataset":
        return ImageDataset(self.images[idx], self.labels[idx], list(self.class_names))

    def downsample(self, size: int) -> "ImageDataset":
        return ImageDataset(synthesize_lr(self.images, size).astype(np.float32), self.labels.copy(),
                            list(self.class_names))

    def quantize(self) -> "ImageDataset":
        """Round to 8 bits, as a PNG round trip would."""
        q = np.round(np.clip(self.images, 0.0, 1.0) * 255.0) / 255.0
        return ImageDataset(q.astype(np.float32), self.labels.copy(), list(self.class_names))


def _class_dirs(root: Path) -> list[Path]:
    if not root.is_dir():
        raise ImageIOError(f"dataset root not found: {root}")
    return sorted(p for p in root.iterdir() if p.is_dir())


def _image_files(class_dir: Path) -> list[Path]:
    return sorted(p for p in class_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def load_dataset(root) -> ImageDataset:
    """Read ``<root>/<class_name>/<image>.png``; classes are numbered in sorted order."""
    root = Path(root)
    images, labels, names = [], [], []
    for label, cdir in enumerate(_class_dirs(root)):
        names.append(cdir.name)
        for f in _image_files(cdir):
            images.append(load_image(f))
            labels.append(label)
    if not images:
        raise ContractError(f"dataset at {root} contains no images")
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise ContractError(f"dataset at {root} mixes image shapes {sorted(shapes)}")
    return ImageDataset(np.stack(images), np.array(labels), names)


def save_dataset(ds: ImageDataset, root) -> Path:
    root = Path(root)
    counters: dict[int, int] = {}
    for img, label in zip(ds.images, ds.labels):
        k = counters.get(int(label), 0)
        counters[int(label)] = k + 1
        save_image(img, root / ds.class_names[label] / f"{k:05d}.png")
    return root


def lr_cache_root(root, size: int) -> Path:
    root = Path(root)
    return root.with_name(f"{root.name}_lr{size}")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def synth_lr_tree(root, size: int = 56, out_root=None) -> dict:
    """Mirror an HR tree into ``<root>_lr<size>/`` with bicubic down-sampling.

    A manifest records the checksum of every source and output file; files
    whose source and output both still match are skipped, so reruns write
    nothing.
    """
    root = Path(root)
    out_root = Path(out_root) if out_root is not None else lr_cache_root(root, size)
    manifest_path = out_root / CACHE_MANIFEST
    manifest = json.loads(manifest_path.read_text()) if manifest_path.is_file() else {}
    if manifest.get("size") != size:
        manifest = {"size": size, "files": {}}
    written = skipped = 0
    for cdir in _class_dirs(root):
        for src in _image_files(cdir):
            rel = f"{cdir.name}/{src.name}"
            dst = out_root / rel
            src_hash = _sha256(src)
            entry = manifest["files"].get(rel)
            if entry and entry["source"] == src_hash and dst.is_file() and _sha256(dst) == entry["output"]:
                skipped += 1
                continue
            save_image(synthesize_lr(load_image(src), size), dst)
            manifest["files"][rel] = {"source": src_hash, "output": _sha256(dst)}
            written += 1
    out_root.mkdir(parents=True, exist_ok=True)
    manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return {"out_root": str(out_root), "written": written, "skipped": skipped}


def stratified_split(labels, fraction: float = 0.1, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Index arrays ``(train, val)`` holding out ``fraction`` of every class (at least one each)."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    train, val = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        k = max(1, int(round(fraction * len(idx)))) if len(idx) > 1 else 0
        val.extend(idx[:k])
        train.extend(idx[k:])
    return np.sort(np.array(train, dtype=np.int64)), np.sort(np.array(val, dtype=np.int64))


# ---------------------------------------------------------------------------
# bundled texture dataset

TEXTURE_SOURCES = ("brick", "grass", "gravel", "moon")


def _texture(name: str) -> np.ndarray:
    from skimage import data as skdata

    img = np.asarray(getattr(skdata, name)(), dtype=np.float32) / 255.0
    if img.ndim == 3:
        img = img[..., :3].mean(axis=-1)
    return img


def _crops(source: np.ndarray, n: int, side: int, rng: np.random.Generator,
           scale_range: tuple[float, float]) -> np.ndarray:
    h, w = source.shape
    out = np.empty((n, 3, side, side), dtype=np.float32)
    for i in range(n):
        s = int(round(side * rng.uniform(*scale_range)))
        s = min(s, h, w)
        top = rng.integers(0, h - s + 1)
        left = rng.integers(0, w - s + 1)
        patch = bicubic_resize(source[top : top + s, left : left + s], side, side)
        patch = np.rot90(patch, rng.integers(4))
        if rng.integers(2):
            patch = patch[:, ::-1]
        tint = rng.uniform(0.85, 1.15, size=3)
        out[i] = np.clip(patch[None] * tint[:, None, None], 0.0, 1.0)
    return out


def make_texture_dataset(n_train: int = 150, n_test: int = 50, side: int = 64, seed: int = 0,
                         sources: Sequence[str] = TEXTURE_SOURCES,
                         scale_range: tuple[float, float] = (1.0, 2.0),
                         test_rows: float = 0.25) -> tuple[ImageDataset, ImageDataset]:
    """Random crops from bundled grayscale textures, one class per source image.

    Train crops come from the upper part of each source and test crops from the
    disjoint bottom ``test_rows`` fraction.
    """
    rng = np.random.default_rng(seed)
    tr_x, tr_y, te_x, te_y = [], [], [], []
    for label, name in enumerate(sources):
        img = _texture(name)
        cut = int(round(img.shape[0] * (1.0 - test_rows)))
        tr_x.append(_crops(img[:cut], n_train, side, rng, scale_range))
        te_x.append(_crops(img[cut:], n_test, side, rng, scale_range))
        tr_y.append(np.full(n_train, label))
        te_y.append(np.full(n_test, label))
    names = list(sources)
    train = ImageDataset(np.concatenate(tr_x), np.concatenate(tr_y), names)
    test = ImageDataset(np.concatenate(te_x), np.concatenate(te_y), names)
    return train, test


def paired_lr(hr: ImageDataset, size: int, root: Optional[Path] = None) -> ImageDataset:
    """LR counterpart of ``hr``: read from an existing cache tree if given, else synthesised."""
    if root is not None and Path(root).is_dir():
        lr = load_dataset(root)
        if lr.class_names != hr.class_names or len(lr) != len(hr):
            raise ContractError(f"LR cache {root} does not mirror its HR dataset")
        return lr
    return hr.downsample(size)
