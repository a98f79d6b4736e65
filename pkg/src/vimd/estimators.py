"""scikit-learn style wrappers around the ViM classifier and the SR front end."""

from __future__ import annotations

from dataclasses import replace
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_is_fitted

from .data import ImageDataset
from .distill import DistillConfig
from .exceptions import ShapeError
from .network import VimConfig
from .ops import softmax
from .sr import SrGenerator, bicubic_resize, super_resolve
from .tensor import Tensor
from .training import (
    TOY_TRAIN, TrainConfig, _forward_logits, fit_sr_generator, train_student, train_teacher,
)


def check_images(X, channels: int = 3, side: Optional[int] = None, name: str = "X") -> np.ndarray:
    """Validate a batch of square images ``[N, C, H, W]`` and return it as float32.

    Channel-last input ``[N, H, W, C]`` is transposed; values must lie in [0, 1].
    """
    X = np.asarray(X.data if isinstance(X, Tensor) else X)
    if X.ndim != 4:
        raise ShapeError(f"{name} must be a 4-d image batch, got shape {X.shape}")
    if X.shape[1] != channels and X.shape[-1] == channels:
        X = X.transpose(0, 3, 1, 2)
    if X.shape[1] != channels:
        raise ShapeError(f"{name} must have {channels} channels, got shape {X.shape}")
    if X.shape[2] != X.shape[3]:
        raise ShapeError(f"{name} images must be square, got {X.shape[2]}x{X.shape[3]}")
    if side is not None and X.shape[2] != side:
        raise ShapeError(f"{name} images must be {side}x{side}, got {X.shape[2]}x{X.shape[3]}")
    if len(X) == 0:
        raise ShapeError(f"{name} is empty")
    X = np.ascontiguousarray(X, dtype=np.float32)
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains NaN or infinity")
    if X.min() < 0.0 or X.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1], got range [{X.min():.3g}, {X.max():.3g}]")
    return X


def _encode_labels(y, classes: np.ndarray) -> np.ndarray:
    y = np.asarray(y)
    idx = np.searchsorted(classes, y)
    idx = np.clip(idx, 0, len(classes) - 1)
    if not np.all(classes[idx] == y):
        raise ValueError("y contains labels that were not seen during fit")
    return idx


class VimClassifier(ClassifierMixin, BaseEstimator):
    """ViM image classifier trained from scratch with cross entropy."""

    def __init__(self, embed_dim: int = 64, depth: int = 4, patch_size: int = 8, d_state: int = 8,
                 expand: int = 2, final_norm: bool = True, epochs: int = 30, lr_init: float = 3e-4,
                 batch_size: int = 16, weight_decay: float = 0.05, val_fraction: float = 0.1,
                 hflip: bool = True, random_state: int = 0):
        self.embed_dim = embed_dim
        self.depth = depth
        self.patch_size = patch_size
        self.d_state = d_state
        self.expand = expand
        self.final_norm = final_norm
        self.epochs = epochs
        self.lr_init = lr_init
        self.batch_size = batch_size
        self.weight_decay = weight_decay
        self.val_fraction = val_fraction
        self.hflip = hflip
        self.random_state = random_state

    def _model_config(self, side: int, n_classes: int) -> VimConfig:
        return VimConfig(embed_dim=self.embed_dim, depth=self.depth, patch_size=self.patch_size,
                         num_classes=n_classes, d_state=self.d_state, expand=self.expand,
                         input_side=side, final_norm=self.final_norm)

    def _train_config(self) -> TrainConfig:
        return replace(TOY_TRAIN, epochs=self.epochs, teacher_epochs=self.epochs, lr_init=self.lr_init,
                       batch_size=self.batch_size, weight_decay=self.weight_decay,
                       val_fraction=self.val_fraction, hflip=self.hflip, seed=int(self.random_state))

    def fit(self, X, y):
        X = check_images(X)
        if len(y) != len(X):
            raise ShapeError(f"X has {len(X)} images but y has {len(y)} labels")
        self.classes_ = unique_labels(y)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes to fit a classifier")
        codes = _encode_labels(y, self.classes_)
        ds = ImageDataset(X, codes, [str(c) for c in self.classes_])
        res = train_teacher(ds, self._model_config(X.shape[2], len(self.classes_)), self._train_config())
        self.model_ = res.model
        self.history_ = res.history
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def _inputs(self, X) -> np.ndarray:
        return check_images(X, side=self.model_.config.input_side)

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return _forward_logits(self.model_, self._inputs(X), 64)

    def predict_proba(self, X) -> np.ndarray:
        return softmax(Tensor(self.decision_function(X)), axis=-1).data

    def predict(self, X) -> np.ndarray:
        logits = self.decision_function(X)
        return self.classes_[np.argmax(logits, axis=1)]


class DistilledVimClassifier(VimClassifier):
    """LR-image classifier: SR front end plus ViM, distilled from an HR teacher.

    ``fit(X_lr, y, X_hr=...)`` first fits ``teacher`` on the HR images unless
    it is already fitted.  Prediction takes LR images only.
    """

    def __init__(self, teacher: Optional[VimClassifier] = None, alpha: float = 1.0, beta: float = 20.0,
                 delta_temp: float = 4.0, use_ld: bool = True, use_hsd: bool = True,
                 sr_mode: str = "bicubic", epochs: int = 15, lr_init: float = 3e-4, batch_size: int = 16,
                 weight_decay: float = 0.05, val_fraction: float = 0.1, hflip: bool = True,
                 random_state: int = 0):
        self.teacher = teacher
        self.alpha = alpha
        self.beta = beta
        self.delta_temp = delta_temp
        self.use_ld = use_ld
        self.use_hsd = use_hsd
        self.sr_mode = sr_mode
        self.epochs = epochs
        self.lr_init = lr_init
        self.batch_size = batch_size
        self.weight_decay = weight_decay
        self.val_fraction = val_fraction
        self.hflip = hflip
        self.random_state = random_state

    def fit(self, X, y, X_hr=None):
        X = check_images(X, name="X")
        if X_hr is None:
            raise ValueError("DistilledVimClassifier.fit needs the paired HR images as X_hr")
        X_hr = check_images(X_hr, name="X_hr")
        if len(X_hr) != len(X) or len(y) != len(X):
            raise ShapeError(f"X ({len(X)}), X_hr ({len(X_hr)}) and y ({len(y)}) must have equal length")
        teacher = self.teacher if self.teacher is not None else VimClassifier(random_state=self.random_state)
        try:
            check_is_fitted(teacher, "model_")
        except Exception:
            teacher.fit(X_hr, y)
        self.teacher_ = teacher
        self.classes_ = teacher.classes_
        codes = _encode_labels(y, self.classes_)
        names = [str(c) for c in self.classes_]
        self.sr_ = SrGenerator(mode=self.sr_mode)
        cfg = DistillConfig(alpha=self.alpha, beta=self.beta, delta_temp=self.delta_temp,
                            use_ld=self.use_ld, use_hsd=self.use_hsd)
        res = train_student(ImageDataset(X, codes, names), ImageDataset(X_hr, codes, names),
                            teacher.model_, cfg, self._train_config(), self.sr_)
        self.model_ = res.model
        self.history_ = res.history
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def _inputs(self, X) -> np.ndarray:
        side = self.model_.config.input_side // self.sr_.scale
        return super_resolve(check_images(X, side=side), self.sr_, 64)


class BicubicResizer(TransformerMixin, BaseEstimator):
    """Stateless bicubic resize of an image batch to ``size x size``."""

    def __init__(self, size: int = 16, antialias: bool = True):
        self.size = size
        self.antialias = antialias

    def fit(self, X, y=None):
        check_images(X)
        self.n_features_in_ = int(np.prod(np.shape(X)[1:]))
        return self

    def transform(self, X) -> np.ndarray:
        X = check_images(X)
        return np.clip(bicubic_resize(X, self.size, self.size, self.antialias), 0.0, 1.0)


class SuperResolver(TransformerMixin, BaseEstimator):
    """x4 SR front end; ``fit`` optionally trains the generator residual with per-pixel L2."""

    def __init__(self, mode: str = "generator", channels: int = 32, n_blocks: int = 4, epochs: int = 0,
                 lr_init: float = 1e-3, batch_size: int = 16, random_state: int = 0):
        self.mode = mode
        self.channels = channels
        self.n_blocks = n_blocks
        self.epochs = epochs
        self.lr_init = lr_init
        self.batch_size = batch_size
        self.random_state = random_state

    def fit(self, X, y=None, X_hr=None):
        X = check_images(X)
        self.generator_ = SrGenerator(self.channels, self.n_blocks, self.mode, frozen=True,
                                      seed=int(self.random_state))
        self.loss_curve_ = []
        if X_hr is not None and self.epochs > 0:
            X_hr = check_images(X_hr, side=4 * X.shape[2], name="X_hr")
            self.loss_curve_ = fit_sr_generator(self.generator_, X, X_hr, self.epochs, self.lr_init,
                                                self.batch_size, int(self.random_state))
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "generator_")
        return super_resolve(check_images(X), self.generator_, 64)
