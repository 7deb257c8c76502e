"""scikit-learn style wrapper around the network and trainer."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .config import ModelConfig
from .data import VideoRecord, center_crop, sample_clip
from .model import build_model
from .train import TrainConfig, Trainer, ViewConfig, multiview_scores


def check_videos(X, *, min_frames: int = 1) -> np.ndarray:
    """Validate a video batch: a finite float array ``(n, 3, L, h, w)``."""
    X = np.asarray(X)
    if X.ndim != 5 or X.shape[1] != 3:
        raise ValueError(f"expected videos shaped (n, 3, L, h, w), got {X.shape}")
    if X.shape[0] == 0:
        raise ValueError("got an empty batch")
    if X.shape[2] < min_frames:
        raise ValueError(f"videos have {X.shape[2]} frames, need at least {min_frames}")
    if not np.issubdtype(X.dtype, np.number):
        raise ValueError(f"videos must be numeric, got {X.dtype}")
    X = X.astype(np.float32, copy=False)
    if not np.all(np.isfinite(X)):
        raise ValueError("videos contain NaN or infinity")
    return X


def check_labels(y, n: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or len(y) != n:
        raise ValueError(f"expected {n} labels in a 1-D array, got shape {y.shape}")
    return y


class SqueezeTimeClassifier(ClassifierMixin, BaseEstimator):
    """Video classifier: videos ``(n, 3, L, h, w)`` in, class labels out.

    Clips of ``frames`` frames (stride ``interval``) are centre-cropped to
    ``resolution``; prediction averages softmax scores over ``n_clips``
    evenly spaced clips and ``n_crops`` crops.
    """

    def __init__(self, frames=4, resolution=32, stage_blocks=(1, 1, 1, 1), stage_channels=(8, 16, 32, 64),
                 stem_channels=8, channel_factor=1.0, variant="full", lr0=0.015, warmup_epochs=8,
                 epochs=30, batch_size=16, clips_per_video=4, interval=2, weight_decay=7e-5,
                 momentum=0.9, flip=False, n_clips=1, n_crops=1, seed=0):
        self.frames = frames
        self.resolution = resolution
        self.stage_blocks = stage_blocks
        self.stage_channels = stage_channels
        self.stem_channels = stem_channels
        self.channel_factor = channel_factor
        self.variant = variant
        self.lr0 = lr0
        self.warmup_epochs = warmup_epochs
        self.epochs = epochs
        self.batch_size = batch_size
        self.clips_per_video = clips_per_video
        self.interval = interval
        self.weight_decay = weight_decay
        self.momentum = momentum
        self.flip = flip
        self.n_clips = n_clips
        self.n_crops = n_crops
        self.seed = seed

    def _model_config(self, n_classes):
        res = self.resolution
        res = (res, res) if np.isscalar(res) else tuple(res)
        return ModelConfig(frames=self.frames, resolution=res, stage_blocks=tuple(self.stage_blocks),
                           stage_channels=tuple(self.stage_channels), stem_channels=self.stem_channels,
                           channel_factor=self.channel_factor, variant=self.variant, num_classes=n_classes)

    def _records(self, X, y=None):
        labels = [-1] * len(X) if y is None else y
        return [VideoRecord(v, int(t)) for v, t in zip(X, labels)]

    def fit(self, X, y):
        """``flip=True`` assumes the direction classes (left/right swap) and
        should only be used with those labels."""
        X = check_videos(X)
        y = check_labels(y, len(X))
        self.classes_, idx = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        mcfg = self._model_config(len(self.classes_))
        tcfg = TrainConfig(lr0=self.lr0, warmup_epochs=self.warmup_epochs, total_epochs=self.epochs,
                           weight_decay=self.weight_decay, momentum=self.momentum,
                           batch_size=self.batch_size, seed=self.seed, interval=self.interval,
                           flip=self.flip, clips_per_video=self.clips_per_video)
        trainer = Trainer(build_model(mcfg, seed=self.seed), tcfg, self._records(X, idx))
        trainer.fit()
        self.model_ = trainer.model
        self.history_ = trainer.history
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = check_videos(X)
        views = ViewConfig(self.n_clips, self.n_crops, self.interval)
        return multiview_scores(self.model_, self._records(X), views)

    def predict(self, X) -> np.ndarray:
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]

    def transform(self, X) -> np.ndarray:
        """Globally pooled final features ``(n, C_out)`` of the first
        centre-cropped clip of each video."""
        check_is_fitted(self, "model_")
        X = check_videos(X)
        c = self.model_.config
        clips = np.stack([center_crop(sample_clip(rec, c.frames, self.interval, 0), c.resolution)
                          for rec in self._records(X)])
        self.model_.eval()
        return self.model_.features(clips).mean(axis=(2, 3))

