"""Downstream adapters: long-video window splitting and the detection reshape."""
from __future__ import annotations

import numpy as np

from .nn.ops import ShapeError


def sliding_window_clips(n_frames: int, window: int, stride: int, mode: str = "exact") -> list[int]:
    """Start indices of ``window``-frame clips spaced by ``stride``.

    ``exact`` keeps windows that fit entirely; ``cover`` adds one window
    ending at the last frame when ``exact`` leaves a tail uncovered.
    256 frames with window 16 and stride 8 give 31 clips in both modes.
    """
    if mode not in ("exact", "cover"):
        raise ValueError(f"mode must be 'exact' or 'cover', got {mode!r}")
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be >= 1")
    if window > n_frames:
        raise ValueError(f"window {window} longer than the video ({n_frames} frames)")
    starts = list(range(0, n_frames - window + 1, stride))
    if mode == "cover" and starts[-1] + window < n_frames:
        starts.append(n_frames - window)
    return starts


def detection_reshape(feature: np.ndarray, frames: int) -> np.ndarray:
    """``(C, h, w)`` or ``(n, C, h, w)`` -> ``(..., C // T, T, h, w)``.

    Channel ``c`` lands at ``(c // T, c % T)``, the same ordering as the
    time squeeze.
    """
    feature = np.asarray(feature)
    if feature.ndim not in (3, 4):
        raise ShapeError(f"expected (C, h, w) or (n, C, h, w), got {feature.shape}")
    c = feature.shape[-3]
    if frames < 1 or c % frames:
        raise ShapeError(f"{c} channels not divisible by T={frames}")
    return feature.reshape(*feature.shape[:-3], c // frames, frames, *feature.shape[-2:])


def detection_unreshape(feature: np.ndarray) -> np.ndarray:
    """Inverse of :func:`detection_reshape`."""
    feature = np.asarray(feature)
    if feature.ndim not in (4, 5):
        raise ShapeError(f"expected (C/T, T, h, w) or (n, C/T, T, h, w), got {feature.shape}")
    g, t = feature.shape[-4:-2]
    return feature.reshape(*feature.shape[:-4], g * t, *feature.shape[-2:])
