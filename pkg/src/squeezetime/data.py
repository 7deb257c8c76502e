"""Synthetic direction-of-motion videos, the SQVD file format, dense clip
sampling and multi-view (clip x crop) construction.

Each video shows one bright square translating in one of four directions on
a wrap-around arena. Start positions are uniform over the whole arena, so
the position distribution of any single frame is the same for every class;
only frame order reveals the label.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CLASSES = ("move_right", "move_left", "move_up", "move_down")
# (d_row, d_col) per class; rows grow downwards
DIRECTIONS = ((0, 1), (0, -1), (-1, 0), (1, 0))
FLIP_LABEL = (1, 0, 2, 3)

MAGIC = b"SQVD"
VERSION = 1
_HEADER = struct.Struct("<4sHIHHHHB")
_DTYPES = {0: np.dtype("<f4")}


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticVideoSpec:
    num_samples: int = 50  # per class
    resolution: tuple[int, int] = (48, 48)
    length: int = 32
    object_size: int = 6
    noise_std: float = 0.05
    speed: int = 1
    arena: int | None = None  # side of the centred wrap-around region; None = whole frame
    seed: int = 0

    def arena_shape(self) -> tuple[int, int]:
        h, w = self.resolution
        if self.arena is None:
            return h, w
        return min(self.arena, h), min(self.arena, w)


@dataclass
class VideoRecord:
    frames: np.ndarray  # (3, L, h, w) float32 in [0, 1]
    label: int

    @property
    def length(self) -> int:
        return self.frames.shape[1]


def generate_dataset(spec: SyntheticVideoSpec) -> list[VideoRecord]:
    h, w = spec.resolution
    ah, aw = spec.arena_shape()
    s = spec.object_size
    if s < 1 or s > ah or s > aw:
        raise ValueError(f"object size {s} does not fit the {ah}x{aw} arena")
    if spec.num_samples < 0 or spec.length < 1:
        raise ValueError("num_samples must be >= 0 and length >= 1")
    top, left = (h - ah) // 2, (w - aw) // 2
    rng = np.random.default_rng(spec.seed)
    t = np.arange(spec.length)
    records = []
    for label, (dr, dc) in enumerate(DIRECTIONS):
        for _ in range(spec.num_samples):
            r0, c0 = rng.integers(ah), rng.integers(aw)
            frames = np.zeros((3, spec.length, h, w), np.float32)
            rows = (r0 + dr * spec.speed * t[:, None] + np.arange(s)) % ah + top
            cols = (c0 + dc * spec.speed * t[:, None] + np.arange(s)) % aw + left
            for i in range(spec.length):
                frames[:, i, rows[i][:, None], cols[i][None, :]] = 1.0
            if spec.noise_std > 0:
                frames += rng.normal(0.0, spec.noise_std, frames.shape).astype(np.float32)
                np.clip(frames, 0.0, 1.0, out=frames)
            records.append(VideoRecord(frames, label))
    return records


def write_dataset(path: str | Path, records: list[VideoRecord]) -> None:
    if records:
        c, length, h, w = records[0].frames.shape
    else:
        c, length, h, w = 3, 0, 0, 0
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(records), c, length, h, w, 0))
        for rec in records:
            if rec.frames.shape != (c, length, h, w):
                raise DatasetFormatError(f"record shape {rec.frames.shape} != {(c, length, h, w)}")
            fh.write(np.ascontiguousarray(rec.frames, dtype="<f4").tobytes())
            fh.write(struct.pack("<B", rec.label))


def read_dataset(path: str | Path) -> list[VideoRecord]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DatasetFormatError("file too short for an SQVD header")
    magic, version, n, c, length, h, w, tag = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DatasetFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise DatasetFormatError(f"unsupported SQVD version {version}")
    if tag not in _DTYPES:
        raise DatasetFormatError(f"unknown dtype tag {tag}")
    count = c * length * h * w
    rec_size = count * 4 + 1
    if len(raw) != _HEADER.size + n * rec_size:
        raise DatasetFormatError("file size does not match header")
    records = []
    pos = _HEADER.size
    for _ in range(n):
        frames = np.frombuffer(raw, _DTYPES[tag], count, pos).reshape(c, length, h, w).astype(np.float32)
        records.append(VideoRecord(frames, raw[pos + count * 4]))
        pos += rec_size
    return records


def clip_indices(length: int, frames: int, interval: int, offset: int) -> np.ndarray:
    if frames < 1 or interval < 1:
        raise ValueError("frames and interval must be >= 1")
    return (offset + interval * np.arange(frames)) % length


def sample_clip(video: VideoRecord, frames: int, interval: int, offset: int = 0) -> np.ndarray:
    """Dense sampling: frames ``offset + i * interval`` (mod L), ``i < frames``."""
    return video.frames[:, clip_indices(video.length, frames, interval, offset)]


def crop_starts(size: int, crop: int, n: int) -> list[int]:
    """``n`` crop origins spread evenly from one edge to the other (centre for n=1)."""
    if crop > size:
        raise ValueError(f"crop {crop} larger than frame extent {size}")
    if n == 1:
        return [(size - crop) // 2]
    return [round(i * (size - crop) / (n - 1)) for i in range(n)]


def center_crop(clip: np.ndarray, crop: tuple[int, int]) -> np.ndarray:
    h, w = clip.shape[-2:]
    ch, cw = crop
    if ch > h or cw > w:
        raise ValueError(f"crop {crop} larger than frame {h}x{w}")
    top, left = (h - ch) // 2, (w - cw) // 2
    return clip[..., top:top + ch, left:left + cw]


def make_views(video: VideoRecord, frames: int, interval: int, n_clips: int, n_crops: int,
               crop: tuple[int, int]) -> list[np.ndarray]:
    """``n_clips * n_crops`` views, clip-major.

    Clip offsets are spaced evenly over the video length; crops run along
    the longer frame axis (width for square frames) and are centred on the
    other one.
    """
    h, w = video.frames.shape[-2:]
    ch, cw = crop
    if ch > h or cw > w:
        raise ValueError(f"crop {crop} larger than frame {h}x{w}")
    if n_clips < 1 or n_crops < 1:
        raise ValueError("n_clips and n_crops must be >= 1")
    if h > w:
        spots = [(top, (w - cw) // 2) for top in crop_starts(h, ch, n_crops)]
    else:
        spots = [((h - ch) // 2, left) for left in crop_starts(w, cw, n_crops)]
    views = []
    for i in range(n_clips):
        clip = sample_clip(video, frames, interval, (i * video.length) // n_clips)
        for top, left in spots:
            views.append(clip[..., top:top + ch, left:left + cw])
    return views


def flip_horizontal(clip: np.ndarray, label: int) -> tuple[np.ndarray, int]:
    return clip[..., ::-1], FLIP_LABEL[label]


def shuffle_frames(clip: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return clip[:, rng.permutation(clip.shape[1])]
