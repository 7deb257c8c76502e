import struct
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from squeezetime import SyntheticVideoSpec, VideoRecord, generate_dataset, make_views, read_dataset, sample_clip
from squeezetime.data import (CLASSES, DatasetFormatError, clip_indices, crop_starts, flip_horizontal,
                              shuffle_frames, write_dataset)

SMALL = SyntheticVideoSpec(num_samples=3, resolution=(16, 16), length=8, object_size=3, seed=7)


def _video(length, h=4, w=4):
    frames = np.arange(3 * length * h * w, dtype=np.float32).reshape(3, length, h, w)
    return VideoRecord(frames, 0)


def test_same_seed_is_byte_identical():
    a, b = generate_dataset(SMALL), generate_dataset(SMALL)
    assert all(x.frames.tobytes() == y.frames.tobytes() and x.label == y.label for x, y in zip(a, b))
    c = generate_dataset(replace(SMALL, seed=8))
    assert any(x.frames.tobytes() != y.frames.tobytes() for x, y in zip(a, c))


def test_layout_labels_and_range():
    recs = generate_dataset(SMALL)
    assert len(recs) == 3 * len(CLASSES)
    assert [r.label for r in recs] == [c for c in range(4) for _ in range(3)]
    for r in recs:
        assert r.frames.shape == (3, 8, 16, 16) and r.frames.dtype == np.float32
        assert r.frames.min() >= 0 and r.frames.max() <= 1


def _centroids(frames):
    m = frames[0]
    rows = np.arange(m.shape[1])[None, :, None]
    cols = np.arange(m.shape[2])[None, None, :]
    tot = m.sum(axis=(1, 2))
    return (m * rows).sum(axis=(1, 2)) / tot, (m * cols).sum(axis=(1, 2)) / tot


def test_move_right_column_centroid_increases_without_noise():
    # a large arena keeps the square from wrapping over the few frames checked
    spec = SyntheticVideoSpec(num_samples=5, resolution=(64, 64), length=6, object_size=4, noise_std=0.0, seed=3)
    for r in generate_dataset(spec):
        if r.label != 0:
            continue
        _, c = _centroids(r.frames)
        steps = np.diff(c)
        # every step moves right by one pixel unless the square is mid-wrap
        assert np.all((steps == 1) | (steps < 0))
        assert np.sum(steps < 0) <= 1


@pytest.mark.parametrize("label,axis,sign", [(0, 1, 1), (1, 1, -1), (2, 0, -1), (3, 0, 1)])
def test_every_direction_moves_one_pixel_on_the_torus(label, axis, sign):
    spec = SyntheticVideoSpec(num_samples=2, resolution=(20, 20), length=10, object_size=3, noise_std=0.0, seed=1)
    for r in generate_dataset(spec):
        if r.label != label:
            continue
        mask = r.frames[0] > 0.5
        for t in range(9):
            assert np.array_equal(np.roll(mask[t], sign, axis=axis), mask[t + 1])


def test_frame_means_do_not_depend_on_class():
    spec = SyntheticVideoSpec(num_samples=100, resolution=(24, 24), length=6, object_size=4, seed=5)
    recs = generate_dataset(spec)
    means = np.array([[r.frames[:, t].mean() for t in range(6)] for r in recs]).reshape(4, 100, 6).mean(axis=1)
    assert np.max(np.abs(means - means.mean(axis=0))) < 1e-3


def test_arena_confines_motion_to_the_centre():
    spec = SyntheticVideoSpec(num_samples=2, resolution=(24, 24), length=12, object_size=3, noise_std=0.0,
                              arena=12, seed=0)
    for r in generate_dataset(spec):
        lit = r.frames[0].max(axis=0) > 0.5
        rows, cols = np.nonzero(lit)
        assert rows.min() >= 6 and rows.max() < 18 and cols.min() >= 6 and cols.max() < 18


def test_object_larger_than_frame_is_rejected():
    with pytest.raises(ValueError):
        generate_dataset(SyntheticVideoSpec(resolution=(8, 8), object_size=9))
    with pytest.raises(ValueError):
        generate_dataset(SyntheticVideoSpec(resolution=(48, 48), arena=4, object_size=6))


def test_sqvd_roundtrip(tmp_path):
    recs = generate_dataset(SMALL)
    path = tmp_path / "d.sqvd"
    write_dataset(path, recs)
    back = read_dataset(path)
    assert len(back) == len(recs)
    for a, b in zip(recs, back):
        assert a.label == b.label and np.array_equal(a.frames, b.frames)
    raw = path.read_bytes()
    assert raw[:4] == b"SQVD"
    assert struct.unpack_from("<4sHIHHHHB", raw) == (b"SQVD", 1, 12, 3, 8, 16, 16, 0)


def test_empty_dataset_roundtrip(tmp_path):
    write_dataset(tmp_path / "e.sqvd", [])
    assert read_dataset(tmp_path / "e.sqvd") == []


@pytest.mark.parametrize("corrupt", [
    lambda raw: b"XXXX" + raw[4:],
    lambda raw: raw[:4] + struct.pack("<H", 9) + raw[6:],
    lambda raw: raw[:-1],
    lambda raw: raw + b"\0",
    lambda raw: raw[:10],
    lambda raw: raw[:18] + b"\x05" + raw[19:],
])
def test_corrupt_sqvd_is_rejected(tmp_path, corrupt):
    path = tmp_path / "d.sqvd"
    write_dataset(path, generate_dataset(SMALL))
    path.write_bytes(corrupt(path.read_bytes()))
    with pytest.raises(DatasetFormatError):
        read_dataset(path)


def test_dense_sampling_examples():
    assert clip_indices(64, 16, 4, 0).tolist() == list(range(0, 64, 4))
    assert clip_indices(10, 4, 4, 0).tolist() == [0, 4, 8, 2]
    assert clip_indices(10, 4, 4, 3).tolist() == [3, 7, 1, 5]
    v = _video(10)
    assert np.array_equal(sample_clip(v, 4, 4, 0), v.frames[:, [0, 4, 8, 2]])


@settings(max_examples=50, deadline=None)
@given(length=st.integers(1, 40), t=st.integers(1, 20), interval=st.integers(1, 8), offset=st.integers(0, 80))
def test_offset_shifts_indices_mod_length(length, t, interval, offset):
    base = clip_indices(length, t, interval, 0)
    assert np.array_equal(clip_indices(length, t, interval, offset), (base + offset) % length)


def test_views_count_and_order():
    v = _video(20, 8, 8)
    views = make_views(v, 4, 2, 10, 3, (6, 6))
    assert len(views) == 30 and all(x.shape == (3, 4, 6, 6) for x in views)
    # clip-major: the first three share the clip at offset 0
    assert np.array_equal(views[0], v.frames[:, [0, 2, 4, 6], 1:7, 0:6])
    assert np.array_equal(views[2], v.frames[:, [0, 2, 4, 6], 1:7, 2:8])
    assert np.array_equal(views[3], v.frames[:, [2, 4, 6, 8], 1:7, 0:6])


def test_single_full_frame_view_is_the_dense_clip():
    v = _video(12, 5, 5)
    (only,) = make_views(v, 4, 3, 1, 1, (5, 5))
    assert np.array_equal(only, sample_clip(v, 4, 3, 0))


def test_three_crops_tile_with_equal_overlap():
    starts = crop_starts(48, 32, 3)
    assert starts == [0, 8, 16]
    assert np.diff(starts).tolist() == [8, 8]
    assert crop_starts(48, 32, 1) == [8]


def test_portrait_frames_crop_along_height():
    v = _video(4, 10, 6)
    views = make_views(v, 2, 1, 1, 3, (6, 6))
    assert np.array_equal(views[0], v.frames[:, [0, 1], 0:6, :])
    assert np.array_equal(views[2], v.frames[:, [0, 1], 4:10, :])


def test_crop_larger_than_frame_is_rejected():
    with pytest.raises(ValueError):
        make_views(_video(4), 2, 1, 1, 1, (5, 4))


def test_flip_swaps_left_and_right_only():
    clip = _video(2).frames
    for label, expect in ((0, 1), (1, 0), (2, 2), (3, 3)):
        out, new = flip_horizontal(clip, label)
        assert new == expect and np.array_equal(out, clip[..., ::-1])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1))
def test_shuffled_clip_keeps_the_frame_multiset(seed):
    clip = _video(6).frames
    out = shuffle_frames(clip, np.random.default_rng(seed))
    key = lambda a: sorted(a[:, t].tobytes() for t in range(a.shape[1]))  # noqa: E731
    assert key(out) == key(clip)
