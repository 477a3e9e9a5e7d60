import numpy as np
import pytest

from staa.errors import FormatError, InvalidSpecError
from staa.videoio import (
    ClipSpec, VideoClip, generate_clip, read_frame_image, read_raw_clip,
    write_frame_image, write_raw_clip,
)


def test_constant_pattern_is_constant():
    clip = generate_clip(ClipSpec(8, 32, 32, seed=3, pattern="constant"))
    assert np.all(clip.frames == clip.frames[0, 0, 0, 0])


def test_generation_is_deterministic():
    spec = ClipSpec(8, 32, 32, seed=7, pattern="moving-square")
    a = generate_clip(spec)
    b = generate_clip(spec)
    assert a.frames.tobytes() == b.frames.tobytes()


def test_moving_square_advances_one_patch_per_frame():
    clip = generate_clip(ClipSpec(2, 32, 32, seed=0, pattern="moving-square"))
    # frame 0: patch 0 (top-left 16x16) is bright; frame 1: patch 1
    assert np.all(clip.frames[0, :16, :16] == 255)
    assert np.all(clip.frames[1, :16, 16:] == 255)
    assert not np.all(clip.frames[1, :16, :16] == 255)


def test_invalid_spec_dimensions():
    with pytest.raises(InvalidSpecError):
        ClipSpec(0, 32, 32)
    with pytest.raises(InvalidSpecError):
        ClipSpec(8, 32, -1)


def test_raw_round_trip(tmp_path):
    clip = generate_clip(ClipSpec(8, 32, 32, seed=5))
    path = tmp_path / "clip.rgb"
    write_raw_clip(clip, path)
    assert path.stat().st_size == 8 * 32 * 32 * 3
    back = read_raw_clip(path, 8, 32, 32)
    assert np.array_equal(back.frames, clip.frames)


def test_raw_round_trip_random_specs(tmp_path):
    rng = np.random.default_rng(0)
    for i in range(20):
        f = int(rng.integers(1, 6))
        h = int(rng.integers(1, 4)) * 16
        w = int(rng.integers(1, 4)) * 16
        clip = generate_clip(ClipSpec(f, h, w, seed=i, pattern="uniform-noise"))
        path = tmp_path / f"c{i}.rgb"
        write_raw_clip(clip, path)
        assert np.array_equal(read_raw_clip(path, f, h, w).frames, clip.frames)


def test_truncated_raw_file_names_byte_counts(tmp_path):
    path = tmp_path / "short.rgb"
    path.write_bytes(b"\x00" * 100)
    with pytest.raises(FormatError, match="24576.*100"):
        read_raw_clip(path, 8, 32, 32)


def test_ppm_black_frame_bytes(tmp_path):
    path = tmp_path / "f.ppm"
    write_frame_image(np.zeros((2, 2, 3), dtype=np.uint8), path)
    assert path.read_bytes() == b"P6\n2 2\n255\n" + b"\x00" * 12


def test_ppm_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    frame = rng.integers(0, 256, size=(16, 32, 3), dtype=np.uint8)
    path = tmp_path / "f.ppm"
    write_frame_image(frame, path)
    assert np.array_equal(read_frame_image(path), frame)


def test_ppm_rejects_empty_frame(tmp_path):
    with pytest.raises(InvalidSpecError):
        write_frame_image(np.zeros((0, 4, 3), dtype=np.uint8), tmp_path / "x.ppm")


def test_clip_rejects_bad_tensor():
    with pytest.raises(InvalidSpecError):
        VideoClip(frames=np.zeros((2, 4, 4), dtype=np.uint8))
