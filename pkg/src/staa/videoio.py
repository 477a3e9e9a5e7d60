"""Video clip representation, synthetic clip generation, and frame-level IO.

A clip is an F x H x W x 3 uint8 tensor. Raw clip files are headerless
frame-major bytes; dimensions travel out-of-band (CLI flags or protocol
headers). Frame images are binary PPM (P6), readable without any library.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InvalidSpecError

PATCH_SIZE = 16

PATTERNS = ("uniform-noise", "moving-square", "static-square", "constant")


@dataclass(frozen=True)
class VideoClip:
    frames: np.ndarray  # (F, H, W, 3) uint8
    frame_rate: float = 30.0
    clip_id: str = ""

    def __post_init__(self):
        f = self.frames
        if f.ndim != 4 or f.shape[3] != 3:
            raise InvalidSpecError(f"clip tensor must be FxHxWx3, got shape {f.shape}")
        if min(f.shape[:3]) < 1:
            raise InvalidSpecError(f"clip dimensions must be positive, got {f.shape}")
        if f.dtype != np.uint8:
            raise InvalidSpecError(f"clip dtype must be uint8, got {f.dtype}")
        f.setflags(write=False)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]


@dataclass(frozen=True)
class ClipSpec:
    frames: int
    height: int
    width: int
    seed: int = 0
    pattern: str = "uniform-noise"

    def __post_init__(self):
        if self.frames < 1 or self.height < 1 or self.width < 1:
            raise InvalidSpecError(
                f"clip dimensions must be positive, got F={self.frames} "
                f"H={self.height} W={self.width}"
            )
        if self.pattern not in PATTERNS:
            raise InvalidSpecError(f"unknown pattern {self.pattern!r}, expected one of {PATTERNS}")


def generate_clip(spec: ClipSpec) -> VideoClip:
    """Deterministic synthetic clip: same spec always yields identical bytes."""
    rng = np.random.default_rng(spec.seed)
    shape = (spec.frames, spec.height, spec.width, 3)

    if spec.pattern == "uniform-noise":
        frames = rng.integers(0, 256, size=shape, dtype=np.uint8)
    elif spec.pattern == "constant":
        value = int(rng.integers(0, 256))
        frames = np.full(shape, value, dtype=np.uint8)
    elif spec.pattern in ("moving-square", "static-square"):
        # Dim noisy background with a bright PxP block; the moving variant
        # advances the block one patch per frame (wrapping over the grid),
        # giving a known spatio-temporal signal for oracle tests.
        frames = rng.integers(0, 64, size=shape, dtype=np.uint8)
        p = PATCH_SIZE
        grid_rows = max(spec.height // p, 1)
        grid_cols = max(spec.width // p, 1)
        n_patches = grid_rows * grid_cols
        for t in range(spec.frames):
            patch = t % n_patches if spec.pattern == "moving-square" else 0
            r, c = divmod(patch, grid_cols)
            r0, c0 = r * p, c * p
            frames[t, r0 : min(r0 + p, spec.height), c0 : min(c0 + p, spec.width), :] = 255
    else:  # pragma: no cover - guarded by ClipSpec validation
        raise InvalidSpecError(spec.pattern)

    clip_id = f"{spec.pattern}-F{spec.frames}x{spec.height}x{spec.width}-s{spec.seed}"
    return VideoClip(frames=frames, clip_id=clip_id)


def write_raw_clip(clip: VideoClip, path: str | os.PathLike) -> None:
    """Headerless frame-major RGB bytes, exactly F*H*W*3 of them."""
    with open(path, "wb") as fh:
        fh.write(clip.frames.tobytes())


def read_raw_clip(path: str | os.PathLike, frames: int, height: int, width: int) -> VideoClip:
    if frames < 1 or height < 1 or width < 1:
        raise InvalidSpecError(f"dimensions must be positive, got {frames}x{height}x{width}")
    expected = frames * height * width * 3
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) != expected:
        raise FormatError(
            f"{path}: expected {expected} bytes for {frames}x{height}x{width}x3, got {len(data)}"
        )
    tensor = np.frombuffer(data, dtype=np.uint8).reshape(frames, height, width, 3)
    return VideoClip(frames=tensor.copy(), clip_id=os.path.basename(os.fspath(path)))


def write_frame_image(frame: np.ndarray, path: str | os.PathLike) -> None:
    """Write one HxWx3 frame as binary PPM (P6, maxval 255)."""
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[2] != 3 or min(frame.shape[:2]) < 1:
        raise InvalidSpecError(f"frame must be HxWx3 with positive dimensions, got {frame.shape}")
    h, w = frame.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(frame.astype(np.uint8).tobytes())


def read_frame_image(path: str | os.PathLike) -> np.ndarray:
    """Parse a binary PPM written by write_frame_image."""
    with open(path, "rb") as fh:
        data = fh.read()
    fields = []
    pos = 0
    # Header is 4 whitespace-separated tokens: magic, width, height, maxval.
    while len(fields) < 4 and pos < len(data):
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if len(fields) != 4 or fields[0] != b"P6":
        raise FormatError(f"{path}: not a binary PPM")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise FormatError(f"{path}: unsupported maxval {maxval}")
    pos += 1  # single whitespace byte after maxval
    pixels = data[pos : pos + w * h * 3]
    if len(pixels) != w * h * 3:
        raise FormatError(f"{path}: expected {w * h * 3} pixel bytes, got {len(pixels)}")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w, 3).copy()
