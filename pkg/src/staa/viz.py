"""Heatmap overlays on frames and latency CDF emission.

Default colormap follows the unusual convention of the attribution
heatmaps this package renders: low importance is red, high importance is
blue, interpolating linearly through white. classic-jet is available as an
alternative.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import InvalidSpecError
from .videoio import VideoClip, write_frame_image

COLORMAPS = ("red-blue", "classic-jet")

# Declared endpoint anchors, hit exactly at 0 and 1.
_ANCHORS = {
    "red-blue": ((255, 0, 0), (0, 0, 255)),
    "classic-jet": ((0, 0, 128), (128, 0, 0)),
}


def colormap(value: float, name: str = "red-blue") -> tuple[int, int, int]:
    """Map a scalar in [0,1] to an RGB triple."""
    if name not in COLORMAPS:
        raise InvalidSpecError(f"unknown colormap {name!r}, expected one of {COLORMAPS}")
    v = float(np.clip(value, 0.0, 1.0))
    if name == "red-blue":
        # red -> white -> blue
        if v <= 0.5:
            t = v / 0.5
            rgb = (255.0, 255.0 * t, 255.0 * t)
        else:
            t = (v - 0.5) / 0.5
            rgb = (255.0 * (1 - t), 255.0 * (1 - t), 255.0)
    else:
        # piecewise-linear jet: dark blue, cyan, yellow, red, dark red
        stops = [(0.0, (0, 0, 128)), (0.25, (0, 255, 255)), (0.5, (255, 255, 0)),
                 (0.75, (255, 0, 0)), (1.0, (128, 0, 0))]
        for (x0, c0), (x1, c1) in zip(stops, stops[1:]):
            if v <= x1:
                t = 0.0 if x1 == x0 else (v - x0) / (x1 - x0)
                rgb = tuple(c0[i] + t * (c1[i] - c0[i]) for i in range(3))
                break
    return tuple(int(round(c)) for c in rgb)


def render_overlay(frame: np.ndarray, map_frame: np.ndarray, grid: tuple[int, int],
                   cmap: str = "red-blue", alpha: float = 0.5) -> np.ndarray:
    """Tint each patch by its map value: alpha*color + (1-alpha)*pixel."""
    if not 0.0 <= alpha <= 1.0:
        raise InvalidSpecError(f"alpha must lie in [0,1], got {alpha}")
    frame = np.asarray(frame)
    map_frame = np.asarray(map_frame, dtype=np.float64)
    rows, cols = grid
    if map_frame.size != rows * cols:
        raise InvalidSpecError(
            f"map of {map_frame.size} values does not fill grid {rows}x{cols}"
        )
    h, w = frame.shape[:2]
    if h % rows or w % cols:
        raise InvalidSpecError(f"grid {rows}x{cols} does not tile frame {h}x{w}")
    ph, pw = h // rows, w // cols

    out = frame.astype(np.float64).copy()
    flat = map_frame.reshape(rows * cols)
    for idx in range(rows * cols):
        r, c = divmod(idx, cols)
        color = np.array(colormap(flat[idx], cmap), dtype=np.float64)
        block = out[r * ph : (r + 1) * ph, c * pw : (c + 1) * pw]
        block[:] = alpha * color + (1 - alpha) * block
    return np.rint(out).astype(np.uint8)


def render_clip(clip: VideoClip, spatial_values: np.ndarray, grid: tuple[int, int],
                out_dir, cmap: str = "red-blue", alpha: float = 0.5) -> list[str]:
    """One overlaid PPM per frame, named <clip_id>_frame%04d.ppm."""
    os.makedirs(out_dir, exist_ok=True)
    spatial_values = np.asarray(spatial_values, dtype=np.float64)
    paths = []
    stem = clip.clip_id or "clip"
    for t in range(clip.num_frames):
        image = render_overlay(clip.frames[t], spatial_values[:, t], grid,
                               cmap=cmap, alpha=alpha)
        path = os.path.join(out_dir, f"{stem}_frame{t:04d}.ppm")
        write_frame_image(image, path)
        paths.append(path)
    return paths


def percentile(sorted_values: np.ndarray, q: float) -> float:
    """Empirical quantile: smallest sample with cumulative fraction >= q."""
    n = len(sorted_values)
    idx = min(max(int(np.ceil(q * n)) - 1, 0), n - 1)
    return float(sorted_values[idx])


def emit_cdf(latencies_ms, path) -> str:
    """CSV of (latency_ms, cumulative_fraction) plus a percentile summary.

    Rows are sorted ascending with fraction = rank/n, so duplicates keep
    the higher fraction on the later row. Returns the printed summary.
    """
    lat = np.asarray(list(latencies_ms), dtype=np.float64)
    if lat.size == 0:
        raise InvalidSpecError("cannot emit a CDF of zero samples")
    lat.sort()
    n = lat.size
    with open(path, "w") as fh:
        fh.write("latency_ms,cumulative_fraction\n")
        for rank, value in enumerate(lat, start=1):
            fh.write(f"{value:.6f},{rank / n:.8f}\n")
    summary = " ".join(
        f"p{int(q * 100)}={percentile(lat, q):.3f}ms" for q in (0.5, 0.9, 0.95, 0.99)
    )
    return summary
