"""Attention aggregation into temporal/spatial importance maps, plus the
dynamic-thresholding enhancement pipeline.

Importance is defined on the key axis: a cell's score is the attention it
*receives*, averaged over heads and over all patch-query rows. The
classification-token key column is excluded (it has no spatial location).
A query-row mode using only the classification token's attention row is
available for comparison.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import AttributionInputError, DegenerateInputError, InvalidSpecError
from .model import Model, ModelOutput, forward
from .videoio import VideoClip


@dataclass(frozen=True)
class TemporalMap:
    values: np.ndarray  # (F,)
    clip_id: str = ""


@dataclass(frozen=True)
class SpatialMap:
    values: np.ndarray  # (N, F)
    patch_grid: tuple[int, int] = (0, 0)  # (rows, cols), rows*cols == N


@dataclass(frozen=True)
class EnhancementParams:
    lam: float = 1.0  # threshold strictness in [0, 1]
    enhance: bool = True
    query_mode: str = "patch-rows"  # or "cls-row"

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise InvalidSpecError(f"lambda must lie in [0,1], got {self.lam}")
        if self.query_mode not in ("patch-rows", "cls-row"):
            raise InvalidSpecError(f"unknown query_mode {self.query_mode!r}")


def attribute(
    output: ModelOutput, num_frames: int, patches: int, query_mode: str = "patch-rows"
) -> tuple[TemporalMap, SpatialMap]:
    """Raw (pre-enhancement) maps from final-layer attention.

    M_s[p, t] = mean over heads and patch-query rows of attention to key
    token (p, t); M_t[t] = sum_p M_s[p, t] / N.
    """
    if not output.final_attention:
        raise AttributionInputError("model output carries no attention tensors")
    if output.mode != "space-time":
        raise AttributionInputError(
            f"attribution needs space-time attention, got {output.mode}"
        )
    tokens = 1 + patches * num_frames
    for tensor in output.final_attention:
        if tensor.weights.shape != (tokens, tokens):
            raise AttributionInputError(
                f"attention shape {tensor.weights.shape} does not match "
                f"{tokens} tokens for F={num_frames}, N={patches}"
            )

    stacked = np.stack([t.weights for t in output.final_attention])  # (A, T, T)
    if query_mode == "patch-rows":
        per_key = stacked[:, 1:, 1:].mean(axis=(0, 1))  # mean over heads and patch queries
    else:
        per_key = stacked[:, 0, 1:].mean(axis=0)  # classification-token query row only

    m_s = per_key.reshape(num_frames, patches).T  # (N, F)
    m_t = m_s.sum(axis=0) / patches
    return TemporalMap(values=m_t), SpatialMap(values=m_s)


def dynamic_threshold(frame_values: np.ndarray, lam: float) -> float:
    """Per-frame cutoff: mean + lam * population standard deviation."""
    frame_values = np.asarray(frame_values, dtype=np.float64)
    if frame_values.size == 0:
        raise DegenerateInputError("cannot threshold an empty frame")
    return float(frame_values.mean() + lam * frame_values.std())


def focus(spatial: SpatialMap, lam: float) -> SpatialMap:
    """Zero every entry below its frame's dynamic threshold (>= is retained)."""
    values = spatial.values.copy()
    for t in range(values.shape[1]):
        theta = dynamic_threshold(values[:, t], lam)
        col = values[:, t]
        col[col < theta] = 0.0
    return SpatialMap(values=values, patch_grid=spatial.patch_grid)


def normalize(frame_values: np.ndarray) -> np.ndarray:
    """Affine rescale to [0,1]; a constant frame maps to all zeros."""
    frame_values = np.asarray(frame_values, dtype=np.float64)
    if frame_values.size == 0:
        raise DegenerateInputError("cannot normalize an empty frame")
    lo, hi = frame_values.min(), frame_values.max()
    if hi == lo:
        return np.zeros_like(frame_values)
    return (frame_values - lo) / (hi - lo)


def normalize_map(spatial: SpatialMap) -> SpatialMap:
    values = np.column_stack(
        [normalize(spatial.values[:, t]) for t in range(spatial.values.shape[1])]
    )
    return SpatialMap(values=values, patch_grid=spatial.patch_grid)


@dataclass
class ExplanationRecord:
    clip_id: str
    num_frames: int
    patches: int
    grid: tuple[int, int]
    temporal: list[float]
    spatial: list[list[float]]  # N rows x F columns
    lam: float
    duration_ms: float
    model_evals: int
    predicted_class: int = 0
    probability: float = 0.0
    raw_spatial: list[list[float]] | None = None

    def to_json(self) -> str:
        payload = {
            "clip_id": self.clip_id,
            "F": self.num_frames,
            "N": self.patches,
            "grid": list(self.grid),
            "M_t": self.temporal,
            "M_s": self.spatial,
            "lambda": self.lam,
            "duration_ms": self.duration_ms,
            "model_evals": self.model_evals,
            "predicted_class": self.predicted_class,
            "probability": self.probability,
        }
        if self.raw_spatial is not None:
            payload["M_s_raw"] = self.raw_spatial
        return json.dumps(payload, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ExplanationRecord":
        d = json.loads(text)
        return cls(
            clip_id=d["clip_id"], num_frames=d["F"], patches=d["N"],
            grid=tuple(d["grid"]), temporal=d["M_t"], spatial=d["M_s"],
            lam=d["lambda"], duration_ms=d["duration_ms"],
            model_evals=d["model_evals"],
            predicted_class=d.get("predicted_class", 0),
            probability=d.get("probability", 0.0),
            raw_spatial=d.get("M_s_raw"),
        )


def explain(
    model: Model, clip: VideoClip, params: EnhancementParams | None = None,
    keep_raw: bool = False,
) -> ExplanationRecord:
    """One forward pass, then aggregate / focus / normalize."""
    params = params or EnhancementParams()
    start = time.perf_counter()
    out = forward(model, clip)
    f, n = out.num_frames, out.patches_per_frame
    m_t, m_s = attribute(out, f, n, query_mode=params.query_mode)
    raw = m_s
    if params.enhance:
        m_s = normalize_map(focus(m_s, params.lam))
    duration_ms = (time.perf_counter() - start) * 1000.0

    rows = clip.height // model.config.patch_size
    cols = clip.width // model.config.patch_size
    return ExplanationRecord(
        clip_id=clip.clip_id,
        num_frames=f,
        patches=n,
        grid=(rows, cols),
        temporal=m_t.values.tolist(),
        spatial=m_s.values.tolist(),
        lam=params.lam,
        duration_ms=duration_ms,
        model_evals=1,
        predicted_class=int(np.argmax(out.probabilities)),
        probability=float(out.probabilities.max()),
        raw_spatial=raw.values.tolist() if keep_raw else None,
    )
