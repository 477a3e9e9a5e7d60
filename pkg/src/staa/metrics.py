"""Quantitative evaluation of attributions: faithfulness, monotonicity via
tie-corrected Kendall tau, importance-guided masking, and cost accounting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, InvalidSpecError
from .videoio import VideoClip

DEFAULT_RATIOS = tuple(round(0.1 * k, 1) for k in range(1, 10))
DEFAULT_MASK_RATIO = 0.7


@dataclass(frozen=True)
class ImportanceRanking:
    """Maskable units ordered by importance descending.

    A unit is a (frame, patch) cell; patch == None means the whole frame
    (used for segment-granularity rankings). Ties break deterministically:
    score desc, then frame asc, then patch asc.
    """

    units: tuple[tuple[int, int | None], ...]
    scores: tuple[float, ...]
    patch_grid: tuple[int, int] = (0, 0)


def rank_spatial(values: np.ndarray, patch_grid: tuple[int, int]) -> ImportanceRanking:
    """Ranking over all (frame, patch) cells of an N x F score matrix."""
    n, f = values.shape
    cells = [(float(values[p, t]), t, p) for t in range(f) for p in range(n)]
    cells.sort(key=lambda c: (-c[0], c[1], c[2]))
    return ImportanceRanking(
        units=tuple((t, p) for _, t, p in cells),
        scores=tuple(s for s, _, _ in cells),
        patch_grid=patch_grid,
    )


def rank_segments(phi: np.ndarray, partition) -> ImportanceRanking:
    """Ranking over whole frames, ordered by their segment's Shapley value."""
    entries = []
    for i, (lo, hi) in enumerate(partition.boundaries):
        for t in range(lo, hi):
            entries.append((float(phi[i]), t))
    entries.sort(key=lambda c: (-c[0], c[1]))
    return ImportanceRanking(
        units=tuple((t, None) for _, t in entries),
        scores=tuple(s for s, _ in entries),
    )


def mask_top(clip: VideoClip, ranking: ImportanceRanking, ratio: float) -> VideoClip:
    """Zero the top ceil(ratio * total_units) units of the ranking."""
    if not 0.0 <= ratio <= 1.0:
        raise InvalidSpecError(f"mask ratio must lie in [0,1], got {ratio}")
    total = len(ranking.units)
    count = math.ceil(ratio * total)
    frames = clip.frames.copy()
    rows, cols = ranking.patch_grid
    p = clip.height // rows if rows else 0
    q = clip.width // cols if cols else 0
    for t, patch in ranking.units[:count]:
        if patch is None:
            frames[t] = 0
        else:
            r, c = divmod(patch, cols)
            frames[t, r * p : (r + 1) * p, c * q : (c + 1) * q] = 0
    return VideoClip(frames=frames, frame_rate=clip.frame_rate, clip_id=clip.clip_id)


def kendall_tau(a, b) -> float:
    """Tie-corrected Kendall tau-b.

    (concordant - discordant) / sqrt((n0 - T_a)(n0 - T_b)) over all pairs,
    n0 = n(n-1)/2, T the within-vector tied-pair counts.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n = a.size
    if n != b.size:
        raise InvalidSpecError(f"length mismatch: {n} vs {b.size}")
    if n < 2:
        raise DegenerateInputError("kendall tau needs at least 2 observations")

    sa = np.sign(a[:, None] - a[None, :])
    sb = np.sign(b[:, None] - b[None, :])
    iu = np.triu_indices(n, k=1)
    prod = sa[iu] * sb[iu]
    s = prod.sum()
    ties_a = int((sa[iu] == 0).sum())
    ties_b = int((sb[iu] == 0).sum())
    n0 = n * (n - 1) // 2
    denom = math.sqrt((n0 - ties_a) * (n0 - ties_b))
    if denom == 0:
        raise DegenerateInputError("kendall tau undefined: a vector is all ties")
    return float(s / denom)


@dataclass
class FaithfulnessResult:
    score: float
    per_sample: list[float]
    degenerate: bool = False


def faithfulness(predictor, clips, rankings, ratio: float = DEFAULT_MASK_RATIO,
                 mode: str = "literal", pooling: str = "per-batch") -> FaithfulnessResult:
    """1 - mean |normalized original - normalized masked| over the batch.

    Predictions (the predicted-class probability of each original and each
    masked clip) are min-max normalized; `pooling` selects whether min/max
    are taken over the whole batch or per original/masked pair. The "drop"
    mode returns the complement (higher = bigger prediction change), the
    prose-consistent reading.
    """
    clips = list(clips)
    rankings = list(rankings)
    if len(clips) < 2:
        raise InvalidSpecError("faithfulness needs at least 2 clips for min-max spread")
    if len(clips) != len(rankings):
        raise InvalidSpecError("one ranking per clip required")
    if mode not in ("literal", "drop"):
        raise InvalidSpecError(f"unknown mode {mode!r}")
    if pooling not in ("per-batch", "per-pair"):
        raise InvalidSpecError(f"unknown pooling {pooling!r}")

    orig = np.empty(len(clips))
    masked = np.empty(len(clips))
    for i, (clip, ranking) in enumerate(zip(clips, rankings)):
        probs = predictor.predict(clip)
        c = int(np.argmax(probs))
        orig[i] = probs[c]
        masked[i] = predictor.predict(mask_top(clip, ranking, ratio))[c]

    degenerate = False
    if pooling == "per-batch":
        pool = np.concatenate([orig, masked])
        lo, hi = pool.min(), pool.max()
        if hi == lo:
            diffs = np.zeros(len(clips))
            degenerate = True
        else:
            diffs = np.abs((orig - lo) / (hi - lo) - (masked - lo) / (hi - lo))
    else:
        diffs = np.empty(len(clips))
        for i in range(len(clips)):
            lo, hi = min(orig[i], masked[i]), max(orig[i], masked[i])
            diffs[i] = 0.0 if hi == lo else 1.0  # pair normalizes to {0, 1}
        degenerate = bool(np.all(orig == masked))

    score = 1.0 - float(diffs.mean())
    if mode == "drop":
        score = 1.0 - score
    return FaithfulnessResult(score=score, per_sample=diffs.tolist(),
                              degenerate=degenerate)


@dataclass
class MonotonicityResult:
    tau: float
    ratios: list[float]
    drops: list[float]


def monotonicity(predictor, clip: VideoClip, ranking: ImportanceRanking,
                 ratios=DEFAULT_RATIOS) -> MonotonicityResult:
    """Kendall tau between masking ratios and prediction-probability drops
    for the clip's top-1 class."""
    probs = predictor.predict(clip)
    c = int(np.argmax(probs))
    base = float(probs[c])
    drops = [base - float(predictor.predict(mask_top(clip, ranking, r))[c])
             for r in ratios]
    tau = kendall_tau(list(ratios), drops)
    return MonotonicityResult(tau=tau, ratios=list(ratios), drops=drops)


class ScoreOraclePredictor:
    """Synthetic predictor whose class-0 probability is the score-weighted
    fraction of units left intact relative to a reference clip.

    With a ranking drawn from the same (all-positive) scores, every extra
    masked unit strictly lowers the probability, so monotonicity is exactly
    1. Used as the ground-truth check that the metric machinery preserves a
    known-perfect ranking.
    """

    def __init__(self, reference: VideoClip, scores: np.ndarray,
                 patch_grid: tuple[int, int], classes: int = 2):
        if np.any(scores <= 0):
            raise InvalidSpecError("oracle scores must be strictly positive")
        self._reference = reference
        self._scores = np.asarray(scores, dtype=np.float64)  # (N, F)
        self._grid = patch_grid
        self._classes = classes
        self.eval_count = 0

    def predict(self, clip: VideoClip) -> np.ndarray:
        self.eval_count += 1
        rows, cols = self._grid
        ph = clip.height // rows
        pw = clip.width // cols
        n, f = self._scores.shape
        intact = 0.0
        for t in range(f):
            for patch in range(n):
                r, c = divmod(patch, cols)
                block = clip.frames[t, r * ph : (r + 1) * ph, c * pw : (c + 1) * pw]
                ref = self._reference.frames[t, r * ph : (r + 1) * ph,
                                             c * pw : (c + 1) * pw]
                if np.array_equal(block, ref):
                    intact += self._scores[patch, t]
        p = intact / self._scores.sum()
        probs = np.full(self._classes, (1.0 - p) / (self._classes - 1))
        probs[0] = p
        return probs


@dataclass(frozen=True)
class MethodRun:
    method: str
    wall_seconds: tuple[float, ...]
    evals: int


def cost_report(runs: list[MethodRun]) -> str:
    """Aligned timing table plus attention-attribution/baseline cost ratios."""
    if not runs or any(len(r.wall_seconds) < 1 for r in runs):
        raise InvalidSpecError("need at least one timed run per method")
    by_name = {r.method: r for r in runs}
    lines = [f"{'method':<16} {'mean_s':>10} {'std_s':>10} {'evals':>8}"]
    for r in runs:
        w = np.asarray(r.wall_seconds)
        lines.append(f"{r.method:<16} {w.mean():>10.4f} {w.std():>10.4f} {r.evals:>8d}")

    staa = next((r for r in runs if r.method.lower().startswith("staa")), None)
    if staa is not None:
        staa_mean = float(np.mean(staa.wall_seconds))
        for name in ("SHAP", "LIME"):
            other = by_name.get(name)
            if other is not None:
                mean = float(np.mean(other.wall_seconds))
                wall_ratio = staa_mean / mean if mean > 0 else float("inf")
                eval_ratio = staa.evals / other.evals if other.evals else float("inf")
                lines.append(
                    f"ratio {staa.method}/{name}: wall={wall_ratio:.4%} "
                    f"evals={staa.evals}/{other.evals} ({eval_ratio:.4%})"
                )
    return "\n".join(lines)
