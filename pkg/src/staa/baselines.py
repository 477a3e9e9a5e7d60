"""Model-agnostic attribution baselines over a counted black-box predictor.

SHAP treats equal-length temporal segments as players in a coalition game
whose characteristic value is the model's probability for a chosen class
on the masked clip. Exact mode enumerates all coalitions; Monte Carlo mode
defaults to unbiased permutation sampling, with a literal uniform-subset
variant available. LIME fits a ridge surrogate over binary region masks on
equally spaced frames.
"""

from __future__ import annotations

import itertools
import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidSpecError
from .model import Model, forward, forward_frame
from .videoio import VideoClip

EXACT_SEGMENT_LIMIT = 12


class CountingPredictor:
    """Wraps a model into predict(clip) -> probability vector with an
    atomic evaluation counter."""

    def __init__(self, model: Model):
        self._model = model
        self._lock = threading.Lock()
        self._count = 0

    @property
    def eval_count(self) -> int:
        with self._lock:
            return self._count

    def predict(self, clip: VideoClip) -> np.ndarray:
        with self._lock:
            self._count += 1
        return forward(self._model, clip).probabilities

    def predict_frame(self, frame: np.ndarray) -> np.ndarray:
        with self._lock:
            self._count += 1
        return forward_frame(self._model, frame).probabilities


class FunctionPredictor:
    """Counted predictor around an arbitrary clip -> probabilities callable."""

    def __init__(self, fn):
        self._fn = fn
        self._lock = threading.Lock()
        self._count = 0

    @property
    def eval_count(self) -> int:
        with self._lock:
            return self._count

    def predict(self, clip: VideoClip) -> np.ndarray:
        with self._lock:
            self._count += 1
        return np.asarray(self._fn(clip), dtype=np.float64)

    predict_frame = predict


@dataclass(frozen=True)
class SegmentPartition:
    num_frames: int
    boundaries: tuple[tuple[int, int], ...]  # half-open frame ranges

    @property
    def num_segments(self) -> int:
        return len(self.boundaries)


def segment(num_frames: int, num_segments: int) -> SegmentPartition:
    """Equal-length temporal segments: s_i covers [ (i-1)F/n, iF/n )."""
    if not 1 <= num_segments <= num_frames:
        raise InvalidSpecError(
            f"need 1 <= segments <= frames, got {num_segments} segments for "
            f"{num_frames} frames"
        )
    bounds = tuple(
        (i * num_frames // num_segments, (i + 1) * num_frames // num_segments)
        for i in range(num_segments)
    )
    return SegmentPartition(num_frames=num_frames, boundaries=bounds)


def mask_segments(
    clip: VideoClip, partition: SegmentPartition, keep: frozenset[int] | set[int],
    fill: str = "zero",
) -> VideoClip:
    """Clip with every segment outside `keep` replaced by the fill policy."""
    keep = frozenset(keep)
    bad = [i for i in keep if not 0 <= i < partition.num_segments]
    if bad:
        raise InvalidSpecError(f"segment indices out of range: {bad}")
    frames = clip.frames.copy()
    if fill == "mean":
        fill_value = clip.frames.mean(axis=(0, 1, 2)).astype(np.uint8)
    else:
        fill_value = np.zeros(3, dtype=np.uint8)
    for i, (lo, hi) in enumerate(partition.boundaries):
        if i not in keep:
            frames[lo:hi] = fill_value
    return VideoClip(frames=frames, frame_rate=clip.frame_rate, clip_id=clip.clip_id)


@dataclass(frozen=True)
class ShapleyResult:
    phi: np.ndarray
    mode: str  # "exact", "monte-carlo", "monte-carlo-literal"
    samples: int = 0
    evals_used: int = 0


class CoalitionGame:
    """Memoized characteristic function over segment subsets.

    value(S) = predictor probability of `class_index` on the clip with only
    segments in S visible. Memoization keeps exact SHAP at exactly
    2**num_segments predictor evaluations.
    """

    def __init__(self, predictor, clip: VideoClip, partition: SegmentPartition,
                 class_index: int, fill: str = "zero"):
        self._predictor = predictor
        self._clip = clip
        self._partition = partition
        self._class = class_index
        self._fill = fill
        self._cache: dict[frozenset[int], float] = {}

    @property
    def n(self) -> int:
        return self._partition.num_segments

    def value(self, subset) -> float:
        key = frozenset(subset)
        if key not in self._cache:
            masked = mask_segments(self._clip, self._partition, key, fill=self._fill)
            self._cache[key] = float(self._predictor.predict(masked)[self._class])
        return self._cache[key]


def exact_shapley(value_fn, n: int) -> np.ndarray:
    """Exact Shapley values of an n-player game by full enumeration."""
    phi = np.zeros(n)
    players = list(range(n))
    fact = [math.factorial(k) for k in range(n + 1)]
    for i in players:
        others = [j for j in players if j != i]
        for r in range(len(others) + 1):
            weight = fact[r] * fact[n - r - 1] / fact[n]
            for coalition in itertools.combinations(others, r):
                s = frozenset(coalition)
                phi[i] += weight * (value_fn(s | {i}) - value_fn(s))
    return phi


def permutation_shapley(value_fn, n: int, samples: int, seed: int) -> np.ndarray:
    """Unbiased permutation-sampling estimator: each sample walks one
    uniform random permutation and credits marginal contributions."""
    rng = np.random.default_rng(seed)
    phi = np.zeros(n)
    for _ in range(samples):
        perm = rng.permutation(n)
        prefix: frozenset[int] = frozenset()
        prev = value_fn(prefix)
        for i in perm:
            nxt = prefix | {int(i)}
            cur = value_fn(nxt)
            phi[int(i)] += cur - prev
            prefix, prev = frozenset(nxt), cur
    return phi / samples


def subset_shapley(value_fn, n: int, samples: int, seed: int) -> np.ndarray:
    """Literal uniform-random-subset estimator: for each player, average
    value(z + i) - value(z) over subsets z drawn uniformly from the other
    players. Biased for general games; kept as a fidelity mode."""
    rng = np.random.default_rng(seed)
    phi = np.zeros(n)
    for i in range(n):
        others = [j for j in range(n) if j != i]
        for _ in range(samples):
            mask = rng.integers(0, 2, size=n - 1).astype(bool)
            z = frozenset(j for j, m in zip(others, mask) if m)
            phi[i] += value_fn(z | {i}) - value_fn(z)
    return phi / samples


def shap_exact(predictor, clip: VideoClip, partition: SegmentPartition,
               class_index: int, fill: str = "zero") -> ShapleyResult:
    n = partition.num_segments
    if n > EXACT_SEGMENT_LIMIT:
        raise InvalidSpecError(
            f"exact SHAP over {n} segments needs 2^{n} evaluations; "
            f"limit is {EXACT_SEGMENT_LIMIT} segments"
        )
    game = CoalitionGame(predictor, clip, partition, class_index, fill=fill)
    before = predictor.eval_count
    phi = exact_shapley(game.value, n)
    return ShapleyResult(phi=phi, mode="exact", evals_used=predictor.eval_count - before)


def shap_monte_carlo(predictor, clip: VideoClip, partition: SegmentPartition,
                     class_index: int, samples: int, seed: int = 0,
                     literal: bool = False, fill: str = "zero") -> ShapleyResult:
    if samples < 1:
        raise InvalidSpecError(f"sample count must be >= 1, got {samples}")
    game = CoalitionGame(predictor, clip, partition, class_index, fill=fill)
    before = predictor.eval_count
    if literal:
        phi = subset_shapley(game.value, game.n, samples, seed)
        mode = "monte-carlo-literal"
    else:
        phi = permutation_shapley(game.value, game.n, samples, seed)
        mode = "monte-carlo"
    return ShapleyResult(phi=phi, mode=mode, samples=samples,
                         evals_used=predictor.eval_count - before)


@dataclass(frozen=True)
class LimeResult:
    frame_indices: tuple[int, ...]
    coefficients: np.ndarray  # (K, N_regions) signed surrogate weights
    intercepts: np.ndarray  # (K,)
    perturbations: int

    @property
    def importance(self) -> np.ndarray:
        """|coefficients|, the per-region importance per selected frame."""
        return np.abs(self.coefficients)


def select_frames(num_frames: int, count: int) -> tuple[int, ...]:
    """Equally spaced frame picks: the k-th pick is frame k*F/count
    (1-based), i.e. index k*F//count - 1."""
    if not 1 <= count <= num_frames:
        raise InvalidSpecError(
            f"need 1 <= frame count <= {num_frames}, got {count}"
        )
    return tuple(max(k * num_frames // count - 1, 0) for k in range(1, count + 1))


def ridge_fit(features: np.ndarray, targets: np.ndarray, reg: float) -> tuple[np.ndarray, float]:
    """L2-penalized least squares with an unpenalized intercept."""
    n, d = features.shape
    design = np.column_stack([features, np.ones(n)])
    penalty = reg * np.eye(d + 1)
    penalty[d, d] = 0.0
    coef = np.linalg.solve(design.T @ design + penalty, design.T @ targets)
    return coef[:d], float(coef[d])


def lime_spatial(frame_predictor, clip: VideoClip, frame_count: int,
                 perturbations: int, grid: tuple[int, int], reg: float = 0.01,
                 seed: int = 0) -> LimeResult:
    """Per-frame linear surrogate over binary region masks.

    For each selected frame, draws `perturbations` masks over the
    rows x cols region grid (each region kept with probability 0.5),
    zero-fills dropped regions, and regresses the predictor's probability
    for the frame's top class on the mask bits. As in standard LIME, the
    first sample is the unperturbed frame; its prediction also selects the
    target class, so exactly frame_count * perturbations evaluations are
    consumed.
    """
    rows, cols = grid
    n_regions = rows * cols
    if frame_count < 1:
        raise InvalidSpecError("frame count must be >= 1")
    if perturbations < n_regions:
        raise InvalidSpecError(
            f"{perturbations} perturbations cannot identify {n_regions} regions"
        )
    region_h = clip.height // rows
    region_w = clip.width // cols
    if region_h * rows != clip.height or region_w * cols != clip.width:
        raise InvalidSpecError(
            f"grid {rows}x{cols} does not tile frame {clip.height}x{clip.width}"
        )

    rng = np.random.default_rng(seed)
    indices = select_frames(clip.num_frames, frame_count)
    coefs = np.zeros((frame_count, n_regions))
    intercepts = np.zeros(frame_count)

    for k, fi in enumerate(indices):
        frame = clip.frames[fi]
        masks = rng.integers(0, 2, size=(perturbations, n_regions))
        masks[0] = 1
        probs = frame_predictor.predict_frame(frame)
        target_class = int(np.argmax(probs))
        targets = np.empty(perturbations)
        targets[0] = probs[target_class]
        for m in range(1, perturbations):
            perturbed = frame.copy()
            for r in range(n_regions):
                if not masks[m, r]:
                    rr, cc = divmod(r, cols)
                    perturbed[rr * region_h : (rr + 1) * region_h,
                              cc * region_w : (cc + 1) * region_w] = 0
            targets[m] = frame_predictor.predict_frame(perturbed)[target_class]
        coefs[k], intercepts[k] = ridge_fit(masks.astype(np.float64), targets, reg)

    return LimeResult(frame_indices=indices, coefficients=coefs,
                      intercepts=intercepts, perturbations=perturbations)
