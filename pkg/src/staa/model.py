"""Desk-scale space-time attention transformer.

Patches of each frame are linearly embedded, a classification token is
prepended, and standard pre-norm transformer blocks follow. The final
layer's per-head attention rows are captured during the same forward pass
that produces the logits, so attribution costs no extra model evaluation.

Token layout: index 0 is the classification token; patch p of frame t sits
at index 1 + t*N + p, with patches enumerated row-major over the grid.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import ConfigError, ShapeError
from .videoio import PATCH_SIZE, VideoClip

LN_EPS = 1e-5

_MODES = ("space-time", "space-only")


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 32
    heads: int = 4
    layers: int = 2
    classes: int = 10
    max_frames: int = 8
    max_patches: int = 4  # sizes the positional table; N of any input must not exceed it
    attention_mode: str = "space-time"
    seed: int = 0
    patch_size: int = PATCH_SIZE

    def __post_init__(self):
        if self.embed_dim % self.heads != 0:
            raise ConfigError(
                f"embed_dim {self.embed_dim} not divisible by heads {self.heads}"
            )
        if self.attention_mode not in _MODES:
            raise ConfigError(f"attention_mode must be one of {_MODES}")
        if min(self.embed_dim, self.heads, self.layers, self.classes,
               self.max_frames, self.max_patches, self.patch_size) < 1:
            raise ConfigError("all config dimensions must be positive")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.heads


@dataclass(frozen=True)
class AttentionTensor:
    layer: int
    head: int
    weights: np.ndarray  # (queries, keys); each row a softmax distribution


@dataclass(frozen=True)
class ModelOutput:
    logits: np.ndarray
    probabilities: np.ndarray
    final_attention: list[AttentionTensor]
    mode: str
    num_frames: int
    patches_per_frame: int


@dataclass(frozen=True)
class Model:
    config: ModelConfig
    params: dict[str, np.ndarray]
    key_bias: tuple[int, int, float] | None = None  # (patch, frame, scale)


def _param_order(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Serialization/init order of all weight tensors."""
    d, a, p = config.embed_dim, config.heads, config.patch_size
    dh = config.head_dim
    n_pos = config.max_patches * config.max_frames + 1
    order: list[tuple[str, tuple[int, ...]]] = [
        ("embed", (d, 3 * p * p)),
        ("pos", (n_pos, d)),
        ("cls", (d,)),
    ]
    for l in range(config.layers):
        order += [
            (f"layer{l}.ln1_g", (d,)),
            (f"layer{l}.ln1_b", (d,)),
            (f"layer{l}.wq", (a, dh, d)),
            (f"layer{l}.wk", (a, dh, d)),
            (f"layer{l}.wv", (a, dh, d)),
            (f"layer{l}.wo", (d, d)),
            (f"layer{l}.ln2_g", (d,)),
            (f"layer{l}.ln2_b", (d,)),
            (f"layer{l}.w1", (4 * d, d)),
            (f"layer{l}.b1", (4 * d,)),
            (f"layer{l}.w2", (d, 4 * d)),
            (f"layer{l}.b2", (d,)),
        ]
    order += [
        ("ln_f_g", (d,)),
        ("ln_f_b", (d,)),
        ("w_head", (config.classes, d)),
        ("b_head", (config.classes,)),
    ]
    return order


def init_model(config: ModelConfig) -> Model:
    """Deterministic weights: matrices uniform in [-1/sqrt(D), 1/sqrt(D)],
    layer-norm gains 1, all biases 0."""
    rng = np.random.default_rng(config.seed)
    bound = 1.0 / np.sqrt(config.embed_dim)
    params: dict[str, np.ndarray] = {}
    for name, shape in _param_order(config):
        base = name.rsplit(".", 1)[-1]
        if base.endswith("_g"):
            params[name] = np.ones(shape)
        elif base.endswith("_b") or base.startswith("b"):
            params[name] = np.zeros(shape)
        else:
            params[name] = rng.uniform(-bound, bound, size=shape)
    return Model(config=config, params=params)


def plant_key_bias(model: Model, patch: int, frame: int, scale: float) -> Model:
    """Model whose key projection output for token (patch, frame) is scaled.

    Large scales concentrate attention mass on that token, giving a
    ground-truth argmax oracle for attribution tests.
    """
    cfg = model.config
    if not (0 <= patch < cfg.max_patches) or not (0 <= frame < cfg.max_frames):
        raise ConfigError(
            f"token ({patch},{frame}) outside grid {cfg.max_patches}x{cfg.max_frames}"
        )
    if scale < 1:
        raise ConfigError(f"key bias scale must be >= 1, got {scale}")
    return replace(model, key_bias=(patch, frame, float(scale)))


def _layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS) * g + b


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (x + 0.044715 * x**3)))


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max())
    return e / e.sum()


def _patchify(clip_frames: np.ndarray, p: int) -> np.ndarray:
    """(F, H, W, 3) uint8 -> (F*N, 3*P*P) float64 in [0, 1], frame-major."""
    f, h, w, _ = clip_frames.shape
    gr, gc = h // p, w // p
    x = clip_frames.reshape(f, gr, p, gc, p, 3)
    x = x.transpose(0, 1, 3, 2, 4, 5).reshape(f * gr * gc, 3 * p * p)
    return x.astype(np.float64) / 255.0


def forward(model: Model, clip: VideoClip) -> ModelOutput:
    cfg = model.config
    p = cfg.patch_size
    f, h, w = clip.num_frames, clip.height, clip.width
    if h % p or w % p:
        raise ShapeError(
            f"frame {h}x{w} not a multiple of patch size {p} "
            f"(expected grid of {p}x{p} patches)"
        )
    n = (h // p) * (w // p)
    if n > cfg.max_patches:
        raise ShapeError(f"{n} patches per frame exceeds model maximum {cfg.max_patches}")
    if f > cfg.max_frames:
        raise ShapeError(f"{f} frames exceeds model maximum {cfg.max_frames}")
    if cfg.attention_mode == "space-only" and f != 1:
        raise ShapeError("space-only attention admits single-frame inputs; use forward_frame")

    params = model.params
    tokens = 1 + n * f
    patches = _patchify(clip.frames, p)  # (F*N, 3P^2)

    # Positional rows use the model's max grid stride so a given (p, t)
    # always reads the same table entry regardless of the input's N.
    pos_idx = np.array(
        [0] + [1 + t * cfg.max_patches + q for t in range(f) for q in range(n)]
    )
    z = np.empty((tokens, cfg.embed_dim))
    z[0] = params["cls"]
    z[1:] = patches @ params["embed"].T
    z += params["pos"][pos_idx]

    key_scale = np.ones(tokens)
    if model.key_bias is not None:
        bp, bt, bs = model.key_bias
        if bp < n and bt < f:
            key_scale[1 + bt * n + bp] = bs

    scale = 1.0 / np.sqrt(cfg.head_dim)
    attn = None
    for l in range(cfg.layers):
        x1 = _layer_norm(z, params[f"layer{l}.ln1_g"], params[f"layer{l}.ln1_b"])
        ctx, attn = kernels.fused_attention(
            x1,
            params[f"layer{l}.wq"],
            params[f"layer{l}.wk"],
            params[f"layer{l}.wv"],
            key_scale,
            scale,
        )
        z = z + ctx @ params[f"layer{l}.wo"].T
        x2 = _layer_norm(z, params[f"layer{l}.ln2_g"], params[f"layer{l}.ln2_b"])
        hdn = _gelu(x2 @ params[f"layer{l}.w1"].T + params[f"layer{l}.b1"])
        z = z + hdn @ params[f"layer{l}.w2"].T + params[f"layer{l}.b2"]

    xf = _layer_norm(z, params["ln_f_g"], params["ln_f_b"])
    logits = params["w_head"] @ xf[0] + params["b_head"]
    final = [
        AttentionTensor(layer=cfg.layers, head=a, weights=attn[a])
        for a in range(cfg.heads)
    ]
    return ModelOutput(
        logits=logits,
        probabilities=_softmax(logits),
        final_attention=final,
        mode=cfg.attention_mode,
        num_frames=f,
        patches_per_frame=n,
    )


def forward_frame(model: Model, frame: np.ndarray) -> ModelOutput:
    """Space-only path: a single frame, keys are that frame's patches plus
    the classification token (N+1 columns)."""
    frame = np.asarray(frame)
    clip = VideoClip(frames=frame[None].astype(np.uint8), clip_id="frame")
    out = forward(model, clip)
    return replace(out, mode="space-only")


# --- weight serialization: fixed config header + flat float64 tensors ---

_HEADER = struct.Struct(">4sBHHHHHHBq")
_MAGIC = b"STAM"


def save_model(model: Model, path) -> None:
    cfg = model.config
    mode = _MODES.index(cfg.attention_mode)
    with open(path, "wb") as fh:
        fh.write(
            _HEADER.pack(
                _MAGIC, 1, cfg.patch_size, cfg.embed_dim, cfg.heads, cfg.layers,
                cfg.classes, cfg.max_frames, mode, cfg.seed,
            )
        )
        fh.write(struct.pack(">H", cfg.max_patches))
        for name, _ in _param_order(cfg):
            fh.write(model.params[name].astype(">f8").tobytes())


def load_model(path) -> Model:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise ConfigError(f"{path}: truncated model header")
        magic, version, p, d, a, l, c, fmax, mode, seed = _HEADER.unpack(head)
        if magic != _MAGIC or version != 1:
            raise ConfigError(f"{path}: not a model file")
        (max_patches,) = struct.unpack(">H", fh.read(2))
        cfg = ModelConfig(
            embed_dim=d, heads=a, layers=l, classes=c, max_frames=fmax,
            max_patches=max_patches, attention_mode=_MODES[mode], seed=seed,
            patch_size=p,
        )
        params = {}
        for name, shape in _param_order(cfg):
            count = int(np.prod(shape))
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise ConfigError(f"{path}: truncated weights at {name}")
            params[name] = np.frombuffer(raw, dtype=">f8").astype(np.float64).reshape(shape)
    return Model(config=cfg, params=params)
