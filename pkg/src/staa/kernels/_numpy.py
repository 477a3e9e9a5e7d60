"""Pure-numpy reference implementation of the attention kernel."""

import numpy as np

BACKEND = "numpy"


def fused_attention(x, wq, wk, wv, key_scale, scale):
    """Multi-head scaled dot-product attention over all tokens.

    x:         (T, D) normalized token matrix
    wq/wk/wv:  (A, Dh, D) per-head projection weights
    key_scale: (T,) multiplier applied to each token's key vector
    scale:     score scaling, 1/sqrt(Dh)

    Returns (context, attn) where context is (T, A*Dh) with heads
    concatenated in order, and attn is (A, T, T) row-softmax weights.
    """
    q = np.einsum("ahd,td->ath", wq, x)
    k = np.einsum("ahd,td->ath", wk, x) * key_scale[None, :, None]
    v = np.einsum("ahd,td->ath", wv, x)

    scores = np.einsum("ath,ash->ats", q, k) * scale
    scores -= scores.max(axis=2, keepdims=True)
    np.exp(scores, out=scores)
    scores /= scores.sum(axis=2, keepdims=True)

    ctx = np.einsum("ats,ash->ath", scores, v)
    a, t, dh = ctx.shape
    context = ctx.transpose(1, 0, 2).reshape(t, a * dh)
    return np.ascontiguousarray(context), scores
