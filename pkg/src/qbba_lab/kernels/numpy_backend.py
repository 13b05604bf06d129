"""Pure-numpy encoder: the reference the numba backend is tested against."""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from qbba_lab.numerics import LN_EPS, softmax_rows

_INV_SQRT2 = 1.0 / np.sqrt(2.0)


def layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS) * g + b


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def encode_tokens(tok, ln1_g, ln1_b, wq, wk, wv, wo, bo, ln2_g, ln2_b,
                  w1, b1, w2, b2, lnf_g, lnf_b, head_w, head_b,
                  n_heads, dim_keep, attn_scale, use_pni, pni_msa, pni_mlp):
    n_blocks = wq.shape[0]
    d = tok.shape[1]
    dh = d // n_heads
    x = tok
    for layer in range(n_blocks):
        u = layer_norm(x, ln1_g[layer], ln1_b[layer])
        q = u @ wq[layer]
        k = u @ wk[layer]
        v = u @ wv[layer]
        ctx = np.empty_like(u)
        for h in range(n_heads):
            cols = slice(h * dh, (h + 1) * dh)
            mask = dim_keep[layer, h]
            scores = q[:, cols][:, mask] @ k[:, cols][:, mask].T / attn_scale[layer, h]
            ctx[:, cols] = softmax_rows(scores) @ v[:, cols]
        msa = ctx @ wo[layer] + bo[layer]
        if use_pni:
            msa = msa + pni_msa[layer]
        x = x + msa
        mlp = gelu(layer_norm(x, ln2_g[layer], ln2_b[layer]) @ w1[layer] + b1[layer]) @ w2[layer] + b2[layer]
        if use_pni:
            mlp = mlp + pni_mlp[layer]
        x = x + mlp
    final = layer_norm(x, lnf_g, lnf_b)
    return final[0] @ head_w + head_b
