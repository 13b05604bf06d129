"""Numba @njit twin of the numpy encoder.

Fuses the per-token loops to cut the per-query allocation and dispatch
overhead that dominates at toy sequence lengths. Semantics match
``numpy_backend`` to float64 rounding noise; see tests/test_backends.py.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from qbba_lab.numerics import LN_EPS

_INV_SQRT2 = 1.0 / math.sqrt(2.0)


@njit(cache=True)
def _layer_norm(x, g, b, out):
    n, d = x.shape
    for i in range(n):
        mu = 0.0
        for c in range(d):
            mu += x[i, c]
        mu /= d
        var = 0.0
        for c in range(d):
            diff = x[i, c] - mu
            var += diff * diff
        var /= d
        inv = 1.0 / math.sqrt(var + LN_EPS)
        for c in range(d):
            out[i, c] = (x[i, c] - mu) * inv * g[c] + b[c]


@njit(cache=True)
def encode_tokens(tok, ln1_g, ln1_b, wq, wk, wv, wo, bo, ln2_g, ln2_b,
                  w1, b1, w2, b2, lnf_g, lnf_b, head_w, head_b,
                  n_heads, dim_keep, attn_scale, use_pni, pni_msa, pni_mlp):
    n_blocks = wq.shape[0]
    n, d = tok.shape
    dh = d // n_heads
    hidden = w1.shape[2]

    x = tok.copy()
    u = np.empty((n, d))
    ctx = np.empty((n, d))
    arow = np.empty(n)
    scores = np.empty((n, n))

    for layer in range(n_blocks):
        _layer_norm(x, ln1_g[layer], ln1_b[layer], u)
        q = np.dot(u, wq[layer])
        k = np.dot(u, wk[layer])
        v = np.dot(u, wv[layer])

        for h in range(n_heads):
            base = h * dh
            inv_scale = 1.0 / attn_scale[layer, h]
            for i in range(n):
                for j in range(n):
                    s = 0.0
                    for c in range(dh):
                        if dim_keep[layer, h, c]:
                            s += q[i, base + c] * k[j, base + c]
                    scores[i, j] = s * inv_scale
            for i in range(n):
                m = scores[i, 0]
                for j in range(1, n):
                    if scores[i, j] > m:
                        m = scores[i, j]
                total = 0.0
                for j in range(n):
                    e = math.exp(scores[i, j] - m)
                    arow[j] = e
                    total += e
                for j in range(n):
                    arow[j] /= total
                for c in range(dh):
                    acc = 0.0
                    for j in range(n):
                        acc += arow[j] * v[j, base + c]
                    ctx[i, base + c] = acc

        msa = np.dot(ctx, wo[layer])
        for i in range(n):
            for c in range(d):
                msa[i, c] += bo[layer, c]
                if use_pni:
                    msa[i, c] += pni_msa[layer, i, c]
                x[i, c] += msa[i, c]

        _layer_norm(x, ln2_g[layer], ln2_b[layer], u)
        mid = np.dot(u, w1[layer])
        for i in range(n):
            for c in range(hidden):
                z = mid[i, c] + b1[layer, c]
                mid[i, c] = 0.5 * z * (1.0 + math.erf(z * _INV_SQRT2))
        mlp = np.dot(mid, w2[layer])
        for i in range(n):
            for c in range(d):
                mlp[i, c] += b2[layer, c]
                if use_pni:
                    mlp[i, c] += pni_mlp[layer, i, c]
                x[i, c] += mlp[i, c]

    _layer_norm(x, lnf_g, lnf_b, u)
    logits = np.dot(u[0], head_w)
    for c in range(head_b.shape[0]):
        logits[c] += head_b[c]
    return logits
