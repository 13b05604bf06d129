"""Encoder kernels: the hot inner loop of every oracle query.

Two interchangeable backends compute the transformer block stack:

* ``numpy``  - vectorized reference implementation (always available)
* ``numba``  - @njit fused-loop twin of the reference, roughly an order of
  magnitude faster per forward pass at toy scale

Selection: env var ``QBBA_LAB_BACKEND`` set to ``numpy`` or ``numba``;
unset means numba when importable, else numpy. Both backends agree to
float64 rounding noise (see tests); bit-exact guarantees (zero-strength
defense identity, seeded determinism) hold within a backend.

Run ``benchmarks/bench_forward.py`` to compare both on your machine.
"""

from __future__ import annotations

import os

import numpy as np

from qbba_lab.kernels import numpy_backend

_FORCED = os.environ.get("QBBA_LAB_BACKEND", "").strip().lower()

if _FORCED not in ("", "numpy", "numba"):
    raise RuntimeError(f"QBBA_LAB_BACKEND must be 'numpy' or 'numba', got {_FORCED!r}")

if _FORCED == "numpy":
    _impl = numpy_backend
    _BACKEND = "numpy"
else:
    try:
        from qbba_lab.kernels import numba_backend as _impl
        _BACKEND = "numba"
    except ImportError:
        if _FORCED == "numba":
            raise
        _impl = numpy_backend
        _BACKEND = "numpy"


def active_backend() -> str:
    return _BACKEND


def encode_tokens(tok, params, n_heads, dim_keep, attn_scale, pni_msa=None, pni_mlp=None):
    """Run the block stack plus final norm and classifier head.

    tok: (n_tokens, D) embedded sequence, class token first.
    params: tuple of encoder weight arrays (ModelWeights.encoder_params()).
    dim_keep: (L, n_heads, head_dim) bool mask of attention dims kept.
    attn_scale: (L, n_heads) attention score denominators.
    pni_msa / pni_mlp: optional (L, n_tokens, D) activation noise.
    Returns logits (K,).
    """
    use_pni = pni_msa is not None
    if use_pni:
        noise_a = np.ascontiguousarray(pni_msa, dtype=np.float64)
        noise_b = np.ascontiguousarray(pni_mlp, dtype=np.float64)
    else:
        noise_a = _NO_NOISE
        noise_b = _NO_NOISE
    return _impl.encode_tokens(
        tok, *params, n_heads, dim_keep, attn_scale, use_pni, noise_a, noise_b
    )


_NO_NOISE = np.zeros((1, 1, 1))
