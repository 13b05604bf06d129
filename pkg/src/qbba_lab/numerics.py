"""Deterministic numeric primitives shared by the model, defenses and attacks."""

from __future__ import annotations

import numpy as np
import scipy.fft

# layer-norm variance epsilon, shared by every forward/backward path
LN_EPS = 1e-6


def softmax(v: np.ndarray) -> np.ndarray:
    """Numerically stable softmax of a vector.

    Raises ValueError("non-finite logits") on NaN/inf input. Output is
    non-negative and sums to 1 within 1e-12 in double precision.
    """
    v = np.asarray(v)
    if v.size == 0:
        raise ValueError("empty logits")
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite logits")
    shifted = v - v.max()
    e = np.exp(shifted)
    return e / e.sum()


def softmax_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax of a 2D array (no finiteness check)."""
    shifted = m - m.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def dct2(m: np.ndarray) -> np.ndarray:
    """Orthonormal 2D type-II DCT of a square matrix."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"dct2 expects a square matrix, got shape {m.shape}")
    return scipy.fft.dctn(m, type=2, norm="ortho")


def idct2(c: np.ndarray) -> np.ndarray:
    """Inverse of :func:`dct2`; round-trips within 1e-9 in double precision."""
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError(f"idct2 expects a square matrix, got shape {c.shape}")
    return scipy.fft.idctn(c, type=2, norm="ortho")


def project_to_ball(x: np.ndarray, x0: np.ndarray, eps: float, norm: str) -> np.ndarray:
    """Project x onto the eps-ball around x0 under 'linf' or 'l2'.

    Linf is a per-element clamp (constraint satisfied exactly); L2 is a
    radial rescale. Returns x unchanged when already inside.
    """
    x = np.asarray(x)
    x0 = np.asarray(x0)
    if x.shape != x0.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x0.shape}")
    if eps < 0:
        raise ValueError("eps must be >= 0")
    delta = x - x0
    if norm == "linf":
        return x0 + np.clip(delta, -eps, eps)
    if norm == "l2":
        d = float(np.sqrt(np.sum(delta * delta)))
        if d <= eps:
            return x
        return x0 + delta * (eps / d)
    raise ValueError(f"unknown norm {norm!r}")


def perturbation_norm(x: np.ndarray, x0: np.ndarray, norm: str) -> float:
    delta = np.asarray(x, dtype=np.float64) - np.asarray(x0, dtype=np.float64)
    if norm == "linf":
        return float(np.max(np.abs(delta))) if delta.size else 0.0
    if norm == "l2":
        return float(np.sqrt(np.sum(delta * delta)))
    raise ValueError(f"unknown norm {norm!r}")


def clamp_unit(x: np.ndarray) -> np.ndarray:
    """Elementwise clamp to [0, 1]; idempotent."""
    return np.clip(x, 0.0, 1.0)


def bilinear_resize(image: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize of an (H, W, C) image to (size, size, C).

    Uses corner-aligned sample coordinates, so resizing to the source size
    returns the image unchanged.
    """
    h, w, c = image.shape
    if size == h and size == w:
        return image.copy()
    if size < 1:
        raise ValueError("target size must be >= 1")

    def axis_coords(n_src: int, n_dst: int) -> np.ndarray:
        if n_dst == 1:
            return np.zeros(1)
        return np.arange(n_dst) * ((n_src - 1) / (n_dst - 1))

    ys = axis_coords(h, size)
    xs = axis_coords(w, size)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0).reshape(size, 1, 1)
    fx = (xs - x0).reshape(1, size, 1)

    top = image[y0][:, x0] * (1 - fx) + image[y0][:, x1] * fx
    bot = image[y1][:, x0] * (1 - fx) + image[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy
