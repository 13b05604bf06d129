"""Linf random-search attack with square-window candidates.

One query evaluates the original image (immediate success when it is
already misclassified); the first search candidate is a vertical-stripe
initialization at +-eps, after which candidates reset a randomly placed
square window of the current perturbation to fresh +-eps signs. A candidate
is kept only when its margin loss strictly increases, and the window side
shrinks over iterations on the published piecewise schedule. A full failed
run therefore issues exactly iterations + 1 queries per restart.
"""

from __future__ import annotations

import math

import numpy as np

from qbba_lab.attacks.common import AttackConfig, finalize, margin_from_probs
from qbba_lab.attacks.oracle import QueryBudgetExceeded
from qbba_lab.numerics import clamp_unit
from qbba_lab.rng import RngStream


def _p_schedule(p_init: float, it: int, n_iters: int) -> float:
    """Fraction of elements perturbed at iteration it (piecewise halving)."""
    frac = int(it / n_iters * 10000)
    for bound, div in ((10, 1), (50, 2), (200, 4), (500, 8), (1000, 16),
                       (2000, 32), (4000, 64), (6000, 128), (8000, 256),
                       (10000, 512)):
        if frac <= bound:
            return p_init / div
    return p_init / 512


def _signs(rng: RngStream, shape, eps: float) -> np.ndarray:
    return np.where(rng.uniform(shape) < 0.5, -eps, eps)


def square_attack(oracle, x: np.ndarray, y: int, cfg: AttackConfig,
                  rng: RngStream, keep_accepted: bool = False):
    if oracle.mode != "score":
        raise ValueError("square attack needs a score oracle")
    p = cfg.params
    n_iters = p["max_iters"]
    p_init = p["p_init"]
    restarts = p.get("restarts", 1)
    eps = cfg.eps
    x = np.asarray(x, dtype=np.float64)
    side_max, _, channels = x.shape
    q0 = oracle.query_count

    extra = {"accepted_margins": [], "accepted_iters": []}
    if keep_accepted:
        extra["accepted_images"] = []

    try:
        probs = oracle.query_probs(x)
    except QueryBudgetExceeded:
        return finalize(oracle, q0, False, x, x, cfg.norm, cfg.eps, extra)
    if int(np.argmax(probs)) != y:
        return finalize(oracle, q0, True, x, x, cfg.norm, cfg.eps, extra)
    best_margin = margin_from_probs(probs, y)

    best_overall = x
    best_overall_margin = best_margin
    for _ in range(restarts):
        delta = np.zeros_like(x)
        current_margin = best_margin
        for it in range(n_iters):
            if it == 0:
                cand_delta = np.broadcast_to(
                    _signs(rng, (1, side_max, channels), eps), x.shape).copy()
            else:
                frac = _p_schedule(p_init, it, n_iters)
                side = max(1, min(side_max, int(round(math.sqrt(frac) * side_max))))
                r0 = int(rng.integers(0, side_max - side + 1))
                c0 = int(rng.integers(0, side_max - side + 1))
                cand_delta = delta.copy()
                cand_delta[r0:r0 + side, c0:c0 + side, :] = _signs(rng, (1, 1, channels), eps)
            cand = clamp_unit(x + cand_delta)
            try:
                probs = oracle.query_probs(cand)
            except QueryBudgetExceeded:
                return finalize(oracle, q0, False, x, best_overall, cfg.norm, eps, extra)
            m = margin_from_probs(probs, y)
            if int(np.argmax(probs)) != y:
                return finalize(oracle, q0, True, x, cand, cfg.norm, eps, extra)
            if m > current_margin:
                delta = cand - x
                current_margin = m
                extra["accepted_margins"].append(m)
                extra["accepted_iters"].append(it)
                if keep_accepted:
                    extra["accepted_images"].append(cand.copy())
                if m > best_overall_margin:
                    best_overall_margin = m
                    best_overall = cand
    return finalize(oracle, q0, False, x, best_overall, cfg.norm, eps, extra)
