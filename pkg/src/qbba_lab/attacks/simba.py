"""Greedy coordinate descent over low-frequency DCT basis directions.

Coordinates are visited in a random order; each step tries -step then +step
along one basis image and keeps whichever lowers the true-class probability.
Accepted iterates are projected onto the L2 budget ball and the unit box.
"""

from __future__ import annotations

import numpy as np

from qbba_lab.attacks.common import AttackConfig, finalize
from qbba_lab.attacks.oracle import QueryBudgetExceeded
from qbba_lab.numerics import clamp_unit, idct2, project_to_ball
from qbba_lab.rng import RngStream

_BASIS_CACHE: dict[tuple[int, int], np.ndarray] = {}


def dct_basis(image_size: int, dct_dim: int) -> np.ndarray:
    """(dct_dim^2, S, S) orthonormal basis images of the low-frequency block."""
    key = (image_size, dct_dim)
    cached = _BASIS_CACHE.get(key)
    if cached is None:
        if not 1 <= dct_dim <= image_size:
            raise ValueError("dct_dim must lie in [1, image_size]")
        basis = np.empty((dct_dim * dct_dim, image_size, image_size))
        coeff = np.zeros((image_size, image_size))
        for i in range(dct_dim):
            for j in range(dct_dim):
                coeff[i, j] = 1.0
                basis[i * dct_dim + j] = idct2(coeff)
                coeff[i, j] = 0.0
        cached = basis
        _BASIS_CACHE[key] = cached
    return cached


def simba_attack(oracle, x: np.ndarray, y: int, cfg: AttackConfig, rng: RngStream):
    if oracle.mode != "score":
        raise ValueError("simba attack needs a score oracle")
    p = cfg.params
    max_iters = p["max_iters"]
    dct_dim = p["dct_dim"]
    step = p["step"]
    x = np.asarray(x, dtype=np.float64)
    channels = x.shape[2]
    q0 = oracle.query_count

    try:
        probs = oracle.query_probs(x)
    except QueryBudgetExceeded:
        return finalize(oracle, q0, False, x, x, cfg.norm, cfg.eps)
    if int(np.argmax(probs)) != y:
        return finalize(oracle, q0, True, x, x, cfg.norm, cfg.eps)
    p_true = probs[y]

    basis = dct_basis(x.shape[0], dct_dim)
    n_coords = basis.shape[0] * channels
    x_adv = x
    steps_done = 0
    while steps_done < max_iters:
        order = rng.permutation(n_coords)
        for coord in order:
            if steps_done >= max_iters:
                break
            steps_done += 1
            direction = np.zeros_like(x)
            direction[:, :, coord % channels] = basis[coord // channels]
            for sign in (-1.0, 1.0):
                cand = clamp_unit(project_to_ball(
                    x_adv + sign * step * direction, x, cfg.eps, "l2"))
                try:
                    probs = oracle.query_probs(cand)
                except QueryBudgetExceeded:
                    return finalize(oracle, q0, False, x, x_adv, cfg.norm, cfg.eps)
                if int(np.argmax(probs)) != y:
                    return finalize(oracle, q0, True, x, cand, cfg.norm, cfg.eps)
                if probs[y] < p_true:
                    x_adv = cand
                    p_true = probs[y]
                    break
    return finalize(oracle, q0, False, x, x_adv, cfg.norm, cfg.eps)
