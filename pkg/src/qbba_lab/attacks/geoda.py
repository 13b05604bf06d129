"""Decision-based attack estimating the local boundary normal in a
low-frequency DCT subspace, then bisecting along that normal.

Probe directions live in the dct_dim x dct_dim coefficient block; each
iteration spends a budget-aware number of probes on the normal estimate and
moves to the bisected crossing when it is closer.
"""

from __future__ import annotations

import numpy as np

from qbba_lab.attacks.common import (AttackConfig, binary_search_blend, finalize,
                                     random_adversarial_init)
from qbba_lab.attacks.oracle import QueryBudgetExceeded
from qbba_lab.numerics import clamp_unit, idct2
from qbba_lab.rng import RngStream


def _l2(a: np.ndarray) -> float:
    return float(np.sqrt(np.sum(a * a)))


def sample_subspace_direction(shape, dct_dim: int, sigma: float, rng: RngStream) -> np.ndarray:
    """Unit direction whose per-channel spectrum lives in the low dct block."""
    s = shape[0]
    out = np.empty(shape)
    coeff = np.zeros((s, s))
    for ch in range(shape[2]):
        coeff[:] = 0.0
        coeff[:dct_dim, :dct_dim] = sigma * rng.gaussian((dct_dim, dct_dim))
        out[:, :, ch] = idct2(coeff)
    norm = _l2(out)
    return out / norm if norm > 0 else out


def estimate_subspace_normal(oracle, y: int, point: np.ndarray, n_probes: int,
                             dct_dim: int, sigma: float, probe_scale: float,
                             rng: RngStream) -> np.ndarray:
    """Label-signed average of subspace probes around a boundary point."""
    acc = np.zeros_like(point)
    for _ in range(n_probes):
        z = sample_subspace_direction(point.shape, dct_dim, sigma, rng)
        if oracle.query_label(point + probe_scale * z) != y:
            acc += z
        else:
            acc -= z
    norm = _l2(acc)
    return acc / norm if norm > 0 else sample_subspace_direction(point.shape, dct_dim, sigma, rng)


def geoda_attack(oracle, x: np.ndarray, y: int, cfg: AttackConfig, rng: RngStream):
    if oracle.mode != "decision":
        raise ValueError("geoda attack needs a decision oracle")
    p = cfg.params
    max_iters = p["max_iters"]
    dct_dim = p["dct_dim"]
    bs_tol = p["bs_tol"]
    sigma = p["probe_sigma"]
    probes_per_iter = p["probes_per_iter"]
    x = np.asarray(x, dtype=np.float64)
    q0 = oracle.query_count

    try:
        if oracle.query_label(x) != y:
            return finalize(oracle, q0, True, x, x, cfg.norm, cfg.eps)
        x_adv, _ = random_adversarial_init(oracle, y, x.shape, rng, p["init_trials"])
    except QueryBudgetExceeded:
        return finalize(oracle, q0, False, x, x, cfg.norm, cfg.eps)
    if x_adv is None:
        return finalize(oracle, q0, False, x, x, cfg.norm, cfg.eps,
                        {"init_failed": True})

    best = x_adv
    best_dist = _l2(x_adv - x)
    bs_reserve = int(np.ceil(np.log2(1.0 / bs_tol))) + 4
    try:
        for _ in range(max_iters):
            if oracle.max_queries is not None:
                remaining = oracle.max_queries - oracle.query_count
                n_probes = min(probes_per_iter, remaining - 2 * bs_reserve)
                if n_probes < 4:
                    break
            else:
                n_probes = probes_per_iter

            boundary = binary_search_blend(oracle, y, x, x_adv, bs_tol)
            dist = _l2(boundary - x)
            if dist < best_dist:
                best, best_dist = boundary, dist

            probe_scale = max(sigma, 1e-3 * dist)
            normal = estimate_subspace_normal(oracle, y, boundary, n_probes,
                                              dct_dim, sigma, probe_scale, rng)

            # bracket an adversarial point along the normal, then bisect
            span = max(dist, 1e-6)
            bracket = None
            for _ in range(6):
                cand = clamp_unit(x + span * normal)
                if oracle.query_label(cand) != y:
                    bracket = cand
                    break
                span *= 2.0
            if bracket is None:
                x_adv = best
                continue
            crossing = binary_search_blend(oracle, y, x, bracket, bs_tol)
            cdist = _l2(crossing - x)
            x_adv = crossing
            if cdist < best_dist:
                best, best_dist = crossing, cdist
    except QueryBudgetExceeded:
        pass
    success = best_dist <= cfg.eps
    return finalize(oracle, q0, success, x, best, cfg.norm, cfg.eps,
                    {"final_distance": best_dist})
