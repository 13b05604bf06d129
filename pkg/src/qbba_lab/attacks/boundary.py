"""Decision-based boundary walk.

Starts from a random already-adversarial image, then alternates orthogonal
steps along the sphere around the original with contractions toward it,
multiplying either step size by the adaptation factor on rejection streaks.
Success means the walk gets within the L2 budget of the original.
"""

from __future__ import annotations

import numpy as np

from qbba_lab.attacks.common import AttackConfig, finalize, random_adversarial_init
from qbba_lab.attacks.oracle import QueryBudgetExceeded
from qbba_lab.numerics import clamp_unit
from qbba_lab.rng import RngStream


def _l2(a: np.ndarray) -> float:
    return float(np.sqrt(np.sum(a * a)))


def spherical_candidate(x: np.ndarray, x_adv: np.ndarray, rel_step: float,
                        rng: RngStream) -> np.ndarray:
    """Perturb x_adv orthogonally to the direction back to x, then project
    back onto the sphere of the current distance around x."""
    d = x_adv - x
    dist = _l2(d)
    direction = d / dist
    eta = rng.gaussian(x.shape)
    eta -= np.sum(eta * direction) * direction
    norm = _l2(eta)
    if norm > 0:
        eta *= rel_step * dist / norm
    moved = d + eta
    cand = x + moved * (dist / _l2(moved))
    return clamp_unit(cand)


def boundary_attack(oracle, x: np.ndarray, y: int, cfg: AttackConfig, rng: RngStream):
    if oracle.mode != "decision":
        raise ValueError("boundary attack needs a decision oracle")
    p = cfg.params
    max_iters = p["max_iters"]
    trials_per_iter = p["trials_per_iter"]
    samples_per_trial = p["samples_per_trial"]
    init_trials = p["init_trials"]
    factor = p["step_factor"]
    min_norm = p.get("min_norm", 0.0)
    orth_step = p["orth_step"]
    contract_step = p["contract_step"]
    x = np.asarray(x, dtype=np.float64)
    q0 = oracle.query_count

    try:
        if oracle.query_label(x) != y:
            return finalize(oracle, q0, True, x, x, cfg.norm, cfg.eps)
        x_adv, _ = random_adversarial_init(oracle, y, x.shape, rng, init_trials)
    except QueryBudgetExceeded:
        return finalize(oracle, q0, False, x, x, cfg.norm, cfg.eps)
    if x_adv is None:
        return finalize(oracle, q0, False, x, x, cfg.norm, cfg.eps,
                        {"init_failed": True})

    best = x_adv
    best_dist = _l2(x_adv - x)
    try:
        for _ in range(max_iters):
            # orthogonal phase: hunt for a same-distance adversarial candidate
            accepted = None
            for _ in range(trials_per_iter):
                n_ok = 0
                first_ok = None
                for _ in range(samples_per_trial):
                    cand = spherical_candidate(x, x_adv, orth_step, rng)
                    if oracle.query_label(cand) != y:
                        n_ok += 1
                        if first_ok is None:
                            first_ok = cand
                rate = n_ok / samples_per_trial
                if rate < 0.2:
                    orth_step *= factor
                elif rate > 0.5:
                    orth_step = min(orth_step / factor, 1.0)
                if first_ok is not None:
                    accepted = first_ok
                    break
            if accepted is None:
                continue
            x_adv = accepted

            # contraction phase: move toward the original until rejected
            for _ in range(trials_per_iter):
                cand = x + (1.0 - contract_step) * (x_adv - x)
                if oracle.query_label(cand) != y:
                    x_adv = cand
                    contract_step = min(contract_step / factor, 0.5)
                    break
                contract_step *= factor

            dist = _l2(x_adv - x)
            if dist < best_dist:
                best = x_adv
                best_dist = dist
            if best_dist <= min_norm:
                break
    except QueryBudgetExceeded:
        pass
    success = best_dist <= cfg.eps
    return finalize(oracle, q0, success, x, best, cfg.norm, cfg.eps,
                    {"final_distance": best_dist})
