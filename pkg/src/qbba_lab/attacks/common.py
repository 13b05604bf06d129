"""Shared attack machinery: configs, outcomes, the margin objective, and
decision-attack helpers (random adversarial init, boundary bisection)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from qbba_lab.numerics import clamp_unit, perturbation_norm, project_to_ball
from qbba_lab.rng import RngStream

_LOG_FLOOR = 1e-300


@dataclass(frozen=True)
class AttackConfig:
    kind: str                # square | nes | simba | boundary | hsja | geoda
    eps: float               # perturbation budget under `norm`
    norm: str                # "linf" | "l2"
    query_budget: int        # hard cap on oracle queries
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.eps < 0:
            raise ValueError("eps must be >= 0")
        if self.query_budget <= 0:
            raise ValueError("query_budget must be positive")
        if self.norm not in ("linf", "l2"):
            raise ValueError(f"unknown norm {self.norm!r}")


@dataclass
class AttackOutcome:
    success: bool
    queries_used: int
    final_example: np.ndarray
    final_perturbation_norm: float
    extra: dict = field(default_factory=dict)


def margin_from_probs(probs: np.ndarray, y: int) -> float:
    """Log-probability margin of the best wrong class over the true class.

    Equals the logit margin when probs come from one softmax; positive iff
    the input is misclassified. This is the score-attack objective.
    """
    p = np.maximum(probs, _LOG_FLOOR)
    others = np.delete(p, y)
    return float(np.log(others.max()) - np.log(p[y]))


def finalize(oracle, q0: int, success: bool, x0: np.ndarray, final: np.ndarray,
             norm: str, eps: float, extra: dict | None = None) -> AttackOutcome:
    """Build an outcome; the final example is always forced into the eps ball
    and the unit box so failed runs still satisfy the output contract."""
    final = clamp_unit(project_to_ball(final, x0, eps, norm))
    return AttackOutcome(
        success=success,
        queries_used=oracle.query_count - q0,
        final_example=final,
        final_perturbation_norm=perturbation_norm(final, x0, norm),
        extra=extra or {},
    )


def random_adversarial_init(oracle, y: int, shape, rng: RngStream, max_trials: int):
    """Uniform random images screened by the oracle until one is adversarial.

    Returns (image, trials_used) with image=None when every trial failed.
    """
    for trial in range(1, max_trials + 1):
        cand = rng.uniform(shape)
        if oracle.query_label(cand) != y:
            return cand, trial
    return None, max_trials


def binary_search_blend(oracle, y: int, x_clean: np.ndarray, x_adv: np.ndarray,
                        tol: float):
    """Bisect the blend between a clean and an adversarial point.

    Finds the smallest alpha (within tol) such that
    x_clean + alpha * (x_adv - x_clean) is still adversarial, and returns
    that boundary-side point. One oracle query per bisection step.
    """
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        cand = x_clean + mid * (x_adv - x_clean)
        if oracle.query_label(cand) != y:
            hi = mid
        else:
            lo = mid
    return x_clean + hi * (x_adv - x_clean)
