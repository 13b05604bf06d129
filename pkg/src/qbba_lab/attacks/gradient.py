"""Zeroth-order gradient estimation from paired queries, and the NES-style
iterative attack built on it."""

from __future__ import annotations

import numpy as np

from qbba_lab.attacks.common import AttackConfig, finalize, margin_from_probs
from qbba_lab.attacks.oracle import QueryBudgetExceeded
from qbba_lab.numerics import clamp_unit, project_to_ball
from qbba_lab.rng import RngStream


class PartialEstimateError(RuntimeError):
    """Query budget ran out in the middle of a gradient estimate."""


def fd_gradient_estimate(loss_fn, x: np.ndarray, n_samples: int, beta: float,
                         rng: RngStream) -> np.ndarray:
    """Gaussian-smoothing finite-difference gradient estimate.

        G = (1/N) sum_i  [loss(x + beta*u_i) - loss(x - beta*u_i)] / (2*beta) * u_i

    with u_i standard normal. The difference quotient is weighted by the
    probe direction u_i so the estimate is a vector; with u fixed to basis
    vectors this reduces to the scalar coordinate form. Costs exactly
    2*n_samples queries through ``loss_fn`` (a closure over an oracle).
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if beta <= 0:
        raise ValueError("beta must be positive")
    g = np.zeros_like(x, dtype=np.float64)
    for _ in range(n_samples):
        u = rng.gaussian(x.shape)
        try:
            lp = loss_fn(x + beta * u)
            lm = loss_fn(x - beta * u)
        except QueryBudgetExceeded as exc:
            raise PartialEstimateError("budget exhausted mid-estimate") from exc
        g += ((lp - lm) / (2.0 * beta)) * u
    return g / n_samples


def nes_attack(oracle, x: np.ndarray, y: int, cfg: AttackConfig, rng: RngStream):
    """Sign-of-estimated-gradient ascent on the margin loss with antithetic
    sampling; Linf projection and unit-box clamp after every step."""
    if oracle.mode != "score":
        raise ValueError("nes attack needs a score oracle")
    p = cfg.params
    max_iters = p["max_iters"]
    n_pairs = max(1, p["grad_evals"] // 2)
    beta = p["beta"]
    lr = p["lr"]
    x = np.asarray(x, dtype=np.float64)
    q0 = oracle.query_count

    try:
        probs = oracle.query_probs(x)
    except QueryBudgetExceeded:
        return finalize(oracle, q0, False, x, x, cfg.norm, cfg.eps)
    if int(np.argmax(probs)) != y:
        return finalize(oracle, q0, True, x, x, cfg.norm, cfg.eps)

    def loss_fn(z):
        return margin_from_probs(oracle.query_probs(z), y)

    x_adv = x
    for _ in range(max_iters):
        try:
            g = fd_gradient_estimate(loss_fn, x_adv, n_pairs, beta, rng)
        except PartialEstimateError:
            break
        x_adv = clamp_unit(project_to_ball(x_adv + lr * np.sign(g), x, cfg.eps, "linf"))
        try:
            probs = oracle.query_probs(x_adv)
        except QueryBudgetExceeded:
            break
        if int(np.argmax(probs)) != y:
            return finalize(oracle, q0, True, x, x_adv, cfg.norm, cfg.eps)
    return finalize(oracle, q0, False, x, x_adv, cfg.norm, cfg.eps)
