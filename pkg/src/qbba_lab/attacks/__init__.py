"""Query-based black-box attacks against a defended oracle."""

from __future__ import annotations

from qbba_lab.attacks.boundary import boundary_attack
from qbba_lab.attacks.common import AttackConfig, AttackOutcome, margin_from_probs
from qbba_lab.attacks.geoda import geoda_attack
from qbba_lab.attacks.gradient import PartialEstimateError, fd_gradient_estimate, nes_attack
from qbba_lab.attacks.hsja import hsja_attack
from qbba_lab.attacks.oracle import EotOracle, QueryBudgetExceeded, QueryOracle
from qbba_lab.attacks.presets import DECISION_KINDS, PRESETS, SCORE_KINDS, get_preset
from qbba_lab.attacks.simba import simba_attack
from qbba_lab.attacks.square import square_attack

_RUNNERS = {
    "square": square_attack,
    "nes": nes_attack,
    "simba": simba_attack,
    "boundary": boundary_attack,
    "hsja": hsja_attack,
    "geoda": geoda_attack,
}


def oracle_mode_for(kind: str) -> str:
    if kind in SCORE_KINDS:
        return "score"
    if kind in DECISION_KINDS:
        return "decision"
    raise ValueError(f"unknown attack kind {kind!r}")


def run_attack(oracle, x, y: int, cfg: AttackConfig, rng, **kwargs) -> AttackOutcome:
    """Dispatch one attack run against an oracle."""
    try:
        runner = _RUNNERS[cfg.kind]
    except KeyError:
        raise ValueError(f"unknown attack kind {cfg.kind!r}") from None
    return runner(oracle, x, y, cfg, rng, **kwargs)


__all__ = [
    "AttackConfig", "AttackOutcome", "EotOracle", "PRESETS",
    "PartialEstimateError", "QueryBudgetExceeded", "QueryOracle",
    "boundary_attack", "fd_gradient_estimate", "geoda_attack", "get_preset",
    "hsja_attack", "margin_from_probs", "nes_attack", "oracle_mode_for",
    "run_attack", "simba_attack", "square_attack",
]
