"""The attacker-facing query interface.

A :class:`QueryOracle` hides the model, defense and defense randomness; the
attacker sees class probabilities (score mode) or the top-1 label (decision
mode), never both. Every query draws fresh defense randomness from a
per-query fork of the oracle's hidden stream and bumps a monotone counter;
exceeding ``max_queries`` raises :class:`QueryBudgetExceeded` before the
forward pass runs, so the counter never passes the cap.
"""

from __future__ import annotations

import numpy as np

from qbba_lab.model import DefendedModel
from qbba_lab.rng import RngStream


class QueryBudgetExceeded(RuntimeError):
    pass


class QueryOracle:
    def __init__(self, model: DefendedModel, rng: RngStream | None, mode: str,
                 max_queries: int | None = None):
        if mode not in ("score", "decision"):
            raise ValueError(f"mode must be 'score' or 'decision', got {mode!r}")
        self.model = model
        self.mode = mode
        self.max_queries = max_queries
        self.query_count = 0
        self._stochastic = model.defense.kind != "none"
        if self._stochastic and rng is None:
            raise ValueError("a defended oracle needs an RngStream")
        self._rng = rng

    def _forward(self, image: np.ndarray):
        if self.max_queries is not None and self.query_count >= self.max_queries:
            raise QueryBudgetExceeded(f"query budget {self.max_queries} exhausted")
        self.query_count += 1
        rng = self._rng.fork(f"q{self.query_count}") if self._stochastic else None
        return self.model.forward(image, rng)

    def query_probs(self, image: np.ndarray) -> np.ndarray:
        if self.mode != "score":
            raise RuntimeError("decision oracle does not expose probabilities")
        _, probs = self._forward(image)
        return probs

    def query_label(self, image: np.ndarray) -> int:
        if self.mode != "decision":
            raise RuntimeError("score oracle exposes probabilities, not labels")
        _, probs = self._forward(image)
        return int(np.argmax(probs))


class EotOracle:
    """Expectation-over-transformation wrapper: every attacker query becomes
    the mean score (score mode) or majority label (decision mode) over
    n_samples independent oracle calls, so query_count grows by exactly
    n_samples per wrapped query."""

    def __init__(self, inner: QueryOracle, n_samples: int):
        if n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        self.inner = inner
        self.n_samples = n_samples
        self.wrapped_queries = 0

    @property
    def mode(self) -> str:
        return self.inner.mode

    @property
    def query_count(self) -> int:
        return self.inner.query_count

    @property
    def max_queries(self):
        return self.inner.max_queries

    def query_probs(self, image: np.ndarray) -> np.ndarray:
        self.wrapped_queries += 1
        total = self.inner.query_probs(image)
        for _ in range(self.n_samples - 1):
            total = total + self.inner.query_probs(image)
        return total / self.n_samples

    def query_label(self, image: np.ndarray) -> int:
        self.wrapped_queries += 1
        labels = [self.inner.query_label(image) for _ in range(self.n_samples)]
        return int(np.argmax(np.bincount(labels)))
