import time
from types import SimpleNamespace

import numpy as np
import pytest

from qbba_lab.dataio import gen_synthetic
from qbba_lab.model import TOY_CONFIG, DefendedModel
from qbba_lab.rng import RngStream
from qbba_lab.training import TrainHyperParams, train


@pytest.fixture(scope="session")
def toy_data():
    cfg = TOY_CONFIG
    return SimpleNamespace(
        cfg=cfg,
        train=gen_synthetic(7, 2048, cfg, "train"),
        test=gen_synthetic(7, 512, cfg, "test"),
    )


@pytest.fixture(scope="session")
def trained(toy_data):
    """Default-recipe trained toy model, shared by integration and
    acceptance tests; wall time is recorded for the training criterion."""
    t0 = time.perf_counter()
    weights, history = train(toy_data.train.images, toy_data.train.labels,
                             toy_data.cfg, TrainHyperParams(),
                             RngStream(0).fork("train"))
    seconds = time.perf_counter() - t0
    return SimpleNamespace(weights=weights, history=history,
                           train_seconds=seconds, model=DefendedModel(weights))


class FakeScoreOracle:
    """Score-mode oracle driven by a probs function; for attack unit tests."""

    def __init__(self, probs_fn, max_queries=None):
        self.probs_fn = probs_fn
        self.mode = "score"
        self.max_queries = max_queries
        self.query_count = 0

    def query_probs(self, image):
        from qbba_lab.attacks import QueryBudgetExceeded
        if self.max_queries is not None and self.query_count >= self.max_queries:
            raise QueryBudgetExceeded("budget exhausted")
        self.query_count += 1
        return np.asarray(self.probs_fn(image), dtype=np.float64)

    def query_label(self, image):
        raise RuntimeError("score oracle exposes probabilities, not labels")


class LinearDecisionOracle:
    """Two-class decision oracle with boundary w.x + b = 0; class 0 is the
    negative side. Used as the closed-form geometry for decision attacks."""

    def __init__(self, w, b, max_queries=None):
        self.w = np.asarray(w, dtype=np.float64)
        self.b = float(b)
        self.mode = "decision"
        self.max_queries = max_queries
        self.query_count = 0

    def query_label(self, image):
        from qbba_lab.attacks import QueryBudgetExceeded
        if self.max_queries is not None and self.query_count >= self.max_queries:
            raise QueryBudgetExceeded("budget exhausted")
        self.query_count += 1
        return int(np.sum(self.w * image) + self.b > 0)

    def query_probs(self, image):
        raise RuntimeError("decision oracle does not expose probabilities")

    def distance_to_boundary(self, x):
        return abs(np.sum(self.w * x) + self.b) / np.sqrt(np.sum(self.w * self.w))


@pytest.fixture
def fake_score_oracle():
    return FakeScoreOracle


@pytest.fixture
def linear_decision_oracle():
    return LinearDecisionOracle
