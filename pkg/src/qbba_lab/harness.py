"""Evaluation protocol: clean accuracy, attack failure rate, defense-strength
sweeps, and report emission.

Determinism contract: every quantity derives from the master seed through
labelled stream forks keyed by (defense kind, strength, image index), so
adding grid points or changing the worker count never perturbs existing
numbers, and a rerun reproduces reports byte-identically.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from qbba_lab.attacks import (AttackConfig, EotOracle, QueryOracle, oracle_mode_for,
                              run_attack)
from qbba_lab.dataio import Dataset
from qbba_lab.defenses import DefenseConfig, compose
from qbba_lab.model import DefendedModel, ModelWeights
from qbba_lab.rng import RngStream

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ExperimentSpec:
    """Protocol knobs of one sweep; data and weights are supplied separately."""

    master_seed: int
    attack: AttackConfig
    defense_grid: tuple = ()          # ((kind, (strengths...)), ...)
    n_attack: int = 200
    eot: int = 1
    verify_passes: int = 1
    workers: int = 1


@dataclass
class TradeoffPoint:
    defense: str
    strength: float
    clean_accu_percent: float
    afr_percent: float
    mean_queries: float
    n_attacked: int


def defense_from_spec(kind: str, strength: float) -> DefenseConfig:
    """Build a defense from a grid entry; 'a+b+c' composes members that all
    share the strength value."""
    if kind == "none":
        return DefenseConfig.none()
    if "+" in kind:
        return compose(DefenseConfig(part, strength) for part in kind.split("+"))
    return DefenseConfig(kind, strength)


def _predict(model: DefendedModel, image, rng: RngStream | None) -> int:
    stochastic = model.defense.kind != "none"
    return model.predict(image, rng if stochastic else None)


def evaluate_clean(model: DefendedModel, dataset: Dataset, rng: RngStream) -> float:
    """Percent of images whose single stochastic pass yields the true label."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    correct = 0
    for idx in range(len(dataset)):
        pred = _predict(model, dataset.images[idx], rng.fork(f"clean:{idx}"))
        correct += int(pred == dataset.labels[idx])
    return 100.0 * correct / len(dataset)


def attack_one_image(model: DefendedModel, attack: AttackConfig, image, label: int,
                     img_rng: RngStream, eot: int = 1, verify_passes: int = 1,
                     **attack_kwargs):
    """One attack run plus fresh-pass verification of its final example."""
    oracle = QueryOracle(
        model, img_rng.fork("oracle"), oracle_mode_for(attack.kind),
        max_queries=attack.query_budget * eot)
    attacker_view = EotOracle(oracle, eot) if eot > 1 else oracle
    outcome = run_attack(attacker_view, image, int(label), attack,
                         img_rng.fork("attack"), **attack_kwargs)

    verify = img_rng.fork("verify")
    votes = 0
    for v in range(verify_passes):
        pred = _predict(model, outcome.final_example, verify.fork(f"v{v}"))
        votes += int(pred != label)
    outcome.success = votes * 2 > verify_passes
    return outcome


_WORKER_CTX: dict = {}


def _pool_init(weights, defense, attack, eot, verify_passes, seed, point_label):
    _WORKER_CTX["model"] = DefendedModel(weights, defense)
    _WORKER_CTX["attack"] = attack
    _WORKER_CTX["eot"] = eot
    _WORKER_CTX["verify"] = verify_passes
    _WORKER_CTX["root"] = RngStream(seed).fork(point_label)


def _pool_run(task):
    idx, image, label = task
    out = attack_one_image(
        _WORKER_CTX["model"], _WORKER_CTX["attack"], image, label,
        _WORKER_CTX["root"].fork(f"img:{idx}"),
        eot=_WORKER_CTX["eot"], verify_passes=_WORKER_CTX["verify"])
    out.final_example = None  # not worth shipping back across processes
    return idx, out


def run_attack_eval(model: DefendedModel, attack: AttackConfig, dataset: Dataset,
                    spec: ExperimentSpec, point_rng: RngStream,
                    point_label: str = "point"):
    """AFR over the attack set (test images the defended model classifies
    correctly on an initial stochastic pass). Returns (afr, [(idx, outcome)]).
    """
    attack_set = []
    for idx in range(len(dataset)):
        img_rng = point_rng.fork(f"img:{idx}")
        if _predict(model, dataset.images[idx], img_rng.fork("screen")) == dataset.labels[idx]:
            attack_set.append(idx)
        if len(attack_set) >= spec.n_attack:
            break
    if not attack_set:
        raise RuntimeError("no correctly classified images")

    results = []
    if spec.workers > 1:
        tasks = [(idx, dataset.images[idx], int(dataset.labels[idx])) for idx in attack_set]
        with ProcessPoolExecutor(
                max_workers=spec.workers, initializer=_pool_init,
                initargs=(model.weights, model.defense, attack, spec.eot,
                          spec.verify_passes, spec.master_seed, point_label)) as pool:
            results = list(pool.map(_pool_run, tasks, chunksize=4))
        results.sort(key=lambda pair: pair[0])
    else:
        for idx in attack_set:
            out = attack_one_image(
                model, attack, dataset.images[idx], int(dataset.labels[idx]),
                point_rng.fork(f"img:{idx}"), eot=spec.eot,
                verify_passes=spec.verify_passes)
            results.append((idx, out))

    failures = sum(1 for _, out in results if not out.success)
    afr = 100.0 * failures / len(results)
    return afr, results


def sweep_tradeoff(spec: ExperimentSpec, weights: ModelWeights, dataset: Dataset):
    """One TradeoffPoint per (defense, strength) grid cell, strength-ordered.

    Returns (points, outcomes) with outcomes keyed by (kind, strength).
    """
    if not spec.defense_grid:
        raise ValueError("empty defense grid")
    root = RngStream(spec.master_seed)
    points = []
    outcomes = {}
    for kind, strengths in spec.defense_grid:
        for strength in sorted(strengths):
            defense = defense_from_spec(kind, float(strength))
            model = DefendedModel(weights, defense)
            label = f"point:{kind}:{strength!r}"
            point_rng = root.fork(label)
            accu = evaluate_clean(model, dataset, point_rng.fork("cleaneval"))
            afr, outs = run_attack_eval(model, spec.attack, dataset, spec,
                                        point_rng, point_label=label)
            queries = float(np.mean([o.queries_used for _, o in outs]))
            points.append(TradeoffPoint(kind, float(strength), accu, afr,
                                        queries, len(outs)))
            outcomes[(kind, float(strength))] = outs
    return points, outcomes


# ---------------------------------------------------------------------------
# reports


def _csv_lines(points) -> list[str]:
    lines = ["defense,strength,accu,afr,mean_queries,n_attacked"]
    for pt in points:
        lines.append(f"{pt.defense},{pt.strength!r},{pt.clean_accu_percent!r},"
                     f"{pt.afr_percent!r},{pt.mean_queries!r},{pt.n_attacked}")
    return lines


def report_dict(points, outcomes, spec: ExperimentSpec) -> dict:
    body = []
    for pt in points:
        outs = outcomes.get((pt.defense, pt.strength), [])
        body.append({
            "defense": pt.defense,
            "strength": pt.strength,
            "accu": pt.clean_accu_percent,
            "afr": pt.afr_percent,
            "mean_queries": pt.mean_queries,
            "n_attacked": pt.n_attacked,
            "outcomes": [
                {"index": idx, "success": bool(o.success),
                 "queries": int(o.queries_used),
                 "norm": float(o.final_perturbation_norm)}
                for idx, o in outs
            ],
        })
    return {
        "schema": SCHEMA_VERSION,
        "master_seed": spec.master_seed,
        "attack": {"kind": spec.attack.kind, "eps": spec.attack.eps,
                   "norm": spec.attack.norm,
                   "query_budget": spec.attack.query_budget,
                   "params": spec.attack.params},
        "eot": spec.eot,
        "verify_passes": spec.verify_passes,
        "points": body,
    }


def emit_report(points, outcomes, spec: ExperimentSpec, out_dir,
                formats=("csv", "json", "plot")) -> dict[str, str]:
    """Write report files; returns {format: path}. plot-data files are
    two-column text (accu, afr) per defense, matching the trade-off axes."""
    if not points:
        raise ValueError("no points to report")
    os.makedirs(out_dir, exist_ok=True)
    written = {}
    if "csv" in formats:
        path = os.path.join(out_dir, "report.csv")
        with open(path, "w", newline="") as fh:
            fh.write("\n".join(_csv_lines(points)) + "\n")
        written["csv"] = path
    if "json" in formats:
        path = os.path.join(out_dir, "report.json")
        with open(path, "w") as fh:
            json.dump(report_dict(points, outcomes, spec), fh, indent=2, sort_keys=True)
            fh.write("\n")
        written["json"] = path
    if "plot" in formats:
        plot_dir = os.path.join(out_dir, "plotdata")
        os.makedirs(plot_dir, exist_ok=True)
        by_kind: dict[str, list] = {}
        for pt in points:
            by_kind.setdefault(pt.defense, []).append(pt)
        for kind, pts in by_kind.items():
            path = os.path.join(plot_dir, f"{kind.replace('+', '_')}.txt")
            with open(path, "w") as fh:
                for pt in sorted(pts, key=lambda q: q.strength):
                    fh.write(f"{pt.clean_accu_percent!r} {pt.afr_percent!r}\n")
            written.setdefault("plot", plot_dir)
    return written


def merge_reports(paths, out_dir) -> dict:
    """Merge prior JSON reports into combined per-defense plot-data, deduping
    by (defense, strength, master seed). Mixed schema versions are an error."""
    merged = []
    seen = set()
    for path in paths:
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("schema") != SCHEMA_VERSION:
            raise ValueError(
                f"{path}: schema {doc.get('schema')!r} is incompatible with "
                f"version {SCHEMA_VERSION}")
        for pt in doc["points"]:
            key = (pt["defense"], pt["strength"], doc["master_seed"])
            if key in seen:
                continue
            seen.add(key)
            merged.append(pt)
    if not merged:
        raise ValueError("no points found in reports")

    os.makedirs(out_dir, exist_ok=True)
    plot_dir = os.path.join(out_dir, "plotdata")
    os.makedirs(plot_dir, exist_ok=True)
    by_kind: dict[str, list] = {}
    for pt in merged:
        by_kind.setdefault(pt["defense"], []).append(pt)
    for kind, pts in by_kind.items():
        with open(os.path.join(plot_dir, f"{kind.replace('+', '_')}.txt"), "w") as fh:
            for pt in sorted(pts, key=lambda q: q["strength"]):
                fh.write(f"{pt['accu']!r} {pt['afr']!r}\n")
    out = {"schema": SCHEMA_VERSION, "points": merged}
    with open(os.path.join(out_dir, "merged.json"), "w") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out
