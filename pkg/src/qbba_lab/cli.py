"""Command-line driver: train, eval, attack, sweep, report.

All parameters come from an optional JSON config file overridden by flags;
every command echoes its fully-resolved config into the output directory, and
rerunning from that echoed config reproduces the outputs bit-exactly. The
single seed flows through every random draw; QBBA_LAB_SEED is the fallback
when neither flag nor config supplies one.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys

import numpy as np

from qbba_lab.attacks import get_preset
from qbba_lab.dataio import gen_synthetic, load_weights, save_weights
from qbba_lab.harness import (ExperimentSpec, DefendedModel, defense_from_spec,
                              emit_report, evaluate_clean, merge_reports,
                              run_attack_eval, sweep_tradeoff)
from qbba_lab.model import ModelConfig
from qbba_lab.rng import RngStream
from qbba_lab.training import TrainHyperParams, TrainingDiverged, train

DEFAULT_CONFIG = {
    "seed": 0,
    "workers": 1,
    "model": {"image_size": 16, "channels": 1, "patch_size": 4, "embed_dim": 32,
              "num_heads": 2, "num_blocks": 2, "mlp_hidden": 64, "num_classes": 4},
    "data": {"seed": 7, "n_train": 2048, "n_test": 512},
    "train": {"steps": 3000, "batch_size": 64, "lr": 1e-3, "grad_clip": 1.0,
              "label_smoothing": 0.15},
    "eval": {"n_test": 512},
    "attack": {"preset": "toy-square", "defense": "none", "strength": 0.0,
               "eot": 1, "n_attack": 200, "verify_passes": 1},
    "sweep": {"attack": "toy-square", "n_attack": 200, "eot": 1,
              "verify_passes": 1,
              "defense_grid": {
                  "none": [0.0],
                  "snd": [0.01, 0.05, 0.1],
                  "pni": [0.05, 0.1, 0.2],
                  "rp": [0.125, 0.25, 0.375],
                  "prperm": [0.125, 0.25, 0.5],
                  "prdrop": [0.1, 0.2, 0.3],
                  "pattnpert": [0.125, 0.25, 0.5],
              }},
}


class CliError(Exception):
    def __init__(self, code: str, msg: str):
        super().__init__(msg)
        self.code = code


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def _load_config(path: str | None) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path:
        try:
            with open(path) as fh:
                cfg = _merge(cfg, json.load(fh))
        except OSError as exc:
            raise CliError("io", f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise CliError("config", f"malformed config file: {exc}") from exc
    return cfg


def _resolve_seed(args, cfg: dict) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("QBBA_LAB_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise CliError("config", f"QBBA_LAB_SEED is not an integer: {env!r}") from exc
    return int(cfg.get("seed", 0))


def _echo_config(cfg: dict, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _model_config(cfg: dict) -> ModelConfig:
    try:
        return ModelConfig(**cfg["model"])
    except (TypeError, ValueError) as exc:
        raise CliError("config", f"bad model config: {exc}") from exc


def _load_model(path: str):
    try:
        return load_weights(path)
    except OSError as exc:
        raise CliError("io", f"cannot read weights: {exc}") from exc


def _attack_config(name: str):
    try:
        return get_preset(name)
    except KeyError as exc:
        raise CliError("preset", str(exc.args[0])) from exc


def _require_out(args) -> str:
    if not args.out:
        raise CliError("config", "--out is required for this command")
    return args.out


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    seed = cfg["seed"] = _resolve_seed(args, cfg)
    if args.steps is not None:
        cfg["train"]["steps"] = args.steps
    out_dir = _require_out(args)
    mc = _model_config(cfg)
    tc = cfg["train"]
    hp = TrainHyperParams(steps=tc["steps"], batch_size=tc["batch_size"],
                          lr=tc["lr"], grad_clip=tc["grad_clip"],
                          label_smoothing=tc["label_smoothing"])
    _echo_config(cfg, out_dir)

    data = cfg["data"]
    train_ds = gen_synthetic(data["seed"], data["n_train"], mc, "train")
    test_ds = gen_synthetic(data["seed"], data["n_test"], mc, "test")
    try:
        weights, history = train(train_ds.images, train_ds.labels, mc, hp,
                                 RngStream(seed).fork("train"))
    except TrainingDiverged as exc:
        raise CliError("diverged", str(exc)) from exc

    weights_path = os.path.join(out_dir, "weights.vitw")
    save_weights(weights, weights_path)
    with open(os.path.join(out_dir, "loss.csv"), "w") as fh:
        fh.write("step,loss\n")
        for step, loss in history:
            fh.write(f"{step},{loss!r}\n")

    accu = evaluate_clean(DefendedModel(weights), test_ds,
                          RngStream(seed).fork("heldout"))
    print(f"weights={weights_path}")
    print(f"final_loss={history[-1][1]:.6f}")
    print(f"heldout_accu={accu:.2f}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args.config)
    seed = cfg["seed"] = _resolve_seed(args, cfg)
    if args.defense:
        cfg["attack"]["defense"] = args.defense
    if args.strength is not None:
        cfg["attack"]["strength"] = args.strength
    if args.n is not None:
        cfg["eval"]["n_test"] = args.n
    weights = _load_model(args.weights)
    defense = defense_from_spec(cfg["attack"]["defense"], cfg["attack"]["strength"])
    test_ds = gen_synthetic(cfg["data"]["seed"], cfg["eval"]["n_test"],
                            weights.config, "test")
    accu = evaluate_clean(DefendedModel(weights, defense), test_ds,
                          RngStream(seed).fork("cleaneval"))
    if args.out:
        _echo_config(cfg, args.out)
    print(f"accu={accu:.2f}")
    return 0


def cmd_attack(args) -> int:
    cfg = _load_config(args.config)
    seed = cfg["seed"] = _resolve_seed(args, cfg)
    atk = cfg["attack"]
    if args.attack:
        atk["preset"] = args.attack
    if args.defense:
        atk["defense"] = args.defense
    if args.strength is not None:
        atk["strength"] = args.strength
    if args.eot is not None:
        atk["eot"] = args.eot
    if args.n is not None:
        atk["n_attack"] = args.n
    if args.workers is not None:
        cfg["workers"] = args.workers
    out_dir = _require_out(args)

    weights = _load_model(args.weights)
    attack = _attack_config(atk["preset"])
    defense = defense_from_spec(atk["defense"], atk["strength"])
    spec = ExperimentSpec(master_seed=seed, attack=attack,
                          defense_grid=((atk["defense"], (atk["strength"],)),),
                          n_attack=atk["n_attack"], eot=atk["eot"],
                          verify_passes=atk["verify_passes"],
                          workers=cfg["workers"])
    test_ds = gen_synthetic(cfg["data"]["seed"], cfg["eval"]["n_test"],
                            weights.config, "test")
    _echo_config(cfg, out_dir)

    model = DefendedModel(weights, defense)
    label = f"point:{atk['defense']}:{atk['strength']!r}"
    point_rng = RngStream(seed).fork(label)
    accu = evaluate_clean(model, test_ds, point_rng.fork("cleaneval"))
    afr, outs = run_attack_eval(model, attack, test_ds, spec, point_rng,
                                point_label=label)
    mean_q = float(np.mean([o.queries_used for _, o in outs]))

    from qbba_lab.harness import TradeoffPoint, report_dict
    pt = TradeoffPoint(atk["defense"], float(atk["strength"]), accu, afr,
                       mean_q, len(outs))
    doc = report_dict([pt], {(pt.defense, pt.strength): outs}, spec)
    with open(os.path.join(out_dir, "outcomes.json"), "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"accu={accu:.2f}")
    print(f"afr={afr:.2f}")
    print(f"mean_queries={mean_q:.1f}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args.config)
    seed = cfg["seed"] = _resolve_seed(args, cfg)
    if args.workers is not None:
        cfg["workers"] = args.workers
    if args.n is not None:
        cfg["sweep"]["n_attack"] = args.n
    out_dir = _require_out(args)

    weights = _load_model(args.weights)
    sw = cfg["sweep"]
    grid = tuple((kind, tuple(s)) for kind, s in sw["defense_grid"].items())
    if not grid:
        raise CliError("config", "sweep defense_grid is empty")
    spec = ExperimentSpec(master_seed=seed, attack=_attack_config(sw["attack"]),
                          defense_grid=grid, n_attack=sw["n_attack"],
                          eot=sw["eot"], verify_passes=sw["verify_passes"],
                          workers=cfg["workers"])
    test_ds = gen_synthetic(cfg["data"]["seed"], cfg["eval"]["n_test"],
                            weights.config, "test")
    _echo_config(cfg, out_dir)

    points, outcomes = sweep_tradeoff(spec, weights, test_ds)
    written = emit_report(points, outcomes, spec, out_dir)
    for fmt, path in sorted(written.items()):
        print(f"{fmt}={path}")
    return 0


def cmd_report(args) -> int:
    out_dir = _require_out(args)
    try:
        merged = merge_reports(args.reports, out_dir)
    except OSError as exc:
        raise CliError("io", str(exc)) from exc
    except ValueError as exc:
        raise CliError("schema", str(exc)) from exc
    print(f"merged_points={len(merged['points'])}")
    print(f"out={out_dir}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qbba-lab",
        description="Train a toy vision transformer, attack it with "
                    "query-based black-box attacks, and sweep stochastic "
                    "defense trade-offs.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, weights=False):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="master seed (fallback: QBBA_LAB_SEED)")
        p.add_argument("--out", help="output directory")
        if weights:
            p.add_argument("--weights", required=True, help="weight file")

    p = sub.add_parser("train", help="train the toy model")
    common(p)
    p.add_argument("--steps", type=int, help="training steps")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="clean accuracy of a (defended) model")
    common(p, weights=True)
    p.add_argument("--defense", help="defense kind (none, snd, pni, rp, prperm, prdrop, pattnpert, a+b)")
    p.add_argument("--strength", type=float)
    p.add_argument("--n", type=int, help="test images")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("attack", help="run one (defense, strength, attack) cell")
    common(p, weights=True)
    p.add_argument("--attack", help="attack preset name")
    p.add_argument("--defense", help="defense kind")
    p.add_argument("--strength", type=float)
    p.add_argument("--eot", type=int, help="EOT samples per attacker query")
    p.add_argument("--n", type=int, help="images to attack")
    p.add_argument("--workers", type=int)
    p.set_defaults(fn=cmd_attack)

    p = sub.add_parser("sweep", help="full defense-grid trade-off sweep")
    common(p, weights=True)
    p.add_argument("--n", type=int, help="images to attack per point")
    p.add_argument("--workers", type=int)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("report", help="merge prior sweep reports")
    p.add_argument("reports", nargs="+", help="report.json files")
    p.add_argument("--out", help="output directory")
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return 1
    except (RuntimeError, ValueError, OSError) as exc:
        print(f"error: runtime: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
