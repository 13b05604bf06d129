"""Named attack presets.

``paper-*`` presets carry the reference hyper-parameters for 224x224
ImageNet-scale runs; ``toy-*`` presets are scaled to the 16x16 synthetic
task (DCT dimensions scaled by image-size ratio, iteration counts and
budgets sized for desk runtime). Budgets are hard query caps; EOT wrapping
multiplies the effective budget by its sample count.
"""

from __future__ import annotations

from qbba_lab.attacks.common import AttackConfig

PRESETS: dict[str, AttackConfig] = {
    # -- score-based ------------------------------------------------------
    "paper-square": AttackConfig("square", eps=0.03, norm="linf", query_budget=20_000,
                                 params={"max_iters": 100, "p_init": 0.8, "restarts": 1}),
    "toy-square": AttackConfig("square", eps=0.1, norm="linf", query_budget=1_200,
                               params={"max_iters": 1000, "p_init": 0.8, "restarts": 1}),
    "paper-nes": AttackConfig("nes", eps=0.05, norm="linf", query_budget=200_000,
                              params={"max_iters": 1000, "grad_evals": 100,
                                      "beta": 0.001, "lr": 0.005}),
    "toy-nes": AttackConfig("nes", eps=0.1, norm="linf", query_budget=20_000,
                            params={"max_iters": 400, "grad_evals": 40,
                                    "beta": 0.001, "lr": 0.01}),
    "paper-simba": AttackConfig("simba", eps=0.2, norm="l2", query_budget=40_000,
                                params={"max_iters": 10_000, "dct_dim": 40, "step": 0.2}),
    "toy-simba": AttackConfig("simba", eps=2.0, norm="l2", query_budget=8_000,
                              params={"max_iters": 2_000, "dct_dim": 8, "step": 0.4}),
    # -- decision-based ---------------------------------------------------
    "paper-boundary": AttackConfig("boundary", eps=3.0, norm="l2", query_budget=500_000,
                                   params={"max_iters": 5000, "trials_per_iter": 25,
                                           "samples_per_trial": 20, "init_trials": 100,
                                           "orth_step": 0.01, "contract_step": 0.01,
                                           "step_factor": 0.667, "min_norm": 0.0}),
    "toy-boundary": AttackConfig("boundary", eps=1.5, norm="l2", query_budget=15_000,
                                 params={"max_iters": 150, "trials_per_iter": 10,
                                         "samples_per_trial": 10, "init_trials": 100,
                                         "orth_step": 0.01, "contract_step": 0.01,
                                         "step_factor": 0.667, "min_norm": 0.0}),
    "paper-hsja": AttackConfig("hsja", eps=3.0, norm="l2", query_budget=100_000,
                               params={"max_iters": 20, "init_evals": 100,
                                       "max_evals": 10_000, "init_trials": 100,
                                       "gamma": 1.0}),
    "toy-hsja": AttackConfig("hsja", eps=1.5, norm="l2", query_budget=15_000,
                             params={"max_iters": 20, "init_evals": 60,
                                     "max_evals": 2_000, "init_trials": 100,
                                     "gamma": 1.0}),
    "paper-geoda": AttackConfig("geoda", eps=3.0, norm="l2", query_budget=100_000,
                                params={"max_iters": 4000, "dct_dim": 20,
                                        "bs_tol": 1e-4, "probe_sigma": 2e-4,
                                        "probes_per_iter": 100, "init_trials": 100}),
    "toy-geoda": AttackConfig("geoda", eps=1.5, norm="l2", query_budget=12_000,
                              params={"max_iters": 30, "dct_dim": 4,
                                      "bs_tol": 1e-4, "probe_sigma": 2e-4,
                                      "probes_per_iter": 80, "init_trials": 100}),
}

SCORE_KINDS = ("square", "nes", "simba")
DECISION_KINDS = ("boundary", "hsja", "geoda")


def get_preset(name: str) -> AttackConfig:
    try:
        return PRESETS[name]
    except KeyError:
        known = ", ".join(sorted(PRESETS))
        raise KeyError(f"unknown attack preset {name!r}; available: {known}") from None
