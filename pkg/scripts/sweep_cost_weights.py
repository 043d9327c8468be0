"""Score leader/follower cost weights against the qualitative experiment checks.

Each candidate is a set of overrides for the ``scenario`` and per-follower
weights of a base config. For every candidate the three experiments are run
and the counts behind the qualitative checks are printed as one JSON line.

Usage: python3 scripts/sweep_cost_weights.py candidates.yaml [--config PATH] [--seed N]

``candidates.yaml`` is a list of mappings with optional keys
``position_weight``, ``relative_weight``, ``terminal_scale`` (leader) and
``follower_position_weight``, ``follower_relative_weight``.
"""
import argparse
import json
import sys

import numpy as np
import yaml

from stackmeta.cli_io import build_run_config, default_config_path
from stackmeta.meta_trainer import DivergenceError
from stackmeta.sim_bench import (
    rollout,
    run_adaptation_experiment,
    run_individual_experiment,
    run_unilateral_experiment,
)

LEADER_KEYS = ("position_weight", "relative_weight", "terminal_scale")
FOLLOWER_KEYS = {"follower_position_weight": "position_weight", "follower_relative_weight": "relative_weight"}


def score(raw: dict) -> dict:
    cfg = build_run_config(raw)
    tasks, dist = cfg.tasks, cfg.type_distribution
    (rep, _, adapted) = run_adaptation_experiment(tasks, dist, cfg.train, cfg.bench)
    uni, _ = run_unilateral_experiment(tasks, dist, cfg.train, cfg.bench)
    ind, _, _ = run_individual_experiment(tasks, cfg.train, cfg.bench)
    em, ea, sa = (rep.column(c) for c in ("expected_meta", "expected_adapted", "simulated_adapted"))
    su, st, ei = uni.column("simulated_unilateral"), ind.column("simulated_transfer"), ind.column("expected_individual")
    costs = rep.meta["trace"].meta_costs()
    others = [i for i in range(len(tasks)) if i != cfg.bench.transfer_source]
    tr = rollout(tasks[0], adapted[0], noise=False)
    pos = [0, 1, 4, 5]
    return {
        "meta_cost_decreased": bool(costs[-1] < costs[0]),
        "adapted_not_worse": int(np.sum(ea <= 1.01 * em)),
        "simulated_within_gap": int(np.sum((sa >= ea) & (sa < (1 + cfg.bench.sim_gap) * ea))),
        "unilateral_worse": int(np.sum(su > sa)),
        "meta_beats_transfer": int(np.sum((sa <= st)[others])),
        "individual_slight": int(np.sum(ei >= 0.9 * ea)),
        "terminal_ratio": float(np.linalg.norm(tr.states[-1, pos]) / np.linalg.norm(tr.states[0, pos])),
    }


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("candidates")
    parser.add_argument("--config", default=str(default_config_path()))
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    with open(args.config) as fh:
        base = yaml.safe_load(fh)
    with open(args.candidates) as fh:
        candidates = yaml.safe_load(fh)
    for cand in candidates:
        raw = yaml.safe_load(yaml.safe_dump(base))
        raw["seed"] = args.seed
        for k in LEADER_KEYS:
            if k in cand:
                raw["scenario"][k] = cand[k]
        for k, target in FOLLOWER_KEYS.items():
            if k in cand:
                for f in raw["followers"]:
                    f[target] = cand[k]
        try:
            result = score(raw)
        except (DivergenceError, np.linalg.LinAlgError) as exc:
            result = {"error": str(exc)}
        print(json.dumps({"candidate": cand, **result}), flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
