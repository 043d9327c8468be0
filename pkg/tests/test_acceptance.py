"""End-to-end acceptance checks, one test per criterion.

Each test records a single PASS/FAIL line, collected in the terminal
summary. Thresholds are the stated ones; nothing here is tuned per run.
"""
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from scipy.optimize import minimize

from stackmeta.cli_io import main
from stackmeta.gradcheck import random_game, random_param, run_gradient_checks
from stackmeta.lqg_core import closed_loop_matrices, expected_cost, follower_best_response, solve_riccati, true_response_matrix
from stackmeta.meta_trainer import Task, train_meta
from stackmeta.sim_bench import (
    monte_carlo_cost,
    rollout,
    run_adaptation_experiment,
    run_individual_experiment,
    run_unilateral_experiment,
)

pytestmark = pytest.mark.slow


def _argmin_follower(spec, ftype, x, u_L):
    z = spec.A @ x + spec.B_L @ u_L
    B, Q, R = ftype.B_F, ftype.Q_F, ftype.R_F

    def f(u):
        nxt = z + B @ u
        return nxt @ Q @ nxt + u @ R @ u

    def g(u):
        return 2 * B.T @ Q @ (z + B @ u) + 2 * R @ u

    return minimize(f, np.zeros(ftype.r_F), jac=g, method="BFGS", options={"gtol": 1e-13, "maxiter": 500}).x


@pytest.fixture(scope="module")
def experiments(robot):
    tasks = robot.tasks
    adaptation = run_adaptation_experiment(tasks, robot.type_distribution, robot.train, robot.bench)
    unilateral = run_unilateral_experiment(tasks, robot.type_distribution, robot.train, robot.bench)
    individual = run_individual_experiment(tasks, robot.train, robot.bench)
    return adaptation, unilateral, individual


def test_criterion_01_best_response_oracle(report_criterion):
    start = time.perf_counter()
    worst = 0.0
    for i in range(200):
        rng = np.random.default_rng([1, i])
        spec, f = random_game(rng)
        x, u = rng.standard_normal(spec.n), rng.standard_normal(spec.r_L)
        worst = max(worst, np.max(np.abs(follower_best_response(spec, f, x, u) - _argmin_follower(spec, f, x, u))))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-6 and elapsed < 10
    report_criterion(1, ok, f"max abs deviation {worst:.2e} over 200 instances in {elapsed:.1f}s")
    assert ok


def test_criterion_02_gradient_suite(robot, report_criterion):
    start = time.perf_counter()
    rows = run_gradient_checks(robot.tasks, instances=50, seed=0, h=1e-5, tol=1e-4)
    elapsed = time.perf_counter() - start
    failed = [r for r in rows if not r["passed"]]
    worst = max(r["rel_error"] for r in rows)
    ok = not failed and elapsed < 120
    report_criterion(2, ok, f"{len(rows)} checks, {len(failed)} failed, max rel error {worst:.1e}, {elapsed:.1f}s")
    assert ok


def test_criterion_03_riccati_sanity(report_criterion):
    worst_asym, worst_eig, res_T = 0.0, 0.0, 0.0
    for i in range(50):
        rng = np.random.default_rng([3, i])
        task = random_game(rng)
        spec, f = task
        At, Bt = closed_loop_matrices(spec, f, random_param(rng, task))
        sol = solve_riccati(At, Bt, spec.Q_L, spec.R_L, spec.Q_Lf, spec.T, spec.Sigma)
        for P in sol.P:
            worst_asym = max(worst_asym, np.max(np.abs(P - P.T)))
            worst_eig = min(worst_eig, np.linalg.eigvalsh(P).min() / max(1.0, np.abs(P).max()))
        res_T = max(res_T, abs(sol.res[-1]))
    scalar = solve_riccati([[1.0]], [[1.0]], [[1.0]], [[1.0]], [[1.0]], 1, [[0.5]])
    cost = 4 * scalar.P[0, 0, 0] + scalar.res[0]
    hand = max(abs(scalar.P[0, 0, 0] - 1.5), abs(scalar.K[0, 0, 0] - 0.5), abs(cost - 6.5))
    ok = worst_asym == 0.0 and worst_eig >= -1e-12 and res_T == 0.0 and hand <= 1e-12
    report_criterion(3, ok, f"asymmetry {worst_asym:.1e}, min scaled eigenvalue {worst_eig:.1e}, "
                            f"res_T {res_T}, scalar case deviation {hand:.1e}")
    assert ok


def test_criterion_04_analytic_vs_simulated(robot, report_criterion):
    worst_nf, worst_z = 0.0, 0.0
    for task in robot.tasks:
        spec, f = task
        M = true_response_matrix(spec, f)
        quiet = Task(replace(spec, Sigma=np.zeros_like(spec.Sigma)), f)
        worst_nf = max(worst_nf, abs(rollout(task, M, noise=False).realized_cost - expected_cost(*quiet, M)))
        sim = monte_carlo_cost(task, M, runs=1000, seed=robot.seed)
        worst_z = max(worst_z, abs(sim.mean_cost - expected_cost(spec, f, M)) / sim.std_error)
    ok = worst_nf <= 1e-8 and worst_z <= 3.0
    report_criterion(4, ok, f"noise-free deviation {worst_nf:.1e}, worst Monte-Carlo gap {worst_z:.2f} SE")
    assert ok


def test_criterion_05_meta_training_descent(robot, report_criterion):
    start = time.perf_counter()
    decreased = 0
    for seed in range(20):
        cfg = replace(robot.train, seed=seed)
        _, trace = train_meta(robot.tasks, robot.type_distribution, cfg)
        costs = trace.meta_costs()
        decreased += bool(costs[-1] < costs[0])
    elapsed = time.perf_counter() - start
    ok = decreased >= 18 and elapsed < 600
    report_criterion(5, ok, f"meta-cost decreased for {decreased}/20 initializations in {elapsed:.0f}s")
    assert ok


def test_criterion_06_adaptation_benefit(robot, experiments, report_criterion):
    report = experiments[0][0]
    em, ea, sa = (report.column(c) for c in ("expected_meta", "expected_adapted", "simulated_adapted"))
    gap = robot.bench.sim_gap
    lower = ea <= em * 1.01
    close = (sa >= ea) & (sa < (1 + gap) * ea)
    ok = bool(lower.all() and close.all())
    report_criterion(6, ok, f"adapted <= meta+1% for {lower.sum()}/5 types "
                            f"(ratios {np.round(ea / em, 3).tolist()}); "
                            f"expected <= simulated < {1 + gap:g}x expected for {close.sum()}/5 "
                            f"(ratios {np.round(sa / ea, 3).tolist()})")
    assert ok


def test_criterion_07_unilateral_degradation(experiments, report_criterion):
    (report, _, _), (uni, models), _ = experiments
    worse = uni.column("simulated_unilateral") > report.column("simulated_adapted")
    identical = all(np.array_equal(models[0], m) for m in models)
    ok = worse.sum() >= 4 and identical
    report_criterion(7, ok, f"unilateral simulated cost higher for {worse.sum()}/5 types; models identical: {identical}")
    assert ok


def test_criterion_08_transferability(robot, experiments, report_criterion):
    (report, _, _), _, (ind, _, _) = experiments
    source = robot.bench.transfer_source
    others = [i for i in range(len(report.rows)) if i != source]
    sa, ea = report.column("simulated_adapted"), report.column("expected_adapted")
    st, ei = ind.column("simulated_transfer"), ind.column("expected_individual")
    beats = (sa <= st)[others]
    slight = ei >= 0.9 * ea
    ok = beats.sum() >= 3 and slight.all()
    report_criterion(8, ok, f"meta-adapted <= transferred for {beats.sum()}/4 non-source types; "
                            f"individual >= 0.9x adapted expected for {slight.sum()}/5 "
                            f"(ratios {np.round(ei / ea, 3).tolist()})")
    assert ok


def test_criterion_09_guidance_effectiveness(robot, experiments, report_criterion):
    _, _, adapted = experiments[0]
    task = robot.tasks[0]
    tr = rollout(task, adapted[0], noise=False)
    positions = [0, 1, 4, 5]
    ratio = np.linalg.norm(tr.states[-1, positions]) / np.linalg.norm(tr.states[0, positions])
    ok = ratio < 0.1
    report_criterion(9, ok, f"terminal/initial joint position norm {ratio:.4f}")
    assert ok


def _tree_bytes(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_10_determinism(tmp_path, report_criterion):
    first = tmp_path / "first"
    assert main(["train", "--out", str(first / "train")]) == 0
    model = str(first / "train" / "model_meta.txt")
    runs = [
        ["train"],
        ["adapt", "--model", model],
        ["simulate", "--model", model, "--runs", "20"],
        ["baseline-unilateral", "--runs", "20"],
        ["baseline-individual", "--runs", "20"],
        ["transfer", "--runs", "20"],
        ["check-gradients", "--instances", "10"],
    ]
    mismatched = []
    for cmd in runs:
        outs = [tmp_path / f"{cmd[0]}_{k}" for k in range(2)]
        codes = [main(cmd + ["--out", str(o)]) for o in outs]
        if codes != [0, 0] or _tree_bytes(outs[0]) != _tree_bytes(outs[1]):
            mismatched.append(cmd[0])
    ok = not mismatched
    report_criterion(10, ok, f"{len(runs)} subcommands run twice; differing: {mismatched or 'none'}")
    assert ok
