"""Random small games and the finite-difference gradient suite.

Every analytic derivative in the package is compared with central
differences on random instances (``n <= 4``, ``r <= 2``) and on any extra
tasks supplied by the caller.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from . import streams
from .lqg_core import FollowerType, GameSpec, closed_loop_matrices, expected_cost, solve_for_model
from .matdiff import (
    d_closed_loop,
    d_expected_cost,
    d_expected_cost_adjoint,
    d_identity,
    d_inverse,
    d_riccati,
    fd_gradient,
    fd_jacobian,
    rel_error,
)
from .meta_trainer import (
    Task,
    TrainConfig,
    adaptation_gradient,
    adaptation_objective,
    fit_cost,
    fit_cost_gradient,
    inner_gradient,
    inner_objective,
    sample_dataset,
    task_loss,
    task_loss_gradient,
)

FD_STEP = 1e-5
REL_TOL = 1e-4


def _spd(rng: np.random.Generator, n: int, floor: float) -> np.ndarray:
    L = rng.standard_normal((n, n)) / np.sqrt(n)
    return L @ L.T + floor * np.eye(n)


def random_game(rng: np.random.Generator, n_max: int = 4, r_max: int = 2, T_max: int = 5) -> Task:
    """A well-scaled random game with ``A`` of spectral radius near one."""
    n = int(rng.integers(1, n_max + 1))
    r_L = int(rng.integers(1, r_max + 1))
    r_F = int(rng.integers(1, r_max + 1))
    T = int(rng.integers(1, T_max + 1))
    A = rng.standard_normal((n, n))
    A *= rng.uniform(0.5, 1.2) / max(np.max(np.abs(np.linalg.eigvals(A))), 1e-6)
    spec = GameSpec(
        A=A,
        B_L=rng.standard_normal((n, r_L)),
        Sigma=0.1 * _spd(rng, n, 0.0),
        Q_L=_spd(rng, n, 0.1),
        R_L=_spd(rng, r_L, 1.0),
        Q_Lf=_spd(rng, n, 0.1),
        T=T,
        x0=rng.standard_normal(n),
    )
    ftype = FollowerType(0, rng.standard_normal((n, r_F)), _spd(rng, n, 0.1), _spd(rng, r_F, 0.5))
    return Task(spec, ftype)


def random_param(rng: np.random.Generator, task: Task, scale: float = 0.3) -> np.ndarray:
    return scale * rng.standard_normal((task.ftype.r_F, task.spec.n))


def _check_task(task: Task, M: np.ndarray, rng: np.random.Generator, h: float) -> list[tuple[str, float]]:
    spec, ftype = task
    out = []

    dA, dB = d_closed_loop(spec, ftype)
    out.append(("d_closed_loop_A", rel_error(dA.data, fd_jacobian(lambda X: closed_loop_matrices(spec, ftype, X)[0], M, h).data)))
    out.append(("d_closed_loop_B", rel_error(dB.data, fd_jacobian(lambda X: closed_loop_matrices(spec, ftype, X)[1], M, h).data)))

    S = _spd(rng, spec.r_L, 1.0)
    X0 = 0.1 * rng.standard_normal(S.shape)
    analytic = d_inverse(S + X0, d_identity(*S.shape))
    out.append(("d_inverse", rel_error(analytic.data, fd_jacobian(lambda X: np.linalg.inv(S + X), X0, h).data)))

    dP, _ = d_riccati(spec, ftype, M)
    fd_P0 = fd_jacobian(lambda X: solve_for_model(spec, ftype, X).P[0], M, h)
    out.append(("d_riccati_P0", rel_error(dP[0].data, fd_P0.data)))

    fd_J = fd_gradient(lambda X: expected_cost(spec, ftype, X), M, h)
    out.append(("d_expected_cost", rel_error(d_expected_cost(spec, ftype, M), fd_J)))
    out.append(("d_expected_cost_adjoint", rel_error(d_expected_cost_adjoint(spec, ftype, M), fd_J)))

    cfg = TrainConfig(N=8, state_range=(-2.0, 2.0), control_range=(-1.0, 1.0))
    data = sample_dataset(task, M, cfg, rng)
    out.append(("fit_cost_gradient", rel_error(fit_cost_gradient(M, data, spec),
                                               fd_gradient(lambda X: fit_cost(X, data, spec), M, h))))
    out.append(("task_loss_gradient", rel_error(task_loss_gradient(M, data, task, 5.0),
                                                fd_gradient(lambda X: task_loss(X, data, task, 5.0), M, h))))
    anchor = M + 0.05 * rng.standard_normal(M.shape)
    cfg = TrainConfig(lam=3.0, eta=2.0)
    out.append(("inner_gradient", rel_error(inner_gradient(M, anchor, data, task, cfg),
                                            fd_gradient(lambda X: inner_objective(X, anchor, data, task, cfg), M, h))))
    out.append(("adaptation_gradient", rel_error(adaptation_gradient(M, anchor, data, task, cfg),
                                                 fd_gradient(lambda X: adaptation_objective(X, anchor, data, task, cfg), M, h))))
    return out


def run_gradient_checks(extra_tasks: Sequence[Task] = (), instances: int = 50, seed: int = 0,
                        h: float = FD_STEP, tol: float = REL_TOL) -> list[dict]:
    """Rows ``{check, instance, rel_error, tol, passed}``; extra tasks are labelled ``task<theta>``."""
    rows = []
    for i in range(instances):
        rng = streams.stream(seed, streams.CHECK, 0, i)
        task = random_game(rng)
        for name, err in _check_task(task, random_param(rng, task), rng, h):
            rows.append({"check": name, "instance": f"random{i}", "rel_error": err, "tol": tol, "passed": err <= tol})
    for task in extra_tasks:
        rng = streams.stream(seed, streams.CHECK, 1, task.ftype.theta)
        M = random_param(rng, task)
        for name, err in _check_task(task, M, rng, h):
            rows.append({"check": name, "instance": f"task{task.ftype.theta}", "rel_error": err, "tol": tol,
                         "passed": err <= tol})
    return rows
