"""Meta-learning of the follower response model.

Per task the objective is ``L(M; D) = J(M) + gamma * Q(M; D)`` where ``J`` is
the leader's expected guidance cost under the linear response model and ``Q``
the mean squared fit error on best-response samples. Training is bilevel:

* inner: ``Z* = argmin_Z L(Z; D_train) + lam * ||Z - M||_F^2`` by fixed-step
  gradient descent, with ``D_train`` resampled every step;
* outer: ``M <- M - beta * mean_batch dL(Z*; D_test)/dM``.

The outer gradient is evaluated at ``Z*`` without differentiating through the
inner solve (first-order approximation).
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from . import streams
from .lqg_core import (
    FollowerType,
    GameSpec,
    TypeDistribution,
    expected_cost,
    nominal_trajectory,
    response_param,
    solve_for_model,
    true_response_matrix,
)
from .matdiff import d_expected_cost_adjoint


class Task(NamedTuple):
    spec: GameSpec
    ftype: FollowerType


class DivergenceError(FloatingPointError):
    """Iterates left the configured bound or became non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 1e-3
    beta: float = 1e-3
    gamma: float = 5.0
    lam: float = 100.0
    eta: float | None = None  # None -> same as lam
    kappa: float = 2.0
    N: int = 6
    max_iter: int = 100
    max_gd: int = 50
    eps: float = 1e-4
    batch_size: int = 5
    seed: int = 0
    state_range: tuple[float, float] = (-10.0, 10.0)
    control_range: tuple[float, float] = (-5.0, 5.0)
    sigma_nbhd: float = 0.5
    init_scale: float = 0.1
    adapt_iters: int = 50
    divergence_bound: float = 1e6

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta >= 0):
            raise ValueError("alpha must be positive and beta non-negative")
        for name in ("gamma", "lam", "kappa", "sigma_nbhd", "init_scale"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.eta is not None and self.eta < 0:
            raise ValueError("eta must be non-negative")
        if self.N < 1 or self.batch_size < 1:
            raise ValueError("N and batch_size must be at least 1")
        if self.kappa > 0 and self.N < 2:
            raise ValueError("N must be at least 2 when kappa > 0")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.max_iter < 0 or self.max_gd < 0 or self.adapt_iters < 0:
            raise ValueError("iteration caps must be non-negative")
        for name in ("state_range", "control_range"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"{name} is empty")
        object.__setattr__(self, "state_range", tuple(float(v) for v in self.state_range))
        object.__setattr__(self, "control_range", tuple(float(v) for v in self.control_range))

    @property
    def eta_value(self) -> float:
        return self.lam if self.eta is None else self.eta

    def split(self) -> tuple[int, int]:
        """``(N1, N2)``: uniform and near-trajectory sample counts."""
        n1 = int(np.floor(self.N / (1.0 + self.kappa) + 0.5))
        n1 = min(max(n1, 1 if self.kappa > 0 else self.N), self.N)
        return n1, self.N - n1


@dataclass(frozen=True, eq=False)
class ResponseDataset:
    """Best-response samples ``(x_hat, uL_hat, uF_hat)`` stored row-wise."""

    x: np.ndarray
    u_L: np.ndarray
    u_F: np.ndarray
    source: tuple[str, ...] = ()

    def __post_init__(self):
        N = self.x.shape[0]
        if self.u_L.shape[0] != N or self.u_F.shape[0] != N:
            raise ValueError("dataset columns have different lengths")
        if self.source and len(self.source) != N:
            raise ValueError("source tags do not match sample count")

    def __len__(self) -> int:
        return self.x.shape[0]

    def inputs(self, spec: GameSpec) -> np.ndarray:
        """Rows ``z_i = A x_i + B_L u_i`` fed to the response model."""
        return self.x @ spec.A.T + self.u_L @ spec.B_L.T

    def same_as(self, other: "ResponseDataset") -> bool:
        return (
            np.array_equal(self.x, other.x)
            and np.array_equal(self.u_L, other.u_L)
            and np.array_equal(self.u_F, other.u_F)
            and self.source == other.source
        )


def sample_dataset(task: Task, M, cfg: TrainConfig, rng: np.random.Generator, sol=None) -> ResponseDataset:
    """Draw ``N1`` uniform and ``N2`` near-trajectory samples labelled by the true follower.

    The nominal trajectory is the noise-free path the leader predicts when
    planning against model ``M``.
    """
    spec, ftype = task
    M = response_param(M, ftype.r_F, spec.n)
    n1, n2 = cfg.split()
    lo, hi = cfg.state_range
    clo, chi = cfg.control_range
    x = rng.uniform(lo, hi, size=(n1, spec.n))
    u = rng.uniform(clo, chi, size=(n1, spec.r_L))
    if n2:
        xs, us = nominal_trajectory(spec, ftype, M, sol)
        idx = rng.integers(0, spec.T, size=n2)
        xn = xs[idx] + cfg.sigma_nbhd * rng.standard_normal((n2, spec.n))
        un = us[idx] + cfg.sigma_nbhd * rng.standard_normal((n2, spec.r_L))
        x = np.vstack([x, xn])
        u = np.vstack([u, un])
    M_true = true_response_matrix(spec, ftype)
    labels = (x @ spec.A.T + u @ spec.B_L.T) @ M_true.T
    return ResponseDataset(x, u, labels, ("random",) * n1 + ("trajectory",) * n2)


def fit_cost(M, dataset: ResponseDataset, spec: GameSpec) -> float:
    """Mean squared error of the linear response model on ``dataset``."""
    if len(dataset) == 0:
        raise ValueError("fit cost needs a non-empty dataset")
    resid = dataset.inputs(spec) @ np.atleast_2d(M).T - dataset.u_F
    return float(np.sum(resid**2) / len(dataset))


def fit_cost_gradient(M, dataset: ResponseDataset, spec: GameSpec) -> np.ndarray:
    if len(dataset) == 0:
        raise ValueError("fit cost needs a non-empty dataset")
    z = dataset.inputs(spec)
    resid = z @ np.atleast_2d(M).T - dataset.u_F
    return 2.0 / len(dataset) * resid.T @ z


def task_loss(M, dataset: ResponseDataset, task: Task, gamma: float) -> float:
    value = expected_cost(task.spec, task.ftype, M)
    if gamma:
        value += gamma * fit_cost(M, dataset, task.spec)
    return value


def _cost_and_grad(M, task: Task, sol=None) -> tuple[float, np.ndarray]:
    spec, ftype = task
    if sol is None:
        sol = solve_for_model(spec, ftype, M)
    x0 = spec.x0
    J = float(x0 @ sol.P[0] @ x0 + sol.res[0])
    return J, d_expected_cost_adjoint(spec, ftype, M, sol)


def task_loss_gradient(M, dataset: ResponseDataset, task: Task, gamma: float, sol=None) -> np.ndarray:
    """Gradient of :func:`task_loss`; the inner regularizer is not included."""
    g = _cost_and_grad(M, task, sol)[1]
    if gamma:
        g = g + gamma * fit_cost_gradient(M, dataset, task.spec)
    return g


def inner_objective(Z, M_k, dataset: ResponseDataset, task: Task, cfg: "TrainConfig") -> float:
    diff = np.asarray(Z) - np.asarray(M_k)
    return task_loss(Z, dataset, task, cfg.gamma) + cfg.lam * float(np.sum(diff**2))


def inner_gradient(Z, M_k, dataset: ResponseDataset, task: Task, cfg: "TrainConfig", sol=None) -> np.ndarray:
    return task_loss_gradient(Z, dataset, task, cfg.gamma, sol) + 2.0 * cfg.lam * (np.asarray(Z) - M_k)


def _check_bound(Z: np.ndarray, cfg: TrainConfig, where: str) -> None:
    if not np.all(np.isfinite(Z)) or np.linalg.norm(Z) > cfg.divergence_bound:
        raise DivergenceError(f"{where}: iterate exceeded bound {cfg.divergence_bound:g}; step size too large?")


def inner_solve(M_k, task: Task, cfg: TrainConfig, rng: np.random.Generator,
                frozen: ResponseDataset | None = None):
    """Regularized task fit starting from ``M_k``.

    Returns ``(Z_star, last_train_dataset)``. A fresh training set is drawn
    around the current iterate each step unless ``frozen`` is given.
    """
    M_k = response_param(M_k, task.ftype.r_F, task.spec.n)
    Z = M_k.copy()
    it = 0
    while True:
        sol = solve_for_model(task.spec, task.ftype, Z)
        data = frozen if frozen is not None else sample_dataset(task, Z, cfg, rng, sol)
        g = inner_gradient(Z, M_k, data, task, cfg, sol)
        Z = Z - cfg.alpha * g
        _check_bound(Z, cfg, "inner solve")
        if it > cfg.max_gd or np.linalg.norm(g) < cfg.eps:
            return Z, data
        it += 1


@dataclass(frozen=True, eq=False)
class TaskOutcome:
    theta: int
    Z_star: np.ndarray
    test_data: ResponseDataset
    test_loss: float
    expected_cost: float
    grad: np.ndarray


def outer_step(M_k, batch: Sequence[Task], cfg: TrainConfig, rng_keys: tuple[int, ...] = (0,)):
    """One meta update; returns ``(M_next, outcomes)``.

    Task ``j`` of the batch draws from streams ``(INNER, *rng_keys, j)`` and
    ``(TEST, *rng_keys, j)``; gradients are averaged in batch order.
    """
    if not batch:
        raise ValueError("empty task batch")
    outcomes = []
    for j, task in enumerate(batch):
        Z, _ = inner_solve(M_k, task, cfg, streams.stream(cfg.seed, streams.INNER, *rng_keys, j))
        sol = solve_for_model(task.spec, task.ftype, Z)
        test = sample_dataset(task, Z, cfg, streams.stream(cfg.seed, streams.TEST, *rng_keys, j), sol)
        J, dJ = _cost_and_grad(Z, task, sol)
        loss = J + cfg.gamma * fit_cost(Z, test, task.spec) if cfg.gamma else J
        grad = dJ + cfg.gamma * fit_cost_gradient(Z, test, task.spec) if cfg.gamma else dJ
        outcomes.append(TaskOutcome(task.ftype.theta, Z, test, float(loss), J, grad))
    total = np.zeros_like(outcomes[0].grad)
    for o in outcomes:
        total = total + o.grad
    M_next = np.asarray(M_k, dtype=float) - cfg.beta / len(outcomes) * total
    return M_next, outcomes


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    meta_cost: float
    mean_expected_cost: float
    grad_norm: float
    wall_time: float = field(default=0.0, compare=False)
    outcomes: tuple = field(default=(), compare=False, repr=False)


@dataclass
class MetaTrace:
    records: list[TraceRecord] = field(default_factory=list)

    def meta_costs(self) -> np.ndarray:
        return np.array([r.meta_cost for r in self.records])

    def __len__(self) -> int:
        return len(self.records)


def empirical_meta_cost(outcomes: Sequence[TaskOutcome], tasks_by_theta, gamma: float) -> float:
    """Batch average of ``L(Z*; D_test)`` recomputed from stored outcomes."""
    vals = [task_loss(o.Z_star, o.test_data, tasks_by_theta[o.theta], gamma) for o in outcomes]
    return float(sum(vals) / len(vals))


def initial_param(r_F: int, n: int, cfg: TrainConfig) -> np.ndarray:
    rng = streams.stream(cfg.seed, streams.INIT)
    return rng.uniform(-cfg.init_scale, cfg.init_scale, size=(r_F, n))


def train_meta(tasks: Sequence[Task], dist: TypeDistribution, cfg: TrainConfig, M0=None):
    """Run ``max_iter`` outer steps; returns ``(M_meta, MetaTrace)``.

    ``tasks[i]`` is the task for type ``i``. Each record is evaluated at the
    iterate before its update.
    """
    if len(tasks) != len(dist):
        raise ValueError("one task per type is required")
    spec, f0 = tasks[0]
    M = initial_param(f0.r_F, spec.n, cfg) if M0 is None else response_param(M0, f0.r_F, spec.n).copy()
    trace = MetaTrace()
    for k in range(cfg.max_iter):
        start = time.perf_counter()
        types = dist.sample(streams.stream(cfg.seed, streams.BATCH, k), cfg.batch_size)
        batch = [tasks[i] for i in types]
        M_next, outcomes = outer_step(M, batch, cfg, (k,))
        meta_cost = sum(o.test_loss for o in outcomes) / len(outcomes)
        mean_J = sum(o.expected_cost for o in outcomes) / len(outcomes)
        if not np.isfinite(meta_cost):
            raise DivergenceError(f"non-finite meta-cost at iteration {k}")
        grad = (np.asarray(M) - M_next) / cfg.beta if cfg.beta else sum(o.grad for o in outcomes) / len(outcomes)
        trace.records.append(TraceRecord(
            k, float(meta_cost), float(mean_J), float(np.linalg.norm(grad)),
            time.perf_counter() - start, tuple(outcomes),
        ))
        M = M_next
    return M, trace


def adapt(M_meta, task: Task, cfg: TrainConfig, rng: np.random.Generator, dataset: ResponseDataset | None = None):
    """Customize ``M_meta`` to one task.

    Minimizes ``L(M; D') + eta * ||M - M_meta||_F^2`` from ``M_meta`` with a
    fixed dataset ``D'`` sampled around the trajectory planned with ``M_meta``.
    Returns ``(M_star, D')``.
    """
    spec, ftype = task
    M_meta = response_param(M_meta, ftype.r_F, spec.n)
    if dataset is None:
        dataset = sample_dataset(task, M_meta, cfg, rng)
    M = M_meta.copy()
    for _ in range(cfg.adapt_iters):
        g = adaptation_gradient(M, M_meta, dataset, task, cfg)
        if np.linalg.norm(g) < cfg.eps:
            break
        M = M - cfg.alpha * g
        _check_bound(M, cfg, "adaptation")
    return M, dataset


def adaptation_objective(M, M_meta, dataset: ResponseDataset, task: Task, cfg: TrainConfig) -> float:
    diff = np.asarray(M) - np.asarray(M_meta)
    return task_loss(M, dataset, task, cfg.gamma) + cfg.eta_value * float(np.sum(diff**2))


def adaptation_gradient(M, M_meta, dataset: ResponseDataset, task: Task, cfg: TrainConfig) -> np.ndarray:
    return task_loss_gradient(M, dataset, task, cfg.gamma) + 2.0 * cfg.eta_value * (np.asarray(M) - M_meta)


def train_individual(task: Task, cfg: TrainConfig, iters: int, M0=None, seed_key: int = 0):
    """Stand-alone model for one type: plain descent on ``L`` with fresh data each step."""
    spec, ftype = task
    M = initial_param(ftype.r_F, spec.n, cfg) if M0 is None else response_param(M0, ftype.r_F, spec.n).copy()
    rng = streams.stream(cfg.seed, streams.INDIVIDUAL, seed_key)
    for _ in range(iters):
        sol = solve_for_model(spec, ftype, M)
        data = sample_dataset(task, M, cfg, rng, sol)
        M = M - cfg.alpha * task_loss_gradient(M, data, task, cfg.gamma, sol)
        _check_bound(M, cfg, "individual training")
    return M


def with_gamma(cfg: TrainConfig, gamma: float) -> TrainConfig:
    return replace(cfg, gamma=gamma)
