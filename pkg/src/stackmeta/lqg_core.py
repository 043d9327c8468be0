"""Game data model, myopic follower best response and the parametric LQG solver.

The leader plans against a linear follower model ``u^F = M (A x + B_L u^L)``.
Substituting the model into the joint dynamics gives a single-agent LQG
problem with closed-loop matrices ``A~ = A + B_F M A`` and
``B~ = B_L + B_F M B_L`` whose finite-horizon Riccati recursion yields the
leader's gains and expected guidance cost.

Cost convention: ``sum_{t=0}^{T-1} (x_t' Q_L x_t + u_t' R_L u_t) + x_T' Q_Lf x_T``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

SYM_TOL = 1e-9
PSD_TOL = -1e-9


class SpecError(ValueError):
    """Raised when matrices violate shape, symmetry or definiteness requirements."""


def _as_matrix(name: str, value, shape: tuple[int, int] | None = None) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2:
        raise SpecError(f"{name} must be a matrix, got ndim={arr.ndim}")
    if shape is not None and arr.shape != shape:
        raise SpecError(f"{name} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise SpecError(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


def _check_sym(name: str, m: np.ndarray, definite: bool) -> None:
    if m.shape[0] != m.shape[1]:
        raise SpecError(f"{name} must be square, got {m.shape}")
    if np.max(np.abs(m - m.T), initial=0.0) > SYM_TOL * max(1.0, np.max(np.abs(m))):
        raise SpecError(f"{name} must be symmetric")
    eig_min = np.linalg.eigvalsh(m).min()
    if definite and eig_min <= 0:
        raise SpecError(f"{name} must be positive definite (min eigenvalue {eig_min:.3g})")
    if not definite and eig_min < PSD_TOL * max(1.0, np.max(np.abs(m))):
        raise SpecError(f"{name} must be positive semidefinite (min eigenvalue {eig_min:.3g})")


@dataclass(frozen=True, eq=False)
class GameSpec:
    """Joint dynamics, leader cost and horizon shared by every follower type."""

    A: np.ndarray
    B_L: np.ndarray
    Sigma: np.ndarray
    Q_L: np.ndarray
    R_L: np.ndarray
    Q_Lf: np.ndarray
    T: int
    x0: np.ndarray

    def __post_init__(self):
        A = _as_matrix("A", self.A)
        n = A.shape[0]
        if A.shape != (n, n):
            raise SpecError(f"A must be square, got {A.shape}")
        B_L = _as_matrix("B_L", self.B_L)
        if B_L.shape[0] != n:
            raise SpecError(f"B_L must have {n} rows, got {B_L.shape}")
        r_L = B_L.shape[1]
        mats = {
            "A": A,
            "B_L": B_L,
            "Sigma": _as_matrix("Sigma", self.Sigma, (n, n)),
            "Q_L": _as_matrix("Q_L", self.Q_L, (n, n)),
            "R_L": _as_matrix("R_L", self.R_L, (r_L, r_L)),
            "Q_Lf": _as_matrix("Q_Lf", self.Q_Lf, (n, n)),
        }
        for name in ("Sigma", "Q_L", "Q_Lf"):
            _check_sym(name, mats[name], definite=False)
        _check_sym("R_L", mats["R_L"], definite=True)
        if int(self.T) != self.T or self.T < 1:
            raise SpecError(f"T must be a positive integer, got {self.T}")
        x0 = np.array(self.x0, dtype=float).reshape(-1)
        if x0.shape != (n,) or not np.all(np.isfinite(x0)):
            raise SpecError(f"x0 must be a finite {n}-vector")
        x0.setflags(write=False)
        for name, m in mats.items():
            object.__setattr__(self, name, m)
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "T", int(self.T))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def r_L(self) -> int:
        return self.B_L.shape[1]

    def with_x0(self, x0) -> "GameSpec":
        return GameSpec(self.A, self.B_L, self.Sigma, self.Q_L, self.R_L, self.Q_Lf, self.T, x0)


@dataclass(frozen=True, eq=False)
class FollowerType:
    """Type-specific follower input matrix and one-step cost."""

    theta: int
    B_F: np.ndarray
    Q_F: np.ndarray
    R_F: np.ndarray

    def __post_init__(self):
        B_F = _as_matrix("B_F", self.B_F)
        n, r_F = B_F.shape
        Q_F = _as_matrix("Q_F", self.Q_F, (n, n))
        R_F = _as_matrix("R_F", self.R_F, (r_F, r_F))
        _check_sym("Q_F", Q_F, definite=False)
        _check_sym("R_F", R_F, definite=True)
        object.__setattr__(self, "B_F", B_F)
        object.__setattr__(self, "Q_F", Q_F)
        object.__setattr__(self, "R_F", R_F)
        object.__setattr__(self, "theta", int(self.theta))

    @property
    def r_F(self) -> int:
        return self.B_F.shape[1]


@dataclass(frozen=True)
class TypeDistribution:
    probs: tuple[float, ...]

    def __post_init__(self):
        p = tuple(float(v) for v in self.probs)
        if not p:
            raise SpecError("type distribution is empty")
        if any(not (0.0 <= v <= 1.0) for v in p):
            raise SpecError("probabilities must lie in [0, 1]")
        if abs(sum(p) - 1.0) > 1e-12:
            raise SpecError("probabilities must sum to 1")
        object.__setattr__(self, "probs", p)

    def __len__(self) -> int:
        return len(self.probs)

    def sample(self, rng: np.random.Generator, size: int) -> list[int]:
        return [int(i) for i in rng.choice(len(self.probs), size=size, p=np.array(self.probs))]


def response_param(M, r_F: int, n: int) -> np.ndarray:
    """Validate a response parameter and return it as a float array of shape (r_F, n)."""
    arr = np.asarray(M, dtype=float)
    if arr.ndim == 0 and r_F == n == 1:
        arr = arr.reshape(1, 1)
    if arr.shape != (r_F, n):
        raise SpecError(f"response parameter must have shape {(r_F, n)}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise SpecError("response parameter has non-finite entries")
    return arr


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    """Value matrices ``P[0..T]``, gains ``K[0..T-1]`` and noise residues ``res[0..T]``."""

    P: np.ndarray
    K: np.ndarray
    res: np.ndarray

    @property
    def T(self) -> int:
        return self.K.shape[0]


@dataclass(eq=False)
class Trajectory:
    states: np.ndarray
    u_L: np.ndarray
    u_F: np.ndarray
    noise: np.ndarray
    realized_cost: float
    seed: tuple = field(default=())

    @property
    def T(self) -> int:
        return self.u_L.shape[0]


def stage_cost_sum(spec: GameSpec, states: np.ndarray, u_L: np.ndarray) -> float:
    """Leader cost of a stored trajectory: stage costs for t < T plus the terminal term."""
    x = states[:-1]
    running = np.einsum("ti,ij,tj->", x, spec.Q_L, x) + np.einsum("ti,ij,tj->", u_L, spec.R_L, u_L)
    xT = states[-1]
    return float(running + xT @ spec.Q_Lf @ xT)


def _double_integrator(dt: float) -> tuple[np.ndarray, np.ndarray]:
    # exact zero-order hold of p'' = u on two axes, state [p_x, p_y, v_x, v_y]
    I2 = np.eye(2)
    A = np.block([[I2, dt * I2], [np.zeros((2, 2)), I2]])
    B = np.vstack([0.5 * dt**2 * I2, dt * I2])
    return A, B


def build_double_integrator_spec(
    dt: float,
    leader_start,
    follower_start,
    cost_config: dict,
) -> tuple[GameSpec, list[FollowerType]]:
    """Assemble the two-robot teaming game with joint state ``[p^L, v^L, p^F, v^F]``.

    ``cost_config`` provides ``Q_L``, ``R_L``, ``Q_Lf``, ``Sigma``, ``T`` and a
    ``followers`` list of dicts with ``gain``, ``Q_F`` and ``R_F``. Each
    follower's input matrix is the double-integrator input block scaled by its
    gain.
    """
    if not dt > 0:
        raise SpecError(f"dt must be positive, got {dt}")
    A1, B1 = _double_integrator(float(dt))
    Z4 = np.zeros((4, 4))
    A = np.block([[A1, Z4], [Z4, A1]])
    B_L = np.vstack([B1, np.zeros((4, 2))])
    x0 = np.concatenate([np.asarray(leader_start, float), np.zeros(2),
                         np.asarray(follower_start, float), np.zeros(2)])
    spec = GameSpec(
        A=A,
        B_L=B_L,
        Sigma=cost_config["Sigma"],
        Q_L=cost_config["Q_L"],
        R_L=cost_config["R_L"],
        Q_Lf=cost_config["Q_Lf"],
        T=cost_config["T"],
        x0=x0,
    )
    followers = []
    for i, f in enumerate(cost_config["followers"]):
        B_F = np.vstack([np.zeros((4, 2)), float(f["gain"]) * B1])
        followers.append(FollowerType(theta=i, B_F=B_F, Q_F=f["Q_F"], R_F=f["R_F"]))
    return spec, followers


def _spd_solve(W: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    # the factorization only certifies definiteness; plain LU is faster at these sizes
    try:
        np.linalg.cholesky(W)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("inner matrix is not positive definite") from exc
    return np.linalg.solve(W, rhs)


def true_response_matrix(spec: GameSpec, ftype: FollowerType) -> np.ndarray:
    """Closed-form myopic best response ``-(B_F' Q_F B_F + R_F)^{-1} B_F' Q_F``."""
    B_F, Q_F = ftype.B_F, ftype.Q_F
    if B_F.shape[0] != spec.n:
        raise SpecError("follower input matrix does not match the state dimension")
    W = B_F.T @ Q_F @ B_F + ftype.R_F
    return -_spd_solve(W, B_F.T @ Q_F)


def follower_best_response(spec: GameSpec, ftype: FollowerType, x, u_L) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    u_L = np.asarray(u_L, dtype=float)
    if x.shape != (spec.n,) or u_L.shape != (spec.r_L,):
        raise SpecError(f"expected x of shape {(spec.n,)} and u_L of shape {(spec.r_L,)}")
    return true_response_matrix(spec, ftype) @ (spec.A @ x + spec.B_L @ u_L)


def closed_loop_matrices(spec: GameSpec, ftype: FollowerType, M) -> tuple[np.ndarray, np.ndarray]:
    M = response_param(M, ftype.r_F, spec.n)
    BFM = ftype.B_F @ M
    return spec.A + BFM @ spec.A, spec.B_L + BFM @ spec.B_L


def accumulate_residues(P: Sequence[np.ndarray], Sigma) -> np.ndarray:
    """Noise contributions ``res_t = sum_{j=t+1}^{T} tr(Sigma P_j)``, with ``res_T = 0``."""
    P = np.asarray(P, dtype=float)
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    if P.ndim != 3 or P.shape[1:] != Sigma.shape:
        raise SpecError(f"P stack {P.shape} does not match Sigma {Sigma.shape}")
    traces = np.einsum("ab,tba->t", Sigma, P)
    res = np.zeros(P.shape[0])
    # suffix sums of tr(Sigma P_j) for j > t
    for t in range(P.shape[0] - 2, -1, -1):
        res[t] = res[t + 1] + traces[t + 1]
    return res


def solve_riccati(A_tilde, B_tilde, Q_L, R_L, Q_Lf, T: int, Sigma=None) -> RiccatiSolution:
    """Backward finite-horizon Riccati recursion from ``P_T = Q_Lf``.

    Each ``P_t`` is symmetrized to suppress rounding drift. ``Sigma`` defaults
    to zero (no residues).
    """
    A_tilde, B_tilde = np.atleast_2d(A_tilde), np.atleast_2d(B_tilde)
    Q_L, R_L, Q_Lf = np.atleast_2d(Q_L), np.atleast_2d(R_L), np.atleast_2d(Q_Lf)
    if T < 1:
        raise SpecError("horizon must be at least 1")
    n, r = B_tilde.shape
    P = np.empty((T + 1, n, n))
    K = np.empty((T, r, n))
    P[T] = Q_Lf
    for t in range(T - 1, -1, -1):
        Pn = P[t + 1]
        PA = Pn @ A_tilde
        W = R_L + B_tilde.T @ Pn @ B_tilde
        G = B_tilde.T @ PA
        K[t] = _spd_solve(W, G)
        Pt = Q_L + A_tilde.T @ PA - G.T @ K[t]
        P[t] = 0.5 * (Pt + Pt.T)
    if Sigma is None:
        Sigma = np.zeros((n, n))
    return RiccatiSolution(P=P, K=K, res=accumulate_residues(P, Sigma))


def solve_for_model(spec: GameSpec, ftype: FollowerType, M) -> RiccatiSolution:
    At, Bt = closed_loop_matrices(spec, ftype, M)
    return solve_riccati(At, Bt, spec.Q_L, spec.R_L, spec.Q_Lf, spec.T, spec.Sigma)


def expected_cost(spec: GameSpec, ftype: FollowerType, M) -> float:
    """Leader's optimal expected guidance cost ``x0' P_0 x0 + res_0`` under model ``M``."""
    sol = solve_for_model(spec, ftype, M)
    x0 = spec.x0
    return float(x0 @ sol.P[0] @ x0 + sol.res[0])


def nominal_trajectory(spec: GameSpec, ftype: FollowerType, M, sol: RiccatiSolution | None = None):
    """Noise-free states and leader controls the leader predicts under model ``M``."""
    At, Bt = closed_loop_matrices(spec, ftype, M)
    if sol is None:
        sol = solve_riccati(At, Bt, spec.Q_L, spec.R_L, spec.Q_Lf, spec.T)
    xs = np.empty((spec.T + 1, spec.n))
    us = np.empty((spec.T, spec.r_L))
    xs[0] = spec.x0
    for t in range(spec.T):
        us[t] = -sol.K[t] @ xs[t]
        xs[t + 1] = At @ xs[t] + Bt @ us[t]
    return xs, us
