"""Matrix derivatives in the direct 4D layout and the differentiated Riccati recursion.

Storage order
-------------
A :class:`Tensor4` with dims ``(m, n, p, q)`` holds ``D_X f`` for
``f: R^{p x q} -> R^{m x n}`` as a C-ordered array ``data[i, j, k, l] =
d f_ij / d X_kl``. ``data[i, j]`` is therefore the ``p x q`` block
``D_X f_{ij,:}`` and ``data[:, :, k, l]`` is the ``m x n`` slice
``d f / d X_kl``. :meth:`Tensor4.slices` and :meth:`Tensor4.from_slices`
convert between the block layout and a stack of slices of shape
``(p, q, m, n)``.

The star products contract a plain matrix against the first two (block)
axes and leave the parameter axes untouched, so the product rule reads
``D(YZ) = DY * Z + Y * DZ``.
"""
from __future__ import annotations

from typing import Callable

import numpy as np
import scipy.linalg as sla

from .lqg_core import FollowerType, GameSpec, closed_loop_matrices, response_param, solve_for_model


class Tensor4:
    """Immutable dense derivative tensor ``D_X f`` in the direct block layout."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.array(data, dtype=float)
        if arr.ndim != 4 or min(arr.shape) < 1:
            raise ValueError(f"Tensor4 needs four positive dims, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("Tensor4 entries must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    def __setattr__(self, name, value):
        raise AttributeError("Tensor4 is immutable")

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor4":
        # trusted internal constructor, skips the finiteness scan
        obj = object.__new__(cls)
        arr.setflags(write=False)
        object.__setattr__(obj, "data", arr)
        return obj

    @classmethod
    def zeros(cls, m: int, n: int, p: int, q: int) -> "Tensor4":
        return cls._wrap(np.zeros((m, n, p, q)))

    @classmethod
    def from_slices(cls, slices) -> "Tensor4":
        """Rearrange a ``(p, q, m, n)`` stack of ``d f / d X_kl`` slices into block layout."""
        s = np.asarray(slices, dtype=float)
        return cls(np.ascontiguousarray(s.transpose(2, 3, 0, 1)))

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return self.data.shape

    def block(self, i: int, j: int) -> np.ndarray:
        return self.data[i, j]

    def slice(self, k: int, l: int) -> np.ndarray:
        return self.data[:, :, k, l]

    def slices(self) -> np.ndarray:
        return np.ascontiguousarray(self.data.transpose(2, 3, 0, 1))

    @property
    def T(self) -> "Tensor4":
        """Transpose of the differentiated function: swaps the two block axes."""
        return Tensor4._wrap(np.ascontiguousarray(self.data.transpose(1, 0, 2, 3)))

    def __add__(self, other: "Tensor4") -> "Tensor4":
        return Tensor4._wrap(self.data + other.data)

    def __sub__(self, other: "Tensor4") -> "Tensor4":
        return Tensor4._wrap(self.data - other.data)

    def __neg__(self) -> "Tensor4":
        return Tensor4._wrap(-self.data)

    def __mul__(self, a: float) -> "Tensor4":
        return Tensor4._wrap(self.data * float(a))

    __rmul__ = __mul__

    def symmetrized(self) -> "Tensor4":
        return Tensor4._wrap(0.5 * (self.data + self.data.transpose(1, 0, 2, 3)))

    def __repr__(self) -> str:
        return f"Tensor4(dims={self.dims})"


def star_left(U: Tensor4, V) -> Tensor4:
    """``W = U * V`` with ``W_{ij,:} = sum_r U_{ir,:} V_{rj}``."""
    V = np.atleast_2d(np.asarray(V, dtype=float))
    if U.dims[1] != V.shape[0]:
        raise ValueError(f"inner dimensions differ: tensor {U.dims} vs matrix {V.shape}")
    return Tensor4._wrap(np.einsum("irkl,rj->ijkl", U.data, V))


def star_right(U, V: Tensor4) -> Tensor4:
    """``W = U * V`` with ``W_{ij,:} = sum_r U_{ir} V_{rj,:}``."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    if U.shape[1] != V.dims[0]:
        raise ValueError(f"inner dimensions differ: matrix {U.shape} vs tensor {V.dims}")
    return Tensor4._wrap(np.einsum("ir,rjkl->ijkl", U, V.data))


def d_identity(p: int, q: int) -> Tensor4:
    """``D_M M``: one where ``(i, j) == (k, l)``, zero elsewhere."""
    if p < 1 or q < 1:
        raise ValueError("dims must be positive")
    return Tensor4._wrap(np.eye(p * q).reshape(p, q, p, q))


def _sandwich(left: np.ndarray, right: np.ndarray) -> Tensor4:
    # D_M (left M right) for M of shape (left.shape[1], right.shape[0]); block (i,j)
    # is the outer product of row i of `left` and column j of `right`
    return Tensor4._wrap(np.einsum("ik,lj->ijkl", left, right))


def d_closed_loop(spec: GameSpec, ftype: FollowerType) -> tuple[Tensor4, Tensor4]:
    """Derivatives of ``A~`` and ``B~`` with respect to ``M``; constant in ``M``.

    Block ``(i, j)`` of ``D_M (B_F M A)`` is ``B_F[i, :]' A[:, j]'``, so the
    tensors are built directly from rows of ``B_F`` and columns of ``A`` or
    ``B_L`` without forming ``D_M M``.
    """
    return _sandwich(ftype.B_F, spec.A), _sandwich(ftype.B_F, spec.B_L)


def d_inverse(W, dW: Tensor4) -> Tensor4:
    """Derivative of ``W^{-1}`` given ``D W``: each slice is ``-W^{-1} dW_kl W^{-1}``."""
    W = np.atleast_2d(np.asarray(W, dtype=float))
    r = W.shape[0]
    if W.shape != (r, r) or dW.dims[:2] != (r, r):
        raise ValueError(f"shape mismatch: W {W.shape}, dW {dW.dims}")
    try:
        Winv = np.linalg.inv(W)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("W is singular") from exc
    S = dW.slices()
    out = -np.einsum("ab,klbc,cd->klad", Winv, S, Winv)
    return Tensor4.from_slices(out)


def d_riccati(spec: GameSpec, ftype: FollowerType, M) -> tuple[list[Tensor4], np.ndarray]:
    """Backward sensitivity of the Riccati recursion with respect to ``M``.

    Returns ``dP`` (``T + 1`` tensors of dims ``(n, n, r_F, n)``, ``dP[T] = 0``)
    and ``dres`` with shape ``(T + 1, r_F, n)``.
    """
    dP, dres = _d_riccati_slices(spec, ftype, M)
    return [Tensor4._wrap(np.ascontiguousarray(s.transpose(2, 3, 0, 1))) for s in dP], dres


def _d_riccati_slices(spec: GameSpec, ftype: FollowerType, M, sol=None):
    # Same product-rule expansion as riccati_step_star, with every tensor held as a
    # (r_F, n, rows, cols) stack of parameter slices. Paired terms are transposes of
    # each other: D(A'PA) = A' dP A + X + X' with X = (PA)' dA, and
    # D(G'W^{-1}G) = Y + Y' + G' D(W^{-1}) G with Y = (W^{-1}G)' dG.
    M = response_param(M, ftype.r_F, spec.n)
    At, Bt = closed_loop_matrices(spec, ftype, M)
    dA_t4, dB_t4 = d_closed_loop(spec, ftype)
    dA, dB = dA_t4.slices(), dB_t4.slices()
    if sol is None:
        sol = solve_for_model(spec, ftype, M)
    n, T, r_F = spec.n, spec.T, ftype.r_F

    dP = np.zeros((T + 1, r_F, n, n, n))
    for t in range(T - 1, -1, -1):
        Pn, dPn = sol.P[t + 1], dP[t + 1]
        PA, PB = Pn @ At, Pn @ Bt
        W = spec.R_L + Bt.T @ PB
        G = Bt.T @ PA
        cho = sla.cho_factor(W, check_finite=False)
        WinvG = sla.cho_solve(cho, G, check_finite=False)
        Winv = sla.cho_solve(cho, np.eye(W.shape[0]), check_finite=False)
        dPA = dPn @ At
        X = PA.T @ dA
        dAPA = At.T @ dPA + X + X.swapaxes(-1, -2)
        dG = dB.swapaxes(-1, -2) @ PA + Bt.T @ dPA + PB.T @ dA
        Z = PB.T @ dB
        dW = Bt.T @ dPn @ Bt + Z + Z.swapaxes(-1, -2)
        dWinv = -Winv @ dW @ Winv
        Y = WinvG.T @ dG
        dGWG = Y + Y.swapaxes(-1, -2) + G.T @ dWinv @ G
        d = dAPA - dGWG
        dP[t] = 0.5 * (d + d.swapaxes(-1, -2))

    traces = np.einsum("ab,tklba->tkl", spec.Sigma, dP)
    dres = np.zeros((T + 1, r_F, n))
    for t in range(T - 1, -1, -1):
        dres[t] = dres[t + 1] + traces[t + 1]
    return dP, dres


def riccati_step_star(A_t, B_t, dA: Tensor4, dB: Tensor4, P_next, dP_next: Tensor4, R_L) -> Tensor4:
    """One backward step of the differentiated recursion written with star products.

    Reference formulation of the block-layout algebra; :func:`d_riccati` runs
    the same expansion on stacked slices.
    """
    PA, PB = P_next @ A_t, P_next @ B_t
    W = R_L + B_t.T @ PB
    G = B_t.T @ PA
    Winv = np.linalg.inv(W)
    dAPA = star_left(dA.T, PA) + star_left(star_right(A_t.T, dP_next), A_t) + star_right(PA.T, dA)
    dG = star_left(dB.T, PA) + star_left(star_right(B_t.T, dP_next), A_t) + star_right(PB.T, dA)
    dW = star_left(dB.T, PB) + star_left(star_right(B_t.T, dP_next), B_t) + star_right(PB.T, dB)
    dWinv = d_inverse(W, dW)
    WinvG = Winv @ G
    dGWG = star_left(dG.T, WinvG) + star_left(star_right(G.T, dWinv), G) + star_right(WinvG.T, dG)
    return (dAPA - dGWG).symmetrized()


def d_expected_cost(spec: GameSpec, ftype: FollowerType, M) -> np.ndarray:
    """Gradient of ``x0' P_0 x0 + res_0`` with respect to ``M``."""
    dP, dres = _d_riccati_slices(spec, ftype, M)
    x0 = spec.x0
    return np.einsum("a,klab,b->kl", x0, dP[0], x0) + dres[0]


def d_expected_cost_adjoint(spec: GameSpec, ftype: FollowerType, M, sol=None) -> np.ndarray:
    """Same gradient as :func:`d_expected_cost` by one reverse pass.

    Writing ``P_t = Q + K'RK + Ac' P_{t+1} Ac`` with ``Ac = A~ - B~K``, the
    terms through ``dK`` vanish at the optimal gain, so only ``dA~`` and
    ``dB~`` enter. ``Lam_t`` is the weight each ``P_t`` carries in the cost:
    ``x0 x0'`` at ``t = 0`` and ``Sigma + Ac Lam Ac'`` afterwards. Cost is
    ``O(T n^3)`` instead of ``O(T r_F n^4)``.
    """
    M = response_param(M, ftype.r_F, spec.n)
    At, Bt = closed_loop_matrices(spec, ftype, M)
    if sol is None:
        sol = solve_for_model(spec, ftype, M)
    Lam = np.outer(spec.x0, spec.x0)
    acc = np.zeros((spec.n, spec.n))
    for t in range(spec.T):
        K = sol.K[t]
        Ac = At - Bt @ K
        acc += sol.P[t + 1] @ Ac @ Lam @ (spec.A - spec.B_L @ K).T
        Lam = spec.Sigma + Ac @ Lam @ Ac.T
    return 2.0 * ftype.B_F.T @ acc


def fd_gradient(f: Callable[[np.ndarray], float], M, h: float = 1e-5) -> np.ndarray:
    """Entrywise central differences ``(f(M + h e_kl) - f(M - h e_kl)) / 2h``."""
    if not h > 0:
        raise ValueError("step must be positive")
    M = np.array(M, dtype=float)
    shape = M.shape
    M = np.atleast_2d(M)
    g = np.zeros_like(M)
    for idx in np.ndindex(*M.shape):
        e = np.zeros_like(M)
        e[idx] = h
        g[idx] = (f((M + e).reshape(shape)) - f((M - e).reshape(shape))) / (2 * h)
    return g.reshape(shape)


def fd_jacobian(f: Callable[[np.ndarray], np.ndarray], X, h: float = 1e-5) -> Tensor4:
    """Central-difference ``D_X f`` for matrix-valued ``f``, returned in block layout."""
    X = np.atleast_2d(np.array(X, dtype=float))
    p, q = X.shape
    slices = None
    for k in range(p):
        for l in range(q):
            e = np.zeros_like(X)
            e[k, l] = h
            s = (np.atleast_2d(f(X + e)) - np.atleast_2d(f(X - e))) / (2 * h)
            if slices is None:
                slices = np.zeros((p, q) + s.shape)
            slices[k, l] = s
    return Tensor4.from_slices(slices)


def rel_error(a, b, floor: float = 1e-8) -> float:
    """``||a - b|| / max(||a||, ||b||, floor)``, the metric used by every gradient check."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / scale)
