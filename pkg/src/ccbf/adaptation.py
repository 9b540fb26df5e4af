"""Gain adaptation law keeping ``L_G H`` away from zero.

The rate ``mu = kdot`` solves

    min 1/2 (mu - mu0)^T P (mu - mu0)
    s.t. mu + alpha_k (k - k_min) >= 0
         p^T Q pdot + p^T Qdot p + alpha_p(h_p) >= 0

where ``pdot = D_h hdot + D_k mu`` and ``hdot`` is estimated from the
input applied on the previous step.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .consolidation import ConsolidationContext
from .linalg_qp import QpProblem, solve_qp


class AdaptationInfeasible(RuntimeError):
    def __init__(self, message, h_p: float, coupling_norm: float):
        super().__init__(f"{message} (h_p={h_p:.3e}, |p^T Q D_k|={coupling_norm:.3e})")
        self.h_p = h_p
        self.coupling_norm = coupling_norm


def class_k(kind: str, gain: float):
    if kind == "linear":
        return lambda x: gain * x
    if kind == "cubic":
        return lambda x: gain * x ** 3
    raise ValueError(f"unknown class-K function {kind!r}")


@dataclass
class AdaptationParams:
    c: int
    P: np.ndarray | None = None
    k_min: np.ndarray | float = 0.01
    alpha_k_gain: float = 1.0
    alpha_p_gain: float = 1.0
    mu0: np.ndarray | float = 0.0
    eps: float = 0.01
    alpha_kind: str = "linear"
    _alpha_k: object = field(init=False, repr=False)
    _alpha_p: object = field(init=False, repr=False)

    def __post_init__(self):
        c = self.c
        self.P = np.eye(c) if self.P is None else np.asarray(self.P, dtype=float)
        self.k_min = np.broadcast_to(np.asarray(self.k_min, dtype=float), (c,)).copy()
        self.mu0 = np.broadcast_to(np.asarray(self.mu0, dtype=float), (c,)).copy()
        if self.P.shape != (c, c) or np.max(np.abs(self.P - self.P.T)) > 1e-10:
            raise ValueError("P must be a symmetric c x c matrix")
        if np.linalg.eigvalsh(self.P).min() <= 0:
            raise ValueError("P must be positive definite")
        if np.any(self.k_min <= 0):
            raise ValueError("k_min entries must be positive")
        if not (self.alpha_k_gain > 0 and self.alpha_p_gain > 0 and self.eps > 0):
            raise ValueError("adaptation gains and eps must be positive")
        self._alpha_k = class_k(self.alpha_kind, self.alpha_k_gain)
        self._alpha_p = class_k(self.alpha_kind, self.alpha_p_gain)

    def alpha_k(self, x):
        return self._alpha_k(x)

    def alpha_p(self, x):
        return self._alpha_p(x)


@dataclass(frozen=True)
class AdaptationResult:
    k_dot: np.ndarray
    h_dot: np.ndarray
    row: np.ndarray
    rhs: float
    iterations: int


def hp_row(ctx: ConsolidationContext, h_dot, params: AdaptationParams):
    """Linear form ``row @ mu >= rhs`` of the ``h_p`` barrier condition."""
    pQ = ctx.p @ ctx.Q
    row = pQ * ctx.d2hk
    const = float(pQ @ (ctx.d2h * h_dot)) + float(ctx.p @ ctx.Qdot @ ctx.p) + float(params.alpha_p(ctx.h_p))
    return row, -const


def adapt_gains(ctx: ConsolidationContext, u_prev, params: AdaptationParams) -> AdaptationResult:
    """Solve the adaptation QP for ``kdot``.

    ``u_prev`` is the stacked input of all agents applied on the previous
    step (zeros at the first step); it breaks the loop between the gain
    rate and the control input that depends on it.
    """
    if params.c != ctx.c:
        raise ValueError(f"adaptation set up for c={params.c}, context has c={ctx.c}")
    u_prev = np.asarray(u_prev, dtype=float)
    h_dot = ctx.Lf + ctx.Lg @ u_prev
    row, rhs = hp_row(ctx, h_dot, params)
    lower = -params.alpha_k(ctx.k - params.k_min)
    problem = QpProblem(
        params.P,
        -params.P @ params.mu0,
        ineq_A=row[None, :],
        ineq_b=[rhs],
        lower=lower,
    )
    sol = solve_qp(problem)
    if not sol.ok:
        raise AdaptationInfeasible(
            f"gain adaptation QP {sol.status.value}", ctx.h_p, float(np.linalg.norm(row))
        )
    return AdaptationResult(sol.z_star, h_dot, row, rhs, sol.iterations)


def integrate_gains(k, k_dot, dt: float, k_min) -> np.ndarray:
    """Explicit Euler step of the gains, floored at ``k_min``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return np.maximum(np.asarray(k, dtype=float) + dt * np.asarray(k_dot, dtype=float), k_min)
