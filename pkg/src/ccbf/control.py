"""Nominal tracking law and the QP safety filters.

Filters return a :class:`ControlResult` whatever the QP outcome; callers
decide whether an infeasible step ends a run.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import solve_continuous_are

from .consolidation import ConsolidationContext
from .constraints import ConstraintEval
from .dynamics import BETA, INPUT_DIM, PSI, V
from .linalg_qp import QpProblem, QpStatus, solve_qp


@dataclass(frozen=True)
class ControlBounds:
    """Symmetric input box; a zero bound pins that input at zero."""

    a_max: float = np.inf
    omega_max: float = np.inf

    def __post_init__(self):
        if not (self.a_max >= 0 and self.omega_max >= 0):
            raise ValueError("input bounds must be nonnegative")

    @property
    def bounded(self) -> bool:
        return bool(np.isfinite(self.a_max) and np.isfinite(self.omega_max))

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.a_max, self.omega_max])

    @property
    def lower(self) -> np.ndarray:
        return -self.upper

    def clip(self, u) -> np.ndarray:
        return np.clip(u, self.lower, self.upper)


UNBOUNDED = ControlBounds()


def lqr_gain(A, B, Q, R) -> np.ndarray:
    A, B = np.atleast_2d(A), np.atleast_2d(B)
    Q, R = np.atleast_2d(Q), np.atleast_2d(R)
    X = solve_continuous_are(A, B, Q, R)
    return np.linalg.solve(R, B.T @ X)


def wrap_angle(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


@dataclass(frozen=True)
class NominalLaw:
    """Goal-seeking law built from LQR gains of the linearized tracking loops.

    The position/speed gains come from the double integrator and the
    heading gain from a single integrator, each with unit state and input
    weights unless ``q_weight``/``r_weight`` say otherwise.
    """

    goal: tuple[float, float]
    v_max: float = 1.0
    bounds: ControlBounds = UNBOUNDED
    beta_max: float = 1.0
    q_weight: float = 1.0
    r_weight: float = 1.0
    heading_blend_speed: float = 0.1

    def __post_init__(self):
        if not np.all(np.isfinite(self.goal)):
            raise ValueError("goal must be finite")

    @property
    def gains(self):
        K2 = lqr_gain([[0.0, 1.0], [0.0, 0.0]], [[0.0], [1.0]], self.q_weight * np.eye(2), [[self.r_weight]])
        K1 = lqr_gain([[0.0]], [[1.0]], [[self.q_weight]], [[self.r_weight]])
        return float(K2[0, 0]), float(K2[0, 1]), float(K1[0, 0])


def nominal_input(z, law: NominalLaw, gains=None) -> np.ndarray:
    k_p, k_v, k_psi = law.gains if gains is None else gains
    v_des = -k_p * (np.asarray(z[:2]) - np.asarray(law.goal, dtype=float))
    speed = float(np.hypot(*v_des))
    if speed > law.v_max:
        v_des *= law.v_max / speed
        speed = law.v_max
    err = wrap_angle(np.arctan2(v_des[1], v_des[0]) - (z[PSI] + z[BETA])) if speed > 0 else 0.0
    # track the part of the desired velocity along the body's line of travel,
    # reversing when the goal is behind
    a = k_v * (speed * np.cos(err) - z[V])
    if np.cos(err) < 0:
        err = wrap_angle(err - np.pi)
    blend = min(1.0, speed / law.heading_blend_speed) if law.heading_blend_speed > 0 else 1.0
    omega = blend * k_psi * err - (1.0 - blend) * k_psi * z[BETA]
    omega = np.clip(omega, k_psi * (-law.beta_max - z[BETA]), k_psi * (law.beta_max - z[BETA]))
    return law.bounds.clip(np.array([a, omega]))


@dataclass
class ControlResult:
    u: np.ndarray
    status: QpStatus
    iterations: int = 0
    kkt_residual: float = 0.0
    d: float = 0.0
    a: float = 0.0
    b: np.ndarray | None = None

    @property
    def ok(self) -> bool:
        return self.status is QpStatus.OPTIMAL


def _filter(u_nom, A, rhs, bounds: ControlBounds, **extra) -> ControlResult:
    u_nom = np.asarray(u_nom, dtype=float)
    n = u_nom.size
    lower = np.tile(bounds.lower, n // INPUT_DIM) if isinstance(bounds, ControlBounds) else bounds[0]
    upper = np.tile(bounds.upper, n // INPUT_DIM) if isinstance(bounds, ControlBounds) else bounds[1]
    problem = QpProblem(np.eye(n), -u_nom, ineq_A=A, ineq_b=rhs, lower=lower, upper=upper)
    sol = solve_qp(problem)
    return ControlResult(sol.z_star, sol.status, sol.iterations, sol.kkt_residual, **extra)


def baseline_decentralized(
    agent: int, evals: Sequence[ConstraintEval], u_nom, bounds: ControlBounds = UNBOUNDED,
    alpha_gain: float | Sequence[float] = 1.0,
) -> ControlResult:
    """One row ``L_f h_s + alpha_s h_s + L_g h_s u_i >= 0`` per constituent.

    Other agents' inputs are taken as zero.
    """
    if not evals:
        raise ValueError("baseline filter needs at least one constraint")
    alpha = np.broadcast_to(np.asarray(alpha_gain, dtype=float), (len(evals),))
    A = np.vstack([ev.lg_for(agent) for ev in evals])
    rhs = -np.array([ev.lf + al * ev.h for ev, al in zip(evals, alpha)])
    return _filter(u_nom, A, rhs, bounds)


def robustness_margin(LGH, agent_slices_excluded: Sequence[int], bounds: Sequence[ControlBounds], H: float, r: float) -> float:
    """``exp(-r H)`` times the worst-case contribution of the other agents' inputs over their boxes."""
    if not r > 0:
        raise ValueError("r must be positive")
    LGH = np.asarray(LGH, dtype=float)
    n_agents = LGH.size // INPUT_DIM
    total = 0.0
    for j in range(n_agents):
        if j in agent_slices_excluded:
            continue
        sl = np.abs(LGH[j * INPUT_DIM:(j + 1) * INPUT_DIM])
        if not np.any(sl):
            continue
        ub = bounds[j].upper
        if not np.all(np.isfinite(ub[sl > 0])):
            return np.inf
        total += float(sl @ np.where(sl > 0, ub, 0.0))
    return float(np.exp(-r * H) * total)


def decentralized_ccbf(
    agent: int, ctx: ConsolidationContext, k_dot, u_nom, bounds: Sequence[ControlBounds],
    r: float = 1.0, gamma_H: float = 1.0,
) -> ControlResult:
    """Single consolidated row ``a + b_i u_i >= d`` for agent ``agent``.

    ``bounds`` lists the input box of every agent; the entry for ``agent``
    bounds the decision variable and the others enter the margin ``d``.
    """
    a = ctx.lfh_with_gain_rate(k_dot) + gamma_H * ctx.H
    sl = slice(agent * INPUT_DIM, (agent + 1) * INPUT_DIM)
    b = ctx.LGH[sl]
    d = robustness_margin(ctx.LGH, [agent], bounds, ctx.H, r)
    if not np.isfinite(d):
        return ControlResult(np.asarray(u_nom, float), QpStatus.INFEASIBLE, d=d, a=a, b=b)
    res = _filter(u_nom, b[None, :], [d - a], bounds[agent], d=d, a=a, b=b)
    return res


def centralized_ccbf(
    agents: Sequence[int], ctx: ConsolidationContext, k_dot, u_nom_stacked, bounds: Sequence[ControlBounds],
    r: float = 1.0, gamma_H: float = 1.0,
) -> ControlResult:
    """Joint consolidated row over the inputs of ``agents``.

    Agents outside the communicating set enter through the same margin as
    the decentralized filter, so ``d = 0`` when every agent communicates.
    """
    agents = list(agents)
    a = ctx.lfh_with_gain_rate(k_dot) + gamma_H * ctx.H
    b = np.concatenate([ctx.LGH[i * INPUT_DIM:(i + 1) * INPUT_DIM] for i in agents])
    d = robustness_margin(ctx.LGH, agents, bounds, ctx.H, r)
    u_nom_stacked = np.asarray(u_nom_stacked, dtype=float)
    if not np.isfinite(d):
        return ControlResult(u_nom_stacked, QpStatus.INFEASIBLE, d=d, a=a, b=b)
    lower = np.concatenate([bounds[i].lower for i in agents])
    upper = np.concatenate([bounds[i].upper for i in agents])
    return _filter(u_nom_stacked, b[None, :], [d - a], (lower, upper), d=d, a=a, b=b)
