"""Candidate barrier functions for the warehouse robots.

Each function returns a :class:`ConstraintEval` carrying the value, the
analytic state gradient for every agent it involves, and the Lie
derivatives along the bicycle dynamics.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dynamics import INPUT_DIM, STATE_DIM, V, VehicleParams, control_matrix, drift
from .dynamics import planar_velocity, planar_velocity_jacobian

TAU_EPS = 1e-9


@dataclass(frozen=True)
class ConstraintEval:
    name: str
    h: float
    agents: tuple[int, ...]
    grads: tuple[np.ndarray, ...]
    lf: float
    lg_rows: tuple[np.ndarray, ...]
    tau: float | None = None
    tau_clamped: bool = False

    def lg_full(self, n_agents: int) -> np.ndarray:
        """Control row spread over the stacked input of ``n_agents`` agents."""
        row = np.zeros(n_agents * INPUT_DIM)
        for agent, lg in zip(self.agents, self.lg_rows):
            row[agent * INPUT_DIM:(agent + 1) * INPUT_DIM] += lg
        return row

    def lg_for(self, agent: int) -> np.ndarray:
        out = np.zeros(INPUT_DIM)
        for a, lg in zip(self.agents, self.lg_rows):
            if a == agent:
                out += lg
        return out


def _lie_terms(grads, states, params):
    lf = 0.0
    lg_rows = []
    g = control_matrix()
    for grad, z, p in zip(grads, states, params):
        lf += float(grad @ drift(z, p))
        lg_rows.append(grad @ g)
    return lf, tuple(lg_rows)


@dataclass(frozen=True)
class CorridorGeometry:
    """Walls ``y = m_L x + b_L`` and ``y = m_R x + b_R``.

    ``sign`` orients the residual product so that the corridor interior is
    positive; use :meth:`oriented` to pick it from a known interior point.
    """

    m_L: float
    b_L: float
    m_R: float
    b_R: float
    sign: float = 1.0

    def __post_init__(self):
        if self.m_L == self.m_R and self.b_L == self.b_R:
            raise ValueError("corridor walls must be distinct lines")
        if self.sign not in (1.0, -1.0):
            raise ValueError("sign must be +1 or -1")

    def residuals(self, px, py):
        return self.m_L * px + self.b_L - py, self.m_R * px + self.b_R - py

    def static_value(self, px, py) -> float:
        rl, rr = self.residuals(px, py)
        return self.sign * rl * rr

    @classmethod
    def oriented(cls, m_L, b_L, m_R, b_R, interior) -> "CorridorGeometry":
        geom = cls(m_L, b_L, m_R, b_R)
        value = geom.static_value(*interior)
        if value == 0.0:
            raise ValueError(f"interior point {tuple(interior)} lies on a corridor wall")
        return geom if value > 0 else cls(m_L, b_L, m_R, b_R, -1.0)


@dataclass(frozen=True)
class FfCbfParams:
    T: float = 3.0
    eps_ff: float = 0.5
    R: float = 0.25

    def __post_init__(self):
        if not (self.T > 0 and self.eps_ff > 0 and self.R > 0):
            raise ValueError(f"future-focused CBF parameters must be positive: {self}")


def speed_cbf(z, s_max: float, params: VehicleParams, agent: int = 0) -> ConstraintEval:
    if not s_max > 0:
        raise ValueError("speed limit must be positive")
    grad = np.zeros(STATE_DIM)
    grad[V] = -1.0
    lf, lg = _lie_terms([grad], [z], [params])
    return ConstraintEval("speed", float(s_max - z[V]), (agent,), (grad,), lf, lg)


def corridor_cbf(z, geom: CorridorGeometry, params: VehicleParams, agent: int = 0) -> ConstraintEval:
    """Product of the two wall residuals evaluated one second ahead along the current velocity."""
    vel = planar_velocity(z)
    J = planar_velocity_jacobian(z)
    px, py = z[0] + vel[0], z[1] + vel[1]
    grad_px = J[0].copy()
    grad_px[0] += 1.0
    grad_py = J[1].copy()
    grad_py[1] += 1.0
    rl, rr = geom.residuals(px, py)
    grad_rl = geom.m_L * grad_px - grad_py
    grad_rr = geom.m_R * grad_px - grad_py
    h = geom.sign * rl * rr
    grad = geom.sign * (rr * grad_rl + rl * grad_rr)
    lf, lg = _lie_terms([grad], [z], [params])
    return ConstraintEval("corridor", float(h), (agent,), (grad,), lf, lg)


def closest_approach_time(dp, dv, horizon: float):
    """Minimizer over ``[0, horizon]`` of ``|dp + tau dv|``; returns ``(tau, clamped)``."""
    vv = float(dv @ dv)
    if np.sqrt(vv) <= TAU_EPS:
        return 0.0, True
    tau = -float(dp @ dv) / vv
    if tau <= 0.0:
        return 0.0, True
    if tau >= horizon:
        return float(horizon), True
    return tau, False


def ff_collision_cbf(
    z_i, z_j, params: FfCbfParams, veh_i: VehicleParams, veh_j: VehicleParams,
    agent_i: int = 0, agent_j: int = 1,
) -> ConstraintEval:
    """Relaxed future-focused collision barrier between agents ``i`` and ``j``.

    ``tau`` is treated as fixed when differentiating. This is exact in the
    interior (the distance is stationary in ``tau`` there) and picks the
    active branch when the closed form is clamped.
    """
    dp = z_i[:2] - z_j[:2]
    dv = planar_velocity(z_i) - planar_velocity(z_j)
    tau, clamped = closest_approach_time(dp, dv, params.T)
    fut = dp + tau * dv
    eps = params.eps_ff
    h = fut @ fut + eps * (dp @ dp) - (1.0 + eps) * (2.0 * params.R) ** 2
    dh_dp = 2.0 * fut + 2.0 * eps * dp
    dh_dv = 2.0 * tau * fut
    grad_i = dh_dv @ planar_velocity_jacobian(z_i)
    grad_i[:2] += dh_dp
    grad_j = -(dh_dv @ planar_velocity_jacobian(z_j))
    grad_j[:2] -= dh_dp
    lf, lg = _lie_terms([grad_i, grad_j], [z_i, z_j], [veh_i, veh_j])
    return ConstraintEval(
        f"collision:{agent_j}", float(h), (agent_i, agent_j), (grad_i, grad_j), lf, lg,
        tau=tau, tau_clamped=clamped,
    )


@dataclass(frozen=True)
class ConstraintSpec:
    """Which candidate CBFs a controlled agent carries, with their parameters."""

    s_max: float | None = 1.0
    corridor: CorridorGeometry | None = None
    ff: FfCbfParams = field(default_factory=FfCbfParams)
    collisions: bool = True


def build_constraint_set(
    agent: int, states: Sequence[np.ndarray], vehicles: Sequence[VehicleParams], spec: ConstraintSpec,
) -> list[ConstraintEval]:
    """Ordered constituent list: speed, corridor, then one collision term per other agent by id."""
    z = states[agent]
    veh = vehicles[agent]
    out = []
    if spec.s_max is not None:
        out.append(speed_cbf(z, spec.s_max, veh, agent))
    if spec.corridor is not None:
        out.append(corridor_cbf(z, spec.corridor, veh, agent))
    if spec.collisions:
        for j in range(len(states)):
            if j != agent:
                out.append(ff_collision_cbf(z, states[j], spec.ff, veh, vehicles[j], agent, j))
    return out
