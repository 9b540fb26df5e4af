"""Dynamic-extension kinematic bicycle model and RK4 integration.

State layout is ``[x, y, psi, beta, v]`` and input ``[a, omega]``, where
``beta`` is the slip angle of the center of gravity and ``v`` the rear
wheel speed.
"""
from __future__ import annotations

from dataclasses import dataclass

import math

import numpy as np

STATE_DIM = 5
INPUT_DIM = 2
BETA_LIMIT = np.pi / 2 - 1e-3

X, Y, PSI, BETA, V = range(STATE_DIM)
ACCEL, OMEGA = range(INPUT_DIM)

_G = np.zeros((STATE_DIM, INPUT_DIM))
_G[V, ACCEL] = 1.0
_G[BETA, OMEGA] = 1.0
_G.setflags(write=False)


@dataclass(frozen=True)
class VehicleParams:
    l_r: float = 0.5
    l_f: float = 0.5
    radius: float = 0.25

    def __post_init__(self):
        if not self.l_r > 0:
            raise ValueError(f"l_r must be positive, got {self.l_r}")
        if not self.l_f >= 0:
            raise ValueError(f"l_f must be nonnegative, got {self.l_f}")
        if not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius}")


def make_state(x=0.0, y=0.0, psi=0.0, beta=0.0, v=0.0) -> np.ndarray:
    z = np.array([x, y, psi, beta, v], dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError(f"state has non-finite entries: {z}")
    return clamp_beta(z)


def clamp_beta(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float).copy()
    z[BETA] = np.clip(z[BETA], -BETA_LIMIT, BETA_LIMIT)
    return z


def planar_velocity(z) -> np.ndarray:
    """``(xdot, ydot)`` of the center of gravity."""
    psi, beta, v = float(z[PSI]), float(z[BETA]), float(z[V])
    tb = math.tan(beta)
    c, s = math.cos(psi), math.sin(psi)
    return np.array([v * (c - s * tb), v * (s + c * tb)])


def planar_velocity_jacobian(z) -> np.ndarray:
    """2x5 Jacobian of :func:`planar_velocity` with respect to the state."""
    psi, beta, v = float(z[PSI]), float(z[BETA]), float(z[V])
    tb = math.tan(beta)
    sec2 = 1.0 + tb * tb
    c, s = math.cos(psi), math.sin(psi)
    J = np.zeros((2, STATE_DIM))
    J[0, PSI] = -v * (s + c * tb)
    J[0, BETA] = -v * s * sec2
    J[0, V] = c - s * tb
    J[1, PSI] = v * (c - s * tb)
    J[1, BETA] = v * c * sec2
    J[1, V] = s + c * tb
    return J


def drift(z, params: VehicleParams) -> np.ndarray:
    psi, beta, v = float(z[PSI]), float(z[BETA]), float(z[V])
    tb = math.tan(beta)
    c, s = math.cos(psi), math.sin(psi)
    return np.array([v * (c - s * tb), v * (s + c * tb), v / params.l_r * tb, 0.0, 0.0])


def control_matrix(z=None) -> np.ndarray:
    """Input matrix ``g(z)``; constant for this model."""
    return _G.copy()


def dynamics(z, u, params: VehicleParams) -> np.ndarray:
    return drift(z, params) + _G @ np.asarray(u, dtype=float)


def step(z, u, dt: float, params: VehicleParams) -> np.ndarray:
    """One RK4 step with the input held constant, followed by the slip-angle clamp."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    z = np.asarray(z, dtype=float)
    k1 = dynamics(z, u, params)
    k2 = dynamics(z + 0.5 * dt * k1, u, params)
    k3 = dynamics(z + 0.5 * dt * k2, u, params)
    k4 = dynamics(z + dt * k3, u, params)
    return clamp_beta(z + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4))
