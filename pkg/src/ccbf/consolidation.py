"""Consolidated barrier ``H(x, k) = 1 - sum_s phi(h_s(x), k_s)`` and its derivatives.

``p`` and ``q`` hold the partials of ``phi`` with respect to ``h_s`` and
``k_s``. Since ``H`` subtracts the ``phi`` terms, the Lie derivatives of
``H`` carry a minus sign: ``L_G H = -p^T L_g`` and
``L_F H = -p^T L_f - q^T kdot``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .constraints import ConstraintEval
from .linalg_qp import finite_diff_matrix, null_space_basis, projection_matrix

DEFAULT_EPS = 0.01


class ConsolidationError(RuntimeError):
    pass


def phi(h, k):
    """Exponential weighting ``exp(-h k)`` and its partials.

    Returns ``(value, d/dh, d/dk, d2/dh2, d2/dhdk)``; works elementwise on arrays.
    """
    h = np.asarray(h, dtype=float)
    k = np.asarray(k, dtype=float)
    with np.errstate(over="ignore"):  # deep outside the safe set exp overflows to inf, so H = -inf
        e = np.exp(-h * k)
    return e, -k * e, -h * e, k * k * e, (h * k - 1.0) * e


@dataclass(frozen=True)
class ConsolidationContext:
    H: float
    h: np.ndarray
    k: np.ndarray
    p: np.ndarray
    q: np.ndarray
    d2h: np.ndarray
    d2hk: np.ndarray
    Lf: np.ndarray
    Lg: np.ndarray
    N: np.ndarray
    Q: np.ndarray
    Qdot: np.ndarray
    h_p: float
    LFH: float
    LGH: np.ndarray
    eps: float

    @property
    def c(self) -> int:
        return self.h.size

    def lfh_with_gain_rate(self, k_dot) -> float:
        """``L_F H`` including the ``-q^T kdot`` contribution of adapting gains."""
        return self.LFH - float(self.q @ np.asarray(k_dot, dtype=float))


def consolidate(
    evals: Sequence[ConstraintEval],
    k,
    prev_Q=None,
    dt: float = 0.01,
    eps: float = DEFAULT_EPS,
    n_agents: int | None = None,
) -> ConsolidationContext:
    """Stack constituent terms and build every quantity the adaptation and control laws need.

    ``Lg`` spans the stacked inputs of all ``n_agents`` agents.
    """
    k = np.asarray(k, dtype=float)
    c = len(evals)
    if c < 2:
        raise ValueError(f"consolidation needs at least two constituents, got {c}")
    if k.shape != (c,):
        raise ValueError(f"gain vector has shape {k.shape}, expected ({c},)")
    if not np.all(np.isfinite(k)) or np.any(k <= 0):
        raise ValueError("gains must be positive and finite")
    if not eps > 0:
        raise ValueError("eps must be positive")
    if n_agents is None:
        n_agents = 1 + max(a for ev in evals for a in ev.agents)

    h = np.array([ev.h for ev in evals])
    Lf = np.array([ev.lf for ev in evals])
    Lg = np.vstack([ev.lg_full(n_agents) for ev in evals])
    if not np.any(Lg):
        raise ConsolidationError("stacked control rows are all zero; no input affects any constituent")

    val, p, q, d2h, d2hk = phi(h, k)
    N = null_space_basis(Lg.T)
    Q = projection_matrix(N, c)
    if prev_Q is not None and np.shape(prev_Q) != Q.shape:
        prev_Q = None
    # Q is smooth only while rank(L_g) is constant; trace(Q) is that rank,
    # so a change marks a jump that must not be differenced
    if prev_Q is not None and round(float(np.trace(prev_Q))) != round(float(np.trace(Q))):
        prev_Q = None
    Qdot = finite_diff_matrix(Q, prev_Q, dt)
    return ConsolidationContext(
        H=float(1.0 - val.sum()),
        h=h,
        k=k.copy(),
        p=p,
        q=q,
        d2h=d2h,
        d2hk=d2hk,
        Lf=Lf,
        Lg=Lg,
        N=N,
        Q=Q,
        Qdot=Qdot,
        h_p=float(0.5 * p @ Q @ p - eps),
        LFH=float(-p @ Lf),
        LGH=-p @ Lg,
        eps=eps,
    )


def consolidated_value(h, k) -> float:
    return float(1.0 - np.sum(phi(h, k)[0]))


def h_and_gradH_check(
    ctx: ConsolidationContext,
    h_of_state: Callable[[np.ndarray], np.ndarray],
    state: np.ndarray,
    drift_full: np.ndarray,
    g_full: np.ndarray,
    step: float = 1e-6,
) -> float:
    """Largest relative error between ``ctx.LFH``/``ctx.LGH`` and finite differences of ``H``.

    ``h_of_state`` maps the stacked state of all agents to the constituent
    vector; ``drift_full`` and ``g_full`` are the stacked drift and input
    matrix at ``state``. Directional central differences of ``H`` along the
    drift and along each input column are compared with the analytic terms.
    """
    def H_at(x):
        return consolidated_value(h_of_state(x), ctx.k)

    def directional(direction):
        return (H_at(state + step * direction) - H_at(state - step * direction)) / (2 * step)

    fd_lfh = directional(drift_full)
    fd_lgh = np.array([directional(col) for col in np.asarray(g_full).T])
    analytic = np.concatenate([[ctx.LFH], ctx.LGH])
    numeric = np.concatenate([[fd_lfh], fd_lgh])
    scale = max(1.0, float(np.max(np.abs(analytic))))
    return float(np.max(np.abs(analytic - numeric)) / scale)
