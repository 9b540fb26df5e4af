"""Dense linear algebra helpers and a small convex QP solver.

The QP solver is a dual active-set method (Goldfarb-Idnani) for strictly
convex problems

    min  1/2 z^T G z + a^T z
    s.t. A z >= b,  lower <= z <= upper

It starts from the unconstrained minimizer, so no feasible initial point is
needed, and a failed step produces a Farkas certificate of infeasibility.
Problems in this package have a handful of variables and rows, so every
iteration simply re-solves the small projected systems from scratch.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

SYMMETRY_TOL = 1e-10
RANK_RTOL = 1e-10
KKT_TOL = 1e-8


class QpStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    MAX_ITERATIONS = "max_iterations"


@dataclass(frozen=True)
class QpProblem:
    """Strictly convex dense QP with rows ``ineq_A @ z >= ineq_b`` and box bounds."""

    cost_matrix: np.ndarray
    cost_vector: np.ndarray
    ineq_A: np.ndarray | None = None
    ineq_b: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        G = np.atleast_2d(np.asarray(self.cost_matrix, dtype=float))
        a = np.asarray(self.cost_vector, dtype=float).reshape(-1)
        d = a.size
        if G.shape != (d, d):
            raise ValueError(f"cost_matrix shape {G.shape} does not match cost_vector length {d}")
        if not (np.all(np.isfinite(G)) and np.all(np.isfinite(a))):
            raise ValueError("cost terms must be finite")
        if np.max(np.abs(G - G.T), initial=0.0) > SYMMETRY_TOL:
            raise ValueError("cost_matrix is not symmetric")
        try:
            np.linalg.cholesky(G)
        except np.linalg.LinAlgError as exc:
            raise ValueError("cost_matrix is not positive definite") from exc

        if self.ineq_A is None or np.size(self.ineq_A) == 0:
            A = np.zeros((0, d))
            b = np.zeros(0)
        else:
            A = np.atleast_2d(np.asarray(self.ineq_A, dtype=float))
            b = np.asarray(self.ineq_b, dtype=float).reshape(-1)
        if A.shape != (b.size, d):
            raise ValueError(f"ineq_A shape {A.shape} inconsistent with ineq_b ({b.size}) and d={d}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise ValueError("inequality rows must be finite")

        lo = np.full(d, -np.inf) if self.lower is None else np.asarray(self.lower, dtype=float).reshape(-1)
        hi = np.full(d, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float).reshape(-1)
        if lo.size != d or hi.size != d:
            raise ValueError("bounds must have one entry per variable")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)) or np.any(lo > hi):
            raise ValueError("bounds must satisfy lower <= upper")

        object.__setattr__(self, "cost_matrix", 0.5 * (G + G.T))
        object.__setattr__(self, "cost_vector", a)
        object.__setattr__(self, "ineq_A", A)
        object.__setattr__(self, "ineq_b", b)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.cost_vector.size

    @property
    def n_ineq(self) -> int:
        return self.ineq_b.size

    def stacked_rows(self):
        """All constraints as ``C z >= d``: inequality rows, then finite lower, then finite upper bounds.

        Returns ``(C, d, kinds)`` where ``kinds[j]`` is ``("ineq", i)``,
        ``("lower", i)`` or ``("upper", i)``.
        """
        n = self.dim
        eye = np.eye(n)
        rows = [self.ineq_A]
        rhs = [self.ineq_b]
        kinds = [("ineq", i) for i in range(self.n_ineq)]
        lo_idx = np.flatnonzero(np.isfinite(self.lower))
        hi_idx = np.flatnonzero(np.isfinite(self.upper))
        rows += [eye[lo_idx], -eye[hi_idx]]
        rhs += [self.lower[lo_idx], -self.upper[hi_idx]]
        kinds += [("lower", int(i)) for i in lo_idx] + [("upper", int(i)) for i in hi_idx]
        return np.vstack(rows), np.concatenate(rhs), kinds


@dataclass
class QpSolution:
    z_star: np.ndarray
    multipliers: np.ndarray
    lower_multipliers: np.ndarray
    upper_multipliers: np.ndarray
    status: QpStatus
    kkt_residual: float
    iterations: int = 0
    active: tuple = ()
    farkas: np.ndarray | None = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.status is QpStatus.OPTIMAL


def kkt_residual(problem: QpProblem, z, lam, lam_lo, lam_hi) -> float:
    """Infinity norm of the stationarity, feasibility and complementarity violations."""
    G, a = problem.cost_matrix, problem.cost_vector
    A, b = problem.ineq_A, problem.ineq_b
    lo, hi = problem.lower, problem.upper
    grad = G @ z + a - A.T @ lam - lam_lo + lam_hi
    slack = A @ z - b
    s_lo = np.where(np.isfinite(lo), z - lo, np.inf)
    s_hi = np.where(np.isfinite(hi), hi - z, np.inf)
    parts = [
        np.abs(grad),
        np.maximum(0.0, -slack),
        np.maximum(0.0, -s_lo),
        np.maximum(0.0, -s_hi),
        np.maximum(0.0, -lam),
        np.maximum(0.0, -lam_lo),
        np.maximum(0.0, -lam_hi),
        np.abs(lam * slack),
        np.abs(lam_lo * np.where(np.isfinite(s_lo), s_lo, 0.0)),
        np.abs(lam_hi * np.where(np.isfinite(s_hi), s_hi, 0.0)),
    ]
    return float(max((np.max(p, initial=0.0) for p in parts), default=0.0))


def _split_multipliers(problem, kinds, active, u):
    lam = np.zeros(problem.n_ineq)
    lam_lo = np.zeros(problem.dim)
    lam_hi = np.zeros(problem.dim)
    target = {"ineq": lam, "lower": lam_lo, "upper": lam_hi}
    for j, uj in zip(active, u):
        kind, i = kinds[j]
        target[kind][i] += uj
    return lam, lam_lo, lam_hi


def _polish(G, a, C, d, active, x, u, fixed):
    """Re-solve the equality-constrained KKT system of the final active set.

    Variables held at an active bound are fixed at it exactly and the rest
    solved for, with one step of iterative refinement.
    """
    q = len(active)
    n = a.size
    if q == 0:
        return sla.cho_solve(sla.cho_factor(G), -a), np.zeros(0)
    Ca = C[active]
    K = np.zeros((n + q, n + q))
    K[:n, :n] = G
    K[:n, n:] = -Ca.T
    K[n:, :n] = Ca
    rhs = np.concatenate([-a, d[active]])
    # a fixed variable's bound row is its own equation, so pin it directly
    for j, (i, value) in zip(range(q), fixed):
        if i is not None:
            K[n + j, :] = 0.0
            K[n + j, i] = 1.0
            rhs[n + j] = value
    try:
        lu = sla.lu_factor(K)
        sol = sla.lu_solve(lu, rhs)
        sol = sol + sla.lu_solve(lu, rhs - K @ sol)
    except (np.linalg.LinAlgError, ValueError):
        return x, u
    if not np.all(np.isfinite(sol)):
        return x, u
    for i, value in fixed:
        if i is not None:
            sol[i] = value
    return sol[:n], sol[n:]


def solve_qp(problem: QpProblem, max_iter: int | None = None, feas_tol: float = 1e-12) -> QpSolution:
    """Solve a strictly convex QP with the Goldfarb-Idnani dual active-set method.

    Deterministic: constraint selection always picks the most violated row
    (normalized by row norm), ties broken by the lowest index.
    """
    G, a = problem.cost_matrix, problem.cost_vector
    n = problem.dim
    C, d, kinds = problem.stacked_rows()
    m_all = d.size
    if max_iter is None:
        max_iter = 100 * max(n, 1)

    chol = sla.cho_factor(G)
    Ginv = sla.cho_solve(chol, np.eye(n))
    x = -Ginv @ a
    row_norm = np.linalg.norm(C, axis=1) if m_all else np.zeros(0)
    row_norm = np.where(row_norm > 0, row_norm, 1.0)
    tol = feas_tol * (1.0 + np.abs(d))

    active: list[int] = []
    u = np.zeros(0)
    iters = 0

    def finish(status, farkas=None):
        nonlocal x, u
        if status is QpStatus.OPTIMAL:
            fixed = []
            for j in active:
                kind, i = kinds[j]
                bound = problem.lower if kind == "lower" else problem.upper if kind == "upper" else None
                fixed.append((i, bound[i]) if bound is not None else (None, None))
            xp, up = _polish(G, a, C, d, active, x, u, fixed)
            if np.all(up >= -KKT_TOL) and np.all(C @ xp - d >= -KKT_TOL * (1 + np.abs(d))):
                x, u = xp, np.maximum(up, 0.0)
            # active bounds hold exactly
            for j in active:
                kind, i = kinds[j]
                if kind == "lower":
                    x[i] = problem.lower[i]
                elif kind == "upper":
                    x[i] = problem.upper[i]
        lam, lam_lo, lam_hi = _split_multipliers(problem, kinds, active, u)
        res = kkt_residual(problem, x, lam, lam_lo, lam_hi)
        return QpSolution(
            z_star=x.copy(),
            multipliers=lam,
            lower_multipliers=lam_lo,
            upper_multipliers=lam_hi,
            status=status,
            kkt_residual=res,
            iterations=iters,
            active=tuple(kinds[j] for j in active),
            farkas=farkas,
        )

    while True:
        s = C @ x - d
        viol = s / row_norm
        if active:
            viol[active] = np.inf
        candidates = np.flatnonzero(s < -tol)
        candidates = [j for j in candidates if j not in active]
        if not candidates:
            return finish(QpStatus.OPTIMAL)
        p = min(candidates, key=lambda j: (viol[j], j))
        n_p = C[p]
        u_p = 0.0

        while True:
            iters += 1
            if iters > max_iter:
                return finish(QpStatus.MAX_ITERATIONS)
            if active:
                Na = C[active].T
                B = Ginv @ Na
                Ns = np.linalg.solve(Na.T @ B, B.T)
                z = Ginv @ n_p - B @ (Ns @ n_p)
                r = Ns @ n_p
            else:
                z = Ginv @ n_p
                r = np.zeros(0)

            t1, k = np.inf, None
            for idx in range(len(active)):
                if r[idx] > 1e-14:
                    ratio = u[idx] / r[idx]
                    if ratio < t1:
                        t1, k = ratio, idx

            # with n independent rows active the primal step is zero; rounding
            # would otherwise admit a dependent row and a huge step
            if len(active) >= n or np.linalg.norm(z) <= 1e-10 * np.linalg.norm(Ginv @ n_p):
                z = np.zeros(n)
            zn = float(z @ n_p)
            if zn <= 0.0:
                if k is None:
                    cert = np.zeros(m_all)
                    cert[active] = -r
                    cert[p] = 1.0
                    return finish(QpStatus.INFEASIBLE, farkas=cert)
                u = u - t1 * r
                u_p += t1
                del active[k]
                u = np.delete(u, k)
                continue

            t2 = -(n_p @ x - d[p]) / zn
            t = min(t1, t2)
            x = x + t * z
            u = u - t * r
            u_p += t
            if t2 <= t1:
                active.append(p)
                u = np.append(u, u_p)
                break
            del active[k]
            u = np.delete(u, k)


def null_space_basis(A, rtol: float = RANK_RTOL) -> np.ndarray:
    """Orthonormal basis (as columns) of ``{v : A v = 0}``.

    Rank is the number of singular values above ``rtol * sigma_max``. Each
    column is sign-normalized so its first nonzero entry is positive.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[1]
    if A.size == 0:
        return np.eye(n)
    _, s, vh = np.linalg.svd(A, full_matrices=True)
    smax = s[0] if s.size else 0.0
    rank = int(np.sum(s > rtol * smax)) if smax > 0 else 0
    N = vh[rank:].T.copy()
    for j in range(N.shape[1]):
        col = N[:, j]
        nz = np.flatnonzero(np.abs(col) > 1e-12)
        if nz.size and col[nz[0]] < 0:
            N[:, j] = -col
    return N


def projection_matrix(N, dim: int | None = None) -> np.ndarray:
    """``(I - N N^T)^T (I - N N^T)``, the projector onto the complement of range(N)."""
    N = np.asarray(N, dtype=float)
    if dim is None:
        dim = N.shape[0]
    if N.size == 0:
        return np.eye(dim)
    P = np.eye(dim) - N @ N.T
    Q = P.T @ P
    return 0.5 * (Q + Q.T)


def finite_diff_matrix(current, previous, dt: float) -> np.ndarray:
    """Backward difference ``(current - previous) / dt``; zero when there is no previous sample."""
    current = np.asarray(current, dtype=float)
    if dt <= 0:
        raise ValueError("dt must be positive")
    if previous is None:
        return np.zeros_like(current)
    previous = np.asarray(previous, dtype=float)
    if previous.shape != current.shape:
        raise ValueError(f"sample shapes differ: {previous.shape} vs {current.shape}")
    return (current - previous) / dt
