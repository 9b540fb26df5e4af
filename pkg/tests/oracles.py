"""Independent reference computations used by the test-suite.

Nothing here calls into the code under test except for plain data
containers, so a bug in the package cannot hide behind its own oracle.
"""
import itertools

import numpy as np


def brute_force_qp(G, a, A, b, lower=None, upper=None, tol=1e-9):
    """Minimize 1/2 z'Gz + a'z s.t. A z >= b and box bounds by active-set enumeration.

    Returns ``(z, lam_rows)`` for the unique KKT point, or ``None`` if no
    feasible KKT point exists (the QP is infeasible).
    """
    G = np.asarray(G, float)
    a = np.asarray(a, float)
    n = a.size
    A = np.zeros((0, n)) if A is None else np.atleast_2d(np.asarray(A, float)).reshape(-1, n)
    b = np.zeros(0) if b is None else np.asarray(b, float).reshape(-1)
    rows, rhs = [A], [b]
    if lower is not None:
        idx = np.flatnonzero(np.isfinite(lower))
        rows.append(np.eye(n)[idx])
        rhs.append(np.asarray(lower, float)[idx])
    if upper is not None:
        idx = np.flatnonzero(np.isfinite(upper))
        rows.append(-np.eye(n)[idx])
        rhs.append(-np.asarray(upper, float)[idx])
    C = np.vstack(rows)
    d = np.concatenate(rhs)
    m = d.size
    best = None
    for size in range(0, min(n, m) + 1):
        for act in itertools.combinations(range(m), size):
            act = list(act)
            Ca = C[act]
            K = np.block([[G, -Ca.T], [Ca, np.zeros((size, size))]])
            rhs_k = np.concatenate([-a, d[act]])
            try:
                sol = np.linalg.solve(K, rhs_k)
            except np.linalg.LinAlgError:
                continue
            if np.linalg.cond(K) > 1e12:
                continue
            z, lam = sol[:n], sol[n:]
            if np.all(lam >= -tol) and np.all(C @ z - d >= -tol * (1 + np.abs(d))):
                val = 0.5 * z @ G @ z + a @ z
                if best is None or val < best[0] - 1e-12:
                    full = np.zeros(m)
                    full[act] = lam
                    best = (val, z, full[: A.shape[0]])
    if best is None:
        return None
    return best[1], best[2]


def central_diff(f, x, h=1e-6):
    """Central finite-difference gradient of a scalar function of a vector."""
    x = np.asarray(x, float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def random_orthonormal(rng, n, r):
    q, _ = np.linalg.qr(rng.standard_normal((n, max(r, 1))))
    return q[:, :r]


def cg_velocity(z):
    """Planar c.g. velocity of the bicycle model, written out independently."""
    _, _, psi, beta, v = z
    return v * np.array([np.cos(psi + beta), np.sin(psi + beta)]) / np.cos(beta)


def near_tau_clamp(zi, zj, T, margin=1e-3):
    """True when the unclamped closest-approach time is within ``margin`` of 0 or ``T``.

    Finite differences straddle the clamp kink there, so gradient checks skip
    such states.
    """
    dp = np.asarray(zi[:2]) - np.asarray(zj[:2])
    dv = cg_velocity(zi) - cg_velocity(zj)
    vv = dv @ dv
    if vv <= 1e-12:
        return True
    tau = -(dp @ dv) / vv
    return abs(tau) < margin or abs(tau - T) < margin
