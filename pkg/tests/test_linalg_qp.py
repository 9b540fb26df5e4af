import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccbf.linalg_qp import (
    QpProblem,
    QpStatus,
    finite_diff_matrix,
    null_space_basis,
    projection_matrix,
    solve_qp,
)
from oracles import brute_force_qp, random_orthonormal


def random_qp(rng, d, m, boxed=False):
    L = rng.standard_normal((d, d))
    G = L @ L.T + 0.5 * np.eye(d)
    a = rng.standard_normal(d) * 3
    A = rng.standard_normal((m, d))
    z0 = rng.standard_normal(d)
    b = A @ z0 - rng.uniform(0, 1, m)
    lo = hi = None
    if boxed:
        lo = z0 - rng.uniform(0.1, 2, d)
        hi = z0 + rng.uniform(0.1, 2, d)
    return G, a, A, b, lo, hi


def test_unconstrained_projection():
    sol = solve_qp(QpProblem(np.eye(2), -np.array([1.0, 2.0])))
    assert sol.status is QpStatus.OPTIMAL
    np.testing.assert_allclose(sol.z_star, [1, 2])


def test_single_halfspace_multiplier():
    # min 1/2 |z - (1,0)|^2  s.t. -z1 >= 0
    sol = solve_qp(QpProblem(np.eye(2), -np.array([1.0, 0.0]), [[-1.0, 0.0]], [0.0]))
    np.testing.assert_allclose(sol.z_star, [0, 0], atol=1e-14)
    np.testing.assert_allclose(sol.multipliers, [1.0])


def test_symmetric_halfspace():
    sol = solve_qp(QpProblem(np.eye(2), np.zeros(2), [[1.0, 1.0]], [2.0]))
    np.testing.assert_allclose(sol.z_star, [1, 1])
    assert sol.kkt_residual <= 1e-8


def test_box_bounds_multipliers():
    sol = solve_qp(QpProblem(np.eye(2), -np.array([3.0, -3.0]), lower=[-1, -1], upper=[1, 1]))
    np.testing.assert_allclose(sol.z_star, [1, -1])
    np.testing.assert_allclose(sol.upper_multipliers, [2, 0])
    np.testing.assert_allclose(sol.lower_multipliers, [0, 2])


def test_opposing_halfplanes_infeasible():
    sol = solve_qp(QpProblem(np.eye(2), np.zeros(2), [[1.0, 0.0], [-1.0, 0.0]], [1.0, 1.0]))
    assert sol.status is QpStatus.INFEASIBLE
    y = sol.farkas
    C = np.array([[1.0, 0.0], [-1.0, 0.0]])
    assert np.all(y >= 0)
    np.testing.assert_allclose(y @ C, 0, atol=1e-12)
    assert y @ np.array([1.0, 1.0]) > 0


def test_infeasible_row_against_box():
    sol = solve_qp(QpProblem(np.eye(1), np.zeros(1), [[1.0]], [5.0], lower=[-1], upper=[1]))
    assert sol.status is QpStatus.INFEASIBLE


def test_zero_row_with_positive_rhs_infeasible():
    sol = solve_qp(QpProblem(np.eye(2), np.zeros(2), [[0.0, 0.0]], [1.0]))
    assert sol.status is QpStatus.INFEASIBLE


def test_infeasible_without_admitting_dependent_rows():
    # once three rows are active in 3-D, rounding left a tiny nonzero step that
    # admitted a fourth row and reported a wildly infeasible point as optimal
    G = np.array([[1.862307622850863, -0.4946190508282724, -0.3866855368196499],
                  [-0.4946190508282724, 1.8758994392507433, 0.297398128917806],
                  [-0.3866855368196499, 0.297398128917806, 0.7514365995068687]])
    a = np.array([2.051303255307404, 1.0225450243999918, -0.700770748073148])
    A = np.array([[-0.8657335622363305, -0.32758044608284875, -0.9309068838760169],
                  [0.8175143709686293, 1.06940836233016, 1.0393428951880213],
                  [0.24456023106058444, 1.5435794719819365, -1.0065943964252444],
                  [-0.30448570601692193, -0.5782831167865212, -1.0432465112778186],
                  [-0.08973665262133158, -0.680538124580907, 0.5893496987709802],
                  [0.09280371854683492, -1.2313163411256456, 0.16321576323231182]])
    b = np.array([-2.0927742311047024, -1.4111329448829883, 0.8815301065625858,
                  2.5890169984297415, 2.1646290460836464, 0.9151209008914252])
    assert brute_force_qp(G, a, A, b) is None
    sol = solve_qp(QpProblem(G, a, A, b))
    assert sol.status is QpStatus.INFEASIBLE
    assert len(sol.active) <= 3


def test_max_iterations_cap():
    rng = np.random.default_rng(3)
    G, a, A, b, lo, hi = random_qp(rng, 4, 6, boxed=True)
    sol = solve_qp(QpProblem(G, a, A, b, lo, hi), max_iter=0)
    ref = solve_qp(QpProblem(G, a, A, b, lo, hi))
    if ref.iterations > 0:
        assert sol.status is QpStatus.MAX_ITERATIONS


def test_deterministic_bitwise():
    rng = np.random.default_rng(11)
    prob = QpProblem(*random_qp(rng, 4, 6, boxed=True))
    s1, s2 = solve_qp(prob), solve_qp(prob)
    assert s1.z_star.tobytes() == s2.z_star.tobytes()
    assert s1.multipliers.tobytes() == s2.multipliers.tobytes()


@pytest.mark.parametrize(
    "bad",
    [
        dict(cost_matrix=[[1.0, 0.5], [0.0, 1.0]], cost_vector=[0.0, 0.0]),
        dict(cost_matrix=[[1.0, 0.0], [0.0, -1.0]], cost_vector=[0.0, 0.0]),
        dict(cost_matrix=np.eye(2), cost_vector=[0.0, 0.0], lower=[1, 0], upper=[0, 1]),
        dict(cost_matrix=np.eye(2), cost_vector=[0.0, 0.0], ineq_A=[[np.inf, 0]], ineq_b=[0]),
    ],
)
def test_invalid_problems_rejected(bad):
    with pytest.raises(ValueError):
        QpProblem(**bad)


@settings(max_examples=150, deadline=None)
@given(st.integers(1, 4), st.integers(0, 6), st.booleans(), st.integers(0, 2**31 - 1))
def test_matches_enumeration_oracle(d, m, boxed, seed):
    rng = np.random.default_rng(seed)
    G, a, A, b, lo, hi = random_qp(rng, d, m, boxed)
    sol = solve_qp(QpProblem(G, a, A, b, lo, hi))
    ref = brute_force_qp(G, a, A, b, lo, hi)
    assert ref is not None
    assert sol.status is QpStatus.OPTIMAL
    np.testing.assert_allclose(sol.z_star, ref[0], atol=1e-6)
    assert sol.kkt_residual <= 1e-8


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 3), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_infeasibility_agrees_with_oracle(d, m, seed):
    # rows with random offsets are often jointly infeasible once boxed
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, d))
    b = rng.standard_normal(m) * 3
    lo, hi = -np.ones(d), np.ones(d)
    sol = solve_qp(QpProblem(np.eye(d), rng.standard_normal(d), A, b, lo, hi))
    ref = brute_force_qp(np.eye(d), np.zeros(d), A, b, lo, hi)
    assert (ref is None) == (sol.status is QpStatus.INFEASIBLE)


# -- null space / projector ------------------------------------------------------


def test_null_space_full_rank_is_empty():
    assert null_space_basis(np.eye(3)).shape == (3, 0)


def test_null_space_coordinate():
    N = null_space_basis([[1, 0, 0], [0, 1, 0]])
    np.testing.assert_allclose(N, [[0], [0], [1]], atol=1e-15)


def test_null_space_sign_rule():
    N = null_space_basis([[1.0, 1.0]])
    np.testing.assert_allclose(N[:, 0], np.array([1, -1]) / np.sqrt(2), atol=1e-15)
    np.testing.assert_allclose(np.array([[1.0, 1.0]]) @ N, 0, atol=1e-15)


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 12), st.integers(0, 2**31 - 1))
def test_null_space_random(rows, cols, rank, seed):
    rng = np.random.default_rng(seed)
    rank = min(rank, rows, cols)
    A = rng.standard_normal((rows, rank)) @ rng.standard_normal((rank, cols))
    N = null_space_basis(A)
    assert N.shape == (cols, cols - rank)
    assert np.linalg.norm(A @ N) <= 1e-8
    np.testing.assert_allclose(N.T @ N, np.eye(N.shape[1]), atol=1e-10)


def test_projection_empty_is_identity():
    np.testing.assert_array_equal(projection_matrix(np.zeros((3, 0))), np.eye(3))


def test_projection_coordinate():
    np.testing.assert_allclose(projection_matrix(np.array([[0.0], [0.0], [1.0]])), np.diag([1, 1, 0]))


@pytest.mark.parametrize("seed", range(5))
def test_projection_random_properties(seed):
    rng = np.random.default_rng(seed)
    N = random_orthonormal(rng, 5, 2)
    Q = projection_matrix(N)
    assert np.linalg.norm(Q @ Q - Q) <= 1e-10
    assert np.linalg.norm(Q @ N) <= 1e-10
    assert np.linalg.norm(Q - Q.T) <= 1e-12
    w = np.linalg.eigvalsh(Q)
    assert w.min() >= -1e-10 and w.max() <= 1 + 1e-10
    v = rng.standard_normal(5)
    v_perp = v - N @ (N.T @ v)
    np.testing.assert_allclose(Q @ v_perp, v_perp, atol=1e-12)


# -- finite differences ----------------------------------------------------------


def test_finite_diff_constant_and_first_step():
    M = np.arange(4.0).reshape(2, 2)
    np.testing.assert_array_equal(finite_diff_matrix(M, M, 0.1), np.zeros((2, 2)))
    np.testing.assert_array_equal(finite_diff_matrix(M, None, 0.1), np.zeros((2, 2)))


def test_finite_diff_linear_exact():
    t, dt = 2.0, 0.01
    D = finite_diff_matrix(t * np.eye(3), (t - dt) * np.eye(3), dt)
    np.testing.assert_allclose(D, np.eye(3), atol=1e-12)


def test_finite_diff_sine():
    E = np.zeros((2, 2))
    E[0, 0] = 1
    t, dt = 1.0, 1e-3
    D = finite_diff_matrix(np.sin(t) * E, np.sin(t - dt) * E, dt)
    assert abs(D[0, 0] - np.cos(1.0)) <= 1e-3
    assert np.count_nonzero(D) == 1


def test_finite_diff_shape_mismatch():
    with pytest.raises(ValueError):
        finite_diff_matrix(np.eye(2), np.eye(3), 0.1)
