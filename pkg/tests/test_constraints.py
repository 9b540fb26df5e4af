import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccbf.constraints import (
    ConstraintSpec,
    CorridorGeometry,
    FfCbfParams,
    build_constraint_set,
    corridor_cbf,
    ff_collision_cbf,
    speed_cbf,
)
from ccbf.dynamics import VehicleParams, control_matrix, drift, make_state, planar_velocity
from oracles import central_diff, near_tau_clamp

VEH = VehicleParams(l_r=0.5, l_f=0.5, radius=0.25)
GEOM = CorridorGeometry.oriented(0.1, 2.0, -0.05, -2.0, interior=(0.0, 0.0))
FF = FfCbfParams(T=3.0, eps_ff=0.5, R=0.25)


def random_state(rng, spread=4.0):
    return make_state(
        rng.uniform(-spread, spread), rng.uniform(-spread, spread),
        rng.uniform(-np.pi, np.pi), rng.uniform(-1.0, 1.0), rng.uniform(-0.5, 2.0),
    )


def assert_lie_consistent(ev, states, vehicles):
    lf = sum(g @ drift(z, p) for g, z, p in zip(ev.grads, states, vehicles))
    assert ev.lf == pytest.approx(lf, abs=1e-10)
    for g, lg in zip(ev.grads, ev.lg_rows):
        np.testing.assert_allclose(lg, g @ control_matrix(), atol=1e-10)


# -- speed ------------------------------------------------------------------------


def test_speed_at_rest():
    assert speed_cbf(make_state(v=0.0), 1.0, VEH).h == 1.0


def test_speed_boundary():
    assert speed_cbf(make_state(v=1.3), 1.3, VEH).h == 0.0


def test_speed_violated_row():
    ev = speed_cbf(make_state(v=2.0), 1.0, VEH)
    assert ev.h == -1.0
    np.testing.assert_array_equal(ev.lg_rows[0], [-1, 0])
    assert ev.lf == 0.0
    np.testing.assert_array_equal(ev.grads[0], [0, 0, 0, 0, -1])


# -- corridor ---------------------------------------------------------------------


def test_corridor_on_wall_at_rest():
    geom = CorridorGeometry(0.0, 1.0, 0.0, -1.0)
    assert corridor_cbf(make_state(x=3.0, y=1.0), geom, VEH).h == 0.0


def test_corridor_static_product():
    geom = CorridorGeometry(0.0, 2.0, 0.0, 3.0)
    # at the origin: residual_L = 2, residual_R = 3
    assert corridor_cbf(make_state(), geom, VEH).h == 6.0


def test_corridor_orientation():
    geom = CorridorGeometry.oriented(0.0, 1.0, 0.0, -1.0, interior=(0.0, 0.0))
    assert geom.sign == -1.0
    assert corridor_cbf(make_state(), geom, VEH).h == pytest.approx(1.0)
    with pytest.raises(ValueError):
        CorridorGeometry.oriented(0.0, 1.0, 0.0, -1.0, interior=(0.0, 1.0))
    with pytest.raises(ValueError):
        CorridorGeometry(0.0, 1.0, 0.0, 1.0)


@pytest.mark.parametrize("seed", range(10))
def test_corridor_gradient_fd(seed):
    rng = np.random.default_rng(seed)
    z = random_state(rng)
    ev = corridor_cbf(z, GEOM, VEH)
    fd = central_diff(lambda s: corridor_cbf(s, GEOM, VEH).h, z)
    np.testing.assert_allclose(ev.grads[0], fd, rtol=1e-5, atol=1e-6 * (1 + abs(ev.h)))
    assert_lie_consistent(ev, [z], [VEH])


# -- future-focused collision -----------------------------------------------------


def test_ff_static_boundary():
    zi = make_state(0.0, 0.0)
    zj = make_state(2 * FF.R, 0.0)
    assert ff_collision_cbf(zi, zj, FF, VEH, VEH).h == pytest.approx(0.0, abs=1e-15)


def test_ff_static_far_apart():
    ff = FfCbfParams(T=3.0, eps_ff=1.0, R=0.5)
    ev = ff_collision_cbf(make_state(10.0, 0.0), make_state(0.0, 0.0), ff, VEH, VEH)
    assert ev.h == pytest.approx(198.0)
    assert ev.tau == 0.0


def test_ff_head_on_against_grid_search():
    ff = FfCbfParams(T=10.0, eps_ff=0.5, R=0.25)
    zi = make_state(4.0, 0.0)
    zj = make_state(0.0, 0.0, psi=0.0, v=1.0)  # dv = vi - vj = (-1, 0)
    ev = ff_collision_cbf(zi, zj, ff, VEH, VEH)
    dp = np.array([4.0, 0.0])
    dv = np.array([-1.0, 0.0])
    grid = np.arange(0.0, ff.T + 1e-12, 1e-4)
    dist = np.linalg.norm(dp[None, :] + grid[:, None] * dv[None, :], axis=1)
    assert ev.tau == pytest.approx(grid[np.argmin(dist)], abs=1e-4)
    assert ev.tau == pytest.approx(4.0)
    assert ev.h == pytest.approx(0.5 * 16 - 1.5 * 0.25)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_ff_tau_bounds_and_symmetry(seed):
    rng = np.random.default_rng(seed)
    zi, zj = random_state(rng), random_state(rng)
    ev = ff_collision_cbf(zi, zj, FF, VEH, VEH)
    rev = ff_collision_cbf(zj, zi, FF, VEH, VEH)
    assert 0.0 <= ev.tau <= FF.T
    assert ev.h == pytest.approx(rev.h, rel=1e-12, abs=1e-12)
    # tau agrees with a grid search over [0, T]
    dp = zi[:2] - zj[:2]
    dv = planar_velocity(zi) - planar_velocity(zj)
    grid = np.linspace(0.0, FF.T, 30001)
    d2 = np.sum((dp[None, :] + grid[:, None] * dv[None, :]) ** 2, axis=1)
    fut = dp + ev.tau * dv
    assert fut @ fut <= d2.min() + 1e-6 * (1 + d2.min())


@pytest.mark.parametrize("seed", range(20))
def test_ff_gradient_fd(seed):
    rng = np.random.default_rng(100 + seed)
    zi, zj = random_state(rng, 2.0), random_state(rng, 2.0)
    ev = ff_collision_cbf(zi, zj, FF, VEH, VEH)
    fi = central_diff(lambda s: ff_collision_cbf(s, zj, FF, VEH, VEH).h, zi)
    fj = central_diff(lambda s: ff_collision_cbf(zi, s, FF, VEH, VEH).h, zj)
    if near_tau_clamp(zi, zj, FF.T):
        pytest.skip("clamp boundary")
    scale = 1 + abs(ev.h)
    np.testing.assert_allclose(ev.grads[0], fi, rtol=1e-4, atol=1e-5 * scale)
    np.testing.assert_allclose(ev.grads[1], fj, rtol=1e-4, atol=1e-5 * scale)
    assert_lie_consistent(ev, [zi, zj], [VEH, VEH])


# -- constraint sets --------------------------------------------------------------


def test_warehouse_count():
    rng = np.random.default_rng(0)
    states = [random_state(rng) for _ in range(9)]
    evs = build_constraint_set(1, states, [VEH] * 9, ConstraintSpec(1.0, GEOM, FF))
    assert len(evs) == 10
    assert [e.name for e in evs] == ["speed", "corridor"] + [f"collision:{j}" for j in (0, 2, 3, 4, 5, 6, 7, 8)]


def test_alone_with_corridor():
    evs = build_constraint_set(0, [make_state()], [VEH], ConstraintSpec(1.0, GEOM, FF))
    assert [e.name for e in evs] == ["speed", "corridor"]


def test_pair_without_corridor():
    states = [make_state(), make_state(3.0)]
    for i in range(2):
        evs = build_constraint_set(i, states, [VEH] * 2, ConstraintSpec(1.0, None, FF))
        assert len(evs) == 2


def test_lg_full_places_slices():
    states = [make_state(v=1.0), make_state(2.0, 0.5, v=1.0, psi=np.pi)]
    ev = ff_collision_cbf(states[0], states[1], FF, VEH, VEH, 0, 1)
    row = ev.lg_full(3)
    np.testing.assert_array_equal(row[:2], ev.lg_rows[0])
    np.testing.assert_array_equal(row[2:4], ev.lg_rows[1])
    np.testing.assert_array_equal(row[4:], 0)
