import numpy as np
import pytest

from kfpspec.fullop import GridSpec, l2_norm, random_smooth_states
from kfpspec.hermite import HermiteTruncation
from kfpspec.semigroup import (
    EvolutionPlan,
    commutation_check,
    commutation_table,
    evolve,
    projection_sum_bound,
    projection_sum_rhs,
    semigroup_blocks,
    semigroup_power_norms,
    smoothing_integral,
    x1_coefficient_order,
)


@pytest.fixture(scope="module")
def plan():
    return EvolutionPlan(GridSpec.symmetric(32.0, 256), HermiteTruncation(64))


def test_blocks_methods_agree():
    xi = np.array([0.0, 0.7, -1.3])
    a = semigroup_blocks(1.5, xi, 16)
    b = semigroup_blocks(1.5, xi, 16, method="eigen")
    assert np.max(np.abs(a - b)) < 1e-9


def test_semigroup_property(plan):
    u = random_smooth_states(1, seed=4)[0](plan.grid, plan.trunc.N)
    a = evolve(0.7, evolve(0.4, u, plan), plan)
    b = evolve(1.1, u, plan)
    assert l2_norm(a - b, plan.grid) < 1e-12 * l2_norm(b, plan.grid)


def test_contraction(plan):
    # exp(-t P0) is a contraction on L2
    for xi in (0.0, 1.0, 3.0):
        E = semigroup_blocks(2.0, np.array([xi]), 24)[0]
        assert np.linalg.norm(E, 2) <= 1 + 1e-12


def test_time_range(plan):
    with pytest.raises(ValueError):
        evolve(11.0, np.zeros((plan.grid.M, plan.trunc.N)), plan)
    with pytest.raises(ValueError):
        EvolutionPlan(plan.grid, plan.trunc, times=(1.0, 0.5))


@pytest.mark.parametrize("obs", ["v", "d_v", "x"])
def test_commutation_identities(plan, obs):
    states = random_smooth_states(2, seed=1)
    for t, s in [(1.0, 0.0), (1.0, 0.5), (2.5, 1.2), (3.0, 3.0)]:
        assert commutation_check(t, s, obs, states, plan) < 1e-10


def test_commutation_detects_wrong_sign(plan):
    # a perturbed transport rule must not pass: compare against plain x (no transport)
    u = random_smooth_states(1, seed=2)[0](plan.grid, plan.trunc.N)
    s, t = 1.0, 2.0
    lhs = evolve(t - s, plan.grid.x[:, None] * evolve(s, u, plan), plan)
    rhs = evolve(t, plan.grid.x[:, None] * u, plan)
    assert l2_norm(lhs - rhs, plan.grid) > 1e-3 * l2_norm(lhs, plan.grid)


def test_commutation_table_rows(plan):
    rows = commutation_table([(1.0, 0.5)], plan)
    assert [r[2] for r in rows] == ["v", "d_v", "x"]
    assert all(r[3] < 1e-10 for r in rows)


def test_x1_order_cubic():
    assert x1_coefficient_order(np.logspace(-3, -1, 12)) == pytest.approx(3.0, abs=0.01)


def test_smoothing_requires_certificate():
    tr = HermiteTruncation(16)
    with pytest.raises(ValueError):
        smoothing_integral(lambda t: t * t, 1, 4.0, tr, [0.0])
    with pytest.raises(ValueError):
        smoothing_integral(lambda t: t, 1, 4.0, tr, [0.0], vanishing_order=1)
    with pytest.raises(ValueError):
        smoothing_integral(lambda t: 1.0, 0, 3.0, tr, [0.0], vanishing_order=0)


def test_smoothing_k0_constant_theta():
    # (A+1) int_0^T e^{-tA} dt at xi = 0 is diagonal with max entry 1 - e^{-T} + T at l = 0
    tr = HermiteTruncation(16)
    val = smoothing_integral(lambda t: 1.0, 0, 4.0, tr, [0.0], vanishing_order=0)
    assert val == pytest.approx(4.0, rel=1e-3)


def test_smoothing_stable_in_N():
    theta = lambda t: t * t
    xi = [0.0, 0.5, 1.0, 2.0]
    a = smoothing_integral(theta, 1, 4.0, HermiteTruncation(24), xi, vanishing_order=2)
    b = smoothing_integral(theta, 1, 4.0, HermiteTruncation(32), xi, vanishing_order=2)
    assert np.isfinite(a) and abs(a - b) < 1e-6 * b


def test_power_norms_decay_in_xi():
    tr = HermiteTruncation(48)
    n = semigroup_power_norms(4.0, 2, [1.0, 2.0], tr)
    assert n[1] < n[0]


def test_projection_sum_rhs_limit():
    assert projection_sum_rhs(1.0, 0.0) == pytest.approx(1.0 / (1 - np.exp(-1.0)))


@pytest.mark.parametrize("xi", [0.5, 1.5])
def test_projection_sum_bound_holds(xi):
    ps = projection_sum_bound(1.0, xi, 16, HermiteTruncation(48))
    lhs, rhs = ps
    assert lhs <= rhs * (1 + 1e-10)
    assert ps.truncation_error < 1e-6


def test_projection_sum_requires_L_below_half_N():
    with pytest.raises(ValueError):
        projection_sum_bound(1.0, 0.5, 20, HermiteTruncation(32))
