import numpy as np
import pytest
from numpy.testing import assert_allclose

from zrpflow.capacity import (
    dt_optimizers,
    generalized_lower_bound,
    generalized_upper_bound,
    sector_check,
    solve_potentials,
    zrp_capacity,
    zrp_equilibrium_potential,
)
from zrpflow.errors import (
    BoundaryConditionViolated,
    SetsOverlapOrEmpty,
)
from zrpflow.flows import ConfigGraph, Flow
from zrpflow.zrp import config_space


@pytest.fixture(scope="module")
def apex_sets(space_c):
    return [space_c.index_of([2, 0])], [space_c.index_of([0, 2])]


@pytest.fixture(scope="module")
def sol_c(model_a, space_c, apex_sets):
    return solve_potentials(model_a, space_c, *apex_sets)


@pytest.fixture(scope="module")
def nonrev_setup(model_b):
    space = config_space(4, 3)
    a_set = [space.index_of([4, 0, 0])]
    b_set = [space.index_of([0, 4, 0])]
    return space, a_set, b_set


def test_potential_one_interior_unknown(model_a, space_c, apex_sets):
    h = zrp_equilibrium_potential(model_a, space_c, *apex_sets)
    assert_allclose(h, [1.0, 0.5, 0.0], rtol=1e-14)


def test_potential_no_interior(model_a, space_c, apex_sets):
    a, b = apex_sets
    h = zrp_equilibrium_potential(
        model_a, space_c, a + [space_c.index_of([1, 1])], b)
    assert_allclose(h, [1.0, 1.0, 0.0])


def test_potential_complement(model_a, space_c, apex_sets):
    a, b = apex_sets
    h = zrp_equilibrium_potential(model_a, space_c, a, b)
    h_rev = zrp_equilibrium_potential(model_a, space_c, b, a)
    assert_allclose(h + h_rev, np.ones(3), atol=1e-14)


def test_potential_bad_sets(model_a, space_c):
    with pytest.raises(SetsOverlapOrEmpty):
        zrp_equilibrium_potential(model_a, space_c, [0], [0, 1])
    with pytest.raises(SetsOverlapOrEmpty):
        zrp_equilibrium_potential(model_a, space_c, [], [1])


def test_capacity_small(sol_c):
    assert_allclose(sol_c.cap, 0.4, rtol=1e-13)
    assert_allclose(sol_c.cap_adjoint, 0.4, rtol=1e-13)
    assert_allclose(sol_c.cap_symmetrized, 0.4, rtol=1e-13)
    assert sol_c.flux_residual <= 1e-12


def test_capacity_nonreversible(model_b, nonrev_setup):
    space, a_set, b_set = nonrev_setup
    cap, cap_adj, cap_sym = zrp_capacity(model_b, space, a_set, b_set)
    assert_allclose(cap, cap_adj, rtol=1e-10)
    assert cap_sym <= cap * (1 + 1e-12)
    assert cap_sym > 0


def test_capacity_monotone_in_sets(model_d):
    # enlarging the source set can only increase the capacity
    space = config_space(6, 3)
    target = [space.index_of([0, 6, 0])]
    single = [space.index_of([6, 0, 0])]
    bigger = single + [space.index_of([5, 1, 0]), space.index_of([5, 0, 1])]
    cap_small = zrp_capacity(model_d, space, single, target)[0]
    cap_big = zrp_capacity(model_d, space, bigger, target)[0]
    assert cap_big >= cap_small * (1 - 1e-12)


def test_sector_constant_reversible(model_a, space_c):
    c0 = sector_check(model_a, space_c, trials=200, seed=5)
    assert c0 <= 1 + 1e-10


def test_sector_constant_identity_pair(model_b, nonrev_setup, rng):
    from zrpflow.zrp import MoveTable, zrp_dirichlet_form, zrp_generator_apply

    space, _, _ = nonrev_setup
    moves = MoveTable(model_b, space)
    f = rng.standard_normal(space.size)
    df = zrp_dirichlet_form(model_b, space, f, moves=moves)
    lf = zrp_generator_apply(model_b, space, f, "primal", moves)
    ratio = float(np.sum(moves.mu * f * lf)) ** 2 / df ** 2
    assert_allclose(ratio, 1.0, rtol=1e-11)


def test_sector_constant_nonreversible_stable(model_b, nonrev_setup):
    space, _, _ = nonrev_setup
    c1 = sector_check(model_b, space, trials=1000, seed=11)
    c2 = sector_check(model_b, space, trials=1000, seed=12)
    assert np.isfinite(c1) and c1 >= 1.0 - 1e-12
    assert abs(c1 - c2) <= 0.2 * max(c1, c2)
    # bracket: cap^s <= cap <= C0 cap^s for a sampled pair
    a_set = [space.index_of([4, 0, 0])]
    b_set = [space.index_of([0, 0, 4])]
    cap, _, cap_sym = zrp_capacity(model_b, space, a_set, b_set)
    assert cap_sym <= cap * (1 + 1e-12)
    assert cap <= max(c1, c2) * cap_sym * 1.5


def test_dt_optimizers_reversible(model_a, space_c, apex_sets, sol_c):
    graph = ConfigGraph(model_a, space_c)
    rep = dt_optimizers(model_a, space_c, *apex_sets, graph=graph, sol=sol_c)
    assert_allclose(rep.upper_value, 0.4, rtol=1e-12)
    assert_allclose(rep.lower_value, 2.5, rtol=1e-12)
    assert rep.phi0_interior_div <= 1e-13
    assert abs(rep.phi0_strength) <= 1e-13
    assert rep.psi0_interior_div <= 1e-12
    assert_allclose(rep.psi0_strength, 1.0, rtol=1e-12)


def test_dt_optimizers_nonreversible(model_b, nonrev_setup):
    space, a_set, b_set = nonrev_setup
    rep = dt_optimizers(model_b, space, a_set, b_set)
    assert_allclose(rep.upper_value, rep.cap, rtol=1e-9)
    assert_allclose(rep.lower_value, 1.0 / rep.cap, rtol=1e-9)
    assert rep.phi0_interior_div <= 1e-10
    assert abs(rep.phi0_strength) <= 1e-10 * rep.cap
    assert rep.psi0_interior_div <= 1e-9
    assert_allclose(rep.psi0_strength, 1.0, rtol=1e-9)


def test_generalized_bounds_at_optimizers(model_b, nonrev_setup):
    space, a_set, b_set = nonrev_setup
    sol = solve_potentials(model_b, space, a_set, b_set)
    graph = ConfigGraph(model_b, space)
    phi_hadj, _, _ = graph.induced_flows(sol.h_adjoint)
    _, phi_adj_h, _ = graph.induced_flows(sol.h)
    f0 = 0.5 * (sol.h + sol.h_adjoint)
    phi0 = 0.5 * (phi_hadj - phi_adj_h)
    ub = generalized_upper_bound(model_b, space, a_set, b_set, f0, phi0,
                                 sol=sol, graph=graph)
    assert_allclose(ub, sol.cap, rtol=1e-9)
    g0 = (sol.h_adjoint - sol.h) / (2 * sol.cap)
    psi0 = (1.0 / (2 * sol.cap)) * (phi_hadj + phi_adj_h)
    lb, degenerate = generalized_lower_bound(
        model_b, space, a_set, b_set, g0, psi0, sol=sol, graph=graph)
    assert not degenerate
    assert_allclose(lb, sol.cap, rtol=1e-9)


def test_plain_potential_bound(model_a, space_c, apex_sets, sol_c):
    # phi = 0 and f = h recovers the capacity from the Dirichlet side
    graph = ConfigGraph(model_a, space_c)
    ub = generalized_upper_bound(model_a, space_c, *apex_sets, sol_c.h,
                                 graph.zero_flow(), sol=sol_c, graph=graph)
    assert_allclose(ub, 0.4, rtol=1e-12)


def test_zero_flow_lower_bound_flagged(model_a, space_c, apex_sets, sol_c):
    graph = ConfigGraph(model_a, space_c)
    lb, degenerate = generalized_lower_bound(
        model_a, space_c, *apex_sets, np.zeros(space_c.size),
        graph.zero_flow(), sol=sol_c, graph=graph)
    assert degenerate and lb == 0.0


def test_scaled_flow_is_suboptimal(model_a, space_c, apex_sets, sol_c):
    graph = ConfigGraph(model_a, space_c)
    _, _, psi = graph.induced_flows(sol_c.h)
    psi_scaled = (1.1 / sol_c.cap) * psi
    lb, degenerate = generalized_lower_bound(
        model_a, space_c, *apex_sets, np.zeros(space_c.size), psi_scaled,
        sol=sol_c, graph=graph)
    assert not degenerate
    assert lb < 0.4


def test_bounds_bracket_random_pairs(model_b, nonrev_setup, rng):
    space, a_set, b_set = nonrev_setup
    sol = solve_potentials(model_b, space, a_set, b_set)
    graph = ConfigGraph(model_b, space)
    phi_hadj, _, _ = graph.induced_flows(sol.h_adjoint)
    _, phi_adj_h, _ = graph.induced_flows(sol.h)
    f0 = 0.5 * (sol.h + sol.h_adjoint)
    phi0 = 0.5 * (phi_hadj - phi_adj_h)
    g0 = (sol.h_adjoint - sol.h) / (2 * sol.cap)
    psi0 = (1.0 / (2 * sol.cap)) * (phi_hadj + phi_adj_h)
    interior = np.ones(space.size, dtype=bool)
    interior[a_set + b_set] = False
    for scale in (0.0, 1e-3, 0.1, 1.0):
        for _ in range(13):
            f = f0.copy()
            f[interior] += scale * rng.standard_normal(interior.sum())
            phi = phi0 + Flow(
                graph,
                scale * rng.standard_normal(graph.n_edges) * graph.cond_sym)
            ub = generalized_upper_bound(
                model_b, space, a_set, b_set, f, phi, sol=sol, graph=graph)
            assert ub >= sol.cap * (1 - 1e-9)
            g = g0.copy()
            g[interior] += scale * rng.standard_normal(interior.sum())
            psi = psi0 + Flow(
                graph,
                scale * rng.standard_normal(graph.n_edges) * graph.cond_sym)
            lb, _ = generalized_lower_bound(
                model_b, space, a_set, b_set, g, psi, sol=sol, graph=graph)
            assert lb <= sol.cap * (1 + 1e-9)


def test_boundary_violations_rejected(model_a, space_c, apex_sets):
    graph = ConfigGraph(model_a, space_c)
    with pytest.raises(BoundaryConditionViolated):
        generalized_upper_bound(model_a, space_c, *apex_sets,
                                np.zeros(3), graph.zero_flow())
    with pytest.raises(BoundaryConditionViolated):
        generalized_lower_bound(model_a, space_c, *apex_sets,
                                np.ones(3), graph.zero_flow())
