import csv
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from zrpflow.errors import EdgeOutsideGraph
from zrpflow.flows import (
    ConfigGraph,
    Flow,
    flow_identity_suite,
    flow_inner,
    flow_norm_sq,
)
from zrpflow.zrp import config_space

H_POTENTIAL = np.array([1.0, 0.5, 0.0])


@pytest.fixture(scope="module")
def graph_c(model_a, space_c):
    return ConfigGraph(model_a, space_c)


@pytest.fixture(scope="module")
def graph_b3(model_b):
    return ConfigGraph(model_b, config_space(2, 3))


def test_conductance_values(graph_c, space_c):
    i20 = space_c.index_of([2, 0])
    i11 = space_c.index_of([1, 1])
    assert_allclose(graph_c.conductance(i20, i11), 0.8, rtol=1e-14)
    assert_allclose(graph_c.conductance(i11, i20), 0.8, rtol=1e-14)
    assert_allclose(graph_c.conductance_sym(i20, i11), 0.8, rtol=1e-14)


def test_conductance_positive_and_symmetric(graph_b3):
    assert np.all(graph_b3.cond_sym > 0)
    # adjoint conductance of one orientation equals the reverse conductance
    assert_allclose(
        0.5 * (graph_b3.cond_ij + graph_b3.cond_ji), graph_b3.cond_sym,
        rtol=1e-12)


def test_conductance_removal_formula(graph_c, graph_b3):
    assert graph_c.verify_conductance_formulas(config_space(1, 2)) <= 1e-12
    assert graph_b3.verify_conductance_formulas(config_space(1, 3)) <= 1e-12


def test_edge_addressing(graph_c, space_c):
    i20 = space_c.index_of([2, 0])
    i02 = space_c.index_of([0, 2])
    with pytest.raises(EdgeOutsideGraph):
        graph_c.edge_index(i20, i02)    # two hops apart


def test_induced_flow_values(graph_c, space_c):
    _, _, psi = graph_c.induced_flows(H_POTENTIAL)
    i20 = space_c.index_of([2, 0])
    i11 = space_c.index_of([1, 1])
    assert_allclose(psi.at(i20, i11), 0.4, rtol=1e-14)
    assert_allclose(psi.at(i11, i20), -0.4, rtol=1e-14)
    assert_allclose(flow_norm_sq(psi), 0.4, rtol=1e-14)


def test_reversible_collapse(graph_c):
    # on a reversible space Phi_f of the potential equals Psi_f
    phi, phi_adj, psi = graph_c.induced_flows(H_POTENTIAL)
    assert_allclose(phi.values, psi.values, atol=1e-15)
    assert_allclose(phi_adj.values, psi.values, atol=1e-15)


def test_constant_function_flows(graph_b3):
    phi, _, psi = graph_b3.induced_flows(np.full(graph_b3.space.size, 2.0))
    assert_allclose(psi.values, 0.0, atol=1e-15)
    expected = 2.0 * (graph_b3.cond_ij - graph_b3.cond_ji)
    assert_allclose(phi.values, expected, rtol=1e-14)


def test_nonreversible_flows_differ(graph_b3):
    f = np.zeros(graph_b3.space.size)
    f[graph_b3.space.index_of([2, 0, 0])] = 1.0
    phi, _, psi = graph_b3.induced_flows(f)
    assert np.abs(phi.values - psi.values).max() > 1e-3


def test_psi_is_mean_of_induced(graph_b3, rng):
    f = rng.standard_normal(graph_b3.space.size)
    phi, phi_adj, psi = graph_b3.induced_flows(f)
    assert np.abs(0.5 * (phi + phi_adj).values - psi.values).max() <= 1e-14


def test_inner_product_axioms(graph_b3, rng):
    a = Flow(graph_b3, rng.standard_normal(graph_b3.n_edges))
    b = Flow(graph_b3, rng.standard_normal(graph_b3.n_edges))
    assert_allclose(flow_inner(a, b), flow_inner(b, a), rtol=1e-12)
    assert flow_norm_sq(a) > 0
    assert flow_norm_sq(graph_b3.zero_flow()) == 0.0
    lin = flow_inner(a + 2.0 * b, b)
    assert_allclose(lin, flow_inner(a, b) + 2 * flow_norm_sq(b), rtol=1e-11)


def test_divergence(graph_c, space_c):
    _, _, psi = graph_c.induced_flows(H_POTENTIAL)
    div = psi.divergence()
    assert_allclose(div[space_c.index_of([1, 1])], 0.0, atol=1e-15)
    assert_allclose(div[space_c.index_of([2, 0])], 0.4, rtol=1e-14)
    assert abs(math.fsum(div)) <= 1e-15
    assert_allclose(psi.divergence_at(space_c.index_of([2, 0])), 0.4)
    assert_allclose(psi.divergence_set(range(space_c.size)), 0.0, atol=1e-15)


def test_global_divergence_vanishes(graph_b3, rng):
    phi = Flow(graph_b3, rng.standard_normal(graph_b3.n_edges))
    total = math.fsum(phi.divergence())
    assert abs(total) <= 1e-12 * np.abs(phi.values).sum()


def test_flow_from_pairs(graph_c, space_c):
    i20 = space_c.index_of([2, 0])
    i11 = space_c.index_of([1, 1])
    phi = graph_c.flow_from_pairs([(i11, i20, 1.5), (i20, i11, 0.25)])
    assert_allclose(phi.at(i11, i20), 1.25)
    assert_allclose(phi.at(i20, i11), -1.25)


def test_identity_suite_small(model_a, space_c):
    report = flow_identity_suite(model_a, space_c, trials=20, seed=1)
    assert report["max"] <= 1e-12


def test_identity_suite_nonreversible(model_b):
    space = config_space(5, 3)
    report = flow_identity_suite(model_b, space, trials=10, seed=2)
    assert report["max"] <= 1e-10


def test_identity_suite_mixed_masses(model_d):
    space = config_space(6, 3)
    report = flow_identity_suite(model_d, space, trials=10, seed=3)
    assert report["max"] <= 1e-10


def test_potential_flows_divergence_free_off_sets(model_d):
    # the adjoint-potential flow Phi_{h*} and Phi*_h have zero divergence
    # away from the source/target sets
    from zrpflow.capacity import zrp_equilibrium_potential

    space = config_space(6, 3)
    graph = ConfigGraph(model_d, space)
    a_set = [space.index_of([6, 0, 0])]
    b_set = [space.index_of([0, 6, 0])]
    h = zrp_equilibrium_potential(model_d, space, a_set, b_set, "primal")
    h_adj = zrp_equilibrium_potential(model_d, space, a_set, b_set, "adjoint")
    phi_hadj, _, _ = graph.induced_flows(h_adj)
    _, phi_adj_h, _ = graph.induced_flows(h)
    interior = np.ones(space.size, dtype=bool)
    interior[a_set + b_set] = False
    scale = np.abs(phi_hadj.values).max()
    assert np.abs(phi_hadj.divergence()[interior]).max() <= 1e-12 * scale
    assert np.abs(phi_adj_h.divergence()[interior]).max() <= 1e-12 * scale


def test_csv_snapshot(tmp_path, graph_c):
    _, _, psi = graph_c.induced_flows(H_POTENTIAL)
    path = tmp_path / "flow.csv"
    psi.to_csv(path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["eta_rank", "zeta_rank", "value"]
    assert len(rows) == 1 + graph_c.n_edges
