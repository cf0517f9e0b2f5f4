"""Collapsing one valley of the configuration graph into a point.

The collapsed chain merges a chosen set of configurations into a single
state "o" whose outgoing rates are the measure-weighted averages of the
merged states' rates; its invariant measure keeps every other weight and
assigns the valley's total mass to o.  Conductances are additive under
the merge, and that linearity is what transfers flows, functions and
capacities between the two pictures:

* collapsing a flow can only shrink its norm, with equality exactly when
  the flow vanishes inside the valley and is conductance-proportional
  across each merged edge bundle;
* divergences transfer pointwise (the valley's total lands on o);
* induced flows of a function constant on the valley collapse to the
  induced flows of the collapsed function;
* capacities against the collapsed point equal capacities against the
  valley in the original chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix

from .configs import ConfigSpace
from .errors import (
    EmptyOrFullValley,
    NotConstantOnValley,
    SetsOverlapOrEmpty,
)
from .capacity import harmonic_solve, _validated_sets
from .flows import ConfigGraph, Flow
from .zrp import ZrpModel, stationary_vector


@dataclass
class CollapsedChain:
    """Configuration graph with one index set merged into a point.

    States: every original configuration outside the valley keeps its
    identity under ``new_index``; the collapsed point takes the largest
    new index.  Edge arrays mirror ConfigGraph (canonical i < j with both
    orientation conductances and the symmetrisation).
    """

    graph: ConfigGraph
    valley: np.ndarray
    new_index: np.ndarray          # original rank -> collapsed index (-1 inside)
    keep: np.ndarray               # original ranks kept, in new-index order
    point: int                     # index of o
    measure: np.ndarray
    edge_i: np.ndarray
    edge_j: np.ndarray
    cond_ij: np.ndarray
    cond_ji: np.ndarray
    cond_sym: np.ndarray
    n_states: int
    _edge_lookup: dict = field(repr=False, default_factory=dict)

    # -- potentials / capacities ------------------------------------------

    def generator_matrix(self, variant: str = "primal") -> csr_matrix:
        if variant == "primal":
            c_out, c_in = self.cond_ij, self.cond_ji
        elif variant == "adjoint":
            c_out, c_in = self.cond_ji, self.cond_ij
        elif variant == "symmetrized":
            c_out = c_in = self.cond_sym
        else:
            raise ValueError(f"unknown generator variant {variant!r}")
        mu = self.measure
        rows = np.concatenate([self.edge_i, self.edge_j,
                               self.edge_i, self.edge_j])
        cols = np.concatenate([self.edge_j, self.edge_i,
                               self.edge_i, self.edge_j])
        rate_ij = c_out / mu[self.edge_i]
        rate_ji = c_in / mu[self.edge_j]
        vals = np.concatenate([rate_ij, rate_ji, -rate_ij, -rate_ji])
        m = csr_matrix((vals, (rows, cols)),
                       shape=(self.n_states, self.n_states))
        m.sum_duplicates()
        return m

    def stationarity_residual(self) -> float:
        gen = self.generator_matrix()
        flow = self.measure @ gen
        return float(np.abs(flow).max() / self.measure.max())

    def equilibrium_potential(self, a_set, b_set,
                              variant: str = "primal") -> np.ndarray:
        a, b = _validated_sets(self.n_states, a_set, b_set)
        return harmonic_solve(self.generator_matrix(variant), a, b)

    def dirichlet_form(self, f) -> float:
        f = np.asarray(f, dtype=float)
        d = f[self.edge_i] - f[self.edge_j]
        return math.fsum(self.cond_sym * d * d)

    def capacity(self, a_set, b_set):
        """(cap, cap^s) between collapsed-index sets."""
        h = self.equilibrium_potential(a_set, b_set, "primal")
        h_sym = self.equilibrium_potential(a_set, b_set, "symmetrized")
        return self.dirichlet_form(h), self.dirichlet_form(h_sym)

    def hitting_probability(self, a_set, b_set) -> float:
        """P[o reaches A before B]; B empty means certainty."""
        a = np.unique(np.asarray(list(a_set), dtype=np.int64))
        b = np.unique(np.asarray(list(b_set), dtype=np.int64))
        if a.size == 0:
            raise SetsOverlapOrEmpty("target set empty")
        if b.size == 0:
            return 1.0
        h = self.equilibrium_potential(a, b, "primal")
        return float(h[self.point])

    # -- transfers ---------------------------------------------------------

    def collapse_flow(self, phi: Flow) -> "CollapsedFlow":
        if phi.graph is not self.graph:
            raise ValueError("flow lives on a different graph")
        inside = self.new_index[self.graph.edge_i] >= 0
        inside &= self.new_index[self.graph.edge_j] >= 0
        # both endpoints merged: edge disappears
        src = self.new_index[self.graph.edge_i].copy()
        dst = self.new_index[self.graph.edge_j].copy()
        src[src < 0] = self.point
        dst[dst < 0] = self.point
        vals = np.zeros(self.edge_i.size)
        for s, d, v in zip(src, dst, phi.values):
            if s == d:
                continue
            e, sign = self.edge_index(int(s), int(d))
            vals[e] += sign * v
        return CollapsedFlow(self, vals)

    def collapse_function(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        vals = f[self.valley]
        if vals.size and np.abs(vals - vals[0]).max() > 1e-12 * max(
                1.0, np.abs(vals).max()):
            raise NotConstantOnValley(
                "function varies across the collapsed set")
        out = np.empty(self.n_states)
        out[:self.point] = f[self.keep]
        out[self.point] = vals[0] if vals.size else 0.0
        return out

    def induced_flows(self, f):
        f = np.asarray(f, dtype=float)
        fi, fj = f[self.edge_i], f[self.edge_j]
        phi = CollapsedFlow(self, fi * self.cond_ij - fj * self.cond_ji)
        phi_adj = CollapsedFlow(self, fi * self.cond_ji - fj * self.cond_ij)
        psi = CollapsedFlow(self, self.cond_sym * (fi - fj))
        return phi, phi_adj, psi

    def edge_index(self, a: int, b: int):
        e = self._edge_lookup.get((a, b))
        if e is not None:
            return e, 1.0
        e = self._edge_lookup.get((b, a))
        if e is not None:
            return e, -1.0
        raise KeyError(f"({a}, {b}) not a collapsed edge")


@dataclass
class CollapsedFlow:
    """Antisymmetric edge function on a collapsed chain."""

    chain: CollapsedChain
    values: np.ndarray

    def norm_sq(self) -> float:
        return math.fsum(self.values ** 2 / self.chain.cond_sym)

    def inner(self, other: "CollapsedFlow") -> float:
        return math.fsum(self.values * other.values / self.chain.cond_sym)

    def divergence(self) -> np.ndarray:
        out = np.zeros(self.chain.n_states)
        np.add.at(out, self.chain.edge_i, self.values)
        np.subtract.at(out, self.chain.edge_j, self.values)
        return out

    def at(self, a: int, b: int) -> float:
        e, sign = self.chain.edge_index(a, b)
        return sign * float(self.values[e])


def collapse_chain(model: ZrpModel, space: ConfigSpace, valley,
                   graph: ConfigGraph | None = None) -> CollapsedChain:
    """Merge the valley's configurations into a single point."""
    graph = graph or ConfigGraph(model, space)
    valley = np.unique(np.asarray(list(valley), dtype=np.int64))
    if valley.size == 0 or valley.size >= space.size:
        raise EmptyOrFullValley(
            "collapse target must be a non-empty proper subset")
    inside = np.zeros(space.size, dtype=bool)
    inside[valley] = True
    keep = np.nonzero(~inside)[0]
    new_index = np.full(space.size, -1, dtype=np.int64)
    new_index[keep] = np.arange(keep.size)
    point = keep.size
    n_states = keep.size + 1

    mu = graph.mu
    measure = np.empty(n_states)
    measure[:point] = mu[keep]
    measure[point] = math.fsum(mu[valley])

    src = new_index[graph.edge_i].copy()
    dst = new_index[graph.edge_j].copy()
    src[src < 0] = point
    dst[dst < 0] = point
    alive = src != dst
    lo = np.minimum(src[alive], dst[alive])
    hi = np.maximum(src[alive], dst[alive])
    flip = src[alive] > dst[alive]
    c_fwd = np.where(flip, graph.cond_ji[alive], graph.cond_ij[alive])
    c_bwd = np.where(flip, graph.cond_ij[alive], graph.cond_ji[alive])
    c_sym = graph.cond_sym[alive]

    # merge parallel edges created by the collapse (conductance linearity)
    order = np.lexsort((hi, lo))
    lo, hi = lo[order], hi[order]
    c_fwd, c_bwd, c_sym = c_fwd[order], c_bwd[order], c_sym[order]
    newgrp = np.ones(lo.size, dtype=bool)
    newgrp[1:] = (lo[1:] != lo[:-1]) | (hi[1:] != hi[:-1])
    grp = np.cumsum(newgrp) - 1
    n_edges = int(grp[-1]) + 1 if lo.size else 0
    edge_i = lo[newgrp]
    edge_j = hi[newgrp]
    cond_ij = np.zeros(n_edges)
    cond_ji = np.zeros(n_edges)
    cond_sym = np.zeros(n_edges)
    np.add.at(cond_ij, grp, c_fwd)
    np.add.at(cond_ji, grp, c_bwd)
    np.add.at(cond_sym, grp, c_sym)

    lookup = {(int(a), int(b)): e
              for e, (a, b) in enumerate(zip(edge_i, edge_j))}
    return CollapsedChain(
        graph, valley, new_index, keep, point, measure,
        edge_i, edge_j, cond_ij, cond_ji, cond_sym, n_states, lookup)


def collapsed_capacity(chain: CollapsedChain, a_set, b_set):
    return chain.capacity(a_set, b_set)


def collapsed_hitting(chain: CollapsedChain, a_set, b_set) -> float:
    return chain.hitting_probability(a_set, b_set)


def norm_contraction_report(chain: CollapsedChain, phi: Flow) -> dict:
    """Norms on both sides plus the two equality conditions.

    Equality in ||collapsed phi|| <= ||phi|| needs (i) no flow inside the
    valley and (ii) flow/conductance constant across the edges each
    outside configuration sends into the valley.
    """
    from .flows import flow_norm_sq

    g = chain.graph
    ni = chain.new_index
    inside_edge = (ni[g.edge_i] < 0) & (ni[g.edge_j] < 0)
    internal_flow = float(np.abs(phi.values[inside_edge]).max(initial=0.0))
    # proportionality across bundles: group valley-incident edges by the
    # outside endpoint
    touches = (ni[g.edge_i] < 0) ^ (ni[g.edge_j] < 0)
    ratios = {}
    worst_spread = 0.0
    for e in np.nonzero(touches)[0]:
        i, j = g.edge_i[e], g.edge_j[e]
        outside = int(i if ni[i] >= 0 else j)
        sign = 1.0 if ni[i] >= 0 else -1.0     # orient outside -> valley
        ratios.setdefault(outside, []).append(
            sign * phi.values[e] / g.cond_sym[e])
    for vals in ratios.values():
        if len(vals) > 1:
            worst_spread = max(worst_spread, max(vals) - min(vals))
    return {
        "norm_sq": flow_norm_sq(phi),
        "collapsed_norm_sq": chain.collapse_flow(phi).norm_sq(),
        "internal_flow": internal_flow,
        "bundle_spread": worst_spread,
    }
