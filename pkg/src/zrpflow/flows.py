"""Flow calculus on the configuration graph.

Configurations eta, zeta are adjacent when zeta arises from eta by one
particle hop along a site pair with r(x,y) + r(y,x) > 0.  Each undirected
edge carries the conductances of its two orientations,

    c(eta, sigma_{xy} eta) = mu(eta) g(eta_x) r(x, y),

whose symmetrisation c^s is positive on every edge.  A flow is an
antisymmetric edge function; it is stored as one value per undirected
edge on the canonical orientation (lower rank -> higher rank), which
makes antisymmetry structural.  The inner product weights flow products
by 1/c^s, divergence is the signed edge sum at a configuration, and a
function f induces the three standard flows Phi_f, Phi*_f and
Psi_f = (Phi_f + Phi*_f)/2.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .configs import ConfigSpace
from .errors import EdgeOutsideGraph
from .zrp import ZrpModel, removal_coefficient, stationary_vector


class ConfigGraph:
    """Edge arrays of the configuration graph for one (model, space).

    Attributes
    ----------
    edge_i, edge_j : int64 arrays, canonical endpoints (rank i < rank j)
    move_x, move_y : the site pair with sigma_{xy}(eta_i) = eta_j
    cond_ij, cond_ji : conductances of the two orientations
    cond_sym : symmetrised conductance (positive)
    """

    def __init__(self, model: ZrpModel, space: ConfigSpace):
        self.model = model
        self.space = space
        self.mu = stationary_vector(model, space)
        occ = space.occupations
        rates = model.walk.rates
        rates_adj = model.walk_adjoint.rates
        n = model.n_sites
        ii, jj, xx, yy = [], [], [], []
        for x in range(n):
            for y in range(x + 1, n):
                if rates[x, y] + rates[y, x] == 0.0:
                    continue
                movable = np.nonzero(occ[:, x] >= 1)[0]
                nxt = occ[movable].copy()
                nxt[:, x] -= 1
                nxt[:, y] += 1
                tgt = space.rank_many(nxt)
                # canonical orientation: keep each undirected edge once,
                # recorded as the (x -> y) move from its source
                ii.append(movable)
                jj.append(tgt)
                xx.append(np.full(movable.size, x, dtype=np.int64))
                yy.append(np.full(movable.size, y, dtype=np.int64))
        src = np.concatenate(ii) if ii else np.empty(0, dtype=np.int64)
        dst = np.concatenate(jj) if jj else np.empty(0, dtype=np.int64)
        self.move_x = np.concatenate(xx) if xx else np.empty(0, dtype=np.int64)
        self.move_y = np.concatenate(yy) if yy else np.empty(0, dtype=np.int64)
        self.edge_i = src
        self.edge_j = dst
        g_i = model.g_of(occ[src, self.move_x])
        g_j = model.g_of(occ[dst, self.move_y])
        self.cond_ij = self.mu[src] * g_i * rates[self.move_x, self.move_y]
        self.cond_ji = self.mu[dst] * g_j * rates[self.move_y, self.move_x]
        cond_ij_adj = self.mu[src] * g_i * rates_adj[self.move_x, self.move_y]
        self.cond_sym = 0.5 * (self.cond_ij + cond_ij_adj)
        self.n_edges = src.size
        self._edge_lookup = {
            (int(a), int(b)): e for e, (a, b) in enumerate(zip(src, dst))}

    # -- addressing -------------------------------------------------------

    def edge_index(self, rank_a: int, rank_b: int):
        """(edge id, sign) for the directed pair (rank_a, rank_b)."""
        e = self._edge_lookup.get((rank_a, rank_b))
        if e is not None:
            return e, 1.0
        e = self._edge_lookup.get((rank_b, rank_a))
        if e is not None:
            return e, -1.0
        raise EdgeOutsideGraph(f"({rank_a}, {rank_b}) is not an edge")

    def conductance(self, rank_a: int, rank_b: int) -> float:
        e, sign = self.edge_index(rank_a, rank_b)
        return float(self.cond_ij[e] if sign > 0 else self.cond_ji[e])

    def conductance_sym(self, rank_a: int, rank_b: int) -> float:
        e, _ = self.edge_index(rank_a, rank_b)
        return float(self.cond_sym[e])

    # -- flows ------------------------------------------------------------

    def zero_flow(self) -> "Flow":
        return Flow(self, np.zeros(self.n_edges))

    def flow_from_pairs(self, pairs) -> "Flow":
        """Flow from (rank_a, rank_b, value) triples (values accumulate)."""
        phi = np.zeros(self.n_edges)
        for a, b, v in pairs:
            e, sign = self.edge_index(int(a), int(b))
            phi[e] += sign * v
        return Flow(self, phi)

    def induced_flows(self, f):
        """(Phi_f, Phi*_f, Psi_f) for a dense function f."""
        f = np.asarray(f, dtype=float)
        fi, fj = f[self.edge_i], f[self.edge_j]
        phi = Flow(self, fi * self.cond_ij - fj * self.cond_ji)
        phi_adj = Flow(self, fi * self.cond_ji - fj * self.cond_ij)
        psi = Flow(self, self.cond_sym * (fi - fj))
        return phi, phi_adj, psi

    def gradient_flow(self, f) -> "Flow":
        return self.induced_flows(f)[2]

    def verify_conductance_formulas(self, space_minus: ConfigSpace) -> float:
        """Relative gap between the occupancy and removal formulas.

        Every edge conductance mu(eta) g(eta_x) r(x,y) must match
        a_N mu_{N-1}(xi) m(x) r(x,y) with xi the edge's common core.
        """
        a_n = removal_coefficient(self.model, self.space.n_particles)
        mu_minus = stationary_vector(self.model, space_minus)
        core = self.space.occupations[self.edge_i].copy()
        core[np.arange(self.n_edges), self.move_x] -= 1
        core_rank = space_minus.rank_many(core)
        m = self.model.profile.mass
        r = self.model.walk.rates
        alt_ij = a_n * mu_minus[core_rank] * m[self.move_x] \
            * r[self.move_x, self.move_y]
        alt_ji = a_n * mu_minus[core_rank] * m[self.move_y] \
            * r[self.move_y, self.move_x]
        scale = max(self.cond_ij.max(), self.cond_ji.max())
        gap = max(np.abs(alt_ij - self.cond_ij).max(),
                  np.abs(alt_ji - self.cond_ji).max())
        return float(gap / scale)


@dataclass
class Flow:
    """Antisymmetric edge function, stored on canonical orientations."""

    graph: ConfigGraph
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.graph.n_edges,):
            raise ValueError("flow value array does not match the edge set")

    def __add__(self, other: "Flow") -> "Flow":
        self._check_same(other)
        return Flow(self.graph, self.values + other.values)

    def __sub__(self, other: "Flow") -> "Flow":
        self._check_same(other)
        return Flow(self.graph, self.values - other.values)

    def __mul__(self, scalar: float) -> "Flow":
        return Flow(self.graph, self.values * float(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> "Flow":
        return Flow(self.graph, -self.values)

    def _check_same(self, other: "Flow"):
        if other.graph is not self.graph:
            raise EdgeOutsideGraph("flows live on different graphs")

    def at(self, rank_a: int, rank_b: int) -> float:
        e, sign = self.graph.edge_index(rank_a, rank_b)
        return sign * float(self.values[e])

    def divergence(self) -> np.ndarray:
        """div phi at every configuration (sums to zero)."""
        out = np.zeros(self.graph.space.size)
        np.add.at(out, self.graph.edge_i, self.values)
        np.subtract.at(out, self.graph.edge_j, self.values)
        return out

    def divergence_at(self, rank: int) -> float:
        g = self.graph
        v = self.values[g.edge_i == rank].sum() \
            - self.values[g.edge_j == rank].sum()
        return float(v)

    def divergence_set(self, members) -> float:
        div = self.divergence()
        idx = np.asarray(list(members), dtype=np.int64)
        return float(math.fsum(div[idx]))

    def to_csv(self, path) -> None:
        """Edge snapshot as (source rank, target rank, value) rows."""
        g = self.graph
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["eta_rank", "zeta_rank", "value"])
            for i, j, v in zip(g.edge_i, g.edge_j, self.values):
                writer.writerow([int(i), int(j), repr(float(v))])


def flow_inner(phi: Flow, psi: Flow) -> float:
    """<<phi, psi>> = sum over undirected edges of phi psi / c^s."""
    phi._check_same(psi)
    return math.fsum(phi.values * psi.values / phi.graph.cond_sym)


def flow_norm_sq(phi: Flow) -> float:
    return flow_inner(phi, phi)


def flow_identity_suite(model: ZrpModel, space: ConfigSpace, trials: int,
                        seed: int = 0, graph: ConfigGraph | None = None) -> dict:
    """Residuals of the four structural flow identities on random data.

    For random f, g and random flows phi it checks, in relative terms:
    (1) div Phi_f = -mu (L* f) and div Phi*_f = -mu (L f);
    (2) <<Psi_f, Phi_g>> = <-L f, g>_mu and the adjoint twin;
    (3) <<Psi_f, phi>> = sum f div phi;
    (4) ||Psi_f||^2 = Dirichlet form of f.
    """
    from .zrp import MoveTable, zrp_dirichlet_form, zrp_generator_apply

    g_ = graph or ConfigGraph(model, space)
    rng = np.random.default_rng(seed)
    mu = g_.mu
    moves = MoveTable(model, space)
    worst = {"div_primal": 0.0, "div_adjoint": 0.0, "pairing": 0.0,
             "pairing_adjoint": 0.0, "duality": 0.0, "norm": 0.0}
    for _ in range(max(1, trials)):
        f = rng.standard_normal(space.size)
        h = rng.standard_normal(space.size)
        raw = Flow(g_, rng.standard_normal(g_.n_edges) * g_.cond_sym)
        phi_f, phi_f_adj, psi_f = g_.induced_flows(f)
        phi_h, phi_h_adj, _ = g_.induced_flows(h)
        lf = zrp_generator_apply(model, space, f, "primal", moves)
        lf_adj = zrp_generator_apply(model, space, f, "adjoint", moves)
        scale = max(np.abs(mu * lf).max(), 1e-300)
        worst["div_primal"] = max(
            worst["div_primal"],
            np.abs(phi_f.divergence() + mu * lf_adj).max()
            / max(np.abs(mu * lf_adj).max(), 1e-300))
        worst["div_adjoint"] = max(
            worst["div_adjoint"],
            np.abs(phi_f_adj.divergence() + mu * lf).max() / scale)
        lhs_inner = flow_inner(psi_f, phi_h)
        pair_rhs = float(np.sum(-mu * lf * h))
        worst["pairing"] = max(
            worst["pairing"],
            abs(lhs_inner - pair_rhs) / max(abs(pair_rhs), 1e-300))
        lhs_adj = flow_inner(psi_f, phi_h_adj)
        rhs_adj = float(np.sum(-mu * lf_adj * h))
        worst["pairing_adjoint"] = max(
            worst["pairing_adjoint"],
            abs(lhs_adj - rhs_adj) / max(abs(rhs_adj), 1e-300))
        lhs_d = flow_inner(psi_f, raw)
        rhs_d = float(np.sum(f * raw.divergence()))
        worst["duality"] = max(
            worst["duality"], abs(lhs_d - rhs_d) / max(abs(rhs_d), 1e-300))
        nrm = flow_norm_sq(psi_f)
        dform = zrp_dirichlet_form(model, space, f, moves=moves)
        worst["norm"] = max(
            worst["norm"], abs(nrm - dform) / max(abs(dform), 1e-300))
    worst["max"] = max(worst.values())
    return worst
