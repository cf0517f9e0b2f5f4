"""The underlying site-level random walk and its potential theory.

Everything here lives on the finite site set S (size kappa): rate matrix,
stationary measure, adjoint walk, Dirichlet form, equilibrium potentials,
capacities, canonical paths, and the small Markov chain on the
maximal-mass sites that describes where the condensate sits on the long
time scale.

Generator convention: (L f)(x) = sum_y r(x, y) (f(y) - f(x)).  This is the
unique convention under which D(f) = <f, -L f>_m matches the edge sum
(1/2) sum m(x) r(x, y) (f(y) - f(x))^2, and it is used consistently for
the walk, its adjoint and the particle system built on top of it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import (
    AlphaOutOfRange,
    DegenerateModel,
    NotIrreducible,
    SetsOverlapOrEmpty,
    SolverFailure,
)

STATIONARITY_TOL = 1e-12
TIE_RTOL = 1e-9


@dataclass(frozen=True)
class UnderlyingWalk:
    """Finite irreducible walk: site labels plus a rate matrix.

    ``rates[i, j]`` is the jump rate from site i to site j (labels are
    cosmetic; all internal indexing is positional).  The diagonal must be
    zero and the graph of positive rates strongly connected.
    """

    states: tuple
    rates: np.ndarray = field(repr=False)

    @classmethod
    def from_rates(cls, rates, states=None) -> "UnderlyingWalk":
        r = np.array(rates, dtype=float)
        if r.ndim != 2 or r.shape[0] != r.shape[1]:
            raise ValueError("rate matrix must be square")
        if np.any(r < 0):
            raise ValueError("rates must be non-negative")
        if np.any(np.diag(r) != 0):
            raise ValueError("diagonal rates must vanish")
        n = r.shape[0]
        if states is None:
            states = tuple(range(1, n + 1))
        states = tuple(states)
        if len(states) != n:
            raise ValueError("state list does not match the rate matrix")
        ncomp, _ = connected_components(
            csr_matrix(r > 0), directed=True, connection="strong")
        if ncomp != 1:
            raise NotIrreducible(
                "graph of positive rates is not strongly connected")
        r.setflags(write=False)
        return cls(states, r)

    @classmethod
    def from_config(cls, source) -> "UnderlyingWalk":
        """Walk from a JSON object / file with "states" and dense "rates"."""
        if isinstance(source, (str, bytes)):
            with open(source) as fh:
                source = json.load(fh)
        elif hasattr(source, "read"):
            source = json.load(source)
        return cls.from_rates(source["rates"], states=source.get("states"))

    @property
    def n_sites(self) -> int:
        return len(self.states)

    def site_index(self, label) -> int:
        return self.states.index(label)

    def generator_apply(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        return self.rates @ f - self.rates.sum(axis=1) * f

    def edge_set(self):
        """Ordered pairs (i, j) with r(i, j) > 0."""
        return [(i, j) for i, j in zip(*np.nonzero(self.rates))]


@dataclass(frozen=True)
class WalkProfile:
    """Stationary measure of a walk and its maximal-mass data."""

    mass: np.ndarray
    max_mass: float
    star_sites: tuple       # indices of maximal mass, ascending
    normalized_mass: np.ndarray

    @property
    def n_star(self) -> int:
        return len(self.star_sites)


def stationary_measure(walk: UnderlyingWalk, star_override=None) -> WalkProfile:
    """Solve m^T L = 0, normalise, and extract the maximal-mass sites.

    Ties in the maximum are resolved by relative comparison at 1e-9 after
    the solve; ``star_override`` (site indices) replaces the detected set.
    Raises DegenerateModel when fewer than two sites share the maximum.
    """
    r = walk.rates
    n = walk.n_sites
    gen = r - np.diag(r.sum(axis=1))
    a = gen.T.copy()
    a[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    m = np.linalg.solve(a, b)
    # one refinement step keeps the residual at solver noise
    resid = b - a @ m
    m = m + np.linalg.solve(a, resid)
    m = m / m.sum()
    if np.any(m <= 0):
        raise SolverFailure("stationary measure not strictly positive")
    res = np.abs(m @ gen).max()
    if res > STATIONARITY_TOL * np.abs(m).max():
        raise SolverFailure(f"stationarity residual {res:.3e} too large")
    mmax = m.max()
    if star_override is not None:
        star = tuple(sorted(int(x) for x in star_override))
    else:
        star = tuple(int(x) for x in np.nonzero(m >= mmax * (1 - TIE_RTOL))[0])
    if len(star) < 2:
        raise DegenerateModel(
            "need at least two sites of maximal stationary mass")
    mstar = m / mmax
    mstar[list(star)] = 1.0       # exact ties on the detected set
    m.setflags(write=False)
    mstar.setflags(write=False)
    return WalkProfile(m, float(mmax), star, mstar)


def adjoint_walk(walk: UnderlyingWalk, profile: WalkProfile) -> UnderlyingWalk:
    """Time reversal: r*(x, y) = r(y, x) m(y) / m(x)."""
    m = profile.mass
    r_adj = walk.rates.T * m[None, :] / m[:, None]
    return UnderlyingWalk.from_rates(r_adj, states=walk.states)


def walk_dirichlet_form(walk: UnderlyingWalk, profile: WalkProfile, f) -> float:
    f = np.asarray(f, dtype=float)
    diff = f[None, :] - f[:, None]
    return 0.5 * float(np.sum(profile.mass[:, None] * walk.rates * diff ** 2))


def _check_sets(n, a_set, b_set):
    a = sorted(set(int(x) for x in a_set))
    b = sorted(set(int(x) for x in b_set))
    if not a or not b or set(a) & set(b):
        raise SetsOverlapOrEmpty(f"invalid set pair {a_set}, {b_set}")
    if any(x < 0 or x >= n for x in a + b):
        raise SetsOverlapOrEmpty("set element outside the state space")
    return a, b


def walk_equilibrium_potential(walk: UnderlyingWalk, a_set, b_set) -> np.ndarray:
    """h = 1 on A, 0 on B, harmonic elsewhere (linear solve)."""
    n = walk.n_sites
    a, b = _check_sets(n, a_set, b_set)
    gen = walk.rates - np.diag(walk.rates.sum(axis=1))
    h = np.zeros(n)
    h[a] = 1.0
    interior = [x for x in range(n) if x not in a and x not in b]
    if interior:
        sub = gen[np.ix_(interior, interior)]
        rhs = -gen[np.ix_(interior, a)].sum(axis=1)
        h[interior] = np.linalg.solve(sub, rhs)
        res = np.abs(sub @ h[interior] - rhs).max()
        if res > 1e-12 * max(1.0, np.abs(rhs).max()):
            raise SolverFailure(f"harmonic residual {res:.3e}")
    if h.min() < -1e-12 or h.max() > 1 + 1e-12:
        raise SolverFailure("equilibrium potential escaped [0, 1]")
    return np.clip(h, 0.0, 1.0)


def walk_capacity(walk: UnderlyingWalk, profile: WalkProfile,
                  a_set, b_set, check_tol: float = 1e-10) -> float:
    """Capacity between A and B, cross-checked three ways.

    Returns D(h_AB) and asserts it agrees with both boundary-flux sums,
    with the reversed pair, and with the adjoint walk's value.
    """
    a, b = _check_sets(walk.n_sites, a_set, b_set)
    m = profile.mass
    h = walk_equilibrium_potential(walk, a, b)
    cap = walk_dirichlet_form(walk, profile, h)
    lh = walk.generator_apply(h)
    flux_a = -float(np.sum(m[a] * lh[a]))
    flux_b = float(np.sum(m[b] * lh[b]))
    scale = max(abs(cap), 1e-300)
    if abs(flux_a - cap) > check_tol * scale or abs(flux_b - cap) > check_tol * scale:
        raise SolverFailure(
            f"capacity expressions disagree: {cap}, {flux_a}, {flux_b}")
    h_rev = walk_equilibrium_potential(walk, b, a)
    cap_rev = walk_dirichlet_form(walk, profile, h_rev)
    adj = adjoint_walk(walk, profile)
    h_adj = walk_equilibrium_potential(adj, a, b)
    cap_adj = walk_dirichlet_form(adj, profile, h_adj)
    if abs(cap_rev - cap) > check_tol * scale or abs(cap_adj - cap) > check_tol * scale:
        raise SolverFailure("capacity not symmetric / adjoint-invariant")
    return cap


def canonical_paths(walk: UnderlyingWalk) -> dict:
    """Shortest directed path for every ordered site pair.

    Breadth-first search with ties broken by the smallest next-state
    index, so the table is a deterministic function of the walk.  A
    direct edge always wins (path length 1 is minimal).
    """
    n = walk.n_sites
    adj = [list(np.nonzero(walk.rates[i] > 0)[0]) for i in range(n)]
    table = {}
    for src in range(n):
        parent = {src: None}
        frontier = [src]
        while frontier:
            nxt = []
            for u in frontier:
                for v in adj[u]:
                    if v not in parent:
                        parent[v] = u
                        nxt.append(v)
            nxt.sort()
            frontier = nxt
        if len(parent) != n:
            raise NotIrreducible("walk graph not strongly connected")
        for dst in range(n):
            if dst == src:
                continue
            path = [dst]
            while path[-1] != src:
                path.append(parent[path[-1]])
            table[(src, dst)] = tuple(reversed(path))
    return table


@dataclass(frozen=True)
class LimitChain:
    """Condensate-location chain on the maximal-mass sites plus a null state.

    Jump rates between star sites are proportional to the walk capacities,
    a(x, y) = cap(x, y) / (max_mass * gamma_alpha * i_alpha); the null
    state has no transitions in or out.  The chain restricted to the star
    sites is reversible for the uniform measure.
    """

    star_sites: tuple
    rate_matrix: np.ndarray       # (n_star, n_star), indexed by star position
    gamma_alpha: float
    i_alpha: float
    max_mass: float

    @property
    def n_star(self) -> int:
        return len(self.star_sites)

    def measure(self) -> np.ndarray:
        return np.full(self.n_star, 1.0 / self.n_star)

    def generator_apply(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        return self.rate_matrix @ f - self.rate_matrix.sum(axis=1) * f

    def dirichlet_form(self, f) -> float:
        f = np.asarray(f, dtype=float)
        diff = f[None, :] - f[:, None]
        return 0.5 * float(
            np.sum(self.rate_matrix * diff ** 2)) / self.n_star

    def equilibrium_potential(self, a_set, b_set) -> np.ndarray:
        """Potential between subsets of the star sites (star positions)."""
        a = sorted(set(int(x) for x in a_set))
        b = sorted(set(int(x) for x in b_set))
        if not a or (set(a) & set(b)):
            raise SetsOverlapOrEmpty(f"invalid set pair {a_set}, {b_set}")
        if not b:
            return np.ones(self.n_star)
        h = np.zeros(self.n_star)
        h[a] = 1.0
        interior = [x for x in range(self.n_star) if x not in a and x not in b]
        if interior:
            gen = self.rate_matrix - np.diag(self.rate_matrix.sum(axis=1))
            sub = gen[np.ix_(interior, interior)]
            rhs = -gen[np.ix_(interior, a)].sum(axis=1)
            h[interior] = np.linalg.solve(sub, rhs)
        return h

    def capacity(self, a_set, b_set) -> float:
        return self.dirichlet_form(self.equilibrium_potential(a_set, b_set))

    def transition_matrix(self, t: float) -> np.ndarray:
        gen = self.rate_matrix - np.diag(self.rate_matrix.sum(axis=1))
        return expm(gen * t)

    def detailed_balance_residual(self) -> float:
        mu_a = self.rate_matrix / self.n_star
        return float(np.abs(mu_a - mu_a.T).max())


def build_limit_chain(walk: UnderlyingWalk, profile: WalkProfile,
                      alpha: float, gamma_alpha: float,
                      i_alpha: float) -> LimitChain:
    """Assemble the condensate chain from pairwise walk capacities."""
    if alpha <= 2:
        raise AlphaOutOfRange(f"alpha = {alpha} must exceed 2")
    star = profile.star_sites
    k = len(star)
    rate = np.zeros((k, k))
    denom = profile.max_mass * gamma_alpha * i_alpha
    for i in range(k):
        for j in range(i + 1, k):
            cap = walk_capacity(walk, profile, [star[i]], [star[j]])
            rate[i, j] = rate[j, i] = cap / denom
    rate.setflags(write=False)
    chain = LimitChain(star, rate, gamma_alpha, i_alpha, profile.max_mass)
    if chain.detailed_balance_residual() > 1e-12 * max(rate.max(), 1.0):
        raise SolverFailure("limit chain lost detailed balance")
    return chain
