"""Zero-range particle system: rates, invariant measure, partition sums.

A model couples an underlying walk with the sticky interaction
a(0) = 1, a(n) = n**alpha, g(n) = a(n)/a(n-1), alpha > 2.  A particle
leaves site x at rate g(occ(x)) r(x, y), so the per-site slowdown depends
only on the local occupancy.  The invariant measure on the N-particle
space is the product-form weight m_star^eta / a(eta) normalised by the
weight sum W_N; the conventional partition function is Z_N = N^alpha W_N.

Weight sums over sub-site-sets, W_{k, S0} = sum_{|zeta| = k} m_star^zeta
/ a(zeta), are computed by site-by-site convolution of the single-site
weight sequences, which is exact and avoids enumerating the space.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import beta as beta_fn
from scipy.special import zeta as hurwitz_zeta

from .configs import ConfigSpace
from .errors import AlphaOutOfRange, UndefinedOnNeighborhood
from .walk import UnderlyingWalk, WalkProfile, adjoint_walk, stationary_measure

SERIES_TAIL = 1e-16


@dataclass(frozen=True)
class ZrpModel:
    """Underlying walk + profile + interaction exponent."""

    walk: UnderlyingWalk
    profile: WalkProfile
    alpha: float
    walk_adjoint: UnderlyingWalk = field(repr=False)

    @classmethod
    def build(cls, walk: UnderlyingWalk, alpha: float,
              star_override=None) -> "ZrpModel":
        if not alpha > 2:
            raise AlphaOutOfRange(
                f"alpha = {alpha}: series require alpha > 2")
        profile = stationary_measure(walk, star_override=star_override)
        return cls(walk, profile, float(alpha), adjoint_walk(walk, profile))

    @property
    def n_sites(self) -> int:
        return self.walk.n_sites

    @property
    def star_sites(self):
        return self.profile.star_sites

    def a_of(self, n):
        """Interaction weight a(n); a(0) = 1."""
        n = np.asarray(n, dtype=float)
        return np.where(n == 0, 1.0, np.maximum(n, 1.0) ** self.alpha)

    def g_of(self, n):
        """Departure factor g(n) = a(n)/a(n-1); g(0) = 0."""
        n = np.asarray(n, dtype=float)
        return np.where(
            n == 0, 0.0,
            np.maximum(n, 1.0) ** self.alpha
            / np.maximum(n - 1, 1.0) ** self.alpha)

    def g_table(self, n_max: int) -> np.ndarray:
        return self.g_of(np.arange(n_max + 1))

    def a_product(self, occ: np.ndarray) -> np.ndarray:
        """a(eta) = prod_x a(eta_x) row-wise."""
        return np.prod(self.a_of(occ), axis=-1)

    def config_weight(self, occ: np.ndarray) -> np.ndarray:
        """Unnormalised weight m_star^eta / a(eta) row-wise."""
        occ = np.asarray(occ)
        logm = np.log(self.profile.normalized_mass)   # exactly 0 on star sites
        return np.exp(occ @ logm) / self.a_product(occ)


def interaction_rates(model: ZrpModel, n: int):
    """(a(n), g(n)) for one occupancy."""
    if n < 0:
        raise ValueError("occupancy must be non-negative")
    return float(model.a_of(n)), float(model.g_of(n))


def config_space(n_particles: int, n_sites: int) -> ConfigSpace:
    """Dense configuration space on n_sites sites."""
    return ConfigSpace.build(int(n_particles), int(n_sites))


def single_site_weights(model: ZrpModel, site: int, k_max: int) -> np.ndarray:
    """(m_star(x)^j / a(j)) for j = 0..k_max."""
    j = np.arange(k_max + 1)
    return model.profile.normalized_mass[site] ** j / model.a_of(j)


def weight_sums(model: ZrpModel, k_max: int, sites=None) -> np.ndarray:
    """W_{k, S0} for k = 0..k_max by convolution over the chosen sites."""
    if sites is None:
        sites = range(model.n_sites)
    sites = list(sites)
    acc = np.zeros(k_max + 1)
    acc[0] = 1.0
    for x in sites:
        acc = np.convolve(acc, single_site_weights(model, x, k_max))[:k_max + 1]
    return acc


def partition_function(model: ZrpModel, k: int, sites=None) -> float:
    """Z_{k, S0} = k^alpha W_{k, S0}; Z_0 := 1 by convention."""
    if k == 0:
        return 1.0
    w = weight_sums(model, k, sites)[k]
    return float(k) ** model.alpha * w


def removal_coefficient(model: ZrpModel, n_particles: int) -> float:
    """a_N = W_{N-1} / (W_N * max_mass); tends to 1/max_mass.

    This is the constant tying the N-particle measure to the (N-1)-particle
    one through mu_N(eta) g(eta_u) = a_N mu_{N-1}(eta - w_u) m(u).
    """
    w = weight_sums(model, n_particles)
    return float(w[n_particles - 1] / (w[n_particles] * model.profile.max_mass))


@dataclass(frozen=True)
class ZrpConstants:
    """Series limits of the weight sums.

    gamma_site[x] sums m_star(x)^j / a(j); it equals gamma_alpha on the
    maximal-mass sites.  z_limit is the limit of Z_N and i_alpha the Beta
    integral entering the condensate time scale.
    """

    alpha: float
    gamma_site: np.ndarray
    gamma_alpha: float
    z_limit: float
    i_alpha: float

    def removal_limit(self, max_mass: float) -> float:
        return 1.0 / max_mass


def limit_constants(model: ZrpModel) -> ZrpConstants:
    alpha = model.alpha
    gamma_alpha = 1.0 + float(hurwitz_zeta(alpha, 1))
    gam = np.empty(model.n_sites)
    for x in range(model.n_sites):
        q = model.profile.normalized_mass[x]
        if q >= 1.0:
            gam[x] = gamma_alpha
        else:
            gam[x] = _geometric_series(q, alpha)
    n_star = len(model.star_sites)
    others = [x for x in range(model.n_sites) if x not in model.star_sites]
    z_limit = n_star * gamma_alpha ** (n_star - 1) * float(
        np.prod(gam[others])) if others else n_star * gamma_alpha ** (n_star - 1)
    i_alpha = float(beta_fn(alpha + 1.0, alpha + 1.0))
    return ZrpConstants(alpha, gam, gamma_alpha, z_limit, i_alpha)


def _geometric_series(q: float, alpha: float) -> float:
    """sum_j q^j / a(j) for q < 1 with tail below SERIES_TAIL."""
    total, j = 1.0, 0
    while True:
        j += 1
        term = q ** j / float(j) ** alpha
        total += term
        if term * q / (1.0 - q) <= SERIES_TAIL:
            return total


def stationary_vector(model: ZrpModel, space: ConfigSpace) -> np.ndarray:
    """mu_N over the dense space (normalised by math.fsum for exactness)."""
    w = model.config_weight(space.occupations)
    return w / math.fsum(w)


def stationary_weight(model: ZrpModel, space: ConfigSpace, eta) -> float:
    mu = stationary_vector(model, space)
    return float(mu[space.index_of(eta)])


def set_measure(model: ZrpModel, space: ConfigSpace, members) -> float:
    mu = stationary_vector(model, space)
    idx = np.asarray(list(members), dtype=np.int64)
    return float(math.fsum(mu[idx]))


# ---------------------------------------------------------------------------
# Moves, generators and Dirichlet forms on a dense space
# ---------------------------------------------------------------------------

class MoveTable:
    """Vectorised single-particle moves on a dense space.

    For every ordered site pair (x, y) with x != y, ``target[(x, y)]`` maps
    the rank of eta to the rank of eta with one particle moved x -> y, or
    -1 when eta_x = 0.  Only pairs with r(x,y) + r(y,x) > 0 are stored for
    graph work; ``all_pairs`` keeps every pair for generator evaluation.
    """

    def __init__(self, model: ZrpModel, space: ConfigSpace):
        self.model = model
        self.space = space
        occ = space.occupations
        self.mu = stationary_vector(model, space)
        self.g_occ = model.g_of(occ)          # (M, n_sites)
        self.target = {}
        n = model.n_sites
        for x in range(n):
            movable = occ[:, x] >= 1
            shifted = occ[movable]
            for y in range(n):
                if y == x:
                    continue
                nxt = shifted.copy()
                nxt[:, x] -= 1
                nxt[:, y] += 1
                t = np.full(space.size, -1, dtype=np.int64)
                t[movable] = space.rank_many(nxt)
                self.target[(x, y)] = t

    def pairs(self):
        return list(self.target.keys())


def zrp_generator_apply(model: ZrpModel, space: ConfigSpace, f,
                        variant: str = "primal",
                        moves: MoveTable | None = None) -> np.ndarray:
    """(L f), (L* f) or the symmetrised (L^s f) on the dense space."""
    f = np.asarray(f, dtype=float)
    moves = moves or MoveTable(model, space)
    rates = _variant_rates(model, variant)
    out = np.zeros(space.size)
    for (x, y), tgt in moves.target.items():
        r = rates[x, y]
        if r == 0.0:
            continue
        ok = tgt >= 0
        out[ok] += moves.g_occ[ok, x] * r * (f[tgt[ok]] - f[ok])
    return out


def _variant_rates(model: ZrpModel, variant: str) -> np.ndarray:
    if variant == "primal":
        return model.walk.rates
    if variant == "adjoint":
        return model.walk_adjoint.rates
    if variant == "symmetrized":
        return 0.5 * (model.walk.rates + model.walk_adjoint.rates)
    raise ValueError(f"unknown generator variant {variant!r}")


def zrp_dirichlet_form(model: ZrpModel, space: ConfigSpace, f,
                       restrict_to=None,
                       moves: MoveTable | None = None) -> float:
    """Half edge-sum of mu g r (Delta f)^2, optionally over a source set.

    With no restriction the value equals <f, -L f>_mu; restricted to a set
    the sum runs over source configurations in the set only, and f must be
    given on every configuration one move away (dense f satisfies this).
    """
    f = np.asarray(f, dtype=float)
    moves = moves or MoveTable(model, space)
    rates = model.walk.rates
    if restrict_to is not None:
        sel = np.zeros(space.size, dtype=bool)
        sel[np.asarray(list(restrict_to), dtype=np.int64)] = True
    terms = []
    for (x, y), tgt in moves.target.items():
        r = rates[x, y]
        if r == 0.0:
            continue
        ok = tgt >= 0
        if restrict_to is not None:
            ok = ok & sel
        if not np.any(ok):
            continue
        contrib = moves.mu[ok] * moves.g_occ[ok, x] * r \
            * (f[tgt[ok]] - f[ok]) ** 2
        terms.append(math.fsum(contrib))
    return 0.5 * math.fsum(terms)


def dirichlet_form_removal(model: ZrpModel, space: ConfigSpace,
                           space_minus: ConfigSpace, f) -> float:
    """Dirichlet form computed on the (N-1)-particle space.

    (a_N / 2) sum_{zeta} mu_{N-1}(zeta) m(x) r(x, y)
    [f(zeta + w_x) - f(zeta + w_y)]^2 -- an independent route to the same
    value that exercises the particle-removal identity.
    """
    if space_minus.n_particles != space.n_particles - 1:
        raise UndefinedOnNeighborhood("need the (N-1)-particle space")
    f = np.asarray(f, dtype=float)
    a_n = removal_coefficient(model, space.n_particles)
    mu_minus = stationary_vector(model, space_minus)
    occ = space_minus.occupations
    n = model.n_sites
    add_rank = []
    for x in range(n):
        plus = occ.copy()
        plus[:, x] += 1
        add_rank.append(space.rank_many(plus))
    m = model.profile.mass
    r = model.walk.rates
    terms = []
    for x in range(n):
        for y in range(n):
            if r[x, y] == 0.0 or x == y:
                continue
            diff = f[add_rank[x]] - f[add_rank[y]]
            terms.append(math.fsum(mu_minus * m[x] * r[x, y] * diff ** 2))
    return 0.5 * a_n * math.fsum(terms)


def particle_removal_residual(model: ZrpModel, space: ConfigSpace,
                              space_minus: ConfigSpace) -> float:
    """max |mu_N(eta) g(eta_u) - a_N mu_{N-1}(eta - w_u) m(u)| (scaled)."""
    mu = stationary_vector(model, space)
    mu_minus = stationary_vector(model, space_minus)
    a_n = removal_coefficient(model, space.n_particles)
    occ = space.occupations
    worst = 0.0
    scale = 0.0
    for u in range(model.n_sites):
        has = occ[:, u] >= 1
        less = occ[has].copy()
        less[:, u] -= 1
        lhs = mu[has] * model.g_of(occ[has, u])
        rhs = a_n * mu_minus[space_minus.rank_many(less)] \
            * model.profile.mass[u]
        worst = max(worst, float(np.abs(lhs - rhs).max(initial=0.0)))
        scale = max(scale, float(np.abs(lhs).max(initial=0.0)))
    return worst / scale if scale else 0.0


# ---------------------------------------------------------------------------
# Measure tables on disk: binary array + JSON header
# ---------------------------------------------------------------------------

def save_measure(path, model: ZrpModel, space: ConfigSpace) -> None:
    """mu_N to a single file: one JSON header line, then raw float64."""
    mu = stationary_vector(model, space)
    header = {
        "n_particles": space.n_particles,
        "sites": list(model.walk.states),
        "alpha": model.alpha,
        "z_n": partition_function(model, space.n_particles),
        "count": space.size,
        "dtype": "<f8",
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(np.ascontiguousarray(mu, dtype="<f8").tobytes())


def load_measure(path):
    """Inverse of :func:`save_measure`; returns (header dict, mu array)."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        mu = np.frombuffer(fh.read(), dtype=header["dtype"],
                           count=header["count"])
    return header, mu
