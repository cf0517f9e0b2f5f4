"""Metastable geometry of the configuration space.

Valleys collect the configurations whose condensate sits on one
maximal-mass site: occ(x) >= N - ell with occ(z) <= b(z) on every
sub-maximal site z.  Around them sit the wells occ(x) >= N(1 - 2 eps),
the tubes occ(x) + occ(y) >= N - pi between well pairs, and the saddle
tubes (tube minus the two wells) through which transitions happen.

All real thresholds are resolved through exact rational arithmetic with
a ceiling convention: "occ >= N(1-2 eps)" means occ >= ceil(N(1-2 eps)),
and the matching inner/outer boundary layers sit at that integer and one
below it.  Set decompositions are then exact integer statements and are
asserted at construction time.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .configs import ConfigSpace
from .errors import ScaleOrderViolated
from .zrp import ZrpModel, stationary_vector

EPS_MAX = Fraction(1, 16)


@dataclass(frozen=True)
class ScaleParams:
    """Scale sequences evaluated at one particle number.

    ``order_ok`` records whether floor(N eps) > pi > ell holds.  The
    ordering only has bite when three or more maximal-mass sites make
    distinct tubes share sites; with two of them every tube statement is
    unaffected, so construction proceeds and the flag is advisory
    (enforced for n_star >= 3 by build_sets).
    """

    n_particles: int
    eps: Fraction
    ell: int
    pi: int
    b: dict                     # site index -> occupancy cap (non-star sites)
    order_ok: bool
    min_order_n: int            # smallest N restoring the ordering
    amp_product: float          # the vanishing-product diagnostic

    def as_json(self) -> dict:
        return {
            "n_particles": self.n_particles,
            "eps": float(self.eps),
            "ell": self.ell,
            "pi": self.pi,
            "b": {str(k): v for k, v in sorted(self.b.items())},
            "order_ok": self.order_ok,
            "min_order_n": self.min_order_n,
            "amp_product": self.amp_product,
        }


def default_scales(model: ZrpModel, n_particles: int, eps) -> ScaleParams:
    """Default scale choices at one N.

    pi = floor(N^(1/alpha + 1/2)), ell = floor(N^(1/(2(kappa-1)))),
    b(z) = floor(log N / (-2 kappa log m_star(z))) clamped to >= 1.
    """
    eps = Fraction(eps).limit_denominator(10 ** 12) \
        if not isinstance(eps, Fraction) else eps
    if not 0 < eps <= EPS_MAX:
        raise ScaleOrderViolated(
            f"eps = {float(eps)} outside the admissible (0, 1/16]")
    n = int(n_particles)
    alpha = model.alpha
    kappa = model.n_sites
    pi = int(math.floor(n ** (1.0 / alpha + 0.5)))
    ell = int(math.floor(n ** (1.0 / (2.0 * (kappa - 1)))))
    b = {}
    for z in range(kappa):
        if z in model.star_sites:
            continue
        mz = model.profile.normalized_mass[z]
        b[z] = max(1, int(math.floor(
            math.log(n) / (-2.0 * kappa * math.log(mz)))))
    order_ok = math.floor(n * eps) > pi > ell >= 1
    min_order_n = _min_order_n(model, eps)
    # scaled product that must vanish along the sweep
    prod = ell ** (1.0 + alpha * (kappa - 1)) / n ** (1.0 + alpha)
    for z, bz in b.items():
        prod *= model.profile.normalized_mass[z] ** (-bz)
    params = ScaleParams(n, eps, ell, pi, b, order_ok, min_order_n, prod)
    if model.profile.n_star >= 3 and not order_ok:
        raise ScaleOrderViolated(
            f"floor(N eps) > pi > ell needs N >= {min_order_n} at "
            f"eps = {float(eps)} (got N = {n}); three or more condensation "
            "sites make overlapping saddle tubes otherwise")
    return params


def _min_order_n(model: ZrpModel, eps: Fraction) -> int:
    """Approximately smallest N with floor(N eps) > pi_N.

    Solves the real inequality N eps > N^(1/alpha + 1/2) and refines by a
    bounded integer scan around it.
    """
    expo = 0.5 - 1.0 / model.alpha      # positive for alpha > 2
    n0 = max(2, int(math.ceil(float(1 / eps) ** (1.0 / expo))))

    def ok(n):
        return math.floor(n * eps) > int(
            math.floor(n ** (1.0 / model.alpha + 0.5)))

    n = n0
    for _ in range(64):
        if ok(n) and not ok(n - 1):
            return n
        n = n - 1 if ok(n) else n + 1
    return n


# ---------------------------------------------------------------------------
# Valleys (need only ell and b) and the full set family
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Valleys:
    """Valley membership data on a dense space."""

    star_sites: tuple
    ell: int
    b: dict
    valley: dict                # star site -> sorted index array
    apex: dict                  # star site -> rank of the pure condensate
    union: np.ndarray           # all valley indices
    complement: np.ndarray      # Delta_N

    def valley_of(self, occ_row) -> int:
        """Star site of the valley containing the configuration, else -1."""
        n = int(np.sum(occ_row))
        for z, cap in self.b.items():
            if occ_row[z] > cap:
                return -1
        for x in self.star_sites:
            if occ_row[x] >= n - self.ell:
                return x
        return -1

    def union_for(self, sites) -> np.ndarray:
        parts = [self.valley[x] for x in sites]
        return np.unique(np.concatenate(parts)) if parts else \
            np.empty(0, dtype=np.int64)

    def complement_of(self, sites) -> np.ndarray:
        """Union of the valleys NOT listed (the escape target)."""
        others = [x for x in self.star_sites if x not in set(sites)]
        return self.union_for(others)


def build_valleys(model: ZrpModel, space: ConfigSpace, ell: int,
                  b: dict | None = None) -> Valleys:
    n = space.n_particles
    occ = space.occupations
    if b is None:
        b = {}
    ok_b = np.ones(space.size, dtype=bool)
    for z, cap in b.items():
        ok_b &= occ[:, z] <= cap
    valley = {}
    apex = {}
    masks = []
    for x in model.star_sites:
        m = ok_b & (occ[:, x] >= n - ell)
        valley[x] = np.nonzero(m)[0]
        masks.append(m)
        xi = np.zeros(model.n_sites, dtype=np.int64)
        xi[x] = n
        apex[x] = space.index_of(xi)
    for i, x in enumerate(model.star_sites):
        for y in model.star_sites[i + 1:]:
            if np.intersect1d(valley[x], valley[y]).size:
                raise ScaleOrderViolated(
                    f"valleys of sites {x} and {y} overlap at ell = {ell}")
    union = np.nonzero(np.logical_or.reduce(masks))[0]
    comp = np.nonzero(~np.logical_or.reduce(masks))[0]
    return Valleys(model.star_sites, ell, dict(b), valley, apex, union, comp)


@dataclass
class MetastableSets:
    """The full valley / well / tube / saddle decomposition.

    Per-pair dictionaries are keyed by ordered star-site pairs (x, y)
    with x < y; the saddle of a pair is orientation-free.
    """

    model: ZrpModel
    space: ConfigSpace
    scales: ScaleParams
    valleys: Valleys
    well_threshold: int                     # ceil(N (1 - 2 eps))
    well: dict = field(default_factory=dict)
    well_interior: dict = field(default_factory=dict)
    well_inner_boundary: dict = field(default_factory=dict)
    well_outer_boundary: dict = field(default_factory=dict)
    tube: dict = field(default_factory=dict)
    tube_interior: dict = field(default_factory=dict)
    saddle: dict = field(default_factory=dict)
    saddle_interior: dict = field(default_factory=dict)
    saddle_inner_boundary: dict = field(default_factory=dict)
    saddle_outer_boundary: dict = field(default_factory=dict)
    vee: dict = field(default_factory=dict)     # (x, y) -> side sets V^x, V^y
    good_region: np.ndarray | None = None       # the union G
    good_inner_boundary: np.ndarray | None = None
    good_outer_boundary: np.ndarray | None = None
    outside_interior: np.ndarray | None = None  # (G^c)_int

    # -- conveniences ------------------------------------------------------

    @property
    def star_sites(self):
        return self.valleys.star_sites

    def pair_key(self, x: int, y: int):
        return (x, y) if x < y else (y, x)

    def valley_union(self, sites) -> np.ndarray:
        return self.valleys.union_for(sites)

    def summary(self) -> dict:
        mu = stationary_vector(self.model, self.space)

        def stat(idx):
            return {"size": int(idx.size),
                    "measure": float(math.fsum(mu[idx]))}

        out = {"scales": self.scales.as_json(), "sets": {}}
        sets = out["sets"]
        for x in self.star_sites:
            sets[f"valley[{x}]"] = stat(self.valleys.valley[x])
            sets[f"well[{x}]"] = stat(self.well[x])
        for key, idx in self.saddle.items():
            sets[f"saddle[{key}]"] = stat(idx)
        sets["delta"] = stat(self.valleys.complement)
        sets["good_region"] = stat(self.good_region)
        sets["good_inner_boundary"] = stat(self.good_inner_boundary)
        sets["good_outer_boundary"] = stat(self.good_outer_boundary)
        return out

    def summary_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=1, sort_keys=True)


def _ceil_frac(num: Fraction) -> int:
    return int(math.ceil(num))


def build_sets(model: ZrpModel, space: ConfigSpace,
               scales: ScaleParams) -> MetastableSets:
    """Construct every named set and assert the exact decompositions."""
    n = space.n_particles
    if n != scales.n_particles:
        raise ScaleOrderViolated("scales evaluated at a different N")
    occ = space.occupations
    star = model.star_sites
    eps = scales.eps
    well_cut = _ceil_frac(n * (1 - 2 * eps))
    if n - scales.ell < well_cut:
        raise ScaleOrderViolated(
            f"valley wider than the well: N - ell = {n - scales.ell} "
            f"< {well_cut} = ceil(N(1 - 2 eps))")
    valleys = build_valleys(model, space, scales.ell, scales.b)
    sets = MetastableSets(model, space, scales, valleys, well_cut)

    well_mask = {}
    tube_mask = {}
    for x in star:
        well_mask[x] = occ[:, x] >= well_cut
    in_any_tube = {x: np.zeros(space.size, dtype=bool) for x in star}
    for i, x in enumerate(star):
        for y in star[i + 1:]:
            m = occ[:, x] + occ[:, y] >= n - scales.pi
            tube_mask[(x, y)] = m
            in_any_tube[x] |= m
            in_any_tube[y] |= m

    good = np.zeros(space.size, dtype=bool)
    for x in star:
        good |= well_mask[x]
    for m in tube_mask.values():
        good |= m

    saddle_masks = {}
    for (x, y), tmask in tube_mask.items():
        smask = tmask & ~well_mask[x] & ~well_mask[y]
        saddle_masks[(x, y)] = smask
    keys = list(saddle_masks)
    for i, k1 in enumerate(keys):
        for k2 in keys[i + 1:]:
            overlap = saddle_masks[k1] & saddle_masks[k2]
            if overlap.any():
                raise ScaleOrderViolated(
                    f"saddle tubes {k1} and {k2} overlap; raise N (need "
                    f">= {scales.min_order_n}) or eps")

    inner_good = np.zeros(space.size, dtype=bool)
    outer_good = np.zeros(space.size, dtype=bool)
    for x in star:
        inner = well_mask[x] & (occ[:, x] == well_cut) & ~in_any_tube[x]
        outer = ~good & (occ[:, x] == well_cut - 1) & ~in_any_tube[x]
        sets.well[x] = np.nonzero(well_mask[x])[0]
        sets.well_inner_boundary[x] = np.nonzero(inner)[0]
        sets.well_outer_boundary[x] = np.nonzero(outer)[0]
        sets.well_interior[x] = np.nonzero(well_mask[x] & ~inner)[0]
        inner_good |= inner
        outer_good |= outer
    tube_int_threshold = math.floor(n * (1 - eps)) + 1   # strict >
    for (x, y), tmask in tube_mask.items():
        smask = saddle_masks[(x, y)]
        ssum = occ[:, x] + occ[:, y]
        s_inner = smask & (ssum == n - scales.pi)
        s_outer = ~good & (ssum == n - scales.pi - 1)
        sets.tube[(x, y)] = np.nonzero(tmask)[0]
        sets.tube_interior[(x, y)] = np.nonzero(
            tmask & (ssum >= tube_int_threshold))[0]
        sets.saddle[(x, y)] = np.nonzero(smask)[0]
        sets.saddle_inner_boundary[(x, y)] = np.nonzero(s_inner)[0]
        sets.saddle_outer_boundary[(x, y)] = np.nonzero(s_outer)[0]
        sets.saddle_interior[(x, y)] = np.nonzero(smask & ~s_inner)[0]
        sets.vee[(x, y)] = {
            x: np.nonzero(tmask & (occ[:, y] == 0))[0],
            y: np.nonzero(tmask & (occ[:, x] == 0))[0],
        }
        inner_good |= s_inner
        outer_good |= s_outer

    sets.good_region = np.nonzero(good)[0]
    sets.good_inner_boundary = np.nonzero(inner_good)[0]
    sets.good_outer_boundary = np.nonzero(outer_good)[0]
    sets.outside_interior = np.nonzero(~good & ~outer_good)[0]

    _assert_decompositions(sets, good, inner_good, outer_good, n, eps)
    return sets


def _assert_decompositions(sets: MetastableSets, good, inner_good,
                           outer_good, n, eps):
    """Exact integer set identities; failure means a construction bug."""
    size = good.size
    cover = np.zeros(size, dtype=np.int64)
    for x in sets.star_sites:
        cover[sets.well_interior[x]] += 1
    for key in sets.saddle:
        cover[sets.saddle_interior[key]] += 1
    cover[sets.good_inner_boundary] += 1
    if not np.array_equal(cover, good.astype(np.int64)):
        raise AssertionError("good-region decomposition failed")
    cover_c = np.zeros(size, dtype=np.int64)
    cover_c[sets.outside_interior] += 1
    cover_c[sets.good_outer_boundary] += 1
    if not np.array_equal(cover_c, (~good).astype(np.int64)):
        raise AssertionError("complement decomposition failed")
    # saddle occupancies live in [N eps, N(1 - 2 eps)] when pi < N eps
    occ = sets.space.occupations
    if sets.scales.order_ok:
        for (x, y), idx in sets.saddle.items():
            if idx.size:
                assert occ[idx][:, [x, y]].min() >= math.floor(n * eps)
                assert occ[idx][:, [x, y]].max() <= math.floor(n * (1 - 2 * eps))


def set_measures(model: ZrpModel, space: ConfigSpace,
                 sets: MetastableSets) -> dict:
    """Measures of every named set plus the scaled diagnostics."""
    mu = stationary_vector(model, space)
    n = space.n_particles
    alpha = model.alpha
    report = {"n_particles": n}

    def m_of(idx):
        return float(math.fsum(mu[idx]))

    n_star = len(sets.star_sites)
    for x in sets.star_sites:
        report[f"valley[{x}]"] = m_of(sets.valleys.valley[x])
    report["delta"] = m_of(sets.valleys.complement)
    report["valley_scaled"] = n_star * report[f"valley[{sets.star_sites[0]}]"]
    report["inner_boundary_scaled"] = \
        n ** (1 + alpha) * m_of(sets.good_inner_boundary)
    for key, idx in sets.saddle.items():
        report[f"saddle{key}_scaled"] = n ** (alpha - 1) * m_of(idx)
    return report
