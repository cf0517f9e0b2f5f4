"""Particle configurations and dense configuration spaces.

A configuration is an occupation vector eta over a site list, with
sum(eta) = N.  The set of all such vectors is indexed 0..M-1, with
M = C(N + n_sites - 1, n_sites - 1), through the stars-and-bars bijection
applied to the reversed vector: with rev = (eta_k, .., eta_1) the separator
positions

    p_i = rev_1 + ... + rev_i + (i - 1),   i = 1..n_sites-1,

form an (n_sites-1)-subset of {0, .., N + n_sites - 2}, ranked
colexicographically by rank = sum_i C(p_i, i).  Reversal makes the order
run through the first-site occupancy in descending order, so rank 0 is
the configuration with all particles on the first site.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import RankOverflow

_INT64_MAX = np.iinfo(np.int64).max


def space_size(n_particles: int, n_sites: int) -> int:
    return math.comb(n_particles + n_sites - 1, n_sites - 1)


def rank_configuration(eta) -> int:
    """Colex rank of one occupation vector (pure-python, exact)."""
    r = 0
    p = -1
    for i, occ in enumerate(reversed(list(eta[1:])), start=1):
        p += occ + 1
        r += math.comb(p, i)
    return r


def unrank_configuration(r: int, n_particles: int, n_sites: int):
    """Inverse of :func:`rank_configuration` (combinadic greedy)."""
    if n_sites == 1:
        return [n_particles]
    positions = [0] * (n_sites - 1)
    k = n_sites - 1
    n = n_particles + n_sites - 1
    while k > 0:
        n -= 1
        while r < math.comb(n, k):
            n -= 1
        r -= math.comb(n, k)
        positions[k - 1] = n
        k -= 1
    rev = [0] * n_sites
    prev = -1
    for i, p in enumerate(positions):
        rev[i] = p - prev - 1
        prev = p
    rev[-1] = (n_particles + n_sites - 1) - 1 - prev
    return rev[::-1]


@dataclass(frozen=True)
class ConfigSpace:
    """Dense space of N-particle configurations on a site list.

    ``occupations`` holds all configurations as an (M, n_sites) int64
    matrix, row i being the configuration of rank i.  Ranking of
    arbitrary occupation matrices is vectorised through a precomputed
    binomial table.
    """

    n_particles: int
    n_sites: int
    occupations: np.ndarray = field(repr=False)
    _binom: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, n_particles: int, n_sites: int) -> "ConfigSpace":
        if n_sites < 1 or n_particles < 0:
            raise ValueError("need n_sites >= 1 and n_particles >= 0")
        size = space_size(n_particles, n_sites)
        if size > _INT64_MAX:
            raise RankOverflow(f"|H_N| = {size} exceeds the int64 index width")
        occ = _enumerate_ranked(n_particles, n_sites)
        binom = _binomial_table(n_particles + n_sites - 1, n_sites - 1)
        return cls(n_particles, n_sites, occ, binom)

    @property
    def size(self) -> int:
        return self.occupations.shape[0]

    def __len__(self) -> int:
        return self.size

    def rank(self, eta) -> int:
        eta = np.asarray(eta, dtype=np.int64)
        return int(self.rank_many(eta[None, :])[0])

    def rank_many(self, occ: np.ndarray) -> np.ndarray:
        """Ranks of the rows of an (m, n_sites) occupation matrix."""
        occ = np.asarray(occ, dtype=np.int64)
        if occ.shape[-1] != self.n_sites:
            raise ValueError("occupation width mismatch")
        if self.n_sites == 1:
            return np.zeros(occ.shape[0], dtype=np.int64)
        rev = occ[:, ::-1]
        pos = np.cumsum(rev[:, :-1] + 1, axis=1) - 1
        r = np.zeros(occ.shape[0], dtype=np.int64)
        for i in range(self.n_sites - 1):
            r += self._binom[pos[:, i], i + 1]
        return r

    def unrank(self, r: int) -> np.ndarray:
        return self.occupations[r]

    def index_of(self, eta) -> int:
        r = self.rank(eta)
        if not 0 <= r < self.size or not np.array_equal(
                self.occupations[r], np.asarray(eta, dtype=np.int64)):
            raise ValueError(f"configuration {eta} outside the space")
        return r


def _enumerate_ranked(n_particles: int, n_sites: int) -> np.ndarray:
    """All configurations in rank order (first site descending)."""
    if n_sites == 1:
        return np.array([[n_particles]], dtype=np.int64)
    blocks = []
    for first in range(n_particles, -1, -1):
        tail = _enumerate_ranked(n_particles - first, n_sites - 1)
        block = np.empty((tail.shape[0], n_sites), dtype=np.int64)
        block[:, 0] = first
        block[:, 1:] = tail
        blocks.append(block)
    return np.concatenate(blocks, axis=0)


def _binomial_table(n_max: int, k_max: int) -> np.ndarray:
    """C(n, k) for 0 <= n <= n_max, 0 <= k <= k_max as int64 (checked)."""
    t = np.zeros((n_max + 1, k_max + 1), dtype=np.int64)
    t[:, 0] = 1
    for n in range(1, n_max + 1):
        for k in range(1, k_max + 1):
            c = math.comb(n, k)
            if c > _INT64_MAX:
                raise RankOverflow("binomial table exceeds int64")
            t[n, k] = c
    return t


def apply_move(eta, src: int, dst: int):
    """One particle moved src -> dst; identity when src empty or src == dst."""
    out = np.array(eta, dtype=np.int64, copy=True)
    if src == dst or out[src] == 0:
        return out
    out[src] -= 1
    out[dst] += 1
    return out


def truncated_mask(space: ConfigSpace, star_sites, depth: int) -> np.ndarray:
    """Mask of configurations with occ(x) < N - depth on all listed sites.

    The listed sites are the maximal-mass ones of the ambient model; the
    mask selects configurations carrying no near-condensate on any of them.
    """
    occ = space.occupations
    cut = space.n_particles - depth
    m = np.ones(space.size, dtype=bool)
    for x in star_sites:
        m &= occ[:, x] < cut
    return m
