import json
import math
from fractions import Fraction

import numpy as np
import pytest
from numpy.testing import assert_allclose

from zrpflow.errors import ScaleOrderViolated
from zrpflow.geometry import (
    build_sets,
    build_valleys,
    default_scales,
    set_measures,
)
from zrpflow.zrp import config_space, stationary_vector


def test_default_scales_values(model_a, model_d):
    s = default_scales(model_a, 10_000, 0.05)
    assert s.pi == 2154            # floor(10^4 ^ (1/3 + 1/2))
    assert s.ell == 100            # exponent 1/(2 (kappa-1)) = 1/2
    assert s.b == {}
    d = default_scales(model_d, 300, 0.05)
    assert d.ell == 4              # floor(300^(1/4))
    assert set(d.b) == {2}
    assert d.b[2] == 1
    assert d.amp_product > 0


def test_scale_order_flag(model_a):
    s = default_scales(model_a, 100, 0.05)
    assert not s.order_ok          # pi = 46 exceeds floor(N eps) = 5
    assert s.min_order_n > 100
    big = default_scales(model_a, s.min_order_n, 0.05)
    assert big.order_ok


def test_scale_order_enforced_with_three_condensation_sites(model_b):
    # three maximal-mass sites: overlapping saddles must be rejected
    with pytest.raises(ScaleOrderViolated):
        default_scales(model_b, 60, 0.05)


def test_eps_range_guard(model_a):
    with pytest.raises(ScaleOrderViolated):
        default_scales(model_a, 100, 0.2)
    with pytest.raises(ScaleOrderViolated):
        default_scales(model_a, 100, 0.0)


def test_valleys_two_site(model_a):
    space = config_space(100, 2)
    v = build_valleys(model_a, space, ell=10)
    occ = space.occupations
    assert np.all(occ[v.valley[0]][:, 0] >= 90)
    assert np.all(occ[v.valley[1]][:, 1] >= 90)
    assert v.valley[0].size == 11
    # apex configurations always belong to their valley
    assert v.apex[0] in v.valley[0]
    assert v.apex[1] in v.valley[1]
    assert v.union.size == 22
    assert v.complement.size == space.size - 22
    assert v.valley_of(occ[v.apex[0]]) == 0
    assert v.valley_of([50, 50]) == -1


def test_valleys_respect_b_caps(model_d):
    space = config_space(40, 3)
    v = build_valleys(model_d, space, ell=3, b={2: 1})
    occ = space.occupations
    for x in (0, 1):
        assert np.all(occ[v.valley[x]][:, 2] <= 1)
        assert np.all(occ[v.valley[x]][:, x] >= 37)
    assert v.valley_of([37, 1, 2]) == -1    # third site over its cap


def test_overlapping_valleys_rejected(model_a):
    space = config_space(10, 2)
    with pytest.raises(ScaleOrderViolated):
        build_valleys(model_a, space, ell=6)


def test_build_sets_two_site(model_a):
    space = config_space(100, 2)
    scales = default_scales(model_a, 100, 0.05)
    sets = build_sets(model_a, space, scales)
    occ = space.occupations
    # wells at the ceiling threshold 90
    assert sets.well_threshold == 90
    assert np.all(occ[sets.well[0]][:, 0] >= 90)
    # with two sites the tube is everything
    assert sets.tube[(0, 1)].size == space.size
    # saddle = strictly between the wells
    sd = occ[sets.saddle[(0, 1)]][:, 0]
    assert sd.min() == 11 and sd.max() == 89
    # the vee side sets are the single pure condensates
    assert sets.vee[(0, 1)][0].tolist() == [sets.valleys.apex[0]]
    assert sets.vee[(0, 1)][1].tolist() == [sets.valleys.apex[1]]


def test_build_sets_three_site(model_d):
    space = config_space(60, 3)
    scales = default_scales(model_d, 60, 0.05)
    sets = build_sets(model_d, space, scales)
    occ = space.occupations
    key = (0, 1)
    assert np.all(occ[sets.tube[key]][:, 2] <= scales.pi)
    inner = sets.saddle_inner_boundary[key]
    assert np.all(occ[inner][:, 0] + occ[inner][:, 1] == 60 - scales.pi)
    outer = sets.saddle_outer_boundary[key]
    assert np.all(occ[outer][:, 0] + occ[outer][:, 1] == 60 - scales.pi - 1)
    # partitions already asserted at construction; spot-check disjointness
    assert np.intersect1d(sets.good_region, sets.outside_interior).size == 0


def test_valley_narrower_than_well_enforced(model_a):
    space = config_space(50, 2)
    scales = default_scales(model_a, 50, 0.05)
    # ell = 7 but N - ell = 43 < ceil(50 * 0.9) = 45
    with pytest.raises(ScaleOrderViolated):
        build_sets(model_a, space, scales)


def test_measure_concentrates_on_valleys(model_a):
    prev = None
    for n in (256, 512, 1024):
        space = config_space(n, 2)
        v = build_valleys(model_a, space, ell=int(math.isqrt(n)))
        mu = stationary_vector(model_a, space)
        val = 2 * float(mu[v.valley[0]].sum())
        gap = abs(val - 1)
        if prev is not None:
            assert gap < prev
        prev = gap
    assert gap <= 0.02
    # partition: valleys + delta = 1
    total = float(mu[v.union].sum() + mu[v.complement].sum())
    assert_allclose(total, 1.0, atol=1e-12)


def test_boundary_measure_decays(model_a, model_d):
    # with two sites the tube swallows every configuration, so the inner
    # boundary of the good region is structurally empty
    for n in (256, 512):
        space = config_space(n, 2)
        sets = build_sets(model_a, space, default_scales(model_a, n, 0.05))
        assert sets.good_inner_boundary.size == 0
        assert set_measures(model_a, space, sets)["inner_boundary_scaled"] == 0
    # a third site makes it real; the scaled measure must decay
    scaled = []
    for n in (40, 60, 80, 100):
        space = config_space(n, 3)
        sets = build_sets(model_d, space, default_scales(model_d, n, 0.05))
        rep = set_measures(model_d, space, sets)
        scaled.append(rep["inner_boundary_scaled"])
    assert all(s > 0 for s in scaled)
    assert all(a > b for a, b in zip(scaled, scaled[1:]))


def test_set_measures_report(model_a):
    space = config_space(256, 2)
    sets = build_sets(model_a, space, default_scales(model_a, 256, 0.05))
    rep = set_measures(model_a, space, sets)
    assert abs(rep["valley_scaled"] - 1) < 0.01
    assert rep["delta"] < 0.01
    assert np.isfinite(rep["saddle(0, 1)_scaled"])


def test_summary_json(tmp_path, model_a):
    space = config_space(128, 2)
    sets = build_sets(model_a, space, default_scales(model_a, 128, 0.05))
    path = tmp_path / "sets.json"
    sets.summary_json(path)
    data = json.loads(path.read_text())
    assert data["sets"]["valley[0]"]["size"] == 12
    assert 0 < data["sets"]["valley[0]"]["measure"] < 1


def test_fraction_thresholds_are_exact(model_a):
    # 0.05 is not a binary fraction; exact rational arithmetic must land
    # the well threshold on the intended integer anyway
    space = config_space(100, 2)
    sets = build_sets(model_a, space, default_scales(model_a, 100, Fraction(1, 20)))
    assert sets.well_threshold == 90
