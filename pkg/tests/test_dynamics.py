import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import stats as sps

from zrpflow import _kernels
from zrpflow.dynamics import (
    PathStats,
    Trajectory,
    hypothesis_diagnostics,
    mc_paths,
    simulate,
    trace_chain_exact,
)
from zrpflow.geometry import build_valleys
from zrpflow.zrp import config_space, stationary_vector


# -- sampler validation ----------------------------------------------------

def test_uniform_stream():
    u = _kernels.sample_uniform(11, 0, 50_000)
    assert 0 < u.min() and u.max() <= 1
    assert sps.kstest(u, "uniform").pvalue > 1e-3
    # streams decorrelate
    v = _kernels.sample_uniform(11, 1, 50_000)
    assert abs(np.corrcoef(u, v)[0, 1]) < 0.02
    # identical (seed, stream) reproduces bitwise
    assert np.array_equal(u, _kernels.sample_uniform(11, 0, 50_000))


@pytest.mark.parametrize("shape", [1.0, 2.0, 3.0, 17.0, 400.5])
def test_gamma_sampler(shape):
    x = _kernels.sample_gamma(5, 3, 40_000, shape)
    assert sps.kstest(x, "gamma", args=(shape,)).pvalue > 1e-3


@pytest.mark.parametrize("lam", [0.3, 4.0, 25.0, 3000.0])
def test_poisson_sampler(lam):
    k = _kernels.sample_poisson(7, 1, 40_000, lam)
    assert abs(k.mean() - lam) < 4 * math.sqrt(lam / 40_000)
    assert abs(k.var() / lam - 1) < 0.05
    if lam < 10:
        # exact pmf comparison on the bulk
        vals = np.arange(int(lam + 10 * math.sqrt(lam)) + 1)
        expected = sps.poisson.pmf(vals, lam) * k.size
        observed = np.bincount(k, minlength=vals.size)[:vals.size]
        keep = expected > 5
        chi2 = np.sum((observed[keep] - expected[keep]) ** 2
                      / expected[keep])
        assert sps.chi2.sf(chi2, keep.sum() - 1) > 1e-4


@pytest.mark.parametrize("r,p", [(1, 0.45), (3, 0.3), (120, 0.52)])
def test_neg_binomial_sampler(r, p):
    k = _kernels.sample_neg_binomial(9, 2, 40_000, r, p)
    mean = r * (1 - p) / p
    var = r * (1 - p) / p ** 2
    assert abs(k.mean() - mean) < 5 * math.sqrt(var / 40_000)
    assert abs(k.var() / var - 1) < 0.06


def test_valley_sojourn_matches_event_simulation(model_a):
    # the fast-forward law must match brute-force absorption times
    n, ell = 30, 4
    g = model_a.g_table(n)
    out0 = np.array([g[n - j] * 1.0 for j in range(ell + 1)])
    in0 = np.array([g[j] * 1.0 for j in range(ell + 1)])
    fast = _kernels.sample_sojourn(3, 0, 30_000, out0, in0, ell)
    rng = np.random.default_rng(4)
    brute = np.empty(30_000)
    lam = out0 + in0
    b = out0 / lam
    for i in range(brute.size):
        j, t = ell, 0.0
        while True:
            t += rng.exponential(1.0 / lam[j])
            if rng.random() < b[j]:
                j += 1
                if j == ell + 1:
                    break
            else:
                j -= 1
        brute[i] = t
    assert sps.ks_2samp(fast, brute).pvalue > 1e-3


# -- trajectories ----------------------------------------------------------

def test_simulate_basic(model_a):
    traj = simulate(model_a, [2, 0], horizon=2000.0, seed=42)
    assert np.all(np.diff(traj.times) > 0)
    occ = traj.occupations()
    assert np.all(occ.sum(axis=1) == 2)
    # adjacency: each step moves exactly one particle
    diff = np.abs(np.diff(occ, axis=0)).sum(axis=1)
    assert np.all(diff == 2)
    # first jump from the apex must go to (1, 1)
    assert occ[1].tolist() == [1, 1]
    assert np.array_equal(
        traj.final, simulate(model_a, [2, 0], 2000.0, seed=42).final)


def test_holding_times_are_exponential(model_a):
    traj = simulate(model_a, [2, 0], horizon=50_000.0, seed=7)
    holds = traj.holding_times_at([2, 0])
    assert holds.size > 10_000
    # single admissible move at rate g(2) r = 8
    ks = sps.kstest(holds[:10_000] * 8.0, "expon")
    assert ks.pvalue > 1e-3


def test_simulate_large_sparse(model_d):
    # occupation-vector simulation scales to large N without enumeration
    traj = simulate(model_d, [100_000, 0, 0], horizon=1.0, seed=1)
    assert traj.final.sum() == 100_000


def test_ergodic_valley_occupation(model_a, space_c):
    # time average of the valley indicator approaches its measure
    mu = stationary_vector(model_a, space_c)
    traj = simulate(model_a, [2, 0], horizon=40_000.0, seed=3)
    occ = traj.occupations()
    t = np.concatenate([[0.0], traj.times, [traj.total_time]])
    holds = np.diff(t)
    at_apex = np.all(occ == [2, 0], axis=1)
    frac = holds[at_apex[:holds.size]].sum() / traj.total_time
    # batch-means standard error
    n_batch = 20
    edges = np.linspace(0, traj.total_time, n_batch + 1)
    batch = []
    cum = np.concatenate([[0.0], np.cumsum(holds * at_apex[:holds.size])])
    total = np.concatenate([[0.0], np.cumsum(holds)])
    for lo, hi in zip(edges, edges[1:]):
        i0, i1 = np.searchsorted(total, [lo, hi])
        i1 = min(i1, cum.size - 1)
        batch.append((cum[i1] - cum[i0]) / (total[i1] - total[i0]))
    se = np.std(batch, ddof=1) / math.sqrt(n_batch)
    assert abs(frac - mu[space_c.index_of([2, 0])]) <= 3.5 * se


# -- exact trace chain -------------------------------------------------------

def test_trace_chain_small(model_a, space_c):
    valleys = build_valleys(model_a, space_c, ell=0)
    tc = trace_chain_exact(model_a, space_c, valleys)
    # hand computation: j((2,0) -> (0,2)) = 8 * (1/2) = 4
    assert_allclose(tc.mean_rates[(0, 1)], 4.0, rtol=1e-12)
    assert_allclose(tc.holding_rates[0], 4.0, rtol=1e-12)
    assert tc.holding_identity_residual <= 1e-9
    assert tc.hitting_identity_residual <= 1e-9


def test_trace_chain_converges_to_condensate_rates(model_a):
    from zrpflow.walk import build_limit_chain
    from zrpflow.zrp import limit_constants

    consts = limit_constants(model_a)
    chain = build_limit_chain(model_a.walk, model_a.profile, 3.0,
                              consts.gamma_alpha, consts.i_alpha)
    target = chain.rate_matrix[0, 1]
    prev = None
    for n in (40, 60, 90):
        space = config_space(n, 2)
        valleys = build_valleys(model_a, space, ell=int(math.isqrt(n)))
        tc = trace_chain_exact(model_a, space, valleys)
        scaled = n ** 4 * tc.mean_rates[(0, 1)]
        gap = abs(scaled - target) / target
        if prev is not None:
            assert gap < prev
        prev = gap
    assert gap < 0.25


def test_trace_chain_three_valleys(model_b):
    space = config_space(40, 3)
    valleys = build_valleys(model_b, space, ell=2)
    tc = trace_chain_exact(model_b, space, valleys)
    assert tc.holding_identity_residual <= 1e-9
    assert tc.hitting_identity_residual <= 1e-9
    # cyclic symmetry of the fixture: all outward rates equal
    r01 = tc.mean_rates[(0, 1)]
    r12 = tc.mean_rates[(1, 2)]
    r20 = tc.mean_rates[(2, 0)]
    assert_allclose([r01, r12], [r12, r20], rtol=1e-9)


def test_trace_chain_mixed_masses(model_d):
    space = config_space(60, 3)
    valleys = build_valleys(model_d, space, ell=4, b={2: 2})
    tc = trace_chain_exact(model_d, space, valleys)
    assert tc.holding_identity_residual <= 1e-9
    assert tc.hitting_identity_residual <= 1e-9


# -- Monte Carlo -------------------------------------------------------------

def test_mc_engines_agree(model_a):
    # the fast-forward engine and the plain event engine estimate the
    # same rates within joint error bars
    n, ell = 30, 5
    horizon = 3.0e5
    fast = mc_paths(model_a, n, ell, {}, 0, horizon, 160, seed=21,
                    engine="fast")
    slow = mc_paths(model_a, n, ell, {}, 0, horizon, 160, seed=22,
                    engine="event")
    r_fast, se_fast = fast.rate_estimates()[(0, 1)]
    r_slow, se_slow = slow.rate_estimates()[(0, 1)]
    joint = math.hypot(se_fast, se_slow)
    assert abs(r_fast - r_slow) <= 3.5 * joint
    # and the projected distributions agree
    pf = fast.projection_distribution()
    ps = slow.projection_distribution()
    for key in pf:
        assert abs(pf[key] - ps[key]) <= 0.08


def test_mc_matches_exact_trace(model_a):
    n, ell = 30, 5
    space = config_space(n, 2)
    valleys = build_valleys(model_a, space, ell=ell)
    tc = trace_chain_exact(model_a, space, valleys)
    stats = mc_paths(model_a, n, ell, {}, 0, 6.0e5, 160, seed=5)
    assert stats.n_transitions >= 500
    rate, se = stats.rate_estimates()[(0, 1)]
    assert abs(rate - tc.mean_rates[(0, 1)]) <= 3 * se


def test_mc_generic_engine_three_sites(model_b):
    n = 25
    space = config_space(n, 3)
    valleys = build_valleys(model_b, space, ell=3)
    tc = trace_chain_exact(model_b, space, valleys)
    stats = mc_paths(model_b, n, 3, {}, 0, 3.0e4, 96, seed=17,
                     engine="event")
    est = stats.rate_estimates()
    for key in ((0, 1), (0, 2)):
        rate, se = est[key]
        assert abs(rate - tc.mean_rates[key]) <= 3.5 * se
    # symmetry of the cycle: both exits equally likely within noise
    assert abs(est[(0, 1)][0] - est[(1, 2)][0]) <= 3.5 * math.hypot(
        est[(0, 1)][1], est[(1, 2)][1])


def test_projection_against_two_state_law(model_a):
    # short-horizon projection law vs the analytic two-state chain
    n, ell = 30, 5
    space = config_space(n, 2)
    valleys = build_valleys(model_a, space, ell=ell)
    tc = trace_chain_exact(model_a, space, valleys)
    lam = tc.mean_rates[(0, 1)]
    horizon = 0.4 / lam
    stats = mc_paths(model_a, n, ell, {}, 0, horizon, 1000, seed=29)
    dist = stats.projection_distribution()
    # two-state symmetric chain at time t: P[other] = (1 - e^(-2 lam t))/2
    p_other = 0.5 * (1.0 - math.exp(-2.0 * lam * horizon))
    se = math.sqrt(p_other * (1 - p_other) / 1000)
    assert abs(dist[1] - p_other) <= 3 * se + 0.05
    assert dist["null"] < 0.1


def test_hypothesis_diagnostics_decay(model_a):
    ratios = []
    for n in (64, 128, 256):
        space = config_space(n, 2)
        valleys = build_valleys(model_a, space, ell=int(math.isqrt(n)))
        diag = hypothesis_diagnostics(model_a, space, valleys)
        ratios.append((diag[0]["capacity_ratio"], diag[0]["measure_ratio"]))
    caps = [r[0] for r in ratios]
    meas = [r[1] for r in ratios]
    assert all(a > b for a, b in zip(caps, caps[1:]))
    assert all(a > b for a, b in zip(meas, meas[1:]))
    assert meas[-1] <= 0.1


def test_hypothesis_singleton_valley(model_a, space_c):
    valleys = build_valleys(model_a, space_c, ell=0)
    diag = hypothesis_diagnostics(model_a, space_c, valleys)
    assert diag[0]["capacity_ratio"] == 0.0
