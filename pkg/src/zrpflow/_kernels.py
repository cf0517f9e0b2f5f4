"""Event-driven simulation kernels (numba).

Random numbers come from splitmix64 streams: the state advances by a
fixed odd constant and every output is a bijective mix of the state, so
a stream is a counter-based generator keyed by (seed, stream index) and
bitwise reproducible regardless of scheduling.

The two-site kernel accelerates the deep-valley dwell exactly: a valley
sojourn entered at its boundary level is a birth-death excursion whose
per-level visit counts factor into independent negative-binomial layers
(each departure is an independent Bernoulli between "inward" and
"outward"); sampling the visit counts level by level and the holding
times as Gamma sums reproduces the sojourn-time law exactly while
replacing ~10^5 jump events by a few dozen draws.  Everything outside
valleys, and the first sojourn (which may start at the apex rather than
the boundary), runs event by event with exponential clocks.
"""

import math

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U53 = 1.0 / 9007199254740992.0          # 2^-53


@njit(cache=True, inline="always")
def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def stream_state(seed, stream):
    """Initial splitmix64 state for (seed, stream)."""
    z = _mix64(np.uint64(seed) ^ (_GOLDEN * np.uint64(stream + 1)))
    return _mix64(z + _GOLDEN)


@njit(cache=True, inline="always")
def _next_u64(st):
    st[0] = st[0] + _GOLDEN
    return _mix64(st[0])


@njit(cache=True, inline="always")
def _uniform(st):
    # in (0, 1]
    return (np.float64(_next_u64(st) >> np.uint64(11)) + 1.0) * _U53


@njit(cache=True, inline="always")
def _exponential(st):
    return -math.log(_uniform(st))


@njit(cache=True)
def _normal(st):
    u1 = _uniform(st)
    u2 = _uniform(st)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(6.283185307179586 * u2)


@njit(cache=True)
def _gamma_shape(st, shape):
    """Gamma(shape, 1) for shape >= 1 (Marsaglia-Tsang rejection)."""
    if shape <= 2.5:
        # integer-ish small shapes: exact as a short exponential sum when
        # integral, else fall through to rejection below
        if shape == math.floor(shape):
            total = 0.0
            for _ in range(int(shape)):
                total += _exponential(st)
            return total
    d = shape - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        x = _normal(st)
        v = 1.0 + c * x
        if v <= 0.0:
            continue
        v = v * v * v
        u = _uniform(st)
        if u < 1.0 - 0.0331 * x * x * x * x:
            return d * v
        if math.log(u) < 0.5 * x * x + d * (1.0 - v + math.log(v)):
            return d * v


@njit(cache=True)
def _poisson(st, lam):
    if lam <= 0.0:
        return 0
    if lam < 10.0:
        limit = math.exp(-lam)
        prod = _uniform(st)
        k = 0
        while prod > limit:
            prod *= _uniform(st)
            k += 1
        return k
    # PTRS transformed rejection (Hormann)
    b = 0.931 + 2.53 * math.sqrt(lam)
    a = -0.059 + 0.02483 * b
    inv_alpha = 1.1239 + 1.1328 / (b - 3.4)
    v_r = 0.9277 - 3.6224 / (b - 2.0)
    log_lam = math.log(lam)
    while True:
        u = _uniform(st) - 0.5
        v = _uniform(st)
        us = 0.5 - abs(u)
        k = int(math.floor((2.0 * a / us + b) * u + lam + 0.43))
        if us >= 0.07 and v <= v_r:
            return k
        if k < 0 or (us < 0.013 and v > us):
            continue
        if (math.log(v) + math.log(inv_alpha)
                - math.log(a / (us * us) + b)) <= (
                k * log_lam - lam - math.lgamma(k + 1.0)):
            return k


@njit(cache=True)
def _neg_binomial(st, r, p):
    """Failures before the r-th success, success probability p."""
    if p >= 1.0:
        return 0
    scale = (1.0 - p) / p
    g = _gamma_shape(st, np.float64(r)) * scale
    return _poisson(st, g)


@njit(cache=True)
def _valley_sojourn(st, out_rate, in_rate, ell):
    """Exact sojourn time of a valley entered at its boundary level.

    Level j counts particles away from the apex; the chain enters at
    j = ell and leaves for good at its first move to ell+1.
    """
    tau = 0.0
    entries = 1
    for j in range(ell, -1, -1):
        lam = out_rate[j] + in_rate[j]
        if j == 0:
            visits = entries
            inward = 0
        else:
            b = out_rate[j] / lam
            inward = _neg_binomial(st, entries, b)
            visits = entries + inward
        if visits == 1:
            tau += _exponential(st) / lam
        elif visits > 1:
            tau += _gamma_shape(st, np.float64(visits)) / lam
        if j > 0 and inward == 0:
            break
        entries = inward
    return tau


@njit(cache=True)
def two_site_paths(n_paths, horizon, k_start, n_particles, ell,
                   rate_01, rate_10, g_table, seed,
                   counts_out, time_out, final_out, events_out,
                   fast_forward):
    """Independent two-site trajectories with valley statistics.

    Per path: counts_out[p, a, b] transitions of the glued valley record
    from valley a to valley b, time_out[p, a] clock time spent inside
    valley a, final_out[p] the valley projection at the horizon (-1 when
    between valleys), events_out[p] the number of simulated jump events.
    Valley 0 is the high-occupancy side of site 0 (k >= N - ell), valley
    1 the k <= ell side.
    """
    n = n_particles
    down = np.empty(n + 1)         # k -> k-1
    up = np.empty(n + 1)           # k -> k+1
    for k in range(n + 1):
        down[k] = g_table[k] * rate_01
        up[k] = g_table[n - k] * rate_10
    # valley 0 levels: j = N - k; valley 1 levels: j = k
    out0 = np.empty(ell + 1)
    in0 = np.empty(ell + 1)
    out1 = np.empty(ell + 1)
    in1 = np.empty(ell + 1)
    for j in range(ell + 1):
        out0[j] = down[n - j]      # away from apex k = N
        in0[j] = up[n - j]
        out1[j] = up[j]            # away from apex k = 0
        in1[j] = down[j]
    st = np.empty(1, dtype=np.uint64)
    for p in range(n_paths):
        st[0] = stream_state(seed, p)
        k = k_start
        t = 0.0
        events = 0
        last = 0 if k >= n - ell else (1 if k <= ell else -1)
        final = last
        while t < horizon:
            lam = down[k] + up[k]
            dt = _exponential(st) / lam
            here = 0 if k >= n - ell else (1 if k <= ell else -1)
            if t + dt >= horizon:
                if here >= 0:
                    time_out[p, here] += horizon - t
                final = here
                t = horizon
                break
            if here >= 0:
                time_out[p, here] += dt
            t += dt
            events += 1
            if _uniform(st) * lam < down[k]:
                k -= 1
            else:
                k += 1
            entered = -1
            if k == n - ell and here != 0:
                entered = 0
            elif k == ell and here != 1:
                entered = 1
            if entered >= 0:
                if last >= 0 and entered != last:
                    counts_out[p, last, entered] += 1
                last = entered
                if fast_forward:
                    if entered == 0:
                        tau = _valley_sojourn(st, out0, in0, ell)
                    else:
                        tau = _valley_sojourn(st, out1, in1, ell)
                    if t + tau >= horizon:
                        time_out[p, entered] += horizon - t
                        final = entered
                        t = horizon
                        break
                    time_out[p, entered] += tau
                    t += tau
                    k = n - ell - 1 if entered == 0 else ell + 1
        final_out[p] = final
        events_out[p] = events


@njit(cache=True)
def _total_rate(occ, g_table, row_sum, kappa):
    total = 0.0
    for x in range(kappa):
        total += g_table[occ[x]] * row_sum[x]
    return total


@njit(cache=True)
def _valley_of(occ, star, ell, b_cap, n, kappa):
    for z in range(kappa):
        if occ[z] > b_cap[z]:
            return -1
    for i in range(star.size):
        if occ[star[i]] >= n - ell:
            return i
    return -1


@njit(cache=True)
def generic_paths(n_paths, horizon, occ_start, rates, g_table,
                  star, ell, b_cap, seed,
                  counts_out, time_out, final_out, events_out):
    """Event-by-event trajectories for any site count (no fast-forward)."""
    kappa = occ_start.size
    n = 0
    for x in range(kappa):
        n += occ_start[x]
    row_sum = np.empty(kappa)
    for x in range(kappa):
        s = 0.0
        for y in range(kappa):
            s += rates[x, y]
        row_sum[x] = s
    st = np.empty(1, dtype=np.uint64)
    occ = np.empty(kappa, dtype=np.int64)
    for p in range(n_paths):
        st[0] = stream_state(seed, p)
        for x in range(kappa):
            occ[x] = occ_start[x]
        t = 0.0
        events = 0
        last = _valley_of(occ, star, ell, b_cap, n, kappa)
        final = last
        while t < horizon:
            lam = _total_rate(occ, g_table, row_sum, kappa)
            dt = _exponential(st) / lam
            here = _valley_of(occ, star, ell, b_cap, n, kappa)
            if t + dt >= horizon:
                if here >= 0:
                    time_out[p, here] += horizon - t
                final = here
                t = horizon
                break
            if here >= 0:
                time_out[p, here] += dt
            t += dt
            events += 1
            # pick the departing site, then the target
            u = _uniform(st) * lam
            acc = 0.0
            src = kappa - 1
            for x in range(kappa):
                acc += g_table[occ[x]] * row_sum[x]
                if u < acc:
                    src = x
                    break
            u2 = _uniform(st) * row_sum[src]
            acc2 = 0.0
            dst = kappa - 1
            for y in range(kappa):
                acc2 += rates[src, y]
                if u2 < acc2:
                    dst = y
                    break
            occ[src] -= 1
            occ[dst] += 1
            here2 = _valley_of(occ, star, ell, b_cap, n, kappa)
            if here2 >= 0 and here2 != last:
                if last >= 0:
                    counts_out[p, last, here2] += 1
                last = here2
        final_out[p] = final
        events_out[p] = events


@njit(cache=True)
def record_path(occ, rates, g_table, horizon, seed, stream,
                times_out, src_out, dst_out):
    """One trajectory with every jump recorded; returns (count, end time).

    Mutates occ to the final configuration.  Recording stops at the
    array capacity; simulation continues to the horizon regardless.
    """
    kappa = occ.size
    row_sum = np.empty(kappa)
    for x in range(kappa):
        s = 0.0
        for y in range(kappa):
            s += rates[x, y]
        row_sum[x] = s
    st = np.empty(1, dtype=np.uint64)
    st[0] = stream_state(seed, stream)
    capacity = times_out.size
    t = 0.0
    count = 0
    while True:
        lam = _total_rate(occ, g_table, row_sum, kappa)
        if lam <= 0.0:
            return count, t
        dt = _exponential(st) / lam
        if t + dt >= horizon:
            return count, horizon
        t += dt
        u = _uniform(st) * lam
        acc = 0.0
        src = kappa - 1
        for x in range(kappa):
            acc += g_table[occ[x]] * row_sum[x]
            if u < acc:
                src = x
                break
        u2 = _uniform(st) * row_sum[src]
        acc2 = 0.0
        dst = kappa - 1
        for y in range(kappa):
            acc2 += rates[src, y]
            if u2 < acc2:
                dst = y
                break
        occ[src] -= 1
        occ[dst] += 1
        if count < capacity:
            times_out[count] = t
            src_out[count] = src
            dst_out[count] = dst
            count += 1


@njit(cache=True)
def sample_gamma(seed, stream, n, shape):
    st = np.empty(1, dtype=np.uint64)
    st[0] = stream_state(seed, stream)
    out = np.empty(n)
    for i in range(n):
        out[i] = _gamma_shape(st, shape)
    return out


@njit(cache=True)
def sample_poisson(seed, stream, n, lam):
    st = np.empty(1, dtype=np.uint64)
    st[0] = stream_state(seed, stream)
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        out[i] = _poisson(st, lam)
    return out


@njit(cache=True)
def sample_neg_binomial(seed, stream, n, r, p):
    st = np.empty(1, dtype=np.uint64)
    st[0] = stream_state(seed, stream)
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        out[i] = _neg_binomial(st, r, p)
    return out


@njit(cache=True)
def sample_uniform(seed, stream, n):
    st = np.empty(1, dtype=np.uint64)
    st[0] = stream_state(seed, stream)
    out = np.empty(n)
    for i in range(n):
        out[i] = _uniform(st)
    return out


@njit(cache=True)
def sample_sojourn(seed, stream, n, out_rate, in_rate, ell):
    st = np.empty(1, dtype=np.uint64)
    st[0] = stream_state(seed, stream)
    out = np.empty(n)
    for i in range(n):
        out[i] = _valley_sojourn(st, out_rate, in_rate, ell)
    return out
