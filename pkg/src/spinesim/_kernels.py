"""Numba kernels shared by every simulator.

Trees live in flat buffers so the same code path serves the single-tree API
(which wraps the buffers in a :class:`~spinesim.tree.MarkedTree`) and the
batch replicate engine (which reduces the buffers to features in place).

Buffer layout
-------------
nf[u]   float: birth, death (inf if alive at horizon), x at birth, x at end
ni[u]   int:   parent, child ordinal (1-based), r (-1 if alive at horizon),
               type at birth, type at end, first sample, sample count,
               first child (-1 if none), on-spine flag
sf[s]   float: time, position
si[s]   int:   type, observation index (-1 for event-only samples)
ctr     int:   node count, sample count, stack height

Model tables
------------
ftab[i] float: diffusion, drift under P, rate bound under P (beta),
               mean offspring A, geometric success, spine drift,
               spine rate bound (A * beta), beta_max for thinning
itab[i] int:   law kind (0 table, 1 geometric), table length
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

# status codes
OK = 0
NEED_NODES = 1
NEED_SAMPLES = 2
CAPPED = 3
MISSING_SAMPLE = 4

# ftab columns
F_DIFF, F_DRIFT, F_RATE, F_MEAN, F_GEOM, F_QDRIFT, F_QRATE, F_BMAX = range(8)
N_FCOLS = 8
# itab columns
I_KIND, I_LEN = range(2)
N_ICOLS = 2
# nf / ni columns
NF_BIRTH, NF_DEATH, NF_X0, NF_X1 = range(4)
NI_PARENT, NI_CHILD, NI_R, NI_T0, NI_T1, NI_S0, NI_SN, NI_FIRST, NI_SPINE = range(9)
N_NF, N_NI = 4, 9


@njit(cache=True)
def no_space_rate(x, i):
    return 0.0


@njit(cache=True)
def _move(rng, x, dt, diff, drift):
    if diff > 0.0:
        return x + drift * dt + math.sqrt(diff * dt) * rng.standard_normal()
    return x + drift * dt


@njit(cache=True)
def _record(sf, si, ctr, t, x, i, k):
    s = ctr[1]
    if s >= sf.shape[0]:
        return False
    sf[s, 0] = t
    sf[s, 1] = x
    si[s, 0] = i
    si[s, 1] = k
    ctr[1] = s + 1
    return True


@njit(cache=True)
def _pick_jump(rng, gen, i, q):
    u = rng.random() * q
    acc = 0.0
    last = i
    for j in range(gen.shape[0]):
        if j == i or gen[i, j] <= 0.0:
            continue
        acc += gen[i, j]
        last = j
        if u < acc:
            return j
    return last


@njit(cache=True)
def _geometric(rng, s):
    # failures before the first success
    return int(math.floor(math.log(1.0 - rng.random()) / math.log(1.0 - s)))


@njit(cache=True)
def draw_count(rng, kind, geom_s, cdf_row, length, size_biased):
    if kind == 1:
        if size_biased:
            return 1 + _geometric(rng, geom_s) + _geometric(rng, geom_s)
        return _geometric(rng, geom_s)
    u = rng.random() * cdf_row[length - 1]
    return np.searchsorted(cdf_row[:length], u, side="right")


@njit(cache=True)
def _first_obs(obs, t):
    return np.searchsorted(obs, t, side="left")


@njit(cache=True)
def run_life(rng, u, horizon, obs, ftab, gen, drift_col, rate_col, space, beta_fn, nf, ni, sf, si, ctr):
    """Move node ``u`` from its birth until it dies or reaches the horizon.

    Returns (status, died). The node's end state, death time and samples are
    filled in; offspring are left to the caller.
    """
    t = nf[u, NF_BIRTH]
    x = nf[u, NF_X0]
    i = ni[u, NI_T0]
    n_obs = obs.shape[0]
    k = _first_obs(obs, t)
    ni[u, NI_S0] = ctr[1]
    kb = -1
    if k < n_obs and obs[k] == t:
        kb = k
        k += 1
    if not _record(sf, si, ctr, t, x, i, kb):
        return NEED_SAMPLES, False
    died = False
    while True:
        q = -gen[i, i]
        rb = ftab[i, rate_col]
        tot = q + rb
        if tot > 0.0:
            tn = t + rng.exponential(1.0) / tot
        else:
            tn = math.inf
        diff = ftab[i, F_DIFF]
        drift = ftab[i, drift_col]
        while k < n_obs and obs[k] < tn and obs[k] < horizon:
            x = _move(rng, x, obs[k] - t, diff, drift)
            t = obs[k]
            if not _record(sf, si, ctr, t, x, i, k):
                return NEED_SAMPLES, False
            k += 1
        if tn >= horizon:
            x = _move(rng, x, horizon - t, diff, drift)
            t = horizon
            kh = -1
            if k < n_obs and obs[k] == horizon:
                kh = k
            if not _record(sf, si, ctr, t, x, i, kh):
                return NEED_SAMPLES, False
            nf[u, NF_DEATH] = math.inf
            ni[u, NI_R] = -1
            break
        x = _move(rng, x, tn - t, diff, drift)
        t = tn
        if rng.random() * tot < q:
            i = _pick_jump(rng, gen, i, q)
            if not _record(sf, si, ctr, t, x, i, -1):
                return NEED_SAMPLES, False
            continue
        if space and rng.random() * ftab[i, F_BMAX] >= beta_fn(x, i):
            continue
        if not _record(sf, si, ctr, t, x, i, -1):
            return NEED_SAMPLES, False
        nf[u, NF_DEATH] = t
        died = True
        break
    nf[u, NF_X1] = x
    ni[u, NI_T1] = i
    ni[u, NI_SN] = ctr[1] - ni[u, NI_S0]
    return OK, died


@njit(cache=True)
def _add_children(u, r, max_nodes, nf, ni, ctr):
    n = ctr[0]
    if n + r > max_nodes:
        return CAPPED
    if n + r > nf.shape[0]:
        return NEED_NODES
    ni[u, NI_R] = r
    ni[u, NI_FIRST] = n if r > 0 else -1
    for j in range(r):
        c = n + j
        nf[c, NF_BIRTH] = nf[u, NF_DEATH]
        nf[c, NF_DEATH] = math.nan
        nf[c, NF_X0] = nf[u, NF_X1]
        nf[c, NF_X1] = math.nan
        ni[c, NI_PARENT] = u
        ni[c, NI_CHILD] = j + 1
        ni[c, NI_R] = -1
        ni[c, NI_T0] = ni[u, NI_T1]
        ni[c, NI_T1] = -1
        ni[c, NI_S0] = -1
        ni[c, NI_SN] = 0
        ni[c, NI_FIRST] = -1
        ni[c, NI_SPINE] = 0
    ctr[0] = n + r
    return OK


@njit(cache=True)
def init_root(x, i, nf, ni, ctr):
    nf[0, NF_BIRTH] = 0.0
    nf[0, NF_DEATH] = math.nan
    nf[0, NF_X0] = x
    nf[0, NF_X1] = math.nan
    ni[0, NI_PARENT] = -1
    ni[0, NI_CHILD] = 0
    ni[0, NI_R] = -1
    ni[0, NI_T0] = i
    ni[0, NI_T1] = -1
    ni[0, NI_S0] = -1
    ni[0, NI_SN] = 0
    ni[0, NI_FIRST] = -1
    ni[0, NI_SPINE] = 0
    ctr[0] = 1
    ctr[1] = 0
    ctr[2] = 0


@njit(cache=True)
def grow(rng, horizon, obs, tabs, space, beta_fn, max_nodes, bufs):
    """Simulate every node on the stack (and all descendants) under P."""
    ftab, itab, gen, gen_q, cdf, sbcdf = tabs
    nf, ni, sf, si, stack, ctr = bufs
    while ctr[2] > 0:
        ctr[2] -= 1
        u = stack[ctr[2]]
        status, died = run_life(rng, u, horizon, obs, ftab, gen, F_DRIFT, F_RATE, space, beta_fn,
                                nf, ni, sf, si, ctr)
        if status != OK:
            return status
        if not died:
            continue
        i = ni[u, NI_T1]
        r = draw_count(rng, itab[i, I_KIND], ftab[i, F_GEOM], cdf[i], itab[i, I_LEN], False)
        status = _add_children(u, r, max_nodes, nf, ni, ctr)
        if status != OK:
            return status
        first = ni[u, NI_FIRST]
        for j in range(r - 1, -1, -1):
            stack[ctr[2]] = first + j
            ctr[2] += 1
    return OK


@njit(cache=True)
def simulate_p_tree(rng, horizon, obs, tabs, space, beta_fn, max_nodes, bufs, x0, i0):
    nf, ni, sf, si, stack, ctr = bufs
    init_root(x0, i0, nf, ni, ctr)
    stack[0] = 0
    ctr[2] = 1
    return grow(rng, horizon, obs, tabs, space, beta_fn, max_nodes, bufs)


@njit(cache=True)
def select_spine(rng, nf, ni):
    """Uniform choice among offspring at each fission; returns the dagger time (inf if none)."""
    u = 0
    ni[0, NI_SPINE] = 1
    while True:
        r = ni[u, NI_R]
        if r < 0:
            return math.inf
        if r == 0:
            return nf[u, NF_DEATH]
        j = int(rng.random() * r)
        u = ni[u, NI_FIRST] + j
        ni[u, NI_SPINE] = 1


@njit(cache=True)
def simulate_spine_q(rng, horizon, obs, tabs, space, beta_fn, max_nodes, bufs, x0, i0):
    """Spine phase under the size-biased measure.

    The spine moves with the h-transformed motion and fissions at rate A*beta
    with size-biased family sizes. Non-spine children are allocated and left
    on the stack for :func:`grow`.
    """
    ftab, itab, gen, gen_q, cdf, sbcdf = tabs
    nf, ni, sf, si, stack, ctr = bufs
    init_root(x0, i0, nf, ni, ctr)
    ni[0, NI_SPINE] = 1
    u = 0
    while True:
        status, died = run_life(rng, u, horizon, obs, ftab, gen_q, F_QDRIFT, F_QRATE, space, beta_fn,
                                nf, ni, sf, si, ctr)
        if status != OK:
            return status
        if not died:
            return OK
        i = ni[u, NI_T1]
        r = draw_count(rng, itab[i, I_KIND], ftab[i, F_GEOM], sbcdf[i], itab[i, I_LEN], True)
        status = _add_children(u, r, max_nodes, nf, ni, ctr)
        if status != OK:
            return status
        if r == 0:
            # only reachable under the no_size_bias mutation: the spine enters the dagger
            return OK
        first = ni[u, NI_FIRST]
        j = int(rng.random() * r)
        for m in range(r - 1, -1, -1):
            if m != j:
                stack[ctr[2]] = first + m
                ctr[2] += 1
        u = first + j
        ni[u, NI_SPINE] = 1


@njit(cache=True)
def simulate_q_tree(rng, horizon, obs, tabs, space, beta_fn, max_nodes, bufs, x0, i0):
    status = simulate_spine_q(rng, horizon, obs, tabs, space, beta_fn, max_nodes, bufs, x0, i0)
    if status != OK:
        return status
    return grow(rng, horizon, obs, tabs, space, beta_fn, max_nodes, bufs)


@njit(cache=True)
def reduce_features(obs, n_types, lambdas, intervals, bufs, out, spine_out):
    """Point-measure features at each observation time.

    out[k, i, 0]            number alive of type i
    out[k, i, 1 + l]        Σ exp(-lambdas[l] x)
    out[k, i, 1 + L + l]    Σ x exp(-lambdas[l] x)
    out[k, i, 1 + 2L + m]   number in [intervals[m, 0], intervals[m, 1])
    spine_out[k]            spine position and type (nan, -1 if no live spine)

    Returns False if some live particle lacks a sample at an observation time.
    """
    nf, ni, sf, si, stack, ctr = bufs
    n_lam = lambdas.shape[0]
    out[:] = 0.0
    spine_out[:, 0] = math.nan
    spine_out[:, 1] = -1.0
    seen = 0
    for u in range(ctr[0]):
        b = nf[u, NF_BIRTH]
        d = nf[u, NF_DEATH]
        s0 = ni[u, NI_S0]
        for s in range(s0, s0 + ni[u, NI_SN]):
            k = si[s, 1]
            if k < 0:
                continue
            t = obs[k]
            if not (b <= t and t < d):
                continue
            seen += 1
            x = sf[s, 1]
            i = si[s, 0]
            out[k, i, 0] += 1.0
            for l in range(n_lam):
                e = math.exp(-lambdas[l] * x)
                out[k, i, 1 + l] += e
                out[k, i, 1 + n_lam + l] += x * e
            for m in range(intervals.shape[0]):
                if intervals[m, 0] <= x and x < intervals[m, 1]:
                    out[k, i, 1 + 2 * n_lam + m] += 1.0
            if ni[u, NI_SPINE] == 1:
                spine_out[k, 0] = x
                spine_out[k, 1] = i
    expected = 0
    for u in range(ctr[0]):
        lo = np.searchsorted(obs, nf[u, NF_BIRTH], side="left")
        hi = np.searchsorted(obs, nf[u, NF_DEATH], side="left")
        expected += hi - lo
    return seen == expected


@njit(cache=True)
def replicate(rng, measure, horizon, obs, tabs, space, beta_fn, max_nodes, bufs, x0, i0,
              lambdas, intervals, out, spine_out):
    """One batch replicate: simulate under ``measure`` (0 P, 1 P-tilde, 2 Q) then reduce."""
    nf, ni, sf, si, stack, ctr = bufs
    if measure == 2:
        status = simulate_q_tree(rng, horizon, obs, tabs, space, beta_fn, max_nodes, bufs, x0, i0)
    else:
        status = simulate_p_tree(rng, horizon, obs, tabs, space, beta_fn, max_nodes, bufs, x0, i0)
    if status != OK:
        return status
    if measure == 1:
        select_spine(rng, nf, ni)
    if not reduce_features(obs, tabs[0].shape[0], lambdas, intervals, bufs, out, spine_out):
        return MISSING_SAMPLE
    return OK


@njit(cache=True)
def load_template(tmpl, counts, bufs):
    """Copy a partially built tree (spine skeleton plus pending stack) into the buffers."""
    t_nf, t_ni, t_sf, t_si, t_stack = tmpl
    nf, ni, sf, si, stack, ctr = bufs
    n, m, h = counts[0], counts[1], counts[2]
    nf[:n] = t_nf[:n]
    ni[:n] = t_ni[:n]
    sf[:m] = t_sf[:m]
    si[:m] = t_si[:m]
    stack[:h] = t_stack[:h]
    ctr[0] = n
    ctr[1] = m
    ctr[2] = h


@njit(cache=True)
def regrow(rng, horizon, obs, tabs, space, beta_fn, max_nodes, bufs, tmpl, counts,
           lambdas, intervals, out, spine_out):
    """Attach fresh P subtrees to a fixed skeleton and reduce to features."""
    load_template(tmpl, counts, bufs)
    status = grow(rng, horizon, obs, tabs, space, beta_fn, max_nodes, bufs)
    if status != OK:
        return status
    if not reduce_features(obs, tabs[0].shape[0], lambdas, intervals, bufs, out, spine_out):
        return MISSING_SAMPLE
    return OK
