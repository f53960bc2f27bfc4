"""Simulation under the size-biased measure Q-tilde.

The spine starts at x and moves with the h-transformed motion (see
:mod:`spinesim.spectral`), fissions at rate ``A beta`` along its path and
has size-biased family sizes ``k p_k / A``. One child, chosen uniformly,
continues the spine; each of the other children roots an independent
subtree with the law P started at the fission point. Under Q-tilde the
spine therefore never reaches the dagger.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .model import ModelError
from .sim import (Batch, SimConfig, Tables, Workspace, CapExceeded, _initial_state, _simulate_tree,
                  compile_model, replicate_rng)
from .spectral import EigenData
from .tree import MarkedTree, SpineRecord

EIGEN_RESIDUAL_TOL = 1e-8


@dataclass(frozen=True)
class QSimConfig(SimConfig):
    eigen: EigenData | None = None

    def __post_init__(self):
        super().__post_init__()
        if self.eigen is None:
            raise ModelError("QSimConfig needs eigen data")
        if self.eigen.phi.size != self.model.n_types:
            raise ModelError("eigen data has the wrong number of types")
        if not self.eigen.residual <= EIGEN_RESIDUAL_TOL:
            raise ModelError(f"eigen residual {self.eigen.residual} exceeds {EIGEN_RESIDUAL_TOL}")


def simulate_q(cfg: QSimConfig, x=0, rng: np.random.Generator | None = None, mutation: str | None = None):
    """One tree under Q-tilde_x together with its spine."""
    rng = rng if rng is not None else replicate_rng(cfg.seed, 0)
    tables = compile_model(cfg.model, cfg.eigen, mutation)
    tree = _simulate_tree(cfg, x, rng, 2, tables)
    return tree, SpineRecord.from_tree(tree)


@dataclass(frozen=True)
class SkeletonTemplate:
    """Buffers holding only the spine nodes and their (not yet simulated) siblings."""

    arrays: tuple
    counts: np.ndarray
    root_state: tuple


def build_template(skeleton: SpineRecord, obs: np.ndarray) -> SkeletonTemplate:
    """Lay out a skeleton the way the spine phase of the Q kernel would have."""
    if skeleton.dagger_time is not None:
        raise ModelError("skeleton enters the dagger; it did not come from Q-tilde")
    n_gen = skeleton.n_fissions + 1
    n_nodes = 1 + int(np.sum(skeleton.offspring_counts))
    path = skeleton.path
    n_samples = path.shape[0] + skeleton.n_fissions
    nf = np.empty((n_nodes, K.N_NF))
    ni = np.empty((n_nodes, K.N_NI), dtype=np.int64)
    sf = np.empty((n_samples, 2))
    si = np.empty((n_samples, 2), dtype=np.int64)
    stack = np.empty(n_nodes, dtype=np.int64)
    obs_index = {float(t): k for k, t in enumerate(obs)}
    x0, i0 = skeleton.root_state
    u, n, m, h = 0, 1, 0, 0
    nf[0] = (0.0, math.nan, x0, math.nan)
    ni[0] = (-1, 0, -1, i0, -1, -1, 0, -1, 1)
    for g in range(n_gen):
        rows = path[path[:, 3] == g]
        if g > 0:
            j = g - 1
            birth_row = np.array([[skeleton.fission_times[j], skeleton.fission_x[j], skeleton.fission_types[j], g]])
            rows = np.vstack([birth_row, rows])
        ni[u, K.NI_S0] = m
        for t, x, typ, _ in rows:
            sf[m] = (t, x)
            si[m] = (int(typ), obs_index.get(float(t), -1))
            m += 1
        ni[u, K.NI_SN] = rows.shape[0]
        nf[u, K.NF_X1] = rows[-1, 1]
        ni[u, K.NI_T1] = int(rows[-1, 2])
        if g == n_gen - 1:
            nf[u, K.NF_DEATH] = math.inf
            ni[u, K.NI_R] = -1
            break
        r = int(skeleton.offspring_counts[g])
        c = int(skeleton.spine_children[g])
        nf[u, K.NF_DEATH] = skeleton.fission_times[g]
        ni[u, K.NI_R] = r
        ni[u, K.NI_FIRST] = n
        for j in range(r):
            v = n + j
            nf[v] = (nf[u, K.NF_DEATH], math.nan, nf[u, K.NF_X1], math.nan)
            ni[v] = (u, j + 1, -1, ni[u, K.NI_T1], -1, -1, 0, -1, 0)
        for j in range(r - 1, -1, -1):
            if j + 1 != c:
                stack[h] = n + j
                h += 1
        nxt = n + c - 1
        ni[nxt, K.NI_SPINE] = 1
        n += r
        u = nxt
    return SkeletonTemplate((nf, ni, sf, si, stack), np.array([n, m, h], dtype=np.int64), (x0, i0))


def _workspace_for(template: SkeletonTemplate) -> Workspace:
    n, m, _ = template.counts
    return Workspace(max(1024, 2 * int(n)), max(4096, 4 * int(m)))


def resample_subtrees(skeleton: SpineRecord, cfg: SimConfig, rng: np.random.Generator) -> MarkedTree:
    """Fresh independent P subtrees hung off a fixed spine skeleton."""
    obs = cfg.obs_array
    template = build_template(skeleton, obs)
    tables = compile_model(cfg.model)
    ws = _workspace_for(template)
    state = rng.bit_generator.state
    while True:
        rng.bit_generator.state = state
        K.load_template(template.arrays, template.counts, ws.bufs)
        status = K.grow(rng, cfg.horizon, obs, tables.arrays, tables.space, tables.beta_fn,
                        cfg.max_nodes, ws.bufs)
        if status in (K.NEED_NODES, K.NEED_SAMPLES):
            ws.grow(status)
            continue
        break
    if status == K.CAPPED:
        raise CapExceeded(f"tree exceeded {cfg.max_nodes} nodes")
    return ws.to_tree(cfg.horizon, obs, template.root_state)


def resample_batch(skeleton: SpineRecord, cfg: SimConfig, n: int, seed: int,
                   lambdas=(), intervals=(), tables: Tables | None = None) -> Batch:
    """Features of ``n`` subtree resamples of one skeleton (replicate i uses ``replicate_rng(seed, i)``)."""
    if n <= 0:
        raise ModelError("replicate count must be positive")
    obs = cfg.obs_array
    template = build_template(skeleton, obs)
    tables = tables or compile_model(cfg.model)
    lambdas = np.asarray(lambdas, dtype=float).reshape(-1)
    intervals = np.asarray(intervals, dtype=float).reshape(-1, 2)
    n_feat = 1 + 2 * lambdas.size + intervals.shape[0]
    features = np.zeros((n, obs.size, tables.n_types, n_feat))
    spine = np.zeros((n, obs.size, 2))
    status = np.zeros(n, dtype=np.int64)
    out = np.zeros((obs.size, tables.n_types, n_feat))
    sp = np.zeros((obs.size, 2))
    ws = _workspace_for(template)
    for j in range(n):
        while True:
            st = K.regrow(replicate_rng(seed, j), cfg.horizon, obs, tables.arrays, tables.space, tables.beta_fn,
                          cfg.max_nodes, ws.bufs, template.arrays, template.counts, lambdas, intervals, out, sp)
            if st in (K.NEED_NODES, K.NEED_SAMPLES):
                ws.grow(st)
                continue
            break
        if st == K.MISSING_SAMPLE:
            raise RuntimeError(f"resample {j}: a live particle has no sample at an observation time")
        status[j] = st
        if st == K.OK:
            features[j] = out
            spine[j] = sp
    return Batch(features, spine, status, lambdas, intervals, obs)


def initial_state(cfg: SimConfig, x) -> tuple:
    return _initial_state(cfg.model, x)
