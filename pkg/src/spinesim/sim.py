"""Event-driven simulation of the branching process under P and P-tilde.

Every particle's life is simulated exactly: competing exponential clocks
for type jumps and fission (thinned against ``beta_max`` when the rate
depends on position), Gaussian position increments drawn only at event
and observation times. At a fission the offspring count is drawn from the
law of the particle's current type and the children start where the
parent died.

Random streams
--------------
Replicate ``i`` of an experiment seeded with ``seed`` uses
``Generator(PCG64(SeedSequence(seed, spawn_key=(i,))))``; this is what
``SeedSequence(seed).spawn(n)[i]`` would produce, without materializing
all ``n`` children. Results therefore do not depend on how replicates are
split between workers.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import _kernels as K
from .model import Geometric, ModelError, ModelSpec, law_at
from .spectral import EigenData
from .tree import MarkedTree, SpineRecord

DEFAULT_MAX_NODES = 1_000_000
GEOMETRIC_TABLE_LEN = 1


class CapExceeded(RuntimeError):
    """A replicate reached the configured node cap."""


@dataclass(frozen=True)
class SimConfig:
    model: ModelSpec
    horizon: float
    observation_times: tuple = ()
    max_nodes: int = DEFAULT_MAX_NODES
    seed: int = 0

    def __post_init__(self):
        obs = np.asarray(self.observation_times, dtype=float).ravel()
        if not self.horizon >= 0:
            raise ModelError("horizon must be nonnegative")
        if obs.size and (obs.min() < 0 or obs.max() > self.horizon):
            raise ModelError("observation times must lie in [0, horizon]")
        if np.any(np.diff(obs) <= 0):
            raise ModelError("observation times must be strictly increasing")
        if self.max_nodes < 1:
            raise ModelError("max_nodes must be at least 1")
        object.__setattr__(self, "observation_times", tuple(float(t) for t in obs))

    @property
    def obs_array(self) -> np.ndarray:
        return np.asarray(self.observation_times, dtype=float)


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    """Dedicated stream for replicate ``index`` of an experiment seeded with ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


# ---------------------------------------------------------------------------
# Model tables


@dataclass(frozen=True)
class Tables:
    """A model compiled to the flat arrays the kernels read."""

    arrays: tuple
    space: bool
    beta_fn: object
    n_types: int


_BETA_FN_CACHE = {}


def _compiled_rate(model: ModelSpec):
    if not model.space_dependent:
        return K.no_space_rate
    fn = model.rate.fn
    key = id(fn)
    if key not in _BETA_FN_CACHE:
        _BETA_FN_CACHE[key] = (fn, njit(fn))
    return _BETA_FN_CACHE[key][1]


def compile_model(model: ModelSpec, eigen: EigenData | None = None, mutation: str | None = None) -> Tables:
    """Build kernel tables for ``model``; ``eigen`` fills the spine (Q) columns.

    ``mutation`` deliberately breaks the spine dynamics for negative
    controls: ``"drift_sign"`` flips the spine drift, ``"no_size_bias"``
    uses the plain offspring law and rate beta on the spine, and
    ``"untilted"`` keeps the original type generator on the spine.
    """
    n = model.n_types
    beta = model.beta_bound()
    a = model.mean_by_type()
    ftab = np.zeros((n, K.N_FCOLS))
    itab = np.zeros((n, K.N_ICOLS), dtype=np.int64)
    ftab[:, K.F_DIFF] = model.motion.diffusion_vector()
    ftab[:, K.F_RATE] = beta
    ftab[:, K.F_MEAN] = a
    ftab[:, K.F_QRATE] = a * beta
    ftab[:, K.F_BMAX] = beta
    rows, sb_rows = [], []
    for i in range(n):
        law = law_at(model.offspring, i)
        if isinstance(law, Geometric):
            itab[i, K.I_KIND] = 1
            ftab[i, K.F_GEOM] = law.success
            rows.append(np.ones(GEOMETRIC_TABLE_LEN))
            sb_rows.append(np.ones(GEOMETRIC_TABLE_LEN))
        else:
            p = law.pmf()
            rows.append(np.cumsum(p))
            sb_rows.append(np.cumsum(np.arange(p.size) * p))
    width = max(r.size for r in rows)
    cdf = np.zeros((n, width))
    sbcdf = np.zeros((n, width))
    for i, (row, sb) in enumerate(zip(rows, sb_rows)):
        itab[i, K.I_LEN] = row.size
        cdf[i, : row.size] = row
        sbcdf[i, : sb.size] = sb
    gen = model.motion.generator_matrix().copy()
    gen_q = gen.copy()
    if eigen is not None:
        if eigen.phi.size != n:
            raise ModelError("eigen data has the wrong number of types")
        ftab[:, K.F_QDRIFT] = eigen.drift
        gen_q = eigen.h_generator.copy()
    if mutation == "drift_sign":
        ftab[:, K.F_QDRIFT] *= -1.0
    elif mutation == "no_size_bias":
        sbcdf = cdf.copy()
        ftab[:, K.F_QRATE] = beta
    elif mutation == "untilted":
        gen_q = gen.copy()
    elif mutation is not None:
        raise ModelError(f"unknown mutation {mutation!r}")
    return Tables((ftab, itab, gen, gen_q, cdf, sbcdf), model.space_dependent, _compiled_rate(model), n)


# ---------------------------------------------------------------------------
# Buffers


class Workspace:
    """Reusable tree buffers; grown by doubling when a replicate overflows them."""

    def __init__(self, nodes: int = 1024, samples: int = 4096):
        self._alloc(nodes, samples)

    def _alloc(self, nodes: int, samples: int) -> None:
        self.nf = np.empty((nodes, K.N_NF))
        self.ni = np.empty((nodes, K.N_NI), dtype=np.int64)
        self.sf = np.empty((samples, 2))
        self.si = np.empty((samples, 2), dtype=np.int64)
        self.stack = np.empty(nodes, dtype=np.int64)
        self.ctr = np.zeros(3, dtype=np.int64)

    @property
    def bufs(self) -> tuple:
        return (self.nf, self.ni, self.sf, self.si, self.stack, self.ctr)

    def grow(self, status: int) -> None:
        nodes, samples = self.nf.shape[0], self.sf.shape[0]
        if status == K.NEED_NODES:
            nodes *= 2
            samples = max(samples, 2 * nodes)
        else:
            samples *= 2
        self._alloc(nodes, samples)

    def to_tree(self, horizon: float, obs: np.ndarray, root_state) -> MarkedTree:
        n, m = int(self.ctr[0]), int(self.ctr[1])
        nf, ni = self.nf[:n], self.ni[:n]
        return MarkedTree(
            birth=nf[:, K.NF_BIRTH].copy(),
            death=nf[:, K.NF_DEATH].copy(),
            parent=ni[:, K.NI_PARENT].copy(),
            child=ni[:, K.NI_CHILD].copy(),
            r=ni[:, K.NI_R].copy(),
            spine=ni[:, K.NI_SPINE].astype(bool),
            sample_start=ni[:, K.NI_S0].copy(),
            sample_count=ni[:, K.NI_SN].copy(),
            sample_t=self.sf[:m, 0].copy(),
            sample_x=self.sf[:m, 1].copy(),
            sample_type=self.si[:m, 0].copy(),
            horizon=float(horizon),
            observation_times=np.asarray(obs, dtype=float).copy(),
            root_state=(float(root_state[0]), int(root_state[1])),
        )


def _run_with_retry(ws: Workspace, make_rng, call):
    """Run ``call(rng)`` until the buffers are large enough; the rng is rebuilt each try."""
    while True:
        status = call(make_rng())
        if status in (K.NEED_NODES, K.NEED_SAMPLES):
            ws.grow(status)
            continue
        return status


def _initial_state(model: ModelSpec, x) -> tuple:
    if isinstance(x, tuple):
        pos, typ = float(x[0]), int(x[1])
    elif model.motion.spatial:
        pos, typ = float(x), 0
    else:
        pos, typ = 0.0, int(x)
    if not 0 <= typ < model.n_types:
        raise ModelError(f"initial type {typ} outside 0..{model.n_types - 1}")
    return pos, typ


def _simulate_tree(cfg: SimConfig, x, rng, measure: int, tables: Tables, ws: Workspace | None = None):
    pos, typ = _initial_state(cfg.model, x)
    obs = cfg.obs_array
    ws = ws or Workspace()
    state = rng.bit_generator.state

    def make_rng():
        rng.bit_generator.state = state
        return rng

    def call(g):
        if measure == 2:
            return K.simulate_q_tree(g, cfg.horizon, obs, tables.arrays, tables.space, tables.beta_fn,
                                     cfg.max_nodes, ws.bufs, pos, typ)
        status = K.simulate_p_tree(g, cfg.horizon, obs, tables.arrays, tables.space, tables.beta_fn,
                                   cfg.max_nodes, ws.bufs, pos, typ)
        if status == K.OK and measure == 1:
            K.select_spine(g, ws.nf, ws.ni)
        return status

    status = _run_with_retry(ws, make_rng, call)
    if status == K.CAPPED:
        raise CapExceeded(f"tree exceeded {cfg.max_nodes} nodes")
    return ws.to_tree(cfg.horizon, obs, (pos, typ))


def simulate_p(cfg: SimConfig, x=0, rng: np.random.Generator | None = None) -> MarkedTree:
    """One tree under P_x on ``[0, cfg.horizon]``.

    ``x`` is a position (Brownian models), a type (finite chains) or a
    ``(position, type)`` pair. Without ``rng`` the stream is
    ``replicate_rng(cfg.seed, 0)``.
    """
    rng = rng if rng is not None else replicate_rng(cfg.seed, 0)
    return _simulate_tree(cfg, x, rng, 0, compile_model(cfg.model))


def simulate_p_tilde(cfg: SimConfig, x=0, rng: np.random.Generator | None = None):
    """A P tree plus a spine chosen uniformly among the offspring at each fission."""
    rng = rng if rng is not None else replicate_rng(cfg.seed, 0)
    tree = _simulate_tree(cfg, x, rng, 1, compile_model(cfg.model))
    return tree, SpineRecord.from_tree(tree)


def first_fission_times(model: ModelSpec, horizon: float, n: int, seed: int, x=0.0) -> np.ndarray:
    """Death times of the root over ``n`` replicates (inf when it survives the horizon)."""
    cfg = SimConfig(model, horizon, (), max_nodes=DEFAULT_MAX_NODES, seed=seed)
    tables = compile_model(model)
    ws = Workspace()
    out = np.empty(n)
    for i in range(n):
        tree = _simulate_tree(cfg, x, replicate_rng(seed, i), 0, tables, ws)
        out[i] = tree.death[0]
    return out


# ---------------------------------------------------------------------------
# Batch engine

MEASURES = {"P": 0, "P_tilde": 1, "Q": 2}


@dataclass
class Batch:
    """Per-replicate features from :func:`run_batch`.

    ``features[r, k, i, :]`` holds, for replicate r, observation time k and
    type i: the particle count, ``Σ e^{-lambda_l x}`` for each requested
    lambda, ``Σ x e^{-lambda_l x}``, then counts in each requested interval.
    ``spine[r, k]`` is the spine ``(x, type)`` (nan, -1 at the dagger).
    ``status`` is 0 for completed replicates and 3 for capped ones.
    """

    features: np.ndarray
    spine: np.ndarray
    status: np.ndarray
    lambdas: np.ndarray
    intervals: np.ndarray
    observation_times: np.ndarray
    start: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def ok(self) -> np.ndarray:
        return self.status == K.OK

    @property
    def capped_count(self) -> int:
        return int(np.sum(self.status == K.CAPPED))

    def counts(self) -> np.ndarray:
        """Particle counts per replicate, time and type."""
        return self.features[..., 0]

    def exp_sums(self, l: int = 0) -> np.ndarray:
        return self.features[..., 1 + l]

    def xexp_sums(self, l: int = 0) -> np.ndarray:
        return self.features[..., 1 + self.lambdas.size + l]

    def interval_counts(self, m: int) -> np.ndarray:
        return self.features[..., 1 + 2 * self.lambdas.size + m]

    @staticmethod
    def concat(parts: list) -> "Batch":
        first = parts[0]
        return Batch(
            features=np.concatenate([p.features for p in parts]),
            spine=np.concatenate([p.spine for p in parts]),
            status=np.concatenate([p.status for p in parts]),
            lambdas=first.lambdas,
            intervals=first.intervals,
            observation_times=first.observation_times,
            start=first.start,
        )


@dataclass(frozen=True)
class BatchJob:
    model: ModelSpec
    measure: str
    horizon: float
    observation_times: tuple
    seed: int
    x0: tuple
    lambdas: tuple = ()
    intervals: tuple = ()
    eigen: EigenData | None = None
    mutation: str | None = None
    max_nodes: int = DEFAULT_MAX_NODES


def _run_range(job: BatchJob, start: int, stop: int) -> Batch:
    if job.measure == "Q" and job.eigen is None:
        raise ModelError("simulating under Q needs eigen data")
    tables = compile_model(job.model, job.eigen, job.mutation)
    obs = np.asarray(job.observation_times, dtype=float)
    lambdas = np.asarray(job.lambdas, dtype=float).reshape(-1)
    intervals = np.asarray(job.intervals, dtype=float).reshape(-1, 2)
    n = stop - start
    n_feat = 1 + 2 * lambdas.size + intervals.shape[0]
    features = np.zeros((n, obs.size, tables.n_types, n_feat))
    spine = np.zeros((n, obs.size, 2))
    status = np.zeros(n, dtype=np.int64)
    measure = MEASURES[job.measure]
    pos, typ = job.x0
    ws = Workspace()
    out = np.zeros((obs.size, tables.n_types, n_feat))
    sp = np.zeros((obs.size, 2))
    args = (measure, job.horizon, obs, tables.arrays, tables.space, tables.beta_fn, job.max_nodes)
    for j in range(n):
        idx = start + j
        while True:
            rng = replicate_rng(job.seed, idx)
            st = K.replicate(rng, *args, ws.bufs, pos, typ, lambdas, intervals, out, sp)
            if st in (K.NEED_NODES, K.NEED_SAMPLES):
                ws.grow(st)
                continue
            break
        if st == K.MISSING_SAMPLE:
            raise RuntimeError(f"replicate {idx}: a live particle has no sample at an observation time")
        status[j] = st
        if st == K.OK:
            features[j] = out
            spine[j] = sp
    return Batch(features, spine, status, lambdas, intervals, obs, start)


def default_workers() -> int:
    return os.cpu_count() or 1


def run_batch(job: BatchJob, n: int, start: int = 0, workers: int = 1) -> Batch:
    """Replicates ``start .. start + n - 1`` of ``job``, reduced to features.

    With ``workers > 1`` contiguous chunks run in separate processes; the
    per-replicate streams make the result identical to a serial run.
    """
    if n <= 0:
        raise ModelError("replicate count must be positive")
    if workers <= 1 or n < 2 * workers:
        return _run_range(job, start, start + n)
    bounds = np.linspace(start, start + n, workers + 1).astype(int)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_run_range, job, int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]
        parts = [f.result() for f in futures]
    return Batch.concat(parts)
