"""Martingales and scalar functionals evaluated on recorded trees.

Everything here is post-processing: no function triggers simulation.
Functions taking a :class:`~spinesim.sim.Batch` work on the per-replicate
features reduced inside the kernels and agree with their tree-based
counterparts replicate by replicate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .model import Explicit, Geometric, ModelError, ModelSpec, PowerLaw, SeriesValue
from .spectral import EigenData
from .tree import MarkedTree, SpineRecord, TreeError

KINDS = ("M_phi", "W_lambda", "dW_lambda", "V_trunc", "eta1", "eta2", "eta3", "eta_tilde")
SERIES_TOL = 1e-15


@dataclass(frozen=True)
class MartingalePath:
    kind: str
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown martingale kind {self.kind!r}")
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if times.shape != values.shape:
            raise ValueError("times and values must have the same length")
        if not np.all(np.isfinite(values)):
            raise ValueError("martingale values must be finite")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    def rows(self, replicate: int):
        for t, v in zip(self.times, self.values):
            yield replicate, self.kind, float(t), float(v)


def log_plus(z):
    return np.maximum(np.log(np.maximum(z, 1e-300)), 0.0)


# ---------------------------------------------------------------------------
# Additive martingales on trees


def m_phi(tree: MarkedTree, eigen: EigenData, t: float) -> float:
    """M_t(phi) = e^{-lambda1 t} <phi, X_t> / phi(x0)."""
    x, types = tree.state_at(t)
    x0, i0 = tree.root_state
    total = float(np.sum(eigen.phi_at(x, types)))
    return math.exp(-eigen.lambda1 * t) * total / float(eigen.phi_at(x0, i0))


def _bbm_rate(lam: float, beta: float, a_mean: float, diffusion: float) -> float:
    return 0.5 * diffusion * lam * lam + (a_mean - 1.0) * beta


def w_lambda(tree: MarkedTree, lam: float, beta: float, a_mean: float, t: float, diffusion: float = 1.0) -> float:
    """W_t(lambda) = e^{-[½ lambda² + (A-1) beta] t} Σ_{L_t} e^{-lambda Y_u(t)}."""
    x, _ = tree.state_at(t)
    return math.exp(-_bbm_rate(lam, beta, a_mean, diffusion) * t) * float(np.sum(np.exp(-lam * x)))


def dw_lambda(tree: MarkedTree, lam: float, beta: float, a_mean: float, t: float, diffusion: float = 1.0) -> float:
    """Derivative martingale e^{-[½ lambda² + (A-1) beta] t} Σ (Y_u(t) + lambda t) e^{-lambda Y_u(t)}.

    This equals ``-d/dlambda w_lambda`` for unit diffusion (one exponential
    factor per particle).
    """
    x, _ = tree.state_at(t)
    s = float(np.sum((x + diffusion * lam * t) * np.exp(-lam * x)))
    return math.exp(-_bbm_rate(lam, beta, a_mean, diffusion) * t) * s


def _bridge_survival(a, b, dt, diffusion):
    """P(a Brownian bridge from height a to b over dt stays above 0)."""
    if a <= 0 or b <= 0:
        return 0.0
    if dt <= 0:
        return 1.0
    return -math.expm1(-2.0 * a * b / (diffusion * dt))


def v_trunc(tree: MarkedTree, lam: float, x_shift: float, t: float, beta: float, a_mean: float,
            bridge: bool = False) -> float:
    """Truncated additive martingale with barrier ``y + lambda s = -x_shift``.

    A particle counts only if it and all its ancestors stayed strictly above
    the barrier at every recorded sample up to ``t``. With ``bridge=True``
    each path segment between samples is additionally weighted by the
    probability that the Brownian bridge joining the samples does not hit
    the barrier, which makes the estimator exact in law instead of
    discretely monitored.
    """
    if not x_shift > 0:
        raise ValueError("x_shift must be positive")
    n = tree.n_nodes
    weight = np.zeros(n)
    for u in range(n):
        p = tree.parent[u]
        w = 1.0 if p < 0 else weight[p]
        if w > 0:
            path = tree.path(u)
            path = path[path[:, 0] <= t]
            h = x_shift + path[:, 1] + lam * path[:, 0]
            if np.any(h <= 0):
                w = 0.0
            elif bridge and path.shape[0] > 1:
                for j in range(path.shape[0] - 1):
                    w *= _bridge_survival(h[j], h[j + 1], path[j + 1, 0] - path[j, 0], 1.0)
        weight[u] = w
    alive = tree.alive_indices(t)
    x, _ = tree.state_at(t, alive)
    terms = weight[alive] * (x_shift + x + lam * t) / x_shift * np.exp(-lam * x)
    return math.exp(-_bbm_rate(lam, beta, a_mean, 1.0) * t) * float(np.sum(terms))


def martingale_path(kind: str, tree: MarkedTree, times, fn) -> MartingalePath:
    return MartingalePath(kind, np.asarray(times, dtype=float), np.array([fn(tree, t) for t in times]))


# ---------------------------------------------------------------------------
# Batch versions


def _exp_feature(batch, rate: float, which: str = "exp"):
    matches = np.flatnonzero(np.isclose(batch.lambdas, rate, rtol=0, atol=0))
    if rate == 0.0 and which == "exp" and matches.size == 0:
        return batch.counts()
    if matches.size == 0:
        raise ModelError(f"batch has no features for lambda={rate}")
    l = int(matches[0])
    return batch.exp_sums(l) if which == "exp" else batch.xexp_sums(l)


def m_phi_batch(batch, eigen: EigenData, x0=(0.0, 0)) -> np.ndarray:
    """M_t(phi) for every replicate and observation time, shape (n, K)."""
    s = _exp_feature(batch, eigen.rate)
    total = np.tensordot(s, eigen.phi, axes=([2], [0]))
    norm = float(eigen.phi_at(x0[0], x0[1]))
    return np.exp(-eigen.lambda1 * batch.observation_times)[None, :] * total / norm


def w_lambda_batch(batch, lam, beta, a_mean, diffusion: float = 1.0) -> np.ndarray:
    s = _exp_feature(batch, lam).sum(axis=2)
    return np.exp(-_bbm_rate(lam, beta, a_mean, diffusion) * batch.observation_times)[None, :] * s


def dw_lambda_batch(batch, lam, beta, a_mean, diffusion: float = 1.0) -> np.ndarray:
    t = batch.observation_times[None, :]
    s = _exp_feature(batch, lam, "xexp").sum(axis=2) + diffusion * lam * t * _exp_feature(batch, lam).sum(axis=2)
    return np.exp(-_bbm_rate(lam, beta, a_mean, diffusion) * t) * s


def population_batch(batch) -> np.ndarray:
    return batch.counts().sum(axis=2)


# ---------------------------------------------------------------------------
# Offspring-law functionals


def _powerlaw_tail(law: PowerLaw, k_power: float, log_power: float, scale: float = 1.0) -> SeriesValue:
    """Bound on Σ_{k>kmax} scale k^k_power (1 + log k)^log_power p_k for the untruncated family.

    With p_k = k^-a (1 + log k)^-g / Z the terms are eventually decreasing, so
    the tail is at most the integral from kmax; substituting k = e^s gives
    ∫ e^{(1 - e) s} (1 + s)^{-h} ds with e = a - k_power and h = g - log_power,
    finite iff e > 1, or e == 1 and h > 1.
    """
    z = math.fsum(law.weights(np.arange(1, law.kmax + 1, dtype=float)))
    e = law.exponent - k_power
    h = law.log_power - log_power
    if e < 1 or (e == 1 and h <= 1):
        return SeriesValue(0.0, math.inf, True)
    tail, _ = quad(lambda s: math.exp((1 - e) * s) * (1 + s) ** (-h), math.log(law.kmax), math.inf, limit=200)
    return SeriesValue(0.0, scale * tail / z, False)


def _geometric_cutoff(q: float) -> int:
    return max(10, int(math.ceil(math.log(SERIES_TOL) / math.log(q))) + 10)


def l_function(phi_val: float, law) -> SeriesValue:
    """l = Σ_{k>=2} k phi log⁺(k phi) p_k, with a tail bound or divergence flag.

    For PowerLaw laws the value is the sum under the sampled (truncated) law
    and ``divergent`` reports whether the untruncated series diverges. The
    tail bounds use k phi log⁺(k phi) <= phi (1 + log⁺ phi) k (1 + log k).
    """
    scale = phi_val * (1.0 + max(math.log(phi_val), 0.0))
    if isinstance(law, Explicit):
        k = np.arange(law.probs.size, dtype=float)
        terms = np.where(k >= 2, k * phi_val * log_plus(k * phi_val) * law.probs, 0.0)
        return SeriesValue(math.fsum(terms))
    if isinstance(law, Geometric):
        q = 1.0 - law.success
        kmax = _geometric_cutoff(q)
        k = np.arange(2, kmax + 1, dtype=float)
        terms = k * phi_val * log_plus(k * phi_val) * law.success * q ** k
        # k (1 + log k) q^k <= k² q^k, whose tail ratio is at most rho beyond kmax
        rho = q * ((kmax + 1.0) / kmax) ** 2
        tail = scale * law.success * kmax ** 2 * q ** kmax * rho / (1 - rho) if rho < 1 else math.inf
        return SeriesValue(math.fsum(terms), tail)
    if isinstance(law, PowerLaw):
        p = law.pmf()
        k = np.arange(p.size, dtype=float)
        terms = np.where(k >= 2, k * phi_val * log_plus(k * phi_val) * p, 0.0)
        tail = _powerlaw_tail(law, 1.0, 1.0, scale)
        return SeriesValue(math.fsum(terms), tail.tail_bound, tail.divergent)
    raise ModelError(f"unsupported law {type(law).__name__}")


def variance_functional(law) -> SeriesValue:
    """V = Σ k (k - 1) p_k."""
    if isinstance(law, Explicit):
        k = np.arange(law.probs.size, dtype=float)
        return SeriesValue(math.fsum(k * (k - 1) * law.probs))
    if isinstance(law, Geometric):
        q = 1.0 - law.success
        return SeriesValue(2.0 * q * q / law.success ** 2)
    if isinstance(law, PowerLaw):
        p = law.pmf()
        k = np.arange(p.size, dtype=float)
        tail = _powerlaw_tail(law, 2.0, 0.0)
        return SeriesValue(math.fsum(k * (k - 1) * p), tail.tail_bound, tail.divergent)
    raise ModelError(f"unsupported law {type(law).__name__}")


def _finite_space(model: ModelSpec, eigen: EigenData) -> None:
    if model.motion.spatial or not eigen.normalizable:
        raise ModelError("this functional needs a finite state space with counting measure")


def sigma_squared(model: ModelSpec, eigen: EigenData) -> float:
    """σ² = Σ_i beta(i) V(i) phi(i)² phi_hat(i)."""
    _finite_space(model, eigen)
    beta = model.beta_by_type()
    v = np.array([variance_functional(model.law(i)).value for i in range(model.n_types)])
    return float(np.sum(beta * v * eigen.phi ** 2 * eigen.phi_hat))


def llogl_integral(model: ModelSpec, eigen: EigenData) -> SeriesValue:
    """Σ_i phi_hat(i) beta(i) l(i); divergent if any contributing l(i) is."""
    _finite_space(model, eigen)
    beta = model.beta_by_type()
    total, tail, divergent = 0.0, 0.0, False
    for i in range(model.n_types):
        li = l_function(float(eigen.phi[i]), model.law(i))
        w = eigen.phi_hat[i] * beta[i]
        total += w * li.value
        if w > 0:
            tail += w * li.tail_bound
            divergent = divergent or li.divergent
    return SeriesValue(total, math.inf if divergent else tail, divergent)


# ---------------------------------------------------------------------------
# Spine functionals


def spine_rhs(skeleton: SpineRecord, eigen: EigenData, t: float) -> float:
    """phi(Y~_t) e^{-lambda1 t} + Σ_{u < xi_t} (r^u - 1) phi(Y~_{zeta^u}) e^{-lambda1 zeta^u}."""
    x, i = skeleton.state_at(t)
    value = float(eigen.phi_at(x, i)) * math.exp(-eigen.lambda1 * t)
    before = skeleton.fission_times <= t
    if np.any(before):
        z = skeleton.fission_times[before]
        r = skeleton.offspring_counts[before]
        phi = eigen.phi_at(skeleton.fission_x[before], skeleton.fission_types[before])
        value += float(np.sum((r - 1) * phi * np.exp(-eigen.lambda1 * z)))
    return value


def _integrate_along(path: np.ndarray, values_by_type: np.ndarray, end: float) -> float:
    """∫_0^end g(type(s)) ds for a spine path whose type is constant between samples."""
    t = path[:, 0]
    types = path[:, 2].astype(int)
    total = 0.0
    for j in range(t.size):
        lo = t[j]
        if lo >= end:
            break
        hi = min(t[j + 1], end) if j + 1 < t.size else end
        total += values_by_type[types[j]] * (hi - lo)
    return total


def eta_components(skeleton: SpineRecord, model: ModelSpec, eigen: EigenData, t: float):
    """(eta1, eta2, eta3, eta_tilde) at time ``t`` along the spine.

    The spine is at the dagger at ``t`` when it died childless at or before
    ``t``; then every factor is evaluated at that death time and eta2 = 0.
    Requires per-type rates (the time integrals are exact for
    piecewise-constant types).
    """
    if model.space_dependent:
        raise ModelError("eta components need per-type branching rates")
    beta = model.beta_by_type()
    a = model.mean_by_type()
    at_dagger = skeleton.dagger_time is not None and skeleton.dagger_time <= t
    end = skeleton.dagger_time if at_dagger else t
    before = skeleton.fission_times <= t
    ftypes = skeleton.fission_types[before]
    r = skeleton.offspring_counts[before]
    integral = _integrate_along(skeleton.path, (a - 1.0) * beta, end)
    eta1 = float(np.prod(a[ftypes])) * math.exp(-integral)
    eta2 = float(np.prod(r / a[ftypes]))
    if at_dagger:
        last = skeleton.path[skeleton.path[:, 0] <= end][-1]
        y, i = float(last[1]), int(last[2])
    else:
        y, i = skeleton.state_at(t)
    x0, i0 = skeleton.root_state
    phi_ratio = float(eigen.phi_at(y, i)) / float(eigen.phi_at(x0, i0))
    eta3 = phi_ratio * math.exp(-(eigen.lambda1 * end - integral))
    if at_dagger:
        eta_tilde = 0.0
    else:
        eta_tilde = float(np.prod(r)) * phi_ratio * math.exp(-eigen.lambda1 * t)
    return eta1, eta2, eta3, eta_tilde


def weighted_particle_law(tree: MarkedTree, eigen: EigenData, t: float, n_types: int) -> np.ndarray:
    """Type law of a particle drawn from L_t with probability proportional to phi."""
    x, types = tree.state_at(t)
    w = eigen.phi_at(x, types)
    total = w.sum()
    if total <= 0:
        raise TreeError(f"no particles alive at t={t}")
    return np.bincount(types, weights=w, minlength=n_types) / total
