"""Deterministic references the statistical checks compare against.

Extinction probabilities
------------------------
On a finite type space, ``v_t(i) = P_i(X_t = 0)`` satisfies the backward
equation obtained by conditioning on the first event of the root (jump
with rate ``q_ij``, or fission with rate ``beta(i)``):

    d/dt v_t(i) = Σ_j q_ij v_t(j) + beta(i) (psi(i, v_t(i)) - v_t(i)),   v_0 = 0,

where ``psi(i, s) = Σ_k p_k(i) s^k``. This is the differential form of the
integral equation for ``u_t = 1 - v_t`` on a finite space. For a single
type with binary critical offspring (p_0 = p_2 = ½) it reduces to the
Riccati equation ``v' = (beta/2)(1 - v)²`` with solution
``1 - v_t = 1 / (1 + beta t / 2)``.

Traveling waves
---------------
Substituting ``u(t, x) = w(x - c t)`` into
``u_t = ½ u_xx + beta (f(u) - u)`` gives the profile equation

    ½ w'' + c w' + beta (f(w) - w) = 0,

with w increasing from 0 at -inf to 1 at +inf.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.integrate import solve_ivp
from scipy.ndimage import uniform_filter1d

from .model import Explicit, Geometric, ModelError, ModelSpec, PerState, PowerLaw
from .spectral import EigenData, mean_matrix

MIN_KPP_POINTS = 200


class OracleError(RuntimeError):
    """A deterministic solver failed to meet its tolerance."""


# ---------------------------------------------------------------------------
# Generating functions


def generating_function(law, s):
    """psi(s) = Σ_k p_k s^k, vectorized over ``s``."""
    s = np.asarray(s, dtype=float)
    if isinstance(law, Geometric):
        return law.success / (1.0 - (1.0 - law.success) * s)
    if isinstance(law, (Explicit, PowerLaw)):
        p = law.pmf()
        return np.polynomial.polynomial.polyval(s, p)
    raise ModelError(f"unsupported law {type(law).__name__}")


# ---------------------------------------------------------------------------
# Extinction


@dataclass(frozen=True)
class ExtinctionCurve:
    """v_t(i) = P_i(extinct by t) on a grid, plus the dense solution."""

    times: np.ndarray
    v: np.ndarray
    tol: float
    _sol: object = None

    def at(self, t) -> np.ndarray:
        """v_t for scalar t (shape n) or an array of times (shape (len(t), n))."""
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        if self._sol is None:
            raise OracleError("curve has no dense solution")
        vals = np.clip(self._sol(t_arr).T, 0.0, 1.0)
        return vals[0] if np.ndim(t) == 0 else vals

    def survival(self, t, state: int = 0):
        return 1.0 - self.at(t)[..., state]

    def rows(self):
        for k, t in enumerate(self.times):
            for i in range(self.v.shape[1]):
                yield i, float(t), float(self.v[k, i])


def _laws(model: ModelSpec) -> list:
    if isinstance(model.offspring, PerState):
        return list(model.offspring.laws)
    return [model.offspring] * model.n_types


def extinction_rhs(model: ModelSpec):
    if model.space_dependent:
        raise ModelError("extinction ODE needs per-type branching rates")
    q = model.motion.generator_matrix()
    beta = model.beta_by_type()
    laws = _laws(model)

    def rhs(_t, v):
        psi = np.array([generating_function(laws[i], v[i]) for i in range(v.size)])
        return q @ v + beta * (psi - v)

    return rhs


def solve_extinction(model: ModelSpec, horizon: float, tol: float = 1e-10, times=None) -> ExtinctionCurve:
    """Integrate the extinction ODE with an adaptive explicit Runge-Kutta scheme (DOP853).

    The type process must not depend on position (finite chains, or
    single-type and typed Brownian models whose extinction only involves
    the type chain).
    """
    n = model.n_types
    times = np.linspace(0.0, horizon, 201) if times is None else np.asarray(times, dtype=float)
    sol = solve_ivp(extinction_rhs(model), (0.0, horizon), np.zeros(n), method="DOP853",
                    t_eval=times, rtol=tol, atol=tol, dense_output=True)
    if not sol.success:
        raise OracleError(f"extinction ODE failed: {sol.message}")
    v = np.clip(sol.y.T, 0.0, 1.0)
    return ExtinctionCurve(times, v, tol, sol.sol)


def critical_binary_survival(t, beta: float = 1.0):
    """1 - v_t = 1 / (1 + beta t / 2) for p_0 = p_2 = ½."""
    return 1.0 / (1.0 + 0.5 * beta * np.asarray(t, dtype=float))


def b_of_t(curve: ExtinctionCurve, eigen: EigenData):
    """b(t) = Σ_i (1 - v_t(i)) phi_hat(i)."""
    if not eigen.normalizable:
        raise ModelError("b(t) needs a finite state space")

    def b(t):
        return np.asarray(1.0 - curve.at(t)) @ eigen.phi_hat

    return b


def kolmogorov_limit(sigma2: float) -> float:
    """lim t P(survival) / phi(x) = 2 / sigma²."""
    return 2.0 / sigma2


# ---------------------------------------------------------------------------
# Moments


def mean_population(model: ModelSpec, t: float, state: int = 0) -> float:
    """E_x |X_t| = (exp(t M) 1)(i) with M = Q + diag((A - 1) beta); for Brownian motion e^{(A-1) beta t}."""
    m = mean_matrix(model.motion.generator_matrix(), model.mean_by_type(), model.beta_by_type())
    return float((expm(t * m) @ np.ones(m.shape[0]))[state])


def bbm_second_moment(lam: float, t, beta: float, law, diffusion: float = 1.0):
    """E W_t(lam)^2 for single-type branching Brownian motion.

    With kappa = a lam² - (A - 1) beta and V = E[r (r - 1)], counting pairs
    through their last common ancestor gives
    ``E W_t² = e^{kappa t} + beta V (e^{kappa t} - 1) / kappa``
    (``1 + beta V t`` when kappa = 0). It is bounded in t iff kappa < 0,
    that is iff 2 lam² < 2 (A - 1) beta / a.
    """
    p = law.pmf()
    k = np.arange(p.size)
    a_mean = float(k @ p)
    v = float((k * (k - 1.0)) @ p)
    kappa = diffusion * lam * lam - (a_mean - 1.0) * beta
    t = np.asarray(t, dtype=float)
    if kappa == 0:
        return 1.0 + beta * v * t
    return np.exp(kappa * t) + beta * v * np.expm1(kappa * t) / kappa


# ---------------------------------------------------------------------------
# L log L classification


@dataclass(frozen=True)
class LlogLClass:
    finite: bool
    certificate: str


def classify_llogl(law) -> LlogLClass:
    """Whether Σ k log k p_k converges, by a comparison test.

    PowerLaw(a, g) has terms k log k k^-a (1 + log k)^-g ~ k^{1-a} (log k)^{1-g},
    comparable to Σ k^-(a-1) (log k)^-(g-1): finite iff a > 2, or a == 2 and
    g > 2 (integral test on 1 / (k (log k)^(g-1))).
    """
    if isinstance(law, PerState):
        parts = [classify_llogl(base) for base in law.laws]
        bad = [p for p in parts if not p.finite]
        return bad[0] if bad else LlogLClass(True, "every per-state law is finite")
    if isinstance(law, Explicit):
        return LlogLClass(True, "finite support")
    if isinstance(law, Geometric):
        return LlogLClass(True, f"geometric decay with ratio {1 - law.success}")
    if isinstance(law, PowerLaw):
        a, g = law.exponent, law.log_power
        p_exp = a - 1.0
        if a > 2:
            return LlogLClass(True, f"comparison with Σ k^-{p_exp:g} (log k)^{1 - g:g}: exponent {p_exp:g} > 1")
        finite = g > 2
        rel = ">" if finite else "<="
        return LlogLClass(finite, f"integral test on Σ 1/(k (log k)^{g - 1:g}): log power {g - 1:g} {rel} 1")
    raise ModelError(f"unsupported law {type(law).__name__}")


# ---------------------------------------------------------------------------
# Matrix exponential


def expm(mat: np.ndarray) -> np.ndarray:
    return linalg.expm(np.asarray(mat, dtype=float))


def semigroup_error(mat: np.ndarray, s: float, t: float) -> float:
    """max |exp((s + t) M) - exp(s M) exp(t M)|."""
    m = np.asarray(mat, dtype=float)
    return float(np.max(np.abs(expm((s + t) * m) - expm(s * m) @ expm(t * m))))


def invariance_error(eigen: EigenData, generator, a_by_state, beta_by_state, t: float) -> float:
    """max |e^{-lambda1 t} exp(t M) phi - phi| on a finite chain."""
    m = mean_matrix(generator, a_by_state, beta_by_state)
    evolved = np.exp(-eigen.lambda1 * t) * (expm(t * m) @ eigen.phi)
    return float(np.max(np.abs(evolved - eigen.phi)))


def stationarity_error(eigen: EigenData, generator, a_by_state, beta_by_state, t: float) -> float:
    """max |(phi phi_hat) e^{-lambda1 t} exp(t M^phi) - phi phi_hat| for the h-transformed chain.

    The row vector phi * phi_hat is the invariant law of the spine chain;
    equivalently phi_hat is a left fixed point of e^{-lambda1 t} exp(t M).
    """
    m = mean_matrix(generator, a_by_state, beta_by_state)
    evolved = np.exp(-eigen.lambda1 * t) * (eigen.phi_hat @ expm(t * m))
    density = eigen.phi * eigen.phi_hat
    evolved_density = eigen.phi * evolved
    return float(np.max(np.abs(evolved_density - density)))


# ---------------------------------------------------------------------------
# KPP traveling wave


def kpp_residual(profile, x, c: float, law, beta: float, window: int = 1) -> float:
    """Sup-norm of ½ w'' + c w' + beta (f(w) - w) on the interior grid.

    ``profile`` is smoothed by a centred moving average of ``window`` points
    before second-order central differencing. Points within ``window`` of
    either edge are dropped so the smoothing never sees the boundary.
    """
    w = np.asarray(profile, dtype=float)
    x = np.asarray(x, dtype=float)
    if w.size < MIN_KPP_POINTS:
        raise OracleError(f"grid too coarse: {w.size} < {MIN_KPP_POINTS} points")
    h = np.diff(x)
    if not np.allclose(h, h[0], rtol=1e-9, atol=0):
        raise OracleError("grid must be uniform")
    h = h[0]
    if window > 1:
        w = uniform_filter1d(w, window, mode="nearest")
    d1 = (w[2:] - w[:-2]) / (2 * h)
    d2 = (w[2:] - 2 * w[1:-1] + w[:-2]) / (h * h)
    mid = w[1:-1]
    res = 0.5 * d2 + c * d1 + beta * (generating_function(law, mid) - mid)
    cut = max(window, 1)
    res = res[cut:-cut] if res.size > 2 * cut else res
    return float(np.max(np.abs(res)))


def wave_profile_from_samples(dw_samples, x, lam: float):
    """Phi(x) = mean exp(-e^{-lam x} D) over samples D of the derivative martingale.

    Returns the profile and its pointwise standard error.
    """
    d = np.asarray(dw_samples, dtype=float)[None, :]
    x = np.asarray(x, dtype=float)[:, None]
    vals = np.exp(-np.exp(-lam * x) * d)
    n = d.shape[1]
    return vals.mean(axis=1), vals.std(axis=1, ddof=1) / math.sqrt(n)
