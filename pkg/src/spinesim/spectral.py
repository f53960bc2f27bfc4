"""Principal eigen-triple (lambda1, phi, phi_hat) and h-transform parameters.

For a finite chain with generator Q, the mean semigroup of the branching
system is ``exp(t M)`` with ``M = Q + diag((A - 1) beta)``. Its
Perron-Frobenius eigenvalue is lambda1, the right eigenvector is phi and the
left eigenvector is phi_hat, normalized by ``Σ phi² = Σ phi phi_hat = 1``.

Conditioning the motion on ``phi(Y_t) e^{-lambda1 t} e_{(1-A)beta}(t)`` (the
h-transform) gives a Markov chain with jump rates

    q^phi_ij = q_ij phi(j) / phi(i),   i != j.

Derivation: the h-transformed generator is
``L^phi f = (M - lambda1)(phi f) / phi``; expanding ``M(phi f)(i)`` gives
``Σ_j q_ij phi(j) f(j) + (A-1)beta phi(i) f(i)``, and using
``(M phi)(i) = lambda1 phi(i)`` the diagonal terms collapse to
``Σ_j q_ij (phi(j)/phi(i)) (f(j) - f(i))``.

For Brownian motion with variance ``a`` and ``phi(x) = e^{-lambda x}`` the
same computation (Girsanov) gives a constant drift ``-a lambda``. The typed
case combines both: ``phi(x, i) = v(i) e^{-lambda x}`` with v the PF vector
of ``½ lambda² diag(a) + theta Q + diag((A - 1) beta)``; the type chain is
tilted by v and the position drifts at ``-a(i) lambda`` in type i.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components

from .model import BrownianMotion, FiniteChain, ModelError, ModelSpec, TypedBrownian

POWER_TOL = 1e-12
DENSE_CHECK_MAX_N = 64
AGREEMENT_TOL = 1e-10


@dataclass(frozen=True)
class EigenData:
    """Eigen-triple of the mean semigroup plus h-transform parameters.

    ``phi`` and ``phi_hat`` hold per-type values; for spatial models the full
    functions are ``phi(x, i) = phi[i] e^{-rate x}`` and
    ``phi_hat(x, i) = phi_hat[i] e^{+rate x}``. ``drift`` and ``h_generator``
    describe the spine motion under the size-biased measure.
    """

    kind: str
    lambda1: float
    phi: np.ndarray
    phi_hat: np.ndarray
    rate: float
    drift: np.ndarray
    h_generator: np.ndarray
    residual: float
    normalizable: bool

    def phi_at(self, x, types=0):
        x = np.asarray(x, dtype=float)
        return self.phi[np.asarray(types, dtype=int)] * np.exp(-self.rate * x)

    def phi_hat_at(self, x, types=0):
        x = np.asarray(x, dtype=float)
        return self.phi_hat[np.asarray(types, dtype=int)] * np.exp(self.rate * x)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "lambda1": self.lambda1,
            "phi": self.phi.tolist(),
            "phi_hat": self.phi_hat.tolist(),
            "rate": self.rate,
            "drift": self.drift.tolist(),
            "h_generator": self.h_generator.tolist(),
            "residual": self.residual,
            "normalizable": self.normalizable,
        }


def is_irreducible(generator: np.ndarray) -> bool:
    gen = np.asarray(generator, dtype=float)
    if gen.shape[0] == 1:
        return True
    adj = (gen - np.diag(np.diag(gen))) > 0
    n_comp, _ = connected_components(adj, directed=True, connection="strong")
    return n_comp == 1


def power_iteration(mat: np.ndarray, tol: float = POWER_TOL, max_iter: int = 200_000):
    """Perron root and positive eigenvector of an irreducible Metzler matrix.

    Iterates the nonnegative matrix ``mat + c I`` (c makes the diagonal at
    least 1, so the iteration is aperiodic), then polishes with a few steps
    of shifted inverse iteration. Returns ``(eigenvalue, vector)`` with the
    vector normalized to unit Euclidean length.
    """
    m = np.asarray(mat, dtype=float)
    n = m.shape[0]
    if n == 1:
        return float(m[0, 0]), np.ones(1)
    c = max(0.0, float(np.max(-np.diag(m)))) + 1.0
    b = m + c * np.eye(n)
    v = np.full(n, 1.0 / np.sqrt(n))
    for _ in range(max_iter):
        w = b @ v
        w /= np.linalg.norm(w)
        if np.max(np.abs(w - v)) < tol:
            v = w
            break
        v = w
    else:
        raise ModelError("power iteration did not converge")
    lam = float(v @ (m @ v))
    scale = max(1.0, float(np.max(np.abs(m))))
    shift = lam + 1e-9 * scale
    for _ in range(3):
        try:
            w = np.linalg.solve(m - shift * np.eye(n), v)
        except np.linalg.LinAlgError:
            break
        w = np.abs(w) / np.linalg.norm(w)
        v = w
        lam = float(v @ (m @ v))
    return lam, v


def _dense_check(m: np.ndarray, lam: float) -> None:
    if m.shape[0] > DENSE_CHECK_MAX_N:
        return
    vals = np.linalg.eigvals(m)
    top = float(np.max(vals.real))
    if abs(top - lam) > AGREEMENT_TOL * max(1.0, abs(top)):
        raise ModelError(f"power iteration eigenvalue {lam!r} disagrees with dense solve {top!r}")


def _pf_triple(m: np.ndarray):
    lam, v = power_iteration(m)
    lam_l, w = power_iteration(m.T)
    _dense_check(m, lam)
    if abs(lam - lam_l) > AGREEMENT_TOL * max(1.0, abs(lam)):
        raise ModelError("left and right Perron roots disagree")
    if np.any(v <= 0) or np.any(w <= 0):
        raise ModelError("Perron vector is not strictly positive")
    v = v / np.linalg.norm(v)
    w = w / float(v @ w)
    residual = float(np.max(np.abs(m @ v - lam * v)))
    return lam, v, w, residual


def tilt_generator(generator: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Jump rates q_ij phi(j)/phi(i) off the diagonal, rows summing to zero."""
    gen = np.asarray(generator, dtype=float)
    off = gen - np.diag(np.diag(gen))
    tilted = off * phi[None, :] / phi[:, None]
    return tilted - np.diag(tilted.sum(axis=1))


def mean_matrix(generator, a_by_state, beta_by_state) -> np.ndarray:
    """M = Q + diag((A - 1) beta)."""
    a = np.asarray(a_by_state, dtype=float)
    beta = np.asarray(beta_by_state, dtype=float)
    return np.asarray(generator, dtype=float) + np.diag((a - 1.0) * beta)


def eigen_finite_chain(generator, a_by_state, beta_by_state) -> EigenData:
    gen = np.atleast_2d(np.asarray(generator, dtype=float))
    n = gen.shape[0]
    a = np.broadcast_to(np.asarray(a_by_state, dtype=float), (n,))
    beta = np.broadcast_to(np.asarray(beta_by_state, dtype=float), (n,))
    if not is_irreducible(gen):
        raise ModelError("generator is not irreducible; the principal eigenvector is not unique")
    m = mean_matrix(gen, a, beta)
    lam, phi, phi_hat, residual = _pf_triple(m)
    return EigenData(
        kind="finite_chain",
        lambda1=lam,
        phi=phi,
        phi_hat=phi_hat,
        rate=0.0,
        drift=np.zeros(n),
        h_generator=tilt_generator(gen, phi),
        residual=residual,
        normalizable=True,
    )


def eigen_bbm(lam: float, beta: float, a_mean: float, diffusion: float = 1.0) -> EigenData:
    """Closed-form pair for Brownian motion: phi = e^{-lam x}.

    phi_hat is the formal dual e^{+lam x}; it is not integrable against
    Lebesgue measure, so nothing downstream normalizes it.
    """
    return EigenData(
        kind="bbm",
        lambda1=0.5 * diffusion * lam * lam + (a_mean - 1.0) * beta,
        phi=np.ones(1),
        phi_hat=np.ones(1),
        rate=float(lam),
        drift=np.array([-diffusion * lam]),
        h_generator=np.zeros((1, 1)),
        residual=0.0,
        normalizable=False,
    )


def typed_matrix(lam, theta_q, diffusions, a_by_type, beta_by_type) -> np.ndarray:
    """½ lam² diag(a) + theta Q + diag((A - 1) beta)."""
    a = np.asarray(diffusions, dtype=float)
    return 0.5 * lam * lam * np.diag(a) + mean_matrix(theta_q, a_by_type, beta_by_type)


def eigen_typed_bbm(lam, theta_q, diffusions, a_by_type, beta_by_type) -> EigenData:
    """Eigenpair (E_lam, v_lam) of the typed matrix; theta_q is the scaled generator."""
    gen = np.atleast_2d(np.asarray(theta_q, dtype=float))
    n = gen.shape[0]
    if not is_irreducible(gen):
        raise ModelError("type generator is not irreducible")
    diff = np.broadcast_to(np.asarray(diffusions, dtype=float), (n,))
    m = typed_matrix(lam, gen, diff,
                     np.broadcast_to(np.asarray(a_by_type, dtype=float), (n,)),
                     np.broadcast_to(np.asarray(beta_by_type, dtype=float), (n,)))
    e, v, w, residual = _pf_triple(m)
    return EigenData(
        kind="typed_bbm",
        lambda1=e,
        phi=v,
        phi_hat=w,
        rate=float(lam),
        drift=-diff * lam,
        h_generator=tilt_generator(gen, v),
        residual=residual,
        normalizable=False,
    )


def eigen_for_model(model: ModelSpec, lam: float = 0.0) -> EigenData:
    """Dispatch on the motion family; ``lam`` is the exponential rate for spatial models."""
    if model.space_dependent:
        raise ModelError("no closed-form eigenpair for space-dependent rates")
    beta = model.beta_by_type()
    a = model.mean_by_type()
    motion = model.motion
    if isinstance(motion, FiniteChain):
        return eigen_finite_chain(motion.generator, a, beta)
    if isinstance(motion, BrownianMotion):
        return eigen_bbm(lam, float(beta[0]), float(a[0]), motion.diffusion)
    if isinstance(motion, TypedBrownian):
        return eigen_typed_bbm(lam, motion.generator_matrix(), motion.diffusion_by_type, a, beta)
    raise ModelError(f"unsupported motion {type(motion).__name__}")
