import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spinesim.model import BrownianMotion, Constant, Explicit, FiniteChain, ModelError, ModelSpec, TypedBrownian
from spinesim.oracle import expm, invariance_error, stationarity_error
from spinesim.spectral import (eigen_bbm, eigen_finite_chain, eigen_for_model, eigen_typed_bbm, is_irreducible,
                               mean_matrix, power_iteration, tilt_generator)


@st.composite
def irreducible_chains(draw):
    n = draw(st.integers(2, 6))
    off = np.array(draw(st.lists(st.floats(0.05, 3.0), min_size=n * n, max_size=n * n))).reshape(n, n)
    np.fill_diagonal(off, 0.0)
    gen = off - np.diag(off.sum(axis=1))
    a = np.array(draw(st.lists(st.floats(0.0, 3.0), min_size=n, max_size=n)))
    beta = np.array(draw(st.lists(st.floats(0.0, 2.0), min_size=n, max_size=n)))
    return gen, a, beta


def test_two_by_two_closed_form():
    # M = [[-p + d1, p], [q, -q + d2]] has eigenvalues from the quadratic formula
    p, q, d1, d2 = 1.0, 2.0, 0.5, -0.3
    gen = np.array([[-p, p], [q, -q]])
    e = eigen_finite_chain(gen, np.array([1.5, 0.7]), np.array([1.0, 1.0]))
    m = np.array([[-p + d1, p], [q, -q + d2]])
    tr, det = np.trace(m), np.linalg.det(m)
    lam = 0.5 * (tr + np.sqrt(tr * tr - 4 * det))
    assert e.lambda1 == pytest.approx(lam, abs=1e-12)
    ratio = e.phi[1] / e.phi[0]
    assert ratio == pytest.approx((lam - m[0, 0]) / m[0, 1], rel=1e-10)


@given(irreducible_chains())
@settings(max_examples=40, deadline=None)
def test_eigen_triple_properties(chain):
    gen, a, beta = chain
    e = eigen_finite_chain(gen, a, beta)
    m = mean_matrix(gen, a, beta)
    assert e.residual < 1e-10
    assert np.all(e.phi > 0) and np.all(e.phi_hat > 0)
    assert e.phi @ e.phi == pytest.approx(1.0, abs=1e-10)
    assert e.phi @ e.phi_hat == pytest.approx(1.0, abs=1e-10)
    assert np.max(np.abs(e.phi_hat @ m - e.lambda1 * e.phi_hat)) < 1e-8 * max(1.0, np.abs(m).max())
    assert invariance_error(e, gen, a, beta, 0.7) < 1e-8
    assert stationarity_error(e, gen, a, beta, 0.7) < 1e-8
    assert np.allclose(e.h_generator.sum(axis=1), 0.0, atol=1e-10)


def test_power_iteration_matches_dense_solver():
    rng = np.random.default_rng(3)
    off = rng.uniform(0.1, 1.0, (5, 5))
    np.fill_diagonal(off, 0.0)
    mat = off - np.diag(rng.uniform(0.0, 3.0, 5))
    lam, v = power_iteration(mat)
    assert lam == pytest.approx(np.max(np.linalg.eigvals(mat).real), abs=1e-10)
    assert np.allclose(mat @ v, lam * v, atol=1e-10)


def test_tilted_generator_is_h_transform():
    gen = np.array([[-1.0, 1.0, 0.0], [0.5, -1.5, 1.0], [2.0, 0.0, -2.0]])
    a, beta = np.array([2.0, 1.0, 0.5]), np.array([1.0, 1.0, 1.0])
    e = eigen_finite_chain(gen, a, beta)
    m = mean_matrix(gen, a, beta)
    t = 0.8
    # exp(t G^phi)_ij = e^{-lambda1 t} exp(t M)_ij phi_j / phi_i
    lhs = expm(t * e.h_generator)
    rhs = np.exp(-e.lambda1 * t) * expm(t * m) * e.phi[None, :] / e.phi[:, None]
    assert np.allclose(lhs, rhs, atol=1e-10)
    assert np.allclose(tilt_generator(gen, np.ones(3)), gen)


def test_reducible_generator_rejected():
    gen = np.array([[-1.0, 1.0], [0.0, 0.0]])
    assert not is_irreducible(gen)
    with pytest.raises(ModelError):
        eigen_finite_chain(gen, [1.0, 1.0], [1.0, 1.0])


def test_bbm_closed_form():
    e = eigen_bbm(0.7, beta=1.0, a_mean=2.0, diffusion=1.0)
    assert e.lambda1 == pytest.approx(0.5 * 0.49 + 1.0)
    assert e.drift[0] == pytest.approx(-0.7)
    assert e.phi_at(1.0) == pytest.approx(np.exp(-0.7))
    assert not e.normalizable
    m = ModelSpec(BrownianMotion(2.0), Constant(1.0), Explicit((0.0, 0.0, 1.0)))
    e2 = eigen_for_model(m, 0.5)
    assert e2.lambda1 == pytest.approx(0.5 * 2.0 * 0.25 + 1.0)
    assert e2.drift[0] == pytest.approx(-1.0)


def test_typed_bbm_reduces_to_bbm_for_equal_types():
    q = np.array([[-1.0, 1.0], [1.0, -1.0]])
    e = eigen_typed_bbm(0.6, q, [1.0, 1.0], [2.0, 2.0], [1.0, 1.0])
    assert e.lambda1 == pytest.approx(0.5 * 0.36 + 1.0, abs=1e-12)
    assert np.allclose(e.phi, e.phi[0])
    m = ModelSpec(TypedBrownian(q, np.array([1.0, 3.0])), Constant(1.0), Explicit((0.0, 0.0, 1.0)))
    e2 = eigen_for_model(m, 0.6)
    assert e2.residual < 1e-10
    assert np.allclose(e2.drift, [-0.6, -1.8])
