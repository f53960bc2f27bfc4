import math

import numpy as np
import pytest

from spinesim.functionals import (MartingalePath, dw_lambda, eta_components, l_function, llogl_integral, log_plus,
                                  m_phi, martingale_path, sigma_squared, spine_rhs, v_trunc, variance_functional,
                                  w_lambda, weighted_particle_law)
from spinesim.model import Explicit, Geometric, PowerLaw
from spinesim.spectral import eigen_bbm, eigen_for_model
from spinesim.tree import SpineRecord

from helpers import handmade_tree


def test_w_lambda_by_hand():
    tree = handmade_tree()
    lam = 0.8
    rate = 0.5 * lam**2 + 1.0
    assert w_lambda(tree, lam, 1.0, 2.0, 0.5) == pytest.approx(math.exp(-rate * 0.5) * math.exp(-lam * 0.3))
    at1 = math.exp(-rate) * 2 * math.exp(-lam * 0.5)
    assert w_lambda(tree, lam, 1.0, 2.0, 1.0) == pytest.approx(at1)
    d = math.exp(-rate * 2) * (-0.4 + lam * 2) * math.exp(lam * 0.4)
    assert dw_lambda(tree, lam, 1.0, 2.0, 2.0) == pytest.approx(d)


def test_dw_is_minus_derivative_of_w():
    tree = handmade_tree()
    lam, h = 0.7, 1e-6
    num = -(w_lambda(tree, lam + h, 1.0, 2.0, 2.0) - w_lambda(tree, lam - h, 1.0, 2.0, 2.0)) / (2 * h)
    assert dw_lambda(tree, lam, 1.0, 2.0, 2.0) == pytest.approx(num, rel=1e-8)


def test_m_phi_by_hand(two_type):
    tree = handmade_tree()
    e = eigen_for_model(two_type)
    expected = math.exp(-e.lambda1 * 1.0) * (2 * e.phi[1]) / e.phi[0]
    assert m_phi(tree, e, 1.0) == pytest.approx(expected)
    assert m_phi(tree, e, 0.0) == pytest.approx(1.0)


def test_v_trunc_barrier():
    tree = handmade_tree()
    # barrier y + lambda s = -x_shift; child 1 ends at -0.4 at time 2 so a shift of 0.1 with lambda 0 kills it
    assert v_trunc(tree, 0.0, 0.1, 2.0, 1.0, 2.0) == 0.0
    lam, xs = 0.5, 1.0
    rate = 0.5 * lam**2 + 1.0
    expected = math.exp(-rate * 2) * (xs - 0.4 + lam * 2) / xs * math.exp(0.4 * lam)
    assert v_trunc(tree, lam, xs, 2.0, 1.0, 2.0) == pytest.approx(expected)
    assert 0 < v_trunc(tree, lam, xs, 2.0, 1.0, 2.0, bridge=True) < expected
    with pytest.raises(ValueError):
        v_trunc(tree, lam, 0.0, 2.0, 1.0, 2.0)


def test_martingale_path_validation():
    p = martingale_path("W_lambda", handmade_tree(), [0.5, 1.0], lambda tr, t: w_lambda(tr, 0.5, 1.0, 2.0, t))
    assert list(p.rows(3))[0][:2] == (3, "W_lambda")
    with pytest.raises(ValueError):
        MartingalePath("nope", np.zeros(1), np.zeros(1))
    with pytest.raises(ValueError):
        MartingalePath("M_phi", np.zeros(1), np.array([np.nan]))
    assert log_plus(np.array([0.5, math.e]))[1] == pytest.approx(1.0)


def test_spine_rhs_and_eta_on_handmade_spine(two_type):
    e = eigen_for_model(two_type)
    sp = SpineRecord.from_tree(handmade_tree())
    rhs = spine_rhs(sp, e, 2.0)
    expected = e.phi[0] * math.exp(-2 * e.lambda1) + (2 - 1) * e.phi[1] * math.exp(-e.lambda1)
    assert rhs == pytest.approx(expected)
    eta1, eta2, eta3, eta_t = eta_components(sp, two_type, e, 2.0)
    assert eta1 * eta2 * eta3 == pytest.approx(eta_t, rel=1e-12)
    assert eta2 == pytest.approx(2 / two_type.mean_by_type()[1])


def test_eta_at_dagger(two_type):
    e = eigen_for_model(two_type)
    sp = SpineRecord.from_tree(handmade_tree(spine=(True, False, True)))
    eta1, eta2, eta3, eta_t = eta_components(sp, two_type, e, 2.0)
    assert eta_t == 0.0
    assert eta1 > 0 and eta3 > 0


def test_weighted_particle_law(two_type):
    e = eigen_for_model(two_type)
    law = weighted_particle_law(handmade_tree(), e, 1.0, 2)
    assert np.allclose(law, [0.0, 1.0])


def test_l_function_and_variance_closed_forms():
    law = Explicit((0.25, 0.25, 0.5))
    # sum over k >= 2 of k phi log+(k phi) p_k
    phi = 0.8
    expected = 0.5 * 2 * phi * math.log(2 * phi)
    assert l_function(phi, law).value == pytest.approx(expected)
    assert variance_functional(law).value == pytest.approx(0.5 * 2)
    g = Geometric(0.5)
    v = variance_functional(g)
    # E r(r-1) for a geometric on {0,1,...} with success s: 2 (1-s)^2 / s^2
    assert v.value == pytest.approx(2.0, rel=1e-9)
    assert not v.divergent


def test_powerlaw_llogl_divergence_flag():
    finite = l_function(1.0, PowerLaw(2.0, 2.5, 10_000))
    infinite = l_function(1.0, PowerLaw(2.0, 1.1, 10_000))
    assert not finite.divergent
    assert infinite.divergent
    assert variance_functional(PowerLaw(2.5, 0.0, 1000)).divergent


def test_sigma_squared_and_llogl_integral(gw):
    e = eigen_for_model(gw)
    # single type: phi = 1 and sigma^2 = beta E r(r-1) / phi_hat-normalization = beta * V
    assert sigma_squared(gw, e) == pytest.approx(1.0 * (0.5 * 2), rel=1e-12)
    assert not llogl_integral(gw, e).divergent


def two_fission_spine():
    """Spine fissions at 1 (type 0, r = 2) and 1.5 (type 1, r = 3); type switches 0 -> 1 at 1.2."""
    from spinesim.tree import MarkedTree, NodeRecord

    inf = math.inf
    recs = [
        NodeRecord((), 0.0, 1.0, 2, np.array([(0.0, 0.0, 0), (1.0, 0.0, 0)]), None, True),
        NodeRecord((1,), 1.0, 1.5, 3, np.array([(1.0, 0.0, 0), (1.2, 0.0, 1), (1.5, 0.0, 1)]), (), True),
        NodeRecord((2,), 1.0, inf, None, np.array([(1.0, 0.0, 0), (2.0, 0.0, 0)]), (), False),
        NodeRecord((1, 1), 1.5, inf, None, np.array([(1.5, 0.0, 1), (2.0, 0.0, 1)]), (1,), False),
        NodeRecord((1, 2), 1.5, inf, None, np.array([(1.5, 0.0, 1), (2.0, 0.0, 1)]), (1,), True),
        NodeRecord((1, 3), 1.5, 1.8, 0, np.array([(1.5, 0.0, 1), (1.8, 0.0, 1)]), (1,), False),
    ]
    tree = MarkedTree.from_records(recs, 2.0, (0.0, 0), (2.0,))
    assert tree.validate() == []
    return SpineRecord.from_tree(tree)


def test_eta_components_two_fissions_by_hand(two_type):
    e = eigen_for_model(two_type)
    sp = two_fission_spine()
    a = 1.4  # mean of (0.3, 0, 0.7) in both types
    integral = (a - 1) * (0.5 * 1.2 + 2.0 * 0.8)
    ratio = e.phi[1] / e.phi[0]
    eta1, eta2, eta3, eta_t = eta_components(sp, two_type, e, 2.0)
    assert eta1 == pytest.approx(a * a * math.exp(-integral), rel=1e-12)
    assert eta2 == pytest.approx((2 / a) * (3 / a), rel=1e-12)
    assert eta3 == pytest.approx(ratio * math.exp(-(2 * e.lambda1 - integral)), rel=1e-12)
    assert eta_t == pytest.approx(6 * ratio * math.exp(-2 * e.lambda1), rel=1e-12)
    rhs = (e.phi[1] * math.exp(-2 * e.lambda1) + e.phi[0] * math.exp(-e.lambda1)
           + 2 * e.phi[1] * math.exp(-1.5 * e.lambda1))
    assert spine_rhs(sp, e, 2.0) == pytest.approx(rhs, rel=1e-12)


def test_reference_series_values():
    assert l_function(math.e, Explicit((0.0, 0.0, 1.0))).value == pytest.approx(2 * math.e * math.log(2 * math.e))
    assert l_function(1.0, PowerLaw(2.0, 2.0, 10_000)).divergent
    assert variance_functional(Explicit((0.5, 0.0, 0.5))).value == pytest.approx(1.0)
    assert variance_functional(Explicit((0.0, 0.0, 0.0, 1.0))).value == pytest.approx(6.0)


def test_sigma_squared_two_type_by_hand(two_type):
    e = eigen_for_model(two_type)
    v = 0.7 * 2
    expected = 0.5 * v * e.phi[0] ** 2 * e.phi_hat[0] + 2.0 * v * e.phi[1] ** 2 * e.phi_hat[1]
    assert sigma_squared(two_type, e) == pytest.approx(expected, rel=1e-12)


def test_llogl_integral_light_and_heavy():
    from spinesim.model import Constant, FiniteChain, ModelSpec

    chain = FiniteChain(np.zeros((1, 1)))
    light = ModelSpec(chain, Constant(1.0), PowerLaw(3.0, 0.0, 100_000))
    heavy = ModelSpec(chain, Constant(1.0), PowerLaw(2.0, 2.0, 100_000))
    val = llogl_integral(light, eigen_for_model(light))
    assert not val.divergent and math.isfinite(val.value) and val.tail_bound < 1e-3
    assert llogl_integral(heavy, eigen_for_model(heavy)).divergent


def _bbm_batch(bbm, t_obs, lambdas, n, seed):
    from spinesim.sim import BatchJob, run_batch

    return run_batch(BatchJob(bbm, "P", t_obs[-1], t_obs, seed=seed, x0=(0.0, 0), lambdas=lambdas), n)


def test_w_lambda_has_mean_one(bbm):
    from spinesim.functionals import w_lambda_batch
    from spinesim.stats import mean_report

    w = w_lambda_batch(_bbm_batch(bbm, (2.0,), (0.5,), 20_000, 70), 0.5, 1.0, 2.0)[:, 0]
    assert mean_report("W_2(0.5)", w, 1.0).passed


def test_derivative_martingale_mean_is_stationary(bbm):
    from spinesim.functionals import dw_lambda_batch
    from spinesim.stats import difference_report

    lam = 0.5
    d = dw_lambda_batch(_bbm_batch(bbm, (0.5, 1.5), (lam,), 20_000, 71), lam, 1.0, 2.0)
    # started at 0 the mean is 0 at every time; compare the two times on independent halves
    assert difference_report("dW drift", d[:10_000, 0], d[10_000:, 1]).passed


def test_truncated_martingale_has_mean_one(bbm):
    from spinesim.sim import SimConfig, replicate_rng, simulate_p
    from spinesim.stats import mean_report

    cfg = SimConfig(bbm, 1.0, (1.0,))
    v = [v_trunc(simulate_p(cfg, 0.0, replicate_rng(72, i)), 1.0, 1.0, 1.0, 1.0, 2.0, bridge=True)
         for i in range(5000)]
    assert mean_report("V_1", v, 1.0).passed
