import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from spinesim.functionals import spine_rhs
from spinesim.model import ModelError
from spinesim.oracle import expm
from spinesim.sim import BatchJob, SimConfig, replicate_rng, run_batch
from spinesim.spectral import eigen_for_model
from spinesim.spine_sim import QSimConfig, resample_batch, resample_subtrees, simulate_q
from spinesim.stats import categorical_chi2, mean_report, pearson_gof

fixture_ok = settings(max_examples=30, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])


def test_q_config_needs_valid_eigen(two_type, gw):
    with pytest.raises(ModelError):
        QSimConfig(two_type, 1.0)
    with pytest.raises(ModelError):
        QSimConfig(two_type, 1.0, eigen=eigen_for_model(gw))


@given(seed=st.integers(0, 2**32 - 1))
@fixture_ok
def test_q_trees_keep_the_spine_alive(two_type, seed):
    e = eigen_for_model(two_type)
    cfg = QSimConfig(two_type, 2.0, (1.0, 2.0), eigen=e)
    tree, spine = simulate_q(cfg, 0, replicate_rng(seed, 0))
    assert tree.validate() == []
    assert spine.dagger_time is None
    assert np.all(spine.offspring_counts >= 1)
    assert tree.spine_at(2.0) is not None
    assert tree.weight_identity(2.0) == pytest.approx(1.0, abs=1e-12)


def test_spine_type_follows_tilted_chain(two_type):
    e = eigen_for_model(two_type)
    job = BatchJob(two_type, "Q", 1.5, (1.5,), seed=31, x0=(0.0, 0), eigen=e)
    batch = run_batch(job, 20_000, workers=2)
    types = batch.spine[:, 0, 1].astype(int)
    law = expm(1.5 * e.h_generator)[0]
    rep = categorical_chi2(types, np.tile(law, (types.size, 1)))
    assert rep.passed, rep


def test_resampling_keeps_the_skeleton(two_type):
    e = eigen_for_model(two_type)
    cfg = QSimConfig(two_type, 2.0, (1.0, 2.0), eigen=e)
    _, spine = simulate_q(cfg, 0, replicate_rng(5, 0))
    p_cfg = SimConfig(two_type, 2.0, (1.0, 2.0))
    tree = resample_subtrees(spine, p_cfg, replicate_rng(6, 0))
    assert tree.validate() == []
    again = tree.spine_indices()
    assert np.array_equal(tree.death[again], np.append(spine.fission_times, np.inf))
    batch = resample_batch(spine, p_cfg, 5, seed=7)
    assert np.allclose(batch.spine[:, -1, 1], spine.state_at(2.0)[1])


def test_spine_decomposition_on_one_skeleton(two_type):
    e = eigen_for_model(two_type)
    cfg = QSimConfig(two_type, 2.0, (2.0,), eigen=e)
    _, spine = simulate_q(cfg, 0, replicate_rng(11, 0))
    batch = resample_batch(spine, SimConfig(two_type, 2.0, (2.0,)), 20_000, seed=12)
    m = np.exp(-e.lambda1 * 2.0) * batch.counts()[:, 0, :] @ e.phi
    rep = mean_report("conditional mean", m, spine_rhs(spine, e, 2.0))
    assert rep.passed, rep


def test_critical_binary_spine_fissions():
    from scipy import stats as sps

    from spinesim.model import Constant, Explicit, FiniteChain, ModelSpec

    model = ModelSpec(FiniteChain(np.zeros((1, 1))), Constant(1.0), Explicit((0.5, 0.0, 0.5)))
    cfg = QSimConfig(model, 3.0, (3.0,), eigen=eigen_for_model(model))
    n_fissions = []
    for i in range(2000):
        _, spine = simulate_q(cfg, 0, replicate_rng(60, i))
        assert np.all(spine.offspring_counts == 2)
        n_fissions.append(spine.n_fissions)
    # the spine branches at rate beta A = 1, so the count by t = 3 is Poisson(3)
    counts = np.bincount(n_fissions, minlength=15)[:15]
    probs = sps.poisson.pmf(np.arange(15), 3.0)
    probs[-1] += sps.poisson.sf(14, 3.0)
    counts[-1] += np.sum(np.array(n_fissions) > 14)
    assert pearson_gof(counts, probs)[2] > 0.001


def test_bbm_spine_has_drift_minus_lambda(bbm):
    e = eigen_for_model(bbm, 1.0)
    t = 1.0
    job = BatchJob(bbm, "Q", t, (t,), seed=61, x0=(0.3, 0), eigen=e)
    batch = run_batch(job, 20_000)
    rep = mean_report("spine displacement", batch.spine[:, 0, 0] - 0.3, -t)
    assert rep.passed, rep
