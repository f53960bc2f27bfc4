import numpy as np
import pytest
from scipy import stats as sps

from spinesim.functionals import population_batch
from spinesim.model import Constant, Explicit, FiniteChain, ModelError, ModelSpec, SpaceDependent
from spinesim.oracle import mean_population
from spinesim.sim import (BatchJob, CapExceeded, SimConfig, first_fission_times, replicate_rng, run_batch,
                          simulate_p)
from spinesim.stats import mean_report


def test_config_validation(two_type):
    with pytest.raises(ModelError):
        SimConfig(two_type, 1.0, (2.0,))
    with pytest.raises(ModelError):
        SimConfig(two_type, 1.0, (0.5, 0.5))
    with pytest.raises(ModelError):
        SimConfig(two_type, -1.0)
    with pytest.raises(ModelError):
        SimConfig(two_type, 1.0, max_nodes=0)


def test_same_seed_same_tree(two_type):
    cfg = SimConfig(two_type, 3.0, (1.0, 3.0), seed=9)
    assert simulate_p(cfg, 0).dumps() == simulate_p(cfg, 0).dumps()
    assert simulate_p(cfg, 0, replicate_rng(9, 1)).dumps() != simulate_p(cfg, 0).dumps()


def test_batch_independent_of_workers_and_chunking(two_type):
    job = BatchJob(two_type, "P", 2.0, (1.0, 2.0), seed=4, x0=(0.0, 0), lambdas=(0.0,))
    serial = run_batch(job, 400)
    parallel = run_batch(job, 400, workers=3)
    assert np.array_equal(serial.features, parallel.features)
    tail = run_batch(job, 150, start=250)
    assert np.array_equal(serial.features[250:], tail.features)


def test_batch_agrees_with_tree_simulation(two_type):
    job = BatchJob(two_type, "P", 2.0, (1.0, 2.0), seed=21, x0=(0.0, 1))
    batch = run_batch(job, 50)
    cfg = SimConfig(two_type, 2.0, (1.0, 2.0))
    for i in range(50):
        tree = simulate_p(cfg, 1, replicate_rng(21, i))
        for k, t in enumerate(cfg.observation_times):
            _, types = tree.state_at(t)
            assert np.array_equal(np.bincount(types, minlength=2), batch.counts()[i, k])


def test_mean_population_matches_matrix_exponential(two_type):
    job = BatchJob(two_type, "P", 1.5, (1.5,), seed=8, x0=(0.0, 0))
    pop = population_batch(run_batch(job, 20_000, workers=2))[:, 0]
    rep = mean_report("mean population", pop, mean_population(two_type, 1.5, 0))
    assert rep.passed, rep


def test_thinning_gives_exponential_first_fission():
    # type never changes, rate at type 0 is 0.5 under a bound of 2: the root dies at Exp(0.5)
    model = ModelSpec(FiniteChain(np.zeros((2, 2))), SpaceDependent(2.0, expr="0.5 + i"), Explicit((1.0,)))
    times = first_fission_times(model, 1e9, 4000, seed=3, x=0)
    assert sps.kstest(times, "expon", args=(0, 2.0)).pvalue > 0.001
    fast = first_fission_times(model, 1e9, 4000, seed=4, x=1)
    assert sps.kstest(fast, "expon", args=(0, 1 / 1.5)).pvalue > 0.001


def test_caps(gw):
    supercritical = ModelSpec(gw.motion, Constant(3.0), Explicit((0.0, 0.0, 1.0)))
    with pytest.raises(CapExceeded):
        simulate_p(SimConfig(supercritical, 5.0, max_nodes=100), 0)
    job = BatchJob(supercritical, "P", 5.0, (5.0,), seed=1, x0=(0.0, 0), max_nodes=100)
    batch = run_batch(job, 10)
    assert batch.capped_count == 10
    assert not batch.ok.any()


def test_q_batch_requires_eigen(two_type):
    with pytest.raises(ModelError):
        run_batch(BatchJob(two_type, "Q", 1.0, (1.0,), seed=0, x0=(0.0, 0)), 5)
    with pytest.raises(ModelError):
        run_batch(BatchJob(two_type, "P", 1.0, (1.0,), seed=0, x0=(0.0, 0)), 0)


def test_bbm_mean_population_is_e(bbm):
    job = BatchJob(bbm, "P", 1.0, (1.0,), seed=50, x0=(0.0, 0))
    pop = population_batch(run_batch(job, 20_000))[:, 0]
    assert mean_report("E|X_1|", pop, np.e).passed


def test_critical_binary_survival_at_ten():
    model = ModelSpec(FiniteChain(np.zeros((1, 1))), Constant(1.0), Explicit((0.5, 0.0, 0.5)))
    job = BatchJob(model, "P", 10.0, (10.0,), seed=51, x0=(0.0, 0))
    alive = (population_batch(run_batch(job, 20_000))[:, 0] > 0).astype(float)
    assert mean_report("P(survive to 10)", alive, 1 / 6).passed


def test_childless_particle_spine_dies_at_exponential_time():
    from spinesim.sim import simulate_p_tilde

    model = ModelSpec(FiniteChain(np.zeros((1, 1))), Constant(1.0), Explicit((1.0,)))
    cfg = SimConfig(model, 1e9)
    times = np.array([simulate_p_tilde(cfg, 0, replicate_rng(52, i))[1].dagger_time for i in range(3000)])
    assert np.all(np.isfinite(times))
    assert sps.kstest(times, "expon").pvalue > 0.001
