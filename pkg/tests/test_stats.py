import json
import math

import numpy as np
import pytest
from scipy import stats as sps

from spinesim.functionals import m_phi_batch
from spinesim.sim import BatchJob, run_batch
from spinesim.spectral import eigen_for_model
from spinesim.stats import (FAIL, INCONCLUSIVE, PASS, EstimateReport, bound_report, categorical_chi2,
                            combine_verdicts, compare_measures, difference_report, mean_report, pearson_gof,
                            regime_report, run_experiment, spine_marginal_test, trend_report, value_report, z_score)


def test_z_score_edge_cases():
    assert z_score(1.0, 1.0 + 1e-14, 0.0) == 0.0
    assert z_score(2.0, 1.0, 0.0) == math.inf
    assert z_score(2.0, 1.0, 0.5) == 2.0


def test_verdict_combination():
    assert combine_verdicts([PASS, PASS]) == PASS
    assert combine_verdicts([PASS, INCONCLUSIVE]) == INCONCLUSIVE
    assert combine_verdicts([INCONCLUSIVE, FAIL]) == FAIL


def test_mean_report_and_caps():
    rng = np.random.default_rng(0)
    x = rng.normal(1.0, 1.0, 10_000)
    assert mean_report("ok", x, 1.0).verdict == PASS
    assert mean_report("shifted", x, 1.1).verdict == FAIL
    assert mean_report("capped", x, 1.0, capped=200).verdict == INCONCLUSIVE
    d = difference_report("diff", x, rng.normal(1.0, 1.0, 10_000))
    assert d.verdict == PASS and d.details["pairing"] == "independent"


def test_deterministic_reports():
    assert value_report("v", 1.0 + 1e-13, 1.0, 1e-12).passed
    assert not value_report("v", 1.02, 1.0, 0.01, relative=True).passed
    assert bound_report("b", 0.5, 1.0).passed
    assert not bound_report("b", 0.5, 1.0, below=False).passed


def test_report_serializes_non_finite_values():
    r = EstimateReport("x", math.inf, 0.0, 3, z_score=-math.inf, details={"a": np.arange(2), "b": np.float64(2)})
    text = json.dumps(r.to_dict(), allow_nan=False)
    assert "inf" in text.lower()
    with pytest.raises(ValueError):
        EstimateReport("x", 1.0, math.nan, 3)


def test_standard_error_shrinks_like_root_n(two_type):
    e = eigen_for_model(two_type)
    job = BatchJob(two_type, "P", 1.0, (1.0,), seed=3, x0=(0.0, 0), lambdas=(0.0,))
    fn = {"M": lambda b: m_phi_batch(b, e)}
    small = run_experiment(job, 2_000, fn, {"M": 1.0})[0]
    large = run_experiment(job, 8_000, fn, {"M": 1.0})[0]
    assert small.passed and large.passed
    assert small.std_error / large.std_error == pytest.approx(2.0, rel=0.2)


def test_chi2_matches_pearson_for_identical_rows():
    rng = np.random.default_rng(1)
    p = np.array([0.2, 0.5, 0.3])
    draws = rng.choice(3, size=3000, p=p)
    rep = categorical_chi2(draws, np.tile(p, (draws.size, 1)))
    stat, dof, pval = pearson_gof(np.bincount(draws, minlength=3), p)
    assert rep.details["statistic"] == pytest.approx(stat, rel=1e-9)
    assert rep.details["dof"] == dof == 2


def test_chi2_calibration_for_non_identical_rows():
    rng = np.random.default_rng(2)
    pvals = []
    for _ in range(300):
        probs = rng.dirichlet(np.ones(4), size=400)
        draws = (rng.random(400)[:, None] > np.cumsum(probs, axis=1)).sum(axis=1)
        pvals.append(categorical_chi2(np.minimum(draws, 3), probs).details["p_value"])
    assert sps.kstest(pvals, "uniform").pvalue > 0.001
    # wrong law: shift every row toward category 0
    probs = rng.dirichlet(np.ones(4), size=2000)
    draws = (rng.random(2000)[:, None] > np.cumsum(probs, axis=1)).sum(axis=1)
    wrong = 0.7 * probs + 0.3 * np.array([1.0, 0, 0, 0])
    assert categorical_chi2(np.minimum(draws, 3), wrong).verdict == FAIL


def test_chi2_merges_sparse_cells():
    draws = np.zeros(100, dtype=int)
    probs = np.tile([0.999, 0.0005, 0.0005], (100, 1))
    rep = categorical_chi2(draws, probs)
    assert rep.verdict == PASS
    assert len(rep.details["cells"]) == 1


@pytest.mark.parametrize("seed", range(5))
def test_regime_report_classifies(seed):
    rng = np.random.default_rng(seed)
    times = np.array([1.0, 2.0, 3.0])
    stable = rng.exponential(1.0, (5000, 3))
    assert regime_report("stable", stable, times, False, "finite").passed
    shrinking = np.exp(-3 * times)[None, :] * rng.exponential(1.0, (500, 3))
    assert regime_report("dying", shrinking, times, True, "infinite").passed
    assert not regime_report("dying as stable", shrinking, times, False, "x").passed
    with pytest.raises(ValueError):
        regime_report("short", stable[:, :2], times[:2], False, "x")


def test_trend_report():
    rng = np.random.default_rng(4)
    base = rng.exponential(1.0, 4000)
    flat = np.column_stack([base, base + rng.normal(0, 0.1, 4000), base + rng.normal(0, 0.1, 4000)])
    grow = np.column_stack([base, 1.5 * base, 2 * base])
    assert trend_report("flat", flat, [1, 2, 3], expect_growth=False).passed
    assert trend_report("grow", grow, [1, 2, 3], expect_growth=True).passed
    assert not trend_report("grow as flat", grow, [1, 2, 3], expect_growth=False).passed


def test_change_of_measure_and_its_negative_control(two_type):
    e = eigen_for_model(two_type)
    kw = dict(horizon=1.0, observation_times=(1.0,), x0=(0.0, 0), lambdas=(0.0,), eigen=e)
    p = run_batch(BatchJob(two_type, "P", seed=1, **kw), 8_000)
    q = run_batch(BatchJob(two_type, "Q", seed=2, **kw), 8_000)
    bad = run_batch(BatchJob(two_type, "Q", seed=2, mutation="no_size_bias", **kw), 8_000)

    def g(b):
        return b.counts().sum(axis=2)

    assert compare_measures(p, q, g, e, (0.0, 0), "count").passed
    assert not compare_measures(p, bad, g, e, (0.0, 0), "count, untilted").passed
    assert spine_marginal_test(q, e).passed
    assert not spine_marginal_test(q, e, selector="uniform-particle", seed=5).passed
    with pytest.raises(ValueError):
        spine_marginal_test(q, e, selector="nope")
