"""Estimates with standard errors, verdicts and goodness-of-fit tests.

Verdicts follow one rule: an identity test passes when its z-score is at
most the threshold (3 by default); a chi-square test passes when its
p-value exceeds the level (0.01 by default); any check whose capped
replicate fraction exceeds the cap limit (1% by default) is inconclusive.
Checks of almost-sure limit statements are trend tests and say so in
their ``details``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

Z_THRESHOLD = 3.0
CHI2_LEVEL = 0.01
CAP_LIMIT = 0.01
MIN_CELL = 5.0

PASS, FAIL, INCONCLUSIVE = "pass", "fail", "inconclusive"


@dataclass
class EstimateReport:
    name: str
    estimate: float
    std_error: float
    replicates: int
    capped_count: int = 0
    target: float | None = None
    z_score: float | None = None
    verdict: str = INCONCLUSIVE
    threshold: float = Z_THRESHOLD
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.std_error < 0 or math.isnan(self.std_error):
            raise ValueError("std_error must be nonnegative")

    @property
    def passed(self) -> bool:
        return self.verdict == PASS

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "estimate": _json_float(self.estimate),
            "std_error": _json_float(self.std_error),
            "replicates": self.replicates,
            "capped_count": self.capped_count,
            "target": _json_float(self.target),
            "z_score": _json_float(self.z_score),
            "verdict": self.verdict,
            "threshold": self.threshold,
            "details": _jsonable(self.details),
        }


def _json_float(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else str(x)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _json_float(obj)
    return obj


def combine_verdicts(verdicts) -> str:
    verdicts = list(verdicts)
    if any(v == FAIL for v in verdicts):
        return FAIL
    if any(v == INCONCLUSIVE for v in verdicts):
        return INCONCLUSIVE
    return PASS


def cap_ok(capped: int, total: int, limit: float = CAP_LIMIT) -> bool:
    return total > 0 and capped / total <= limit


def mean_se(samples) -> tuple:
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise ValueError("no samples")
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
    return float(x.mean()), se


EXACT_RTOL = 1e-12


def z_score(estimate: float, target: float, se: float) -> float:
    """(estimate - target) / se; agreement to ``EXACT_RTOL`` counts as exact.

    A deterministic functional (say a skeleton with no fission before t)
    has a rounding-level sample spread, which would otherwise turn a
    last-digit difference into a huge z.
    """
    diff = estimate - target
    if abs(diff) <= EXACT_RTOL * max(1.0, abs(target)):
        return 0.0
    if se == 0:
        return 0.0 if diff == 0 else math.copysign(math.inf, diff)
    return diff / se


def mean_report(name: str, samples, target: float, capped: int = 0, threshold: float = Z_THRESHOLD,
                cap_limit: float = CAP_LIMIT, **details) -> EstimateReport:
    """Monte Carlo mean of ``samples`` against a known ``target``."""
    x = np.asarray(samples, dtype=float)
    est, se = mean_se(x)
    z = z_score(est, target, se)
    total = x.size + capped
    if not cap_ok(capped, total, cap_limit):
        verdict = INCONCLUSIVE
    else:
        verdict = PASS if abs(z) <= threshold else FAIL
    return EstimateReport(name, est, se, x.size, capped, target, z, verdict, threshold, dict(details))


def difference_report(name: str, a, b, capped: int = 0, threshold: float = Z_THRESHOLD,
                      cap_limit: float = CAP_LIMIT, **details) -> EstimateReport:
    """Two independent samples estimating the same quantity; z on the difference with pooled SE."""
    ma, sa = mean_se(a)
    mb, sb = mean_se(b)
    se = math.hypot(sa, sb)
    z = z_score(ma - mb, 0.0, se)
    total = len(a) + len(b) + capped
    verdict = INCONCLUSIVE if not cap_ok(capped, total, cap_limit) else (PASS if abs(z) <= threshold else FAIL)
    det = {"mean_a": ma, "se_a": sa, "mean_b": mb, "se_b": sb, "pairing": "independent"}
    det.update(details)
    return EstimateReport(name, ma - mb, se, len(a) + len(b), capped, 0.0, z, verdict, threshold, det)


def value_report(name: str, value: float, target: float, tol: float, relative: bool = False,
                 **details) -> EstimateReport:
    """Deterministic comparison |value - target| <= tol (relative to |target| if asked)."""
    err = abs(value - target)
    bound = tol * abs(target) if relative else tol
    verdict = PASS if err <= bound else FAIL
    det = {"error": err, "tolerance": bound, "relative": relative}
    det.update(details)
    return EstimateReport(name, float(value), 0.0, 0, 0, float(target), None, verdict, tol, det)


def bound_report(name: str, value: float, bound: float, below: bool = True, **details) -> EstimateReport:
    """value < bound (or > bound when ``below`` is False)."""
    ok = value < bound if below else value > bound
    det = {"bound": bound, "direction": "below" if below else "above"}
    det.update(details)
    return EstimateReport(name, float(value), 0.0, 0, 0, None, None, PASS if ok else FAIL, bound, det)


# ---------------------------------------------------------------------------
# Chi-square tests


def _merge_small(observed, expected, cov, min_cell: float):
    """Merge cells with expected count below ``min_cell`` into their smallest neighbour group."""
    groups = [[i] for i in range(len(expected))]
    exp = list(expected)
    while len(groups) > 1 and min(exp) < min_cell:
        j = int(np.argmin(exp))
        k = j + 1 if j + 1 < len(groups) else j - 1
        a, b = sorted((j, k))
        groups[a] = groups[a] + groups[b]
        exp[a] = exp[a] + exp[b]
        del groups[b], exp[b]
    m = np.zeros((len(groups), len(expected)))
    for g, cells in enumerate(groups):
        m[g, cells] = 1.0
    return m @ observed, m @ expected, m @ cov @ m.T, groups


def categorical_chi2(choices, probs, min_cell: float = MIN_CELL, level: float = CHI2_LEVEL,
                     name: str = "chi2") -> EstimateReport:
    """Test that ``choices[r]`` was drawn from the categorical law ``probs[r]``.

    The draws are independent but not identically distributed, so the
    category counts have mean ``E = Σ_r probs[r]`` and covariance
    ``C = Σ_r (diag(p_r) - p_r p_rᵀ)``. The statistic ``(O - E)ᵀ C⁺ (O - E)``
    is asymptotically chi-square with rank(C) degrees of freedom; with
    identical rows it reduces to Pearson's statistic.
    """
    choices = np.asarray(choices, dtype=int)
    probs = np.asarray(probs, dtype=float)
    n, k = probs.shape
    observed = np.bincount(choices, minlength=k).astype(float)
    expected = probs.sum(axis=0)
    cov = np.diag(expected) - probs.T @ probs
    o, e, c, groups = _merge_small(observed, expected, cov, min_cell)
    if len(groups) < 2:
        return EstimateReport(name, 0.0, 0.0, n, verdict=PASS, threshold=level,
                              details={"statistic": 0.0, "dof": 0, "p_value": 1.0, "cells": groups,
                                       "observed": observed, "expected": expected,
                                       "note": "a single cell; nothing to test"})
    diff = o - e
    # one constraint (counts sum to n) makes C singular; drop the last cell
    diff, c = diff[:-1], c[:-1, :-1]
    dof = np.linalg.matrix_rank(c)
    stat = float(diff @ np.linalg.pinv(c) @ diff)
    p = float(sps.chi2.sf(stat, dof)) if dof > 0 else 1.0
    verdict = PASS if p > level else FAIL
    return EstimateReport(name, stat, 0.0, n, verdict=verdict, threshold=level,
                          details={"statistic": stat, "dof": int(dof), "p_value": p, "cells": groups,
                                   "observed": observed, "expected": expected})


def pearson_gof(counts, probs, min_cell: float = MIN_CELL, level: float = CHI2_LEVEL) -> tuple:
    """Pearson goodness of fit of ``counts`` to ``probs``; returns (statistic, dof, p_value)."""
    counts = np.asarray(counts, dtype=float)
    probs = np.asarray(probs, dtype=float)
    n = counts.sum()
    exp = n * probs
    cov = np.diag(exp) - n * np.outer(probs, probs)
    o, e, _, groups = _merge_small(counts, exp, cov, min_cell)
    stat = float(np.sum((o - e) ** 2 / e))
    dof = len(groups) - 1
    return stat, dof, float(sps.chi2.sf(stat, dof)) if dof > 0 else 1.0


# ---------------------------------------------------------------------------
# Trend tests for almost-sure limits


def regime_report(name: str, values, times, degenerate: bool, certificate: str, capped: int = 0,
                  eps: float = 1e-3, threshold: float = Z_THRESHOLD, cap_limit: float = CAP_LIMIT) -> EstimateReport:
    """Property-based check of a martingale limit classification along a time ladder.

    ``values[r, k]`` is the martingale of replicate r at ``times[k]``.
    Degenerate: the median at the last time is below ``eps`` and medians
    decrease strictly along the ladder. Non-degenerate: the mean is within
    ``threshold`` standard errors of 1 at every ladder time.
    """
    values = np.asarray(values, dtype=float)
    times = np.asarray(times, dtype=float)
    if times.size < 3:
        raise ValueError("a regime check needs at least 3 ladder times")
    n = values.shape[0]
    means = values.mean(axis=0)
    ses = values.std(axis=0, ddof=1) / math.sqrt(n)
    medians = np.median(values, axis=0)
    below = (values < eps).mean(axis=0)
    zs = (means - 1.0) / np.where(ses > 0, ses, np.inf)
    details = {
        "kind": "property-based",
        "classification": "degenerate" if degenerate else "non-degenerate",
        "certificate": certificate,
        "times": times,
        "means": means,
        "std_errors": ses,
        "medians": medians,
        "fraction_below_eps": below,
        "eps": eps,
    }
    if degenerate:
        ok = bool(medians[-1] < eps and np.all(np.diff(medians) < 0))
        est, se, target, z = float(medians[-1]), 0.0, eps, None
    else:
        ok = bool(np.all(np.abs(zs) <= threshold))
        j = int(np.argmax(np.abs(zs)))
        est, se, target, z = float(means[j]), float(ses[j]), 1.0, float(zs[j])
        details["z_scores"] = zs
    verdict = PASS if ok else FAIL
    if not cap_ok(capped, n + capped, cap_limit):
        verdict = INCONCLUSIVE
    return EstimateReport(name, est, se, n, capped, target, z, verdict, threshold, details)


def trend_report(name: str, values, times, expect_growth: bool, threshold: float = Z_THRESHOLD,
                 capped: int = 0, cap_limit: float = CAP_LIMIT, **details) -> EstimateReport:
    """Growth test on per-replicate values along a ladder, paired by replicate.

    The statistic is the mean of ``values[:, -1] - values[:, 0]`` and its z
    against 0. Stable means |z| <= threshold; growth means z > threshold
    and the ladder means increase.
    """
    values = np.asarray(values, dtype=float)
    diff = values[:, -1] - values[:, 0]
    est, se = mean_se(diff)
    z = z_score(est, 0.0, se)
    means = values.mean(axis=0)
    if expect_growth:
        ok = z > threshold and bool(np.all(np.diff(means) > 0))
    else:
        ok = abs(z) <= threshold
    det = {"kind": "property-based", "times": np.asarray(times, dtype=float), "ladder_means": means,
           "expect_growth": expect_growth, "pairing": "same replicate at first and last ladder time"}
    det.update(details)
    verdict = PASS if ok else FAIL
    if not cap_ok(capped, values.shape[0] + capped, cap_limit):
        verdict = INCONCLUSIVE
    return EstimateReport(name, est, se, values.shape[0], capped, 0.0, z, verdict, threshold, det)


# ---------------------------------------------------------------------------
# Replicate engine front end


def reports_from_batch(batch, functionals: dict, targets: dict | None = None, threshold: float = Z_THRESHOLD,
                       cap_limit: float = CAP_LIMIT, prefix: str = "") -> list:
    """One report per functional per observation time.

    ``functionals[name](batch)`` returns an (n, K) array over all replicates;
    capped replicates are dropped from the means and counted separately.
    ``targets[name]`` is a scalar or a length-K array; without a target the
    report is descriptive and passes unless the cap limit is exceeded.
    """
    targets = targets or {}
    ok = batch.ok
    capped = batch.capped_count
    times = batch.observation_times
    reports = []
    for name, fn in functionals.items():
        values = np.asarray(fn(batch), dtype=float)[ok]
        tgt = targets.get(name)
        tgt = None if tgt is None else np.broadcast_to(np.asarray(tgt, dtype=float), times.shape)
        for k, t in enumerate(times):
            label = f"{prefix}{name} @ t={t:g}"
            if tgt is None:
                est, se = mean_se(values[:, k])
                verdict = PASS if cap_ok(capped, values.shape[0] + capped, cap_limit) else INCONCLUSIVE
                reports.append(EstimateReport(label, est, se, values.shape[0], capped, verdict=verdict,
                                              threshold=threshold, details={"t": t}))
            else:
                reports.append(mean_report(label, values[:, k], float(tgt[k]), capped, threshold, cap_limit, t=t))
    return reports


def run_experiment(job, replicates: int, functionals: dict, targets: dict | None = None, workers: int = 1,
                   threshold: float = Z_THRESHOLD, cap_limit: float = CAP_LIMIT) -> list:
    """Run ``replicates`` seeded replicates of ``job`` and report every functional."""
    from .sim import run_batch

    if replicates <= 0:
        raise ValueError("replicate count must be positive")
    batch = run_batch(job, replicates, workers=workers)
    return reports_from_batch(batch, functionals, targets, threshold, cap_limit)


def compare_measures(p_batch, q_batch, g, eigen, x0, name: str, k: int = -1, threshold: float = Z_THRESHOLD,
                     cap_limit: float = CAP_LIMIT) -> EstimateReport:
    """E_P[g M_t(phi)] against E_Q[g] at observation index ``k`` (independent batches, pooled SE).

    ``g(batch)`` returns an (n, K) array of an F_t-measurable functional.
    """
    from .functionals import m_phi_batch

    a = (np.asarray(g(p_batch)) * m_phi_batch(p_batch, eigen, x0))[p_batch.ok, k]
    b = np.asarray(g(q_batch))[q_batch.ok, k]
    capped = p_batch.capped_count + q_batch.capped_count
    return difference_report(name, a, b, capped, threshold, cap_limit,
                             t=float(p_batch.observation_times[k]), sides="P: g M_t(phi); Q: g")


SELECTORS = ("spine", "uniform-particle")


def spine_marginal_test(q_batch, eigen, k: int = -1, selector: str = "spine", seed: int = 0,
                        level: float = CHI2_LEVEL, min_cell: float = MIN_CELL, name: str | None = None) -> EstimateReport:
    """Spine type frequencies at time t against the phi-weighted particle type law.

    For each Q replicate the phi-weighted law is computed from the type
    counts of the same tree, so the comparison is paired. ``selector``
    "uniform-particle" replaces the spine with a particle drawn uniformly
    from L_t; it is the negative control and should fail whenever phi is
    not constant.
    """
    if selector not in SELECTORS:
        raise ValueError(f"selector must be one of {SELECTORS}")
    ok = q_batch.ok
    counts = q_batch.counts()[ok, k, :]
    total = counts.sum(axis=1)
    if np.any(total <= 0):
        raise ValueError("a Q replicate has no particles alive; Q trees never die out")
    weights = counts * eigen.phi[None, :]
    probs = weights / weights.sum(axis=1, keepdims=True)
    if selector == "spine":
        choices = q_batch.spine[ok, k, 1].astype(int)
        if np.any(choices < 0):
            raise ValueError("spine is at the dagger in a Q replicate")
    else:
        rng = np.random.default_rng(seed)
        uniform = counts / total[:, None]
        cum = np.cumsum(uniform, axis=1)
        choices = np.minimum((rng.random(counts.shape[0])[:, None] > cum).sum(axis=1), counts.shape[1] - 1)
    label = name or f"spine marginal ({selector}) @ t={q_batch.observation_times[k]:g}"
    report = categorical_chi2(choices, probs, min_cell, level, label)
    report.capped_count = q_batch.capped_count
    report.details.update({"selector": selector, "pairing": "spine and phi-weighted law from the same Q tree"})
    if not cap_ok(q_batch.capped_count, counts.shape[0] + q_batch.capped_count):
        report.verdict = INCONCLUSIVE
    return report
