"""Experiment configs, the built-in catalog and one runner per experiment kind.

A config is a TOML document::

    schema_version = 1
    [model]          # or named [models.<name>] blocks
    [eigen]          # solver = "power" | "closed_form", lambda = ...
    [experiment]     # kind, seed, replicates and kind-specific keys
    [output]         # formats = ["json", "csv", "svg"]

Runners return an :class:`ExperimentResult` holding the reports, CSV trace
rows, extinction-curve rows and plots. Results contain no wall-clock data,
so two runs with the same seed serialize to identical bytes.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import oracle
from .functionals import (dw_lambda, dw_lambda_batch, eta_components, m_phi_batch, population_batch,
                          sigma_squared, spine_rhs, w_lambda, w_lambda_batch)
from .model import BrownianMotion, FiniteChain, ModelError, ModelSpec
from .plots import Plot, Series
from .sim import BatchJob, CapExceeded, SimConfig, run_batch, replicate_rng, simulate_p, simulate_p_tilde
from .spectral import eigen_finite_chain, eigen_for_model
from .spine_sim import QSimConfig, resample_batch, simulate_q
from .stats import (FAIL, INCONCLUSIVE, PASS, EstimateReport, bound_report, combine_verdicts, compare_measures,
                    mean_report, regime_report, reports_from_batch, spine_marginal_test, trend_report, value_report)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA_VERSION = 1
KINDS = ("simulate", "verify-identity", "kolmogorov", "kesten-stigum", "bbm-martingale",
         "derivative-martingale", "kpp-wave", "eigen-report")
IDENTITIES = ("martingale-mean", "change-of-measure", "spine-marginal", "spine-decomposition", "structural")
FORMATS = ("json", "csv", "svg")
DEFAULT_TRACE_REPLICATES = 20


class ConfigError(ValueError):
    """A config document failed to parse or validate."""


def sub_seed(seed: int, *keys: int) -> int:
    """An independent seed derived from ``seed`` and a key path."""
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1, np.uint32)[0])


# ---------------------------------------------------------------------------
# Config


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    kind: str
    models: dict
    eigen: dict
    experiment: dict
    output: dict
    matrices: tuple = ()
    source: str | None = None

    @property
    def seed(self) -> int:
        return int(self.experiment["seed"])

    @property
    def replicates(self) -> int:
        return int(self.experiment.get("replicates", 0))

    @property
    def model(self) -> ModelSpec:
        if len(self.models) != 1:
            raise ConfigError(f"experiment {self.name!r} has {len(self.models)} models; name one")
        return next(iter(self.models.values()))

    def param(self, key, default=None):
        return self.experiment.get(key, default)

    def with_overrides(self, seed: int | None = None, replicates: int | None = None) -> "ExperimentConfig":
        """Replace the seed and every replicate count (including per-run counts)."""
        exp = dict(self.experiment)
        if seed is not None:
            exp["seed"] = int(seed)
        if replicates is not None:
            if replicates <= 0:
                raise ConfigError("--replicates must be positive")
            for key in list(exp):
                if key == "replicates" or key.endswith("_replicates"):
                    exp[key] = int(replicates)
            if "runs" in exp:
                exp["runs"] = {k: {**v, "replicates": int(replicates)} if "replicates" in v else v
                               for k, v in exp["runs"].items()}
        return replace(self, experiment=exp)

    def to_dict(self) -> dict:
        return {name: m.to_dict() for name, m in self.models.items()}


def _require(block: dict, key: str, where: str, kind=None):
    if key not in block:
        raise ConfigError(f"{where}.{key}: missing")
    value = block[key]
    if kind is not None and not isinstance(value, kind):
        raise ConfigError(f"{where}.{key}: expected {kind.__name__ if isinstance(kind, type) else kind}")
    return value


def _positive_int(block: dict, key: str, where: str, required: bool = True):
    if key not in block and not required:
        return
    value = _require(block, key, where)
    if isinstance(value, bool) or not isinstance(value, int) or value <= 0:
        raise ConfigError(f"{where}.{key}: must be a positive integer, got {value!r}")


def _times(block: dict, key: str, where: str, required: bool = True):
    if key not in block and not required:
        return
    value = _require(block, key, where, list)
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}.{key}: not a list of numbers") from exc
    if arr.ndim != 1 or arr.size == 0 or np.any(arr < 0) or np.any(np.diff(arr) <= 0):
        raise ConfigError(f"{where}.{key}: must be a nonempty increasing list of nonnegative times")


def _resolve_model(models: dict, run_name: str, run: dict) -> ModelSpec:
    """The model a run uses: ``run.model``, else the model named like the run, else the only model."""
    if "model" in run:
        ref = run["model"]
    elif run_name in models:
        ref = run_name
    elif len(models) == 1:
        ref = next(iter(models))
    else:
        raise ConfigError(f"experiment.runs.{run_name}.model: missing and ambiguous")
    if ref not in models:
        raise ConfigError(f"experiment.runs.{run_name}.model: no model named {ref!r}")
    return models[ref]


def _parse_model(block, where: str) -> ModelSpec:
    if not isinstance(block, dict):
        raise ConfigError(f"{where}: expected a table")
    for key in ("motion", "rate", "offspring"):
        _require(block, key, where, dict)
    try:
        return ModelSpec.from_dict(block)
    except KeyError as exc:
        raise ConfigError(f"{where}: missing key {exc.args[0]!r}") from exc
    except (ModelError, TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


_KIND_CHECKS = {
    "simulate": lambda e, w: (_positive_int(e, "replicates", w), _times(e, "observation_times", w)),
    "verify-identity": lambda e, w: (_positive_int(e, "replicates", w), _times(e, "observation_times", w)),
    "kolmogorov": lambda e, w: _require(e, "runs", w, dict),
    "kesten-stigum": lambda e, w: _require(e, "runs", w, dict),
    "bbm-martingale": lambda e, w: _require(e, "runs", w, dict),
    "derivative-martingale": lambda e, w: (_positive_int(e, "replicates", w), _require(e, "t", w)),
    "kpp-wave": lambda e, w: (_positive_int(e, "replicates", w), _require(e, "t", w)),
    "eigen-report": lambda e, w: None,
}


def parse_config(doc: dict, source: str | None = None) -> ExperimentConfig:
    where = source or "config"
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"{where}: schema_version must be {SCHEMA_VERSION}, got {version!r}")
    exp = _require(doc, "experiment", where, dict)
    kind = _require(exp, "kind", "experiment", str)
    if kind not in KINDS:
        raise ConfigError(f"experiment.kind: unknown kind {kind!r}; expected one of {', '.join(KINDS)}")
    seed = _require(exp, "seed", "experiment")
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("experiment.seed: must be a nonnegative integer")
    _KIND_CHECKS[kind](exp, "experiment")
    if kind == "verify-identity":
        identity = _require(exp, "identity", "experiment", str)
        if identity not in IDENTITIES:
            raise ConfigError(f"experiment.identity: unknown identity {identity!r}")
    if "runs" in exp:
        for run_name, run in exp["runs"].items():
            if not isinstance(run, dict):
                raise ConfigError(f"experiment.runs.{run_name}: expected a table")
            _positive_int(run, "replicates", f"experiment.runs.{run_name}", required=False)
    if "model" in doc and "models" in doc:
        raise ConfigError(f"{where}: give either [model] or [models.<name>], not both")
    models = {}
    if "model" in doc:
        models["main"] = _parse_model(doc["model"], "model")
    for name, block in doc.get("models", {}).items():
        models[name] = _parse_model(block, f"models.{name}")
    matrices = tuple(doc.get("matrices", ()))
    if kind == "eigen-report":
        if not models and not matrices:
            raise ConfigError(f"{where}: eigen-report needs [model] or [[matrices]]")
        for k, mat in enumerate(matrices):
            _require(mat, "generator", f"matrices[{k}]", list)
    elif not models:
        raise ConfigError(f"{where}: missing [model] block")
    for run_name, run in exp.get("runs", {}).items():
        _resolve_model(models, run_name, run)
    eigen = doc.get("eigen", {})
    solver = eigen.get("solver", "power")
    if solver not in ("power", "closed_form"):
        raise ConfigError(f"eigen.solver: unknown solver {solver!r}")
    for name, m in models.items():
        if solver == "closed_form" and not isinstance(m.motion, BrownianMotion):
            raise ConfigError(f"eigen.solver: closed_form needs Brownian motion (model {name!r})")
        if solver == "power" and isinstance(m.motion, BrownianMotion) and kind in ("verify-identity",):
            raise ConfigError(f"eigen.solver: model {name!r} is Brownian; use closed_form with a lambda")
    output = dict(doc.get("output", {}))
    formats = output.get("formats", list(FORMATS))
    bad = [f for f in formats if f not in FORMATS]
    if bad:
        raise ConfigError(f"output.formats: unknown format(s) {bad}")
    output["formats"] = list(formats)
    name = exp.get("name", Path(source).stem if source else kind)
    return ExperimentConfig(name, kind, models, dict(eigen), dict(exp), output, matrices, source)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    return parse_config(doc, str(path))


def eigen_of(cfg: ExperimentConfig, model: ModelSpec, lam: float | None = None):
    lam = cfg.eigen.get("lambda", 0.0) if lam is None else lam
    return eigen_for_model(model, float(lam))


# ---------------------------------------------------------------------------
# Results


@dataclass
class ExperimentResult:
    name: str
    kind: str
    seed: int
    replicates: int
    models: dict
    reports: list
    traces: list = field(default_factory=list)
    extinction: list = field(default_factory=list)
    plots: dict = field(default_factory=dict)

    @property
    def verdict(self) -> str:
        return combine_verdicts(r.verdict for r in self.reports)

    def report_dict(self) -> dict:
        return {
            "experiment": self.name,
            "kind": self.kind,
            "model": self.models,
            "seed": self.seed,
            "replicates": self.replicates,
            "verdict": self.verdict,
            "items": [r.to_dict() for r in self.reports],
        }


def _trace_rows(values: np.ndarray, times, kind: str, limit: int, start: int = 0) -> list:
    rows = []
    for r in range(min(limit, values.shape[0])):
        for k, t in enumerate(times):
            rows.append((start + r, kind, float(t), float(values[r, k])))
    return rows


def _control(name: str, mutated: EstimateReport, mutation: str) -> EstimateReport:
    """Negative control: passes when the mutated check fails."""
    verdict = PASS if mutated.verdict == FAIL else (INCONCLUSIVE if mutated.verdict == INCONCLUSIVE else FAIL)
    return EstimateReport(name, mutated.estimate, mutated.std_error, mutated.replicates, mutated.capped_count,
                          mutated.target, mutated.z_score, verdict, mutated.threshold,
                          {"kind": "negative control", "mutation": mutation, "mutated_verdict": mutated.verdict,
                           **mutated.details})


def _x0(cfg: ExperimentConfig, key: str = "x0") -> tuple:
    x0 = cfg.param(key, [0.0, 0])
    return float(x0[0]), int(x0[1])


def _threshold(cfg) -> float:
    return float(cfg.param("z_threshold", 3.0))


def _cap_limit(cfg) -> float:
    return float(cfg.param("cap_limit", 0.01))


def _max_nodes(block) -> int:
    return int(block.get("max_nodes", 1_000_000))


# ---------------------------------------------------------------------------
# simulate: many-to-one mean


def run_simulate(cfg: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    model = cfg.model
    times = tuple(cfg.param("observation_times"))
    x0 = _x0(cfg)
    job = BatchJob(model, "P", times[-1], times, cfg.seed, x0, max_nodes=_max_nodes(cfg.experiment))
    batch = run_batch(job, cfg.replicates, workers=workers)
    targets = {"population": [oracle.mean_population(model, t, x0[1]) for t in times]}
    reports = reports_from_batch(batch, {"population": population_batch}, targets, _threshold(cfg), _cap_limit(cfg),
                                 prefix="mean ")
    traces = _trace_rows(population_batch(batch), times, "population",
                         int(cfg.param("trace_replicates", DEFAULT_TRACE_REPLICATES)))
    return ExperimentResult(cfg.name, cfg.kind, cfg.seed, cfg.replicates, cfg.to_dict(), reports, traces)


# ---------------------------------------------------------------------------
# verify-identity


def _identity_martingale_mean(cfg, workers):
    model = cfg.model
    eigen = eigen_of(cfg, model)
    times = tuple(cfg.param("observation_times"))
    x0 = _x0(cfg)
    job = BatchJob(model, "P", times[-1], times, cfg.seed, x0, lambdas=(eigen.rate,) if eigen.rate else (),
                   max_nodes=_max_nodes(cfg.experiment))
    batch = run_batch(job, cfg.replicates, workers=workers)
    m = m_phi_batch(batch, eigen, x0)
    reports = reports_from_batch(batch, {"M_t(phi)": lambda b: m}, {"M_t(phi)": 1.0}, _threshold(cfg),
                                 _cap_limit(cfg), prefix="mean ")
    unnormalized = m * np.exp(eigen.lambda1 * batch.observation_times)[None, :]
    mutated = mean_report("M_t(phi) without e^{-lambda1 t}", unnormalized[batch.ok, -1], 1.0,
                          batch.capped_count, _threshold(cfg), _cap_limit(cfg))
    reports.append(_control("negative control: missing e^{-lambda1 t} factor", mutated, "missing_exponential"))
    traces = _trace_rows(m, times, "M_phi", int(cfg.param("trace_replicates", DEFAULT_TRACE_REPLICATES)))
    plot = Plot("M_t(phi) trajectories", "t", "M_t(phi)",
                tuple(Series(f"replicate {r}", np.array(times), m[r]) for r in range(min(8, m.shape[0]))))
    return reports, traces, {"martingale_paths": plot}


def _count_functionals(cfg) -> dict:
    cap = int(cfg.param("population_cap", 50))
    fns = {"g = 1": lambda b: np.ones(b.counts().shape[:2]),
           f"g = min(|L_t|, {cap})": lambda b: np.minimum(population_batch(b), cap)}
    for lo, hi in cfg.param("count_intervals", []):
        fns[f"g = 1{{{lo:g} <= |L_t| < {hi:g}}}"] = (
            lambda b, lo=lo, hi=hi: ((population_batch(b) >= lo) & (population_batch(b) < hi)).astype(float))
    return fns


def _identity_change_of_measure(cfg, workers):
    model = cfg.model
    eigen = eigen_of(cfg, model)
    times = tuple(cfg.param("observation_times"))
    x0 = _x0(cfg)
    lambdas = (eigen.rate,) if eigen.rate else ()
    n = cfg.replicates
    p_job = BatchJob(model, "P", times[-1], times, sub_seed(cfg.seed, 0), x0, lambdas=lambdas,
                     max_nodes=_max_nodes(cfg.experiment))
    q_job = replace(p_job, measure="Q", seed=sub_seed(cfg.seed, 1), eigen=eigen)
    p = run_batch(p_job, n, workers=workers)
    q = run_batch(q_job, n, workers=workers)
    reports = []
    fns = _count_functionals(cfg)
    for name, g in fns.items():
        for k in range(len(times)):
            reports.append(compare_measures(p, q, g, eigen, x0, f"E_P[g M_t] - E_Q[g], {name} @ t={times[k]:g}", k,
                                            _threshold(cfg), _cap_limit(cfg)))
    mutation = cfg.param("negative_control", "no_size_bias")
    q_bad = run_batch(replace(q_job, mutation=mutation, seed=sub_seed(cfg.seed, 2)), n, workers=workers)
    name = list(fns)[1]
    mutated = compare_measures(p, q_bad, fns[name], eigen, x0, f"mutated Q ({mutation}), {name}", -1,
                               _threshold(cfg), _cap_limit(cfg))
    reports.append(_control(f"negative control: Q with {mutation}", mutated, mutation))
    m = m_phi_batch(p, eigen, x0)
    traces = _trace_rows(m, times, "M_phi", int(cfg.param("trace_replicates", DEFAULT_TRACE_REPLICATES)))
    return reports, traces, {}


def _identity_spine_marginal(cfg, workers):
    model = cfg.model
    if not isinstance(model.motion, FiniteChain):
        raise ConfigError("spine-marginal needs a finite chain")
    eigen = eigen_of(cfg, model)
    times = tuple(cfg.param("observation_times"))
    x0 = _x0(cfg)
    job = BatchJob(model, "Q", times[-1], times, cfg.seed, x0, eigen=eigen, max_nodes=_max_nodes(cfg.experiment))
    q = run_batch(job, cfg.replicates, workers=workers)
    level = float(cfg.param("chi2_level", 0.01))
    reports = [spine_marginal_test(q, eigen, k, "spine", level=level) for k in range(len(times))]
    mutated = spine_marginal_test(q, eigen, -1, "uniform-particle", seed=sub_seed(cfg.seed, 7), level=level)
    reports.append(_control("negative control: spine drawn uniformly from L_t", mutated, "uniform-particle"))
    if cfg.param("untilted_control", True):
        q_bad = run_batch(replace(job, mutation="untilted", seed=sub_seed(cfg.seed, 3)), cfg.replicates,
                          workers=workers)
        mutated = spine_marginal_test(q_bad, eigen, -1, "spine", level=level)
        reports.append(_control("negative control: spine motion not h-transformed", mutated, "untilted"))
    return reports, [], {}


def _identity_spine_decomposition(cfg, workers):
    model = cfg.model
    eigen = eigen_of(cfg, model)
    t = float(cfg.param("observation_times")[-1])
    x0 = _x0(cfg)
    n_skel = int(cfg.param("skeletons", 20))
    scfg = QSimConfig(model, t, (t,), max_nodes=_max_nodes(cfg.experiment), seed=cfg.seed, eigen=eigen)
    phi0 = float(eigen.phi_at(*x0))
    reports, mutated_fail = [], 0
    traces = []
    for s in range(n_skel):
        _, skeleton = simulate_q(scfg, x0, replicate_rng(sub_seed(cfg.seed, 10), s))
        batch = resample_batch(skeleton, scfg, cfg.replicates, sub_seed(cfg.seed, 11, s),
                               lambdas=(eigen.rate,) if eigen.rate else ())
        values = phi0 * m_phi_batch(batch, eigen, x0)[:, -1]
        rhs = spine_rhs(skeleton, eigen, t)
        rep = mean_report(f"skeleton {s}: mean phi(x) M_t vs spine sum", values[batch.ok], rhs,
                          batch.capped_count, _threshold(cfg), _cap_limit(cfg),
                          t=t, fissions=int(skeleton.n_fissions), pairing="subtrees resampled on one skeleton")
        reports.append(rep)
        traces.append((s, "spine_rhs", t, rhs))
        # mutation: drop every e^{-lambda1 s} factor from the spine sum
        no_exp = _without_decay(eigen)
        bad = mean_report("mutated", values[batch.ok], spine_rhs(skeleton, no_exp, t), batch.capped_count,
                          _threshold(cfg), _cap_limit(cfg))
        mutated_fail += bad.verdict == FAIL
    frac = mutated_fail / n_skel
    reports.append(EstimateReport("negative control: spine sum without e^{-lambda1 t} factors", frac, 0.0, n_skel,
                                  verdict=PASS if frac >= 0.5 else FAIL, threshold=0.5,
                                  details={"kind": "negative control", "mutation": "missing_exponential",
                                           "fraction_of_skeletons_failing": frac}))
    return reports, traces, {}


def _without_decay(eigen):
    return replace(eigen, lambda1=0.0)


def _identity_structural(cfg, workers):
    model = cfg.model
    eigen = eigen_of(cfg, model)
    times = tuple(cfg.param("observation_times"))
    t = times[-1]
    x0 = _x0(cfg)
    n_tilde = int(cfg.param("p_tilde_replicates", 10_000))
    scfg = SimConfig(model, t, times, max_nodes=_max_nodes(cfg.experiment), seed=cfg.seed)
    worst_weight, worst_eta, violations = 0.0, 0.0, 0
    for i in range(n_tilde):
        tree, spine = simulate_p_tilde(scfg, x0, replicate_rng(sub_seed(cfg.seed, 20), i))
        for s in times:
            worst_weight = max(worst_weight, abs(tree.weight_identity(s) - 1.0))
            e1, e2, e3, et = eta_components(spine, model, eigen, s)
            worst_eta = max(worst_eta, abs(et - e1 * e2 * e3) / max(1.0, abs(et)))
        if i < 100:
            violations += len(tree.validate())
    tol_w = float(cfg.param("weight_tol", 1e-9))
    tol_e = float(cfg.param("eta_tol", 1e-12))
    reports = [
        value_report("weight identity: max |Σ_L Π 1/r + Σ_D Π 1/r - 1|", worst_weight, 0.0, tol_w,
                     trees=n_tilde, times=list(times)),
        value_report("eta factorization: max |eta_tilde - eta1 eta2 eta3| / max(1, eta_tilde)", worst_eta, 0.0, tol_e,
                     trees=n_tilde, times=list(times)),
        value_report("tree validation violations (first 100 trees)", float(violations), 0.0, 0.0),
    ]
    n_q = cfg.replicates
    q = run_batch(BatchJob(model, "Q", t, times, sub_seed(cfg.seed, 21), x0, eigen=eigen,
                           max_nodes=_max_nodes(cfg.experiment)), n_q, workers=workers)
    dagger = int(np.sum(q.spine[q.ok, :, 1] < 0))
    rep = value_report("Q spine at the dagger (count over replicates and times)", float(dagger), 0.0, 0.0,
                       replicates=n_q)
    rep.capped_count = q.capped_count
    reports.append(rep)
    return reports, [], {}


_IDENTITY_RUNNERS = {
    "martingale-mean": _identity_martingale_mean,
    "change-of-measure": _identity_change_of_measure,
    "spine-marginal": _identity_spine_marginal,
    "spine-decomposition": _identity_spine_decomposition,
    "structural": _identity_structural,
}


def run_verify_identity(cfg: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    reports, traces, plots = _IDENTITY_RUNNERS[cfg.param("identity")](cfg, workers)
    return ExperimentResult(cfg.name, cfg.kind, cfg.seed, cfg.replicates, cfg.to_dict(), reports, traces, [], plots)


# ---------------------------------------------------------------------------
# kolmogorov


def run_kolmogorov(cfg: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    reports, extinction, plots = [], [], {}
    total = 0
    for k, (run_name, run) in enumerate(cfg.param("runs").items()):
        model = _resolve_model(cfg.models, run_name, run)
        times = tuple(float(t) for t in run["times"])
        x0 = (0.0, int(run.get("type", 0)))
        n = int(run["replicates"])
        total += n
        curve = oracle.solve_extinction(model, max(times[-1], float(run.get("limit_time", 0.0))),
                                        tol=float(run.get("ode_tol", 1e-10)))
        extinction.extend((run_name, i, t, v) for i, t, v in curve.rows())
        job = BatchJob(model, "P", times[-1], times, sub_seed(cfg.seed, k), x0, max_nodes=_max_nodes(run))
        batch = run_batch(job, n, workers=workers)
        alive = (population_batch(batch) > 0).astype(float)
        use_closed = run.get("oracle", "ode") == "closed_form"
        for j, t in enumerate(times):
            if use_closed:
                target = float(oracle.critical_binary_survival(t, float(model.beta_by_type()[0])))
            else:
                target = float(curve.survival(t, x0[1]))
            reports.append(mean_report(f"{run_name}: P(survival) @ t={t:g} ({'closed form' if use_closed else 'ODE'})",
                                       alive[batch.ok, j], target, batch.capped_count, _threshold(cfg),
                                       _cap_limit(cfg), t=t))
        mc = alive[batch.ok].mean(axis=0)
        series = [Series("t P(survival), ODE", curve.times, curve.times * (1.0 - curve.v[:, x0[1]])),
                  Series("t P(survival), Monte Carlo", np.array(times), np.array(times) * mc, markers=True)]
        if "limit_time" in run:
            eigen = eigen_for_model(model)
            tl = float(run["limit_time"])
            limit = oracle.kolmogorov_limit(sigma_squared(model, eigen))
            value = tl * float(curve.survival(tl, x0[1])) / float(eigen.phi[x0[1]])
            reports.append(value_report(f"{run_name}: t P(survival)/phi(x) @ t={tl:g} vs 2/sigma²", value, limit,
                                        float(run.get("limit_rel_tol", 0.01)), relative=True, t=tl))
            series.append(Series("limit 2/sigma² phi(x)", np.array([0.0, tl]),
                                 np.full(2, limit * float(eigen.phi[x0[1]]))))
        plots[f"survival_{run_name}"] = Plot(f"t P(survival): {run_name}", "t", "t P(survival)", tuple(series))
    return ExperimentResult(cfg.name, cfg.kind, cfg.seed, total, cfg.to_dict(), reports, [], extinction, plots)


# ---------------------------------------------------------------------------
# kesten-stigum


def run_kesten_stigum(cfg: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    reports, traces, plots = [], [], {}
    total = 0
    eps = float(cfg.param("eps", 1e-3))
    for k, (run_name, run) in enumerate(cfg.param("runs").items()):
        model = _resolve_model(cfg.models, run_name, run)
        eigen = eigen_for_model(model)
        if eigen.lambda1 <= 0:
            raise ConfigError(f"experiment.runs.{run_name}: model is not supercritical (lambda1={eigen.lambda1:g})")
        cls = oracle.classify_llogl(model.offspring)
        ladder = tuple(float(t) for t in run["ladder"])
        n = int(run["replicates"])
        total += n
        batch = run_batch(BatchJob(model, "P", ladder[-1], ladder, sub_seed(cfg.seed, k), (0.0, 0),
                                   max_nodes=_max_nodes(run)), n, workers=workers)
        m = m_phi_batch(batch, eigen)
        rep = regime_report(f"{run_name}: M_t(phi) along the ladder", m[batch.ok], ladder, not cls.finite,
                            cls.certificate, batch.capped_count, eps, _threshold(cfg), _cap_limit(cfg))
        reports.append(rep)
        traces.extend(_trace_rows(m, ladder, f"M_phi[{run_name}]",
                                  int(cfg.param("trace_replicates", DEFAULT_TRACE_REPLICATES))))
        plots[f"median_{run_name}"] = Plot(f"M_t(phi) summary: {run_name}", "t", "M_t(phi)", (
            Series("mean", np.array(ladder), rep.details["means"]),
            Series("median", np.array(ladder), rep.details["medians"])))
    return ExperimentResult(cfg.name, cfg.kind, cfg.seed, total, cfg.to_dict(), reports, traces, [], plots)


# ---------------------------------------------------------------------------
# bbm-martingale


def _bbm_params(model: ModelSpec):
    if not isinstance(model.motion, BrownianMotion):
        raise ConfigError("bbm experiments need Brownian motion")
    beta = float(model.beta_by_type()[0])
    a_mean = float(model.mean_by_type()[0])
    diffusion = model.motion.diffusion
    return beta, a_mean, diffusion


def critical_lambda(beta: float, a_mean: float, diffusion: float = 1.0) -> float:
    """sqrt(2 beta (A - 1) / a): W_infinity(lambda) is nondegenerate iff |lambda| is below it."""
    return math.sqrt(2.0 * beta * (a_mean - 1.0) / diffusion)


def _run_lambda(run: dict, lam_c: float) -> float:
    if "lambda" in run:
        return float(run["lambda"])
    return float(run["lambda_ratio"]) * lam_c


def run_bbm_martingale(cfg: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    reports, traces, plots = [], [], {}
    total = 0
    probe = cfg.param("probe", "threshold")
    if probe not in ("threshold", "second-moment"):
        raise ConfigError(f"experiment.probe: unknown probe {probe!r}")
    eps = float(cfg.param("eps", 1e-3))
    for k, (run_name, run) in enumerate(cfg.param("runs").items()):
        model = _resolve_model(cfg.models, run_name, run)
        beta, a_mean, diffusion = _bbm_params(model)
        lam_c = critical_lambda(beta, a_mean, diffusion)
        lam = _run_lambda(run, lam_c)
        ladder = tuple(float(t) for t in run["ladder"])
        n = int(run["replicates"])
        total += n
        batch = run_batch(BatchJob(model, "P", ladder[-1], ladder, sub_seed(cfg.seed, k), (0.0, 0), lambdas=(lam,),
                                   max_nodes=_max_nodes(run)), n, workers=workers)
        w = w_lambda_batch(batch, lam, beta, a_mean, diffusion)
        if probe == "threshold":
            degenerate = abs(lam) >= lam_c
            cert = f"|lambda| = {abs(lam):.6g} {'>=' if degenerate else '<'} sqrt(2 beta (A-1)) = {lam_c:.6g}"
            rep = regime_report(f"{run_name}: W_t(lambda={lam:.4g}) along the ladder", w[batch.ok], ladder, degenerate,
                                cert, batch.capped_count, eps, _threshold(cfg), _cap_limit(cfg))
        else:
            bounded = 2.0 * diffusion * lam * lam < 2.0 * (a_mean - 1.0) * beta
            cert = (f"2 lambda² = {2 * diffusion * lam * lam:.6g} {'<' if bounded else '>='} "
                    f"2 (A-1) beta = {2 * (a_mean - 1) * beta:.6g}")
            closed = oracle.bbm_second_moment(lam, ladder, beta, model.offspring, diffusion)
            rep = trend_report(f"{run_name}: E W_t(lambda={lam:.4g})² along the ladder", w[batch.ok] ** 2, ladder,
                               expect_growth=not bounded, threshold=_threshold(cfg), capped=batch.capped_count,
                               cap_limit=_cap_limit(cfg), classification="bounded" if bounded else "unbounded",
                               certificate=cert, closed_form_second_moment=closed)
        reports.append(rep)
        traces.extend(_trace_rows(w, ladder, f"W_lambda[{run_name}]",
                                  int(cfg.param("trace_replicates", DEFAULT_TRACE_REPLICATES))))
        plots[f"paths_{run_name}"] = Plot(f"W_t(lambda={lam:.4g})", "t", "W_t", tuple(
            Series(f"replicate {r}", np.array(ladder), w[r]) for r in range(min(8, w.shape[0]))))
    return ExperimentResult(cfg.name, cfg.kind, cfg.seed, total, cfg.to_dict(), reports, traces, [], plots)


# ---------------------------------------------------------------------------
# derivative-martingale: finite differences


def run_derivative_martingale(cfg: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    model = cfg.model
    beta, a_mean, diffusion = _bbm_params(model)
    t = float(cfg.param("t"))
    lo, hi = cfg.param("lambda_range", [0.2, 2.0])
    h_rel = float(cfg.param("step", 1e-4))
    tol = float(cfg.param("rel_tol", 1e-6))
    scfg = SimConfig(model, t, (t,), max_nodes=_max_nodes(cfg.experiment), seed=cfg.seed)
    lam_rng = np.random.default_rng(sub_seed(cfg.seed, 30))
    worst, worst_bad = 0.0, math.inf
    traces = []
    for i in range(cfg.replicates):
        tree = simulate_p(scfg, 0.0, replicate_rng(cfg.seed, i))
        lam = float(lam_rng.uniform(lo, hi))
        h = h_rel * max(1.0, lam)

        def w(l):
            return w_lambda(tree, l, beta, a_mean, t, diffusion)

        # Richardson-extrapolated central difference, error O(h^4)
        d1 = (w(lam + h) - w(lam - h)) / (2 * h)
        d2 = (w(lam + h / 2) - w(lam - h / 2)) / h
        fd = (4 * d2 - d1) / 3
        dw = dw_lambda(tree, lam, beta, a_mean, t, diffusion)
        err = abs(dw + fd) / max(abs(dw), 1e-300)
        worst = max(worst, err)
        # mutation: the derivative without the lambda t term
        x, _ = tree.state_at(t)
        rate = 0.5 * diffusion * lam * lam + (a_mean - 1) * beta
        bad = math.exp(-rate * t) * float(np.sum(x * np.exp(-lam * x)))
        worst_bad = min(worst_bad, abs(bad + fd) / max(abs(bad), 1e-300))
        traces.append((i, "dW_lambda", lam, dw))
    reports = [value_report("max relative error of dW against -d/dlambda W (finite differences)", worst, 0.0, tol,
                            trees=cfg.replicates, t=t, oracle="Richardson central difference")]
    mutated = value_report("mutated", worst_bad, 0.0, tol)
    reports.append(_control("negative control: derivative without the lambda t term", mutated, "drop_lambda_t"))
    return ExperimentResult(cfg.name, cfg.kind, cfg.seed, cfg.replicates, cfg.to_dict(), reports, traces)


# ---------------------------------------------------------------------------
# kpp-wave


def run_kpp_wave(cfg: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    model = cfg.model
    beta, a_mean, diffusion = _bbm_params(model)
    if diffusion != 1.0:
        raise ConfigError("kpp-wave assumes unit diffusion")
    lam = critical_lambda(beta, a_mean)
    c = lam
    t = float(cfg.param("t"))
    x_lo, x_hi = cfg.param("x_range", [-8.0, 8.0])
    coarse = np.linspace(x_lo, x_hi, int(cfg.param("grid_points", 41)))
    fine = np.linspace(x_lo, x_hi, int(cfg.param("residual_points", 401)))
    window = int(cfg.param("smoothing_window", 5))
    batch = run_batch(BatchJob(model, "P", t, (t,), cfg.seed, (0.0, 0), lambdas=(lam,),
                               max_nodes=_max_nodes(cfg.experiment)), cfg.replicates, workers=workers)
    d = dw_lambda_batch(batch, lam, beta, a_mean)[batch.ok, 0]
    negative = float(np.mean(d < 0))
    d_plus = np.maximum(d, 0.0)
    prof, se = oracle.wave_profile_from_samples(d_plus, coarse, lam)
    prof_fine, _ = oracle.wave_profile_from_samples(d_plus, fine, lam)
    steps = np.diff(prof)
    step_se = np.sqrt(se[1:] ** 2 + se[:-1] ** 2)
    monotone = bool(np.all(steps >= -2 * step_se))
    residual = oracle.kpp_residual(prof_fine, fine, c, model.offspring, beta, window)
    common = {"kind": "property-based", "t": t, "grid": "common random numbers across x",
              "negative_fraction_clipped": negative}
    reports = [
        EstimateReport("profile monotone up to 2 SE", float(np.min(steps / np.where(step_se > 0, step_se, 1))), 0.0,
                       d.size, batch.capped_count, verdict=PASS if monotone else FAIL, threshold=-2.0,
                       details={**common, "min_step": float(steps.min())}),
        bound_report(f"Phi({x_lo:g}) below 0.1", float(prof[0]), 0.1, True, std_error=float(se[0]), **common),
        bound_report(f"Phi({x_hi:g}) above 0.9", float(prof[-1]), 0.9, False, std_error=float(se[-1]), **common),
        bound_report("smoothed profile ODE residual, sup norm", residual, float(cfg.param("residual_tol", 0.05)), True,
                     speed=c, smoothing_window=window, residual_points=fine.size, **common),
    ]
    for r in reports:
        r.replicates = d.size
        r.capped_count = batch.capped_count
    traces = [(k, "Phi", float(x), float(v)) for k, (x, v) in enumerate(zip(coarse, prof))]
    plots = {"wave_profile": Plot(f"traveling wave profile, t={t:g}", "x", "Phi(x)",
                                  (Series("Monte Carlo", coarse, prof, markers=True),
                                   Series("+2 SE", coarse, prof + 2 * se), Series("-2 SE", coarse, prof - 2 * se)))}
    return ExperimentResult(cfg.name, cfg.kind, cfg.seed, cfg.replicates, cfg.to_dict(), reports, traces, [], plots)


# ---------------------------------------------------------------------------
# eigen-report


def run_eigen_report(cfg: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    tol_res = float(cfg.param("residual_tol", 1e-10))
    tol_norm = float(cfg.param("normalization_tol", 1e-10))
    tol_inv = float(cfg.param("invariance_tol", 1e-8))
    times = [float(t) for t in cfg.param("invariance_times", [0.5, 1.0, 2.0])]
    entries = []
    for k, mat in enumerate(cfg.matrices):
        gen = np.array(mat["generator"], dtype=float)
        n = gen.shape[0]
        a = np.broadcast_to(np.asarray(mat.get("a", 1.0), dtype=float), (n,))
        beta = np.broadcast_to(np.asarray(mat.get("beta", 0.0), dtype=float), (n,))
        entries.append((mat.get("name", f"matrix {k}"), gen, a, beta))
    for name, model in cfg.models.items():
        if isinstance(model.motion, FiniteChain):
            entries.append((name, model.motion.generator_matrix(), model.mean_by_type(), model.beta_by_type()))
    reports = []
    for name, gen, a, beta in entries:
        eigen = eigen_finite_chain(gen, a, beta)
        inv = max(oracle.invariance_error(eigen, gen, a, beta, s) for s in times)
        norm = max(abs(float(eigen.phi @ eigen.phi) - 1.0), abs(float(eigen.phi @ eigen.phi_hat) - 1.0))
        reports.append(value_report(f"{name}: eigen residual", eigen.residual, 0.0, tol_res, eigen=eigen.to_dict()))
        reports.append(value_report(f"{name}: normalization error", norm, 0.0, tol_norm))
        reports.append(value_report(f"{name}: invariance error", inv, 0.0, tol_inv, times=times))
    return ExperimentResult(cfg.name, cfg.kind, cfg.seed, 0, cfg.to_dict(), reports)


RUNNERS = {
    "simulate": run_simulate,
    "verify-identity": run_verify_identity,
    "kolmogorov": run_kolmogorov,
    "kesten-stigum": run_kesten_stigum,
    "bbm-martingale": run_bbm_martingale,
    "derivative-martingale": run_derivative_martingale,
    "kpp-wave": run_kpp_wave,
    "eigen-report": run_eigen_report,
}


def run(cfg: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    try:
        return RUNNERS[cfg.kind](cfg, workers)
    except CapExceeded as exc:
        report = EstimateReport("cap exceeded", math.nan, 0.0, 0, 1, verdict=INCONCLUSIVE,
                                details={"error": str(exc)})
        return ExperimentResult(cfg.name, cfg.kind, cfg.seed, cfg.replicates, cfg.to_dict(), [report])


# ---------------------------------------------------------------------------
# Catalog


@dataclass(frozen=True)
class CatalogEntry:
    id: int
    slug: str
    config: str
    description: str
    runtime_budget: float

    def path(self) -> Path:
        return Path(str(resources.files("spinesim") / "configs" / self.config))

    def load(self) -> ExperimentConfig:
        return load_config(self.path())


CATALOG = (
    CatalogEntry(1, "many-to-one", "c01_many_to_one.toml",
                 "Many-to-one formula: the BBM population mean at t=1 equals e.", 60),
    CatalogEntry(2, "martingale-mean", "c02_martingale_mean.toml",
                 "Additive martingale lemma: M_t(phi) has mean one on a 2-type chain at t = 1, 2, 4.", 120),
    CatalogEntry(3, "change-of-measure", "c03_change_of_measure.toml",
                 "Size-biased change of measure theorem: E_P[g M_t(phi)] = E_Q[g] at t=2.", 180),
    CatalogEntry(4, "spine-marginal", "c04_spine_marginal.toml",
                 "Spine-at-time-t theorem: the spine is a phi-weighted pick from L_t (chi-square).", 120),
    CatalogEntry(5, "spine-decomposition", "c05_spine_decomposition.toml",
                 "Spine decomposition theorem: E[phi(x) M_t | skeleton] equals the spine sum on 20 skeletons.", 300),
    CatalogEntry(6, "kolmogorov", "c06_kolmogorov.toml",
                 "Kolmogorov asymptotics: critical t P(survival) / phi(x) tends to 2/sigma².", 300),
    CatalogEntry(7, "kesten-stigum", "c07_kesten_stigum.toml",
                 "Kesten-Stigum dichotomy: M_infinity(phi) is nondegenerate iff the L log L integral is finite.", 300),
    CatalogEntry(8, "bbm-thresholds", "c08_bbm_thresholds.toml",
                 "BBM additive martingale threshold: W_infinity(lambda) nondegenerate iff |lambda| < sqrt(2 beta (A-1)).",
                 300),
    CatalogEntry(9, "lp-probe", "c09_lp_probe.toml",
                 "L^p boundedness of W_t(lambda) for p=2: bounded iff 2 lambda² < 2 (A-1) beta.", 300),
    CatalogEntry(10, "derivative-calculus", "c10_derivative_calculus.toml",
                 "Derivative martingale calculus: dW equals -d/dlambda W_t(lambda) on 100 trees.", 10),
    CatalogEntry(11, "kpp-wave", "c11_kpp_wave.toml",
                 "KPP traveling wave from the derivative martingale at critical speed.", 600),
    CatalogEntry(12, "eigen-fixtures", "c12_eigen_fixtures.toml",
                 "Principal eigenpair fixtures and the invariance identity of the mean semigroup.", 1),
    CatalogEntry(13, "structural", "c13_structural.toml",
                 "Spine construction invariants: ancestral weights sum to one, Q spine avoids the dagger, "
                 "eta factorization.", 120),
)


def catalog_entry(key) -> CatalogEntry:
    for entry in CATALOG:
        if str(entry.id) == str(key) or entry.slug == key:
            return entry
    raise KeyError(f"no experiment {key!r}")
