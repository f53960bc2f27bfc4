"""Command line: ``spinesim run | list | validate``.

Exit codes for ``run``: 0 when every verdict passes, 2 when any is
inconclusive (and none fails), 1 on a failure or a config error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

from .experiments import CATALOG, ConfigError, ExperimentResult, catalog_entry, load_config, run
from .plots import render
from .sim import default_workers
from .stats import FAIL, INCONCLUSIVE

EXIT = {"pass": 0, INCONCLUSIVE: 2, FAIL: 1}


def _resolve(config: str) -> Path:
    path = Path(config)
    if path.exists():
        return path
    try:
        return catalog_entry(config).path()
    except KeyError:
        raise ConfigError(f"{config}: no such file or built-in experiment") from None


def report_json(result: ExperimentResult) -> str:
    return json.dumps(result.report_dict(), indent=2, sort_keys=True) + "\n"


def write_outputs(result: ExperimentResult, out_dir: Path, formats) -> list:
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if "json" in formats:
        p = out_dir / "report.json"
        p.write_text(report_json(result))
        written.append(p)
    if "csv" in formats:
        if result.traces:
            p = out_dir / "traces.csv"
            with open(p, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(("replicate", "kind", "t", "value"))
                w.writerows((r, k, repr(t), repr(v)) for r, k, t, v in result.traces)
            written.append(p)
        if result.extinction:
            p = out_dir / "extinction.csv"
            with open(p, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(("model", "state", "t", "v_t"))
                w.writerows((m, i, repr(t), repr(v)) for m, i, t, v in result.extinction)
            written.append(p)
    if "svg" in formats:
        for name, plot in result.plots.items():
            p = out_dir / f"{name}.svg"
            p.write_text(render(plot))
            written.append(p)
    return written


def _fmt(x) -> str:
    return "-" if x is None else f"{x:.6g}"


def cmd_run(args) -> int:
    try:
        cfg = load_config(_resolve(args.config)).with_overrides(args.seed, args.replicates)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    workers = args.workers if args.workers is not None else default_workers()
    start = time.perf_counter()
    result = run(cfg, workers=workers)
    elapsed = time.perf_counter() - start
    for r in result.reports:
        print(f"{r.verdict.upper():12s} {r.name}: estimate={_fmt(r.estimate)} se={_fmt(r.std_error)} "
              f"target={_fmt(r.target)} z={_fmt(r.z_score)}")
    out_dir = Path(args.out) / cfg.name
    for p in write_outputs(result, out_dir, cfg.output.get("formats", ())):
        print(f"wrote {p}")
    print(f"{cfg.name}: {result.verdict} ({elapsed:.1f} s, seed {cfg.seed}, {workers} worker(s))")
    return EXIT[result.verdict]


def list_experiments(file=None) -> tuple:
    """Print the built-in catalog (one entry per acceptance criterion) and return it."""
    for e in CATALOG:
        print(f"{e.id:>2}  {e.slug:<20} budget {e.runtime_budget:>4g} s  {e.config}", file=file)
        print(f"    {e.description}", file=file)
    return CATALOG


def cmd_list(args) -> int:
    list_experiments()
    return 0


def cmd_validate(args) -> int:
    try:
        cfg = load_config(_resolve(args.config))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    models = ", ".join(f"{k} ({m.name})" for k, m in cfg.models.items()) or f"{len(cfg.matrices)} matrices"
    print(f"ok: {cfg.name} [{cfg.kind}] seed {cfg.seed}; models: {models}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spinesim", description="Spine decomposition simulator and checks.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run an experiment config (a path, a catalog id or a slug)")
    p.add_argument("config")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--out", default="spinesim-out")
    p.add_argument("--workers", type=int, default=None, help="worker processes (default: logical cores)")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("list", help="print the built-in experiment catalog")
    p.set_defaults(func=cmd_list)
    p = sub.add_parser("validate", help="parse and validate a config")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
