"""Command-line entry point.

Stage subcommands read and write JSON files under ``<output>/work/<split>``
so each step can be rerun on its own; ``pipeline`` runs everything in one
process and writes the report directory.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from htsrecon import pipeline as pl
from htsrecon.datagen import GenConfig, generate_hierarchical_sales, write_dataset
from htsrecon.io import dump_json, load_json, as_array
from htsrecon.metrics import series_weights
from htsrecon.reconcile import METHODS

STAGES = ("preprocess", "fit", "forecast", "reconcile", "evaluate", "report", "pipeline")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML configuration file")
    p.add_argument("--hierarchy", help="hierarchy JSON (overrides the config)")
    p.add_argument("--panel", help="panel CSV (overrides the config)")
    p.add_argument("--output", help="output directory (overrides the config)")
    p.add_argument("--seed", type=int, help="seed recorded with the run")
    p.add_argument("--jobs", type=int, help="worker processes for per-series fitting")
    p.add_argument("--methods", help="comma-separated method list, e.g. Base,BU,MINT")
    p.add_argument("--split", action="append", metavar="YYYY-MM",
                   help="train end month; repeat for several splits")
    p.add_argument("--horizon", type=int, help="forecast horizon in months")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="htsrecon", description="Hierarchical sales forecasting with reconciliation.")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="write a synthetic hierarchical panel")
    sim.add_argument("--out", required=True, help="directory for hierarchy.json, panel.csv, truth.json")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--years", type=int, default=12)
    sim.add_argument("--start", default="2010-01")
    sim.add_argument("--branching", help="uniform tree, e.g. 3,2,2 (default: the 1+3+10+16 tree)")
    sim.add_argument("--outlier-rate", type=float, default=0.0)
    sim.add_argument("--negative-rate", type=float, default=0.0)
    sim.add_argument("--late-start-prob", type=float, default=0.0)
    sim.add_argument("--level-shift", metavar="YYYY-MM")
    sim.add_argument("-v", "--verbose", action="count", default=0)

    helps = {
        "preprocess": "repair negatives and outliers, fit Box-Cox",
        "fit": "select seasonal periods and SARIMA orders",
        "forecast": "base forecasts and in-sample residuals",
        "reconcile": "apply the reconciliation methods",
        "evaluate": "SFB, RMSSE and SMAPE per series and method",
        "report": "tables, statistical tests, plots and JSON report",
        "pipeline": "all stages in one run",
    }
    for name in STAGES:
        _common(sub.add_parser(name, help=helps[name]))
    return parser


def load_config(args) -> pl.PipelineConfig:
    cfg = pl.PipelineConfig.from_toml(args.config) if args.config else pl.PipelineConfig()
    kw: dict = {"hierarchy_path": args.hierarchy, "panel_path": args.panel,
                "output_dir": args.output, "seed": args.seed, "jobs": args.jobs}
    if args.methods:
        methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
        known = {m.upper(): m for m in METHODS}
        bad = [m for m in methods if m.upper() not in known]
        if bad:
            raise ValueError(f"unknown methods {bad}; choose from {', '.join(METHODS)}")
        kw["methods"] = tuple(known[m.upper()] for m in methods)
    splits = cfg.splits
    if args.split:
        h = args.horizon or 24
        splits = tuple(pl.SplitSpec(s, s, h) for s in args.split)
    elif args.horizon:
        splits = tuple(pl.SplitSpec(s.name, s.train_end, args.horizon) for s in splits)
    kw["splits"] = splits
    if args.jobs is not None and args.jobs < 1:
        raise ValueError("--jobs must be positive")
    return pl.with_overrides(cfg, **kw)


def _stage_preprocess(cfg, h, panel):
    for spec in cfg.splits:
        data = pl.split_panel(panel, spec)
        pl.save_preps(pl.preprocess_split(h, data, cfg), pl.work_dir(cfg, spec) / "prep.json")


def _need(path: Path, stage: str) -> Path:
    if not path.exists():
        raise pl.PipelineError(stage, f"missing {path}; run the previous stage first")
    return path


def _stage_fit(cfg, h, panel):
    for spec in cfg.splits:
        wd = pl.work_dir(cfg, spec)
        preps = pl.load_preps(_need(wd / "prep.json", "fit"))
        pl.save_fits(pl.fit_split(preps, cfg), wd / "fits.json")


def _stage_forecast(cfg, h, panel):
    for spec in cfg.splits:
        wd = pl.work_dir(cfg, spec)
        preps = pl.load_preps(_need(wd / "prep.json", "forecast"))
        fits = pl.load_fits(_need(wd / "fits.json", "forecast"))
        base, resid = pl.forecast_split(preps, fits, pl.split_panel(panel, spec))
        pl.save_fits(fits, wd / "fits.json")
        pl.save_matrix_set(wd / "base.json", base=base, residuals=resid)


def _stage_reconcile(cfg, h, panel):
    for spec in cfg.splits:
        wd = pl.work_dir(cfg, spec)
        doc = load_json(_need(wd / "base.json", "reconcile"))
        base, resid = pl.load_matrix(doc, "base"), pl.load_matrix(doc, "residuals")
        methods = list(cfg.methods)
        if [m.upper() for m in methods] == ["BASE"]:
            rec = {methods[0]: base}
        else:
            rec = pl.reconcile_split(h, base, resid, pl.split_panel(panel, spec), methods)
        dump_json(rec, wd / "reconciled.json")


def _load_reconciled(cfg, wd: Path, stage: str) -> dict[str, np.ndarray]:
    doc = load_json(_need(wd / "reconciled.json", stage))
    missing = [m for m in cfg.methods if m not in doc]
    if missing:
        raise pl.PipelineError(stage, f"methods {missing} were not reconciled; rerun reconcile")
    return {m: as_array(doc[m]) for m in cfg.methods}


def _stage_evaluate(cfg, h, panel):
    weights = series_weights(panel.values)
    for spec in cfg.splits:
        wd = pl.work_dir(cfg, spec)
        preps = pl.load_preps(_need(wd / "prep.json", "evaluate"))
        rec = _load_reconciled(cfg, wd, "evaluate")
        metrics = pl.evaluate_split(h, preps, rec, pl.split_panel(panel, spec), weights, cfg)
        pl.save_metrics(metrics, wd / "metrics.json")


def _stage_report(cfg, h, panel):
    results = {}
    for spec in cfg.splits:
        wd = pl.work_dir(cfg, spec)
        doc = load_json(_need(wd / "base.json", "report"))
        results[spec.name] = pl.SplitResult(
            pl.split_panel(panel, spec),
            pl.load_preps(_need(wd / "prep.json", "report")),
            pl.load_fits(_need(wd / "fits.json", "report")),
            pl.load_matrix(doc, "base"), pl.load_matrix(doc, "residuals"),
            _load_reconciled(cfg, wd, "report"),
            pl.load_metrics(_need(wd / "metrics.json", "report")))
    report = pl.build_report(h, results, cfg)
    out = pl.write_report(cfg, h, results, report)
    print(out / "report.json")


def _stage_pipeline(cfg, h, panel):
    bundle = pl.run_pipeline(cfg, hierarchy=h, panel=panel)
    for name, sec in bundle.report["splits"].items():
        if sec["fallbacks"]:
            print(f"split {name}: seasonal-naive fallback for {', '.join(sec['fallbacks'])}",
                  file=sys.stderr)
    print(bundle.output_dir / "report.json")


_RUNNERS = {"preprocess": _stage_preprocess, "fit": _stage_fit, "forecast": _stage_forecast,
            "reconcile": _stage_reconcile, "evaluate": _stage_evaluate, "report": _stage_report,
            "pipeline": _stage_pipeline}


def _simulate(args) -> None:
    tree = [int(b) for b in args.branching.split(",")] if args.branching else None
    kw = {} if tree is None else {"tree": tree}
    cfg = GenConfig(years=args.years, start=args.start, seed=args.seed,
                    outlier_rate=args.outlier_rate, negative_rate=args.negative_rate,
                    late_start_prob=args.late_start_prob, level_shift=args.level_shift, **kw)
    h, panel, truth = generate_hierarchical_sales(cfg)
    write_dataset(args.out, h, panel, truth)
    print(f"{h.m} series ({h.m_bottom} leaves), {panel.n} months -> {args.out}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "simulate":
            _simulate(args)
            return 0
        try:
            cfg = load_config(args)
        except (OSError, ValueError, TypeError) as exc:
            raise pl.PipelineError("config", str(exc)) from exc
        h, panel = pl.load_inputs(cfg)
        for spec in cfg.splits:
            pl.split_panel(panel, spec)
        _RUNNERS[args.command](cfg, h, panel)
    except pl.PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: stage {args.command}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
