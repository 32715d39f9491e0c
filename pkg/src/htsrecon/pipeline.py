"""End-to-end workflow: preprocess, fit, forecast, reconcile, evaluate, report."""
from __future__ import annotations

import csv
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from htsrecon.forecast.sarima import (SarimaOrder, auto_sarima, model_from_coefficients,
                                      point_forecast)
from htsrecon.forecast.selection import FIT_ERRORS, DEFAULT_CANDIDATES, select_seasonal_period
from htsrecon.hierarchy import (Hierarchy, Panel, build_summing_matrix, check_coherence,
                                load_hierarchy)
from htsrecon.io import as_array, dump_json, ingest_panel_csv, load_json
from htsrecon.metrics import SFB_WINDOW, MetricReport, metric_report, series_weights
from htsrecon.preprocess import (BoxCoxParams, DegenerateSeriesError, boxcox_fit,
                                 boxcox_inverse, boxcox_transform, repair_negatives,
                                 repair_outliers)
from htsrecon.reconcile import METHODS, reconcile_all
from htsrecon.stats import ScoreMatrix, dunn_test_holm, friedman_test, wilcoxon_signed_rank

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

COHERENCE_RTOL = 1e-6
# outlier repair needs this many full seasonal cycles; with fewer, robust STL
# fits most cycle-subseries exactly and flags whole years of ordinary noise
MIN_OUTLIER_CYCLES = 4


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str, series: str | None = None):
        where = f" [series {series}]" if series else ""
        super().__init__(f"stage {stage}{where}: {message}")
        self.stage = stage
        self.series = series


@dataclass(frozen=True)
class SplitSpec:
    name: str
    train_end: str
    horizon: int = 24


DEFAULT_SPLITS = (SplitSpec("2017-12", "2017-12", 24), SplitSpec("2019-12", "2019-12", 24))


@dataclass
class PipelineConfig:
    hierarchy_path: str | None = None
    panel_path: str | None = None
    output_dir: str = "out"
    splits: tuple[SplitSpec, ...] = DEFAULT_SPLITS
    candidates: tuple[int, ...] = DEFAULT_CANDIDATES
    min_train: int = 28
    val: int = 2
    step: int = 1
    reselect_per_fold: bool = False
    methods: tuple[str, ...] = METHODS
    sfb_window: int = SFB_WINDOW
    seed: int = 0
    jobs: int = 1
    # hierarchy levels whose series get negative repair; None = level above the bottom
    repair_levels: tuple[int, ...] | None = None
    outlier_period: int = 12
    level_names: tuple[str, ...] | None = None
    control: str = "Base"

    def __post_init__(self):
        if not self.methods:
            raise ValueError("method list is empty")
        if not self.splits:
            raise ValueError("at least one split is required")
        self.splits = tuple(s if isinstance(s, SplitSpec) else SplitSpec(**s) for s in self.splits)
        self.methods = tuple(self.methods)
        self.candidates = tuple(int(c) for c in self.candidates)

    @classmethod
    def from_dict(cls, doc: dict, base_dir: str | Path = ".") -> "PipelineConfig":
        doc = dict(doc)
        paths = doc.pop("paths", {})
        model = doc.pop("model", {})
        kw = {**doc, **model}
        base = Path(base_dir)
        for key, name in (("hierarchy_path", "hierarchy"), ("panel_path", "panel"),
                          ("output_dir", "output")):
            if name in paths:
                p = Path(paths[name])
                kw[key] = str(p if p.is_absolute() else base / p)
        if "splits" in kw:
            kw["splits"] = tuple(SplitSpec(**s) if "name" in s else
                                 SplitSpec(s["train_end"], s["train_end"], s.get("horizon", 24))
                                 for s in kw["splits"])
        for key in ("candidates", "methods", "repair_levels", "level_names"):
            if key in kw and kw[key] is not None:
                kw[key] = tuple(kw[key])
        unknown = set(kw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**kw)

    @classmethod
    def from_toml(cls, path: str | Path) -> "PipelineConfig":
        with open(path, "rb") as fh:
            return cls.from_dict(tomllib.load(fh), Path(path).parent)

    def to_dict(self) -> dict:
        return {
            "candidates": list(self.candidates), "min_train": self.min_train, "val": self.val,
            "step": self.step, "reselect_per_fold": self.reselect_per_fold,
            "methods": list(self.methods), "sfb_window": self.sfb_window, "seed": self.seed,
            "splits": [vars(s) for s in self.splits], "outlier_period": self.outlier_period,
            "repair_levels": None if self.repair_levels is None else list(self.repair_levels),
        }


# ----------------------------------------------------------------- stages


@dataclass
class SeriesPrep:
    label: str
    offset: int
    cleaned: np.ndarray
    transformed: np.ndarray
    boxcox: BoxCoxParams
    outliers: list[int]
    negatives_repaired: bool


@dataclass
class SeriesFit:
    label: str
    period: int
    order: SarimaOrder | None
    coefficients: dict[str, list[float]] = field(default_factory=dict)
    mean: float = 0.0
    include_mean: bool = False
    aic: float = float("nan")
    cv_smape: dict[int, float] = field(default_factory=dict)
    fallback: str | None = None


@dataclass
class SplitData:
    spec: SplitSpec
    train_end: int
    calendar: np.ndarray
    raw_train: np.ndarray
    actual: np.ndarray


def split_panel(panel: Panel, spec: SplitSpec) -> SplitData:
    try:
        te = panel.month_index(spec.train_end)
    except ValueError as exc:
        raise PipelineError("split", str(exc)) from None
    if te + spec.horizon >= panel.n:
        raise PipelineError("split", f"train end {spec.train_end} + horizon {spec.horizon} "
                            f"runs past the calendar end {panel.calendar[-1]}")
    return SplitData(spec, te, panel.calendar[: te + 1], panel.values[:, : te + 1],
                     panel.values[:, te + 1: te + 1 + spec.horizon])


def _repair_levels(h: Hierarchy, cfg: PipelineConfig) -> set[int]:
    if cfg.repair_levels is not None:
        return set(cfg.repair_levels)
    return {max(h.levels - 2, 0)}


def preprocess_split(h: Hierarchy, data: SplitData, cfg: PipelineConfig) -> list[SeriesPrep]:
    levels = _repair_levels(h, cfg)
    out = []
    for i, label in enumerate(h.nodes):
        row = data.raw_train[i]
        ok = np.flatnonzero(~np.isnan(row))
        if not len(ok):
            raise PipelineError("preprocess", "no observations in the training span", label)
        off = int(ok[0])
        y = row[off:].copy()
        if np.isnan(y).any():
            raise PipelineError("preprocess", "internal missing values", label)
        try:
            repaired = False
            if h.level_of[label] in levels and np.any(y < 0):
                y = repair_negatives(y, data.calendar[off:])
                repaired = True
            outliers: list[int] = []
            if cfg.outlier_period >= 2 and len(y) >= MIN_OUTLIER_CYCLES * cfg.outlier_period:
                y, idx = repair_outliers(y, cfg.outlier_period)
                outliers = [int(k) + off for k in idx]
            try:
                params = boxcox_fit(y)
            except DegenerateSeriesError:
                params = BoxCoxParams(1.0, 0.0 if y.min() > 0 else abs(y.min()) + 1.0)
            z = boxcox_transform(y, params)
        except ValueError as exc:
            raise PipelineError("preprocess", str(exc), label) from exc
        out.append(SeriesPrep(label, off, y, z, params, outliers, repaired))
    return out


def _fit_one(prep: SeriesPrep, cfg: PipelineConfig) -> SeriesFit:
    z = prep.transformed
    inverse = _inverse(prep.boxcox)
    max_period = max(cfg.candidates)
    cands = [c for c in cfg.candidates if c == 1 or len(z) >= 2 * c + 8]
    if not cands:
        cands = [min(cfg.candidates)]
    try:
        if len(z) <= cfg.min_train + cfg.val or len(cands) == 1:
            period = cands[0] if len(cands) == 1 else min(cands)
            table = {}
        else:
            period, table = select_seasonal_period(
                z, cands, min_train=cfg.min_train, val=cfg.val, step=cfg.step,
                reselect_per_fold=cfg.reselect_per_fold, inverse=inverse)
        entry = table.get(period)
        model = entry.model if entry is not None and entry.model is not None else \
            auto_sarima(z, period)
        fc = point_forecast(model, 1)
        if not np.all(np.isfinite(fc)):
            raise ValueError("non-finite forecast")
    except FIT_ERRORS as exc:
        logger.info("%s: falling back to seasonal naive (%s)", prep.label, exc)
        return SeriesFit(prep.label, 12 if max_period >= 12 else 1, None,
                         fallback=f"{type(exc).__name__}: {exc}")
    cv = {p: s.mean_smape for p, s in table.items()}
    return SeriesFit(prep.label, period, model.order,
                     {"ar": model.ar.tolist(), "ma": model.ma.tolist(),
                      "sar": model.sar.tolist(), "sma": model.sma.tolist()},
                     float(model.mean), bool(model.include_mean), float(model.aic), cv)


def _inverse(params: BoxCoxParams):
    return lambda v: boxcox_inverse(v, params)


def fit_split(preps: list[SeriesPrep], cfg: PipelineConfig) -> list[SeriesFit]:
    if cfg.jobs == 1:
        return [_fit_one(p, cfg) for p in preps]
    from joblib import Parallel, delayed

    return list(Parallel(n_jobs=cfg.jobs)(delayed(_fit_one)(p, cfg) for p in preps))


def _seasonal_naive(y: np.ndarray, period: int, h: int) -> tuple[np.ndarray, np.ndarray]:
    n = len(y)
    resid = np.full(n, np.nan)
    if period > 1 and n >= period:
        fc = np.array([y[n - period + (k % period)] for k in range(h)])
        resid[period:] = y[period:] - y[:-period]
    else:
        fc = np.full(h, y[-1])
        resid[1:] = np.diff(y)
    return fc, resid


def forecast_split(preps: list[SeriesPrep], fits: list[SeriesFit], data: SplitData
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Base forecasts (m x h) and in-sample one-step residuals (m x T), both
    on the original scale."""
    h = data.spec.horizon
    m, T = data.raw_train.shape
    base = np.empty((m, h))
    resid = np.full((m, T), np.nan)
    for i, (prep, fit) in enumerate(zip(preps, fits)):
        if fit.order is None:
            base[i], r = _seasonal_naive(prep.cleaned, fit.period, h)
            resid[i, prep.offset:] = r
            continue
        c = fit.coefficients
        try:
            model = model_from_coefficients(prep.transformed, fit.order, ar=c["ar"], ma=c["ma"],
                                            sar=c["sar"], sma=c["sma"], mean=fit.mean,
                                            include_mean=fit.include_mean)
            fc = boxcox_inverse(point_forecast(model, h), prep.boxcox)
            fitted = boxcox_inverse(model.fitted_values(), prep.boxcox)
        except FIT_ERRORS as exc:
            raise PipelineError("forecast", str(exc), prep.label) from exc
        if not np.all(np.isfinite(fc)):
            fit.fallback = "non-finite forecast after inverse transform"
            fit.order = None
            base[i], r = _seasonal_naive(prep.cleaned, fit.period, h)
            resid[i, prep.offset:] = r
            continue
        base[i] = fc
        resid[i, prep.offset:] = prep.cleaned - fitted
    resid[~np.isfinite(resid)] = np.nan
    return base, resid


def reconcile_split(h: Hierarchy, base: np.ndarray, resid: np.ndarray, data: SplitData,
                    methods) -> dict[str, np.ndarray]:
    smat = build_summing_matrix(h)
    try:
        fs = reconcile_all(smat, base, methods, residuals=resid, history=data.raw_train)
    except (ValueError, ZeroDivisionError, np.linalg.LinAlgError, RuntimeError) as exc:
        raise PipelineError("reconcile", str(exc)) from exc
    for name, y in fs.reconciled.items():
        if name.upper() == "BASE":
            continue
        res = check_coherence(smat, y, tol=0.0, rtol=COHERENCE_RTOL)
        if not res.coherent:
            raise PipelineError("reconcile", f"{name} output incoherent (max violation "
                                f"{res.max_violation:g})", res.node)
    return fs.reconciled


def level_groups(h: Hierarchy, names=None) -> dict[str, list[int]]:
    out = {}
    for lev in range(h.levels):
        name = names[lev] if names and lev < len(names) else f"level{lev}"
        out[name] = [i for i, n in enumerate(h.nodes) if h.level_of[n] == lev]
    return out


def evaluate_split(h: Hierarchy, preps, reconciled: dict[str, np.ndarray], data: SplitData,
                   weights: np.ndarray, cfg: PipelineConfig) -> dict[str, MetricReport]:
    train = [p.cleaned for p in preps]
    groups = level_groups(h, cfg.level_names)
    return {name: metric_report(h.nodes, train, data.actual, fc, weights, cfg.sfb_window, groups)
            for name, fc in reconciled.items()}


# ----------------------------------------------------------------- report


def _quartiles(v: np.ndarray) -> list[float]:
    v = v[np.isfinite(v)]
    if not len(v):
        return [float("nan")] * 5
    return [float(x) for x in np.percentile(v, [0, 25, 50, 75, 100])]


def _stats_section(results: dict[str, dict[str, MetricReport]], cfg: PipelineConfig) -> dict:
    methods = [m for m in cfg.methods]
    splits = list(results)
    out: dict = {"friedman": {}, "dunn": {}, "wilcoxon": {}}
    for metric in ("sfb", "rmsse"):
        rows, labels = [], []
        for split in splits:
            reps = results[split]
            mat = np.column_stack([np.abs(getattr(reps[m], metric)) for m in methods])
            for lab, row in zip(reps[methods[0]].labels, mat):
                if np.all(np.isfinite(row)):
                    rows.append(row)
                    labels.append(f"{lab}@{split}")
        if len(rows) < 2:
            continue
        sm = ScoreMatrix(np.array(rows), tuple(methods), tuple(labels))
        fr = friedman_test(sm)
        out["friedman"][metric] = {"statistic": fr.statistic, "pvalue": fr.pvalue,
                                   "subjects": len(rows), "methods": len(methods)}
        if cfg.control in methods:
            dn = dunn_test_holm(sm, cfg.control)
            out["dunn"][metric] = {c: {"z": float(z), "pvalue": float(p), "adjusted": float(a)}
                                   for c, z, p, a in zip(dn.columns, dn.z, dn.pvalues, dn.adjusted)}
        if len(splits) >= 2:
            a, b = splits[0], splits[1]
            wil = {}
            for mth in methods:
                x = np.abs(getattr(results[a][mth], metric))
                y = np.abs(getattr(results[b][mth], metric))
                ok = np.isfinite(x) & np.isfinite(y)
                try:
                    r = wilcoxon_signed_rank(x[ok], y[ok], corrections=len(methods))
                    wil[mth] = {"statistic": r.statistic, "pvalue": r.pvalue, "n": int(ok.sum())}
                except ValueError as exc:
                    wil[mth] = {"statistic": None, "pvalue": None, "note": str(exc)}
            out["wilcoxon"][metric] = {"before": a, "after": b, "methods": wil}
    return out


def _write_tables(outdir: Path, h: Hierarchy, results: dict[str, dict[str, MetricReport]],
                  cfg: PipelineConfig) -> None:
    methods = list(cfg.methods)
    groups = level_groups(h, cfg.level_names)
    level_of = {i: name for name, idx in groups.items() for i in idx}
    with open(outdir / "metrics_long.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["split", "series", "level", "method", "sfb", "rmsse", "smape"])
        for split, reps in results.items():
            for mth in methods:
                r = reps[mth]
                for i, lab in enumerate(r.labels):
                    w.writerow([split, lab, level_of[i], mth, _fmt(r.sfb[i]),
                                _fmt(r.rmsse[i]), _fmt(r.smape[i])])
    for metric in ("sfb", "rmsse"):
        for split, reps in results.items():
            path = outdir / f"table_{metric}_{_safe(split)}.csv"
            with open(path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["series", "level"] + methods)
                first = reps[methods[0]]
                for i, lab in enumerate(first.labels):
                    w.writerow([lab, level_of[i]] + [_fmt(getattr(reps[m], metric)[i])
                                                     for m in methods])
                for name in list(groups) + ["overall"]:
                    w.writerow([f"weighted:{name}", name] +
                               [_fmt(reps[m].by_level(metric)[name]) for m in methods])


def _write_stats_tables(outdir: Path, stats: dict) -> None:
    with open(outdir / "friedman.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "statistic", "pvalue", "subjects", "methods"])
        for metric, r in stats["friedman"].items():
            w.writerow([metric, _fmt(r["statistic"]), _fmt(r["pvalue"]), r["subjects"], r["methods"]])
    with open(outdir / "dunn_holm.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "method", "z", "pvalue", "adjusted_pvalue"])
        for metric, table in stats["dunn"].items():
            for mth, r in table.items():
                w.writerow([metric, mth, _fmt(r["z"]), _fmt(r["pvalue"]), _fmt(r["adjusted"])])
    with open(outdir / "wilcoxon_bonferroni.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "method", "before", "after", "statistic", "adjusted_pvalue"])
        for metric, block in stats["wilcoxon"].items():
            for mth, r in block["methods"].items():
                w.writerow([metric, mth, block["before"], block["after"],
                            _fmt(r["statistic"]), _fmt(r["pvalue"])])


def _boxplots(outdir: Path, h: Hierarchy, results, cfg: PipelineConfig) -> list[dict]:
    groups = level_groups(h, cfg.level_names)
    rows = []
    for split, reps in results.items():
        for level, idx in groups.items():
            for mth in cfg.methods:
                for metric in ("sfb", "rmsse"):
                    v = np.abs(np.asarray(getattr(reps[mth], metric))[idx])
                    q = _quartiles(v)
                    rows.append({"split": split, "level": level, "method": mth, "metric": metric,
                                 "min": q[0], "q1": q[1], "median": q[2], "q3": q[3], "max": q[4]})
    with open(outdir / "boxplot_summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        keys = ["split", "level", "method", "metric", "min", "q1", "median", "q3", "max"]
        w.writerow(keys)
        for r in rows:
            w.writerow([r[k] if isinstance(r[k], str) else _fmt(r[k]) for k in keys])
    _draw_boxplots(outdir, groups, results, cfg)
    return rows


def _draw_boxplots(outdir: Path, groups, results, cfg: PipelineConfig) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "htsrecon"
    for metric in ("sfb", "rmsse"):
        for split, reps in results.items():
            fig, axes = plt.subplots(1, len(groups), figsize=(3.2 * len(groups), 3.4),
                                     squeeze=False)
            for ax, (level, idx) in zip(axes[0], groups.items()):
                data = []
                for mth in cfg.methods:
                    v = np.abs(np.asarray(getattr(reps[mth], metric))[idx])
                    data.append(v[np.isfinite(v)])
                ax.boxplot(data, showfliers=True)
                ax.set_xticks(range(1, len(cfg.methods) + 1))
                ax.set_xticklabels(cfg.methods, rotation=90, fontsize=7)
                ax.set_title(level, fontsize=9)
            axes[0][0].set_ylabel("|SFB| (%)" if metric == "sfb" else "RMSSE")
            fig.suptitle(f"{metric.upper()} by level, split {split}", fontsize=10)
            fig.tight_layout()
            fig.savefig(outdir / f"boxplot_{metric}_{_safe(split)}.svg", format="svg",
                        metadata={"Date": None})
            plt.close(fig)


def _fmt(v) -> str:
    if v is None:
        return ""
    v = float(v)
    return "" if not np.isfinite(v) else repr(v)


def _safe(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in name)


# ----------------------------------------------------------------- driver


@dataclass
class SplitResult:
    data: SplitData
    preps: list[SeriesPrep]
    fits: list[SeriesFit]
    base: np.ndarray
    residuals: np.ndarray
    reconciled: dict[str, np.ndarray]
    metrics: dict[str, MetricReport]


@dataclass
class ReportBundle:
    report: dict
    splits: dict[str, SplitResult]
    output_dir: Path | None = None


def load_inputs(cfg: PipelineConfig) -> tuple[Hierarchy, Panel]:
    if not cfg.hierarchy_path or not cfg.panel_path:
        raise PipelineError("ingest", "hierarchy and panel paths are required")
    try:
        h = load_hierarchy(cfg.hierarchy_path)
        panel = ingest_panel_csv(cfg.panel_path, h)
    except (OSError, ValueError) as exc:
        raise PipelineError("ingest", str(exc)) from exc
    return h, panel


def run_split(h: Hierarchy, panel: Panel, spec: SplitSpec, cfg: PipelineConfig) -> SplitResult:
    data = split_panel(panel, spec)
    preps = preprocess_split(h, data, cfg)
    fits = fit_split(preps, cfg)
    base, resid = forecast_split(preps, fits, data)
    methods = list(cfg.methods)
    if [m.upper() for m in methods] == ["BASE"]:
        reconciled = {methods[0]: base.copy()}
    else:
        reconciled = reconcile_split(h, base, resid, data, methods)
    weights = series_weights(panel.values)
    metrics = evaluate_split(h, preps, reconciled, data, weights, cfg)
    return SplitResult(data, preps, fits, base, resid, reconciled, metrics)


def build_report(h: Hierarchy, results: dict[str, SplitResult], cfg: PipelineConfig) -> dict:
    methods = list(cfg.methods)
    report: dict = {"config": cfg.to_dict(), "series": list(h.nodes), "splits": {}}
    for name, res in results.items():
        fc_months = [str(m) for m in np.arange(res.data.calendar[-1] + 1,
                                               res.data.calendar[-1] + 1 + res.data.spec.horizon)]
        section = {
            "train_end": res.data.spec.train_end,
            "horizon": res.data.spec.horizon,
            "forecast_months": fc_months,
            "forecasts": {m: {lab: res.reconciled[m][i] for i, lab in enumerate(h.nodes)}
                          for m in methods},
            "models": {f.label: {"period": f.period,
                                 "order": f.order.label() if f.order else None,
                                 "fallback": f.fallback} for f in res.fits},
            "fallbacks": sorted(f.label for f in res.fits if f.fallback),
            "outliers": {p.label: p.outliers for p in res.preps if p.outliers},
            "negative_repairs": sorted(p.label for p in res.preps if p.negatives_repaired),
            "metrics": {m: {"per_series": {lab: {"sfb": r.sfb[i], "rmsse": r.rmsse[i],
                                                 "smape": r.smape[i]}
                                           for i, lab in enumerate(r.labels)},
                            "weighted": {k: r.by_level(k) for k in ("sfb", "rmsse", "smape")}}
                        for m, r in res.metrics.items()},
        }
        report["splits"][name] = section
    metric_sets = {name: res.metrics for name, res in results.items()}
    if len(methods) >= 2:
        report["stats"] = _stats_section(metric_sets, cfg)
    else:
        report["stats"] = None
    return report


def run_pipeline(cfg: PipelineConfig, *, hierarchy: Hierarchy | None = None,
                 panel: Panel | None = None, write: bool = True) -> ReportBundle:
    """Run every split and (optionally) write the report directory."""
    if hierarchy is None or panel is None:
        hierarchy, panel = load_inputs(cfg)
    for spec in cfg.splits:
        split_panel(panel, spec)
    results = {spec.name: run_split(hierarchy, panel, spec, cfg) for spec in cfg.splits}
    report = build_report(hierarchy, results, cfg)
    bundle = ReportBundle(report, results)
    if write:
        bundle.output_dir = write_report(cfg, hierarchy, results, report)
    return bundle


def write_report(cfg: PipelineConfig, h: Hierarchy, results: dict[str, SplitResult],
                 report: dict) -> Path:
    outdir = Path(cfg.output_dir) / "report"
    outdir.mkdir(parents=True, exist_ok=True)
    metric_sets = {name: res.metrics for name, res in results.items()}
    _write_tables(outdir, h, metric_sets, cfg)
    if report.get("stats"):
        _write_stats_tables(outdir, report["stats"])
    _boxplots(outdir, h, metric_sets, cfg)
    dump_json(report, outdir / "report.json")
    dump_json({name: sec["forecasts"] for name, sec in report["splits"].items()},
              outdir / "forecasts.json")
    return outdir


# ------------------------------------------------- stage files for the CLI


def work_dir(cfg: PipelineConfig, spec: SplitSpec) -> Path:
    d = Path(cfg.output_dir) / "work" / _safe(spec.name)
    d.mkdir(parents=True, exist_ok=True)
    return d


def save_preps(preps: list[SeriesPrep], path: Path) -> None:
    dump_json([{"label": p.label, "offset": p.offset, "cleaned": p.cleaned,
                "transformed": p.transformed, "lambda": p.boxcox.lmbda,
                "shift": p.boxcox.shift, "outliers": p.outliers,
                "negatives_repaired": p.negatives_repaired} for p in preps], path)


def load_preps(path: Path) -> list[SeriesPrep]:
    return [SeriesPrep(d["label"], d["offset"], np.array(d["cleaned"], float),
                       np.array(d["transformed"], float), BoxCoxParams(d["lambda"], d["shift"]),
                       d["outliers"], d["negatives_repaired"]) for d in load_json(path)]


def save_fits(fits: list[SeriesFit], path: Path) -> None:
    dump_json([{"label": f.label, "period": f.period,
                "order": None if f.order is None else vars(f.order),
                "coefficients": f.coefficients, "mean": f.mean, "include_mean": f.include_mean,
                "aic": f.aic, "cv_smape": {str(k): v for k, v in f.cv_smape.items()},
                "fallback": f.fallback} for f in fits], path)


def load_fits(path: Path) -> list[SeriesFit]:
    out = []
    for d in load_json(path):
        order = None if d["order"] is None else SarimaOrder(**d["order"])
        out.append(SeriesFit(d["label"], d["period"], order, d["coefficients"], d["mean"],
                             d["include_mean"], np.nan if d["aic"] is None else d["aic"],
                             {int(k): (np.inf if v is None else v)
                              for k, v in d["cv_smape"].items()}, d["fallback"]))
    return out


def save_matrix_set(path: Path, **arrays) -> None:
    dump_json(arrays, path)


def load_matrix(doc, key) -> np.ndarray:
    return as_array(doc[key])


def with_overrides(cfg: PipelineConfig, **kw) -> PipelineConfig:
    kw = {k: v for k, v in kw.items() if v is not None}
    return replace(cfg, **kw) if kw else cfg


def save_metrics(metrics: dict[str, MetricReport], path: Path) -> None:
    dump_json({name: {"labels": list(r.labels), "sfb": r.sfb, "rmsse": r.rmsse,
                      "smape": r.smape, "weights": r.weights,
                      "levels": {k: list(v) for k, v in r.levels.items()}}
               for name, r in metrics.items()}, path)


def load_metrics(path: Path) -> dict[str, MetricReport]:
    out = {}
    for name, d in load_json(path).items():
        vec = {k: as_array(d[k]) for k in ("sfb", "rmsse", "smape", "weights")}
        out[name] = MetricReport(tuple(d["labels"]), vec["sfb"], vec["rmsse"], vec["smape"],
                                 vec["weights"], {k: list(v) for k, v in d["levels"].items()})
    return out
