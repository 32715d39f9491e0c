"""Synthetic hierarchical monthly sales panels with known components."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from htsrecon.hierarchy import Hierarchy, Panel, build_summing_matrix, save_hierarchy

# three categories over ten families over sixteen products
DEFAULT_TREE = {
    "id": "Total",
    "children": [
        {"id": "CS1", "children": [{"id": "PF1", "children": [{"id": "AP1"}]}]},
        {"id": "CS2", "children": [
            {"id": "PF2", "children": [{"id": "AP2"}]},
            {"id": "PF3", "children": [{"id": "AP3"}, {"id": "AP4"}]},
            {"id": "PF4", "children": [{"id": "AP5"}]},
            {"id": "PF5", "children": [{"id": "AP6"}]},
        ]},
        {"id": "CS3", "children": [
            {"id": "PF6", "children": [{"id": "AP7"}, {"id": "AP8"}]},
            {"id": "PF7", "children": [{"id": "AP9"}]},
            {"id": "PF8", "children": [{"id": "AP10"}, {"id": "AP11"}]},
            {"id": "PF9", "children": [{"id": "AP12"}, {"id": "AP13"}]},
            {"id": "PF10", "children": [{"id": "AP14"}, {"id": "AP15"}, {"id": "AP16"}]},
        ]},
    ],
}


def uniform_tree(branching, prefix: str = "N") -> dict:
    """Balanced tree with ``branching[i]`` children per node on level i."""
    def build(ident: str, depth: int) -> dict:
        node: dict = {"id": ident}
        if depth < len(branching):
            node["children"] = [build(f"{ident}.{j + 1}" if depth else f"{prefix}{j + 1}", depth + 1)
                                for j in range(branching[depth])]
        return node

    return build("Total", 0)


@dataclass
class GenConfig:
    tree: dict | list = field(default_factory=lambda: DEFAULT_TREE)
    years: int = 12
    start: str = "2010-01"
    seed: int = 0
    base_level: tuple[float, float] = (200.0, 2000.0)
    # fractional growth per year
    trend_slope: tuple[float, float] = (-0.05, 0.15)
    seasonal_amplitude: tuple[float, float] = (0.1, 0.4)
    seasonal_period: int = 12
    # weight of the common seasonal profile (0 = independent per leaf)
    shared_seasonality: float = 0.7
    # noise sd as a fraction of the leaf level
    noise_scale: float = 0.08
    outlier_rate: float = 0.0
    # spike size in noise standard deviations
    outlier_size: float = 10.0
    negative_rate: float = 0.0
    late_start_prob: float = 0.0
    level_shift: str | None = None
    level_shift_factor: float = 0.7

    def __post_init__(self):
        for name in ("outlier_rate", "negative_rate", "late_start_prob", "shared_seasonality"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.years < 3:
            raise ValueError("years must be at least 3")
        if self.seasonal_period < 1:
            raise ValueError("seasonal_period must be positive")

    def hierarchy(self) -> Hierarchy:
        tree = self.tree
        if isinstance(tree, (list, tuple)):
            tree = uniform_tree(list(tree))
        return Hierarchy.from_tree(tree)


@dataclass
class GroundTruth:
    """Per-leaf clean components and the injected anomalies."""

    trend: dict[str, list[float]]
    seasonal: dict[str, list[float]]
    noise: dict[str, list[float]]
    start_offsets: dict[str, int]
    outliers: dict[str, list[int]]
    negatives: dict[str, list[int]]
    outlier_draws: int
    negative_draws: int
    clean: np.ndarray

    def to_json(self) -> dict:
        out = asdict(self)
        out.pop("clean")
        return out


def _leaf_components(cfg: GenConfig, rng: np.random.Generator, n: int, shared: np.ndarray):
    t = np.arange(n)
    level = rng.uniform(*cfg.base_level)
    slope = rng.uniform(*cfg.trend_slope)
    trend = level * (1.0 + slope * t / 12.0)
    amp = rng.uniform(*cfg.seasonal_amplitude)
    p = cfg.seasonal_period
    own = np.sin(2 * np.pi * (t / p + rng.uniform())) if p > 1 else np.zeros(n)
    profile = cfg.shared_seasonality * shared + (1.0 - cfg.shared_seasonality) * own
    seasonal = amp * level * profile
    noise = rng.normal(0.0, cfg.noise_scale * level, n)
    return trend, seasonal, noise, level


def generate_hierarchical_sales(cfg: GenConfig) -> tuple[Hierarchy, Panel, GroundTruth]:
    """Leaves are trend + seasonal + noise floored at zero; upper levels are
    exact sums. Anomalies are injected into leaves and the panel re-aggregated,
    so it stays coherent."""
    h = cfg.hierarchy()
    smat = build_summing_matrix(h)
    n = 12 * cfg.years
    calendar = np.arange(np.datetime64(cfg.start, "M"), np.datetime64(cfg.start, "M") + n)
    root = np.random.SeedSequence(cfg.seed)
    shared_ss, *leaf_ss = root.spawn(1 + h.m_bottom)
    srng = np.random.default_rng(shared_ss)
    p = cfg.seasonal_period
    tt = np.arange(n)
    if p > 1:
        shared = np.sin(2 * np.pi * (tt / p + srng.uniform()))
        shared += 0.5 * np.sin(4 * np.pi * (tt / p + srng.uniform()))
        shared /= np.abs(shared).max()
    else:
        shared = np.zeros(n)
    shift_at = None
    if cfg.level_shift:
        shift_at = int((np.datetime64(cfg.level_shift, "M") - calendar[0]).astype(int))

    month0 = int(calendar[0].astype(int)) % 12
    mk = h.m_bottom
    bottom = np.empty((mk, n))
    truth = {k: {} for k in ("trend", "seasonal", "noise", "start", "outliers", "negatives")}
    out_draws = neg_draws = 0
    clean = np.empty((mk, n))
    for j, leaf in enumerate(h.bottom_ids):
        rng = np.random.default_rng(leaf_ss[j])
        trend, seasonal, noise, level = _leaf_components(cfg, rng, n, shared)
        y = np.maximum(trend + seasonal + noise, 0.0)
        if shift_at is not None and 0 <= shift_at < n:
            y[shift_at:] *= cfg.level_shift_factor
        start = 0
        if rng.uniform() < cfg.late_start_prob:
            # late series start in January of a year inside the first third
            start = 12 * int(rng.integers(1, max(2, cfg.years // 3 + 1)))
        y[:start] = np.nan
        clean[j] = y
        # outliers: one Bernoulli draw per observed month
        obs_idx = np.arange(start, n)
        hits = obs_idx[rng.uniform(size=len(obs_idx)) < cfg.outlier_rate]
        signs = rng.choice([-1.0, 1.0], size=len(hits))
        y[hits] += signs * cfg.outlier_size * cfg.noise_scale * level
        out_draws += len(hits)
        # negative corrections: the month turns negative and the deficit moves
        # to the nearest month of the same year that is not itself corrected
        neg_hits = obs_idx[rng.uniform(size=len(obs_idx)) < cfg.negative_rate]
        neg_draws += len(neg_hits)
        hit_set = set(neg_hits.tolist())
        for t in neg_hits:
            year = (t + month0) // 12
            partner = None
            for dist in range(1, 12):
                for cand in (t + dist, t - dist):
                    if (start <= cand < n and (cand + month0) // 12 == year
                            and cand not in hit_set):
                        partner = cand
                        break
                if partner is not None:
                    break
            size = max(y[t], 0.0) * (1.0 + rng.uniform(0.2, 1.0)) + cfg.noise_scale * level
            y[t] -= size
            if partner is not None:
                y[partner] += size
        truth["trend"][leaf] = trend.tolist()
        truth["seasonal"][leaf] = seasonal.tolist()
        truth["noise"][leaf] = noise.tolist()
        truth["start"][leaf] = start
        truth["outliers"][leaf] = [int(i) for i in hits]
        truth["negatives"][leaf] = [int(i) for i in neg_hits]
        bottom[j] = y

    values = _aggregate_with_gaps(np.asarray(smat), bottom)
    panel = Panel(values, calendar, h.nodes)
    gt = GroundTruth(truth["trend"], truth["seasonal"], truth["noise"], truth["start"],
                     truth["outliers"], truth["negatives"], out_draws, neg_draws,
                     _aggregate_with_gaps(np.asarray(smat), clean))
    return h, panel, gt


def _aggregate_with_gaps(smat: np.ndarray, bottom: np.ndarray) -> np.ndarray:
    """S @ bottom where NaN leaves count as zero; an aggregate is NaN only
    when all of its leaves are absent."""
    present = ~np.isnan(bottom)
    vals = smat @ np.where(present, bottom, 0.0)
    any_present = (smat @ present.astype(float)) > 0
    vals[~any_present] = np.nan
    return vals


def write_panel_csv(panel: Panel, path: str | Path) -> None:
    """``series_id,date,value`` rows; absent months are omitted."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["series_id", "date", "value"])
        stamps = [str(c) for c in panel.calendar]
        for label, row in zip(panel.labels, panel.values):
            for stamp, v in zip(stamps, row):
                if not np.isnan(v):
                    w.writerow([label, stamp, repr(float(v))])


def write_dataset(out_dir: str | Path, h: Hierarchy, panel: Panel, truth: GroundTruth) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_hierarchy(h, out / "hierarchy.json")
    write_panel_csv(panel, out / "panel.csv")
    with open(out / "truth.json", "w", encoding="utf-8") as fh:
        json.dump(truth.to_json(), fh, sort_keys=True)
