"""Experimental protocols: sample-size curves, epoch curves and alpha sweeps.

Every protocol is a grid of independent training cells keyed by
``(method, fraction, alpha, seed)``. Cells share one fixed train/test split;
within a seed both methods see the same training subsample and the same
initial weights, so differences are paired.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .graph import DataSplit, KnowledgeGraph, load_graph, split, subsample
from .network import CLNConfig
from .rules import LabelPref, RuleSet, load_rules
from .trainer import GATED, TrainConfig, train

KCLN = "kcln"
VANILLA = "vanilla"
SAMPLE_FRACTIONS = (0.05, 0.1, 0.2, 0.4, 0.6, 0.8)
ALPHAS = (0.2, 0.4, 0.6, 0.8, 1.0)
SEEDS = (1, 2, 3, 4, 5)
# sub-seed offset: subsample seed = seed + SUBSAMPLE_OFFSET, init seed = seed
SUBSAMPLE_OFFSET = 100

SUMMARY_HEADER = ["method", "fraction", "alpha", "f1_mean", "f1_std", "aucpr_mean",
                  "aucpr_std", "epochs_to_best_mean", "n_seeds", "test_hash"]
EPOCH_HEADER = ["method", "epoch", "f1_mean", "f1_std", "aucpr_mean", "aucpr_std",
                "n_seeds", "test_hash"]
CELL_HEADER = ["method", "fraction", "alpha", "seed", "f1", "aucpr", "epochs_to_best",
               "epochs_to_converge", "test_hash"]


@dataclass(frozen=True)
class ExperimentSpec:
    nodes: str | None = None
    edges: str | None = None
    vocab: str | None = None
    advice: str | None = None
    corrupt_advice: bool = False
    fractions: tuple = SAMPLE_FRACTIONS
    alphas: tuple = ALPHAS
    seeds: tuple = SEEDS
    epochs: int = 100
    out_dir: str | None = None
    layers: int = 10
    hidden: int = 40
    lr: float = 1e-3
    alpha: float = 1.0
    mode: str = GATED
    train_fraction: float = 0.6
    split_seed: int = 0
    # 0.4 of the 60% training split is 24% of all labeled entities
    epoch_fraction: float = 0.4
    jobs: int = 1

    def __post_init__(self):
        for f in (*self.fractions, self.epoch_fraction):
            if not 0.0 < f <= 1.0:
                raise ValueError(f"sample fraction {f} outside (0, 1]")
        for a in self.alphas:
            if not 0.0 <= a <= 1.0:
                raise ValueError(f"alpha {a} outside [0, 1]")
        if not self.seeds:
            raise ValueError("seed list is empty")
        if self.epochs < 1 or self.jobs < 1:
            raise ValueError("epochs and jobs must be >= 1")


@dataclass(frozen=True)
class Cell:
    method: str
    fraction: float
    alpha: float
    seed: int


@dataclass
class CellResult:
    cell: Cell
    f1: float
    aucpr: float
    epochs_to_best: int
    epochs_to_converge: int
    curve_f1: np.ndarray
    curve_aucpr: np.ndarray
    test_hash: str


@dataclass
class MetricReport:
    name: str
    results: list = field(default_factory=list)

    def cells(self, method=None, fraction=None, alpha=None) -> list:
        out = self.results
        if method is not None:
            out = [r for r in out if r.cell.method == method]
        if fraction is not None:
            out = [r for r in out if math.isclose(r.cell.fraction, fraction)]
        if alpha is not None:
            out = [r for r in out if r.cell.alpha == alpha]
        return out

    def mean_f1(self, method, fraction=None, alpha=None) -> float:
        return float(np.mean([r.f1 for r in self.cells(method, fraction, alpha)]))

    def summary_rows(self) -> list:
        groups = {}
        for r in self.results:
            groups.setdefault((r.cell.method, r.cell.fraction, r.cell.alpha), []).append(r)
        rows = []
        for (method, frac, alpha), rs in sorted(groups.items()):
            f1 = np.array([r.f1 for r in rs])
            ap = np.array([r.aucpr for r in rs])
            rows.append([method, frac, _fmt_alpha(alpha), f1.mean(), f1.std(), _nanmean(ap),
                         _nanstd(ap), np.mean([r.epochs_to_best for r in rs]), len(rs),
                         rs[0].test_hash])
        return rows

    def epoch_rows(self) -> list:
        rows = []
        for method in sorted({r.cell.method for r in self.results}):
            rs = self.cells(method)
            f1 = np.vstack([r.curve_f1 for r in rs])
            ap = np.vstack([r.curve_aucpr for r in rs])
            for e in range(f1.shape[1]):
                rows.append([method, e + 1, f1[:, e].mean(), f1[:, e].std(),
                             _nanmean(ap[:, e]), _nanstd(ap[:, e]), len(rs), rs[0].test_hash])
        return rows

    def cell_rows(self) -> list:
        return [[r.cell.method, r.cell.fraction, _fmt_alpha(r.cell.alpha), r.cell.seed, r.f1,
                 r.aucpr, r.epochs_to_best, r.epochs_to_converge, r.test_hash]
                for r in self.results]

    def write(self, out_dir) -> list:
        """Write the report CSVs; returns the written paths."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        main = out / f"{self.name}.csv"
        if self.name == "epoch_curve":
            _write_csv(main, EPOCH_HEADER, self.epoch_rows())
        else:
            _write_csv(main, SUMMARY_HEADER, self.summary_rows())
        cells = out / f"{self.name}_cells.csv"
        _write_csv(cells, CELL_HEADER, self.cell_rows())
        return [main, cells]


def _fmt_alpha(alpha):
    return "" if alpha is None else alpha


def _nanmean(a):
    a = np.asarray(a, dtype=float)
    return math.nan if np.all(np.isnan(a)) else float(np.nanmean(a))


def _nanstd(a):
    a = np.asarray(a, dtype=float)
    return math.nan if np.all(np.isnan(a)) else float(np.nanstd(a))


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def epochs_to_converge(curve, tol: float = 0.01) -> int:
    """First epoch (1-based) whose value is within ``tol`` of the final value."""
    curve = np.asarray(curve, dtype=float)
    hit = np.flatnonzero(np.abs(curve - curve[-1]) <= tol)
    return int(hit[0]) + 1


def corrupt_rules(rules: RuleSet, label_names) -> RuleSet:
    """Swap each head label for ``(label + 1) mod |L|``, always an incorrect choice."""
    names = list(label_names)
    index = {n: k for k, n in enumerate(names)}

    def flip(h: LabelPref) -> LabelPref:
        if h.label not in index:
            raise ValueError(f"unknown label {h.label!r} in advice")
        return replace(h, label=names[(index[h.label] + 1) % len(names)])

    return RuleSet(tuple(replace(r, heads=tuple(flip(h) for h in r.heads)) for r in rules))


@dataclass
class _Data:
    graph: KnowledgeGraph
    rules: RuleSet
    split: DataSplit
    cln: CLNConfig


def load_data(spec: ExperimentSpec, graph=None, rules=None) -> _Data:
    if graph is None:
        if spec.nodes is None or spec.edges is None:
            raise ValueError("experiment needs nodes and edges files")
        graph = load_graph(spec.nodes, spec.edges, spec.vocab)
    if rules is None:
        rules = load_rules(spec.advice) if spec.advice else RuleSet()
    if spec.corrupt_advice:
        rules = corrupt_rules(rules, graph.label_names)
    data_split = split(graph, spec.train_fraction, spec.split_seed)
    cln = CLNConfig.for_graph(graph, spec.layers, spec.hidden)
    return _Data(graph, rules, data_split, cln)


def run_cell(spec: ExperimentSpec, data: _Data, cell: Cell) -> CellResult:
    ids = subsample(data.split, cell.fraction, cell.seed + SUBSAMPLE_OFFSET)
    rules = data.rules if cell.method == KCLN else RuleSet()
    alpha = cell.alpha if cell.alpha is not None else spec.alpha
    t_cfg = TrainConfig(ids, epochs=spec.epochs, alpha=alpha, lr=spec.lr, seed=cell.seed,
                        mode=spec.mode, test_ids=data.split.test_ids)
    _, hist = train(data.graph, rules, data.cln, t_cfg)
    f1 = hist.column("test_f1")
    ap = hist.column("test_aucpr")
    return CellResult(cell, float(f1[-1]), float(ap[-1]), int(np.argmax(f1)) + 1,
                      epochs_to_converge(f1), f1, ap, data.split.test_hash())


def _run_grid(spec: ExperimentSpec, data: _Data, cells: list) -> list:
    if spec.jobs == 1:
        return [run_cell(spec, data, c) for c in cells]
    with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
        futures = [pool.submit(run_cell, spec, data, c) for c in cells]
        return [f.result() for f in futures]


def _sorted(results):
    return sorted(results, key=lambda r: (r.cell.method, r.cell.fraction,
                                          -1.0 if r.cell.alpha is None else r.cell.alpha,
                                          r.cell.seed))


def run_sample_curve(spec: ExperimentSpec, graph=None, rules=None) -> MetricReport:
    data = load_data(spec, graph, rules)
    cells = [Cell(m, f, None, s) for m in (KCLN, VANILLA) for f in spec.fractions
             for s in spec.seeds]
    return _finish(spec, MetricReport("sample_curve", _sorted(_run_grid(spec, data, cells))))


def run_epoch_curve(spec: ExperimentSpec, graph=None, rules=None) -> MetricReport:
    data = load_data(spec, graph, rules)
    cells = [Cell(m, spec.epoch_fraction, None, s) for m in (KCLN, VANILLA)
             for s in spec.seeds]
    return _finish(spec, MetricReport("epoch_curve", _sorted(_run_grid(spec, data, cells))))


def run_alpha_sweep(spec: ExperimentSpec, graph=None, rules=None) -> MetricReport:
    """Alpha x fraction grid for K-CLN plus the vanilla baseline per fraction."""
    data = load_data(spec, graph, rules)
    if len(data.rules) == 0:
        raise ValueError("alpha sweep needs advice rules")
    cells = [Cell(KCLN, f, a, s) for f in spec.fractions for a in spec.alphas
             for s in spec.seeds]
    cells += [Cell(VANILLA, f, None, s) for f in spec.fractions for s in spec.seeds]
    return _finish(spec, MetricReport("alpha_sweep", _sorted(_run_grid(spec, data, cells))))


def _finish(spec, report):
    if spec.out_dir is not None:
        report.write(spec.out_dir)
    return report


PROTOCOLS = {"samples": run_sample_curve, "epochs": run_epoch_curve, "alpha": run_alpha_sweep}


def plot_data(csv_path, out) -> None:
    """Re-emit a report CSV as gnuplot blocks, one per series.

    Blocks are separated by two blank lines so ``index`` selects a series;
    each starts with a ``# series`` comment naming it.
    """
    with open(csv_path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{csv_path}: empty report")
    if "epoch" in rows[0]:
        key, x = (lambda r: (r["method"],)), "epoch"
    elif "f1_mean" in rows[0]:
        key, x = (lambda r: (r["method"], r["alpha"])), "fraction"
    else:
        raise ValueError(f"{csv_path}: not a summary report")
    series = {}
    for r in rows:
        series.setdefault(key(r), []).append(r)
    blocks = []
    for name, rs in sorted(series.items()):
        label = " ".join(f"{k}={v}" for k, v in zip(("method", "alpha"), name) if v != "")
        lines = [f"# series {label}", f"# {x} f1_mean f1_std aucpr_mean aucpr_std"]
        lines += [f"{r[x]} {r['f1_mean']} {r['f1_std']} {r['aucpr_mean']} {r['aucpr_std']}"
                  for r in sorted(rs, key=lambda r: float(r[x]))]
        blocks.append("\n".join(lines))
    out.write("\n\n\n".join(blocks) + "\n")
