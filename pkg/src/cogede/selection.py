"""Annealed regularization grids, held-out losses and model-order sweeps."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields

import numpy as np

from .core import RegPair
from .data import FusionDataset, as_formulation
from .spca import FitConfig, FitError, FitResult, fit

__all__ = [
    "DECADES",
    "GridSpec",
    "SelectionRow",
    "SelectionTable",
    "heldout_loss",
    "run_chain",
    "anneal_grid",
    "select_model",
    "summarize",
    "sweep_K",
]

DECADES = [0.0, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0]


@dataclass
class GridSpec:
    lambda1_values: list = field(default_factory=lambda: list(DECADES))
    lambda2_values: list = field(default_factory=lambda: list(DECADES))
    K_values: list = field(default_factory=lambda: list(range(2, 21)))
    n_inits: int = 10

    def __post_init__(self):
        for name in ("lambda1_values", "lambda2_values"):
            vals = [float(v) for v in getattr(self, name)]
            if not vals or any(v < 0 or not math.isfinite(v) for v in vals):
                raise ValueError(f"{name} must be nonempty, finite and nonnegative")
            if vals != sorted(vals):
                raise ValueError(f"{name} must be sorted ascending")
            setattr(self, name, vals)
        self.K_values = [int(k) for k in self.K_values]
        if min(self.K_values, default=0) < 1 or self.n_inits < 1:
            raise ValueError("K values and n_inits must be positive")


@dataclass
class SelectionRow:
    formulation: str
    engine: str
    K: int
    lambda1: float
    lambda2: float
    seed: int
    status: str = "ok"
    train_objective: float = math.nan
    train_sse: float = math.nan
    val_sse: float = math.nan
    test_sse: float = math.nan
    iterations: int = 0
    converged: bool = False
    wall_time: float = 0.0

    def sort_key(self):
        return (self.formulation, self.engine, self.K, self.seed, self.lambda2, self.lambda1)


_INT = {"K", "seed", "iterations"}
_FLOAT = {"lambda1", "lambda2", "train_objective", "train_sse", "val_sse", "test_sse", "wall_time"}


def _fmt(value):
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        # repr is the shortest exact round-trip form
        return "" if math.isnan(value) else repr(value)
    return str(value)


class SelectionTable:
    """Append-only collection of grid fits, exported as ``selection.csv``."""

    def __init__(self, rows=()):
        self.rows = list(rows)

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def extend(self, rows):
        self.rows.extend(rows)

    def sorted(self) -> "SelectionTable":
        return SelectionTable(sorted(self.rows, key=SelectionRow.sort_key))

    def where(self, **conds) -> "SelectionTable":
        return SelectionTable(r for r in self.rows
                              if all(getattr(r, k) == v for k, v in conds.items()))

    @staticmethod
    def columns(timing=False):
        names = [f.name for f in fields(SelectionRow)]
        return names if timing else [n for n in names if n != "wall_time"]

    def to_csv(self, path, timing=False):
        cols = self.columns(timing)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in self.rows:
                w.writerow([_fmt(getattr(r, c)) for c in cols])

    @classmethod
    def from_csv(cls, path) -> "SelectionTable":
        rows = []
        with open(path, newline="", encoding="utf-8") as fh:
            for rec in csv.DictReader(fh):
                kw = {}
                for k, v in rec.items():
                    if k in _INT:
                        kw[k] = int(v)
                    elif k in _FLOAT:
                        kw[k] = float(v) if v != "" else math.nan
                    elif k == "converged":
                        kw[k] = v == "1"
                    else:
                        kw[k] = v
                rows.append(SelectionRow(**kw))
        return cls(rows)


def heldout_loss(heldout_blocks, train_blocks, fit_result: FitResult) -> float:
    """Held-out SSE of a fitted model.

    Each held-out block ``X_h`` is compared with the reconstruction
    ``X_tilde_train G S`` built from the matching training block, i.e. sum of
    ``||X_h - X_tilde_train G S||_F^2`` over blocks keyed by (modality, subject).
    """
    train = {(b.modality, b.subject): b for b in train_blocks}
    G = fit_result.generator.G
    total = 0.0
    for h in heldout_blocks:
        key = (h.modality, h.subject)
        if key not in train:
            raise KeyError(f"held-out block {key} has no training counterpart")
        if key not in fit_result.mixing.S:
            raise KeyError(f"held-out block {key} has no fitted mixing matrix")
        R = h.data - (train[key].tilde @ G) @ fit_result.mixing.S[key]
        total += float(np.sum(R * R))
    return total


def _row_from_fit(dataset, res: FitResult, formulation) -> SelectionRow:
    cfg = res.config
    train = dataset.split("train")
    val = dataset.split("validation")
    test = dataset.split("test")
    return SelectionRow(
        formulation=formulation,
        engine=cfg.engine,
        K=cfg.K,
        lambda1=cfg.reg.lambda1,
        lambda2=cfg.reg.lambda2,
        seed=cfg.seed,
        train_objective=res.final_objective_exact,
        train_sse=res.final_sse,
        val_sse=heldout_loss(val, train, res) if val else math.nan,
        test_sse=heldout_loss(test, train, res) if test else math.nan,
        iterations=res.iterations,
        converged=res.converged_flag,
        wall_time=res.wall_time,
    )


def run_chain(dataset: FusionDataset, K, lambda2, lambda1_values, engine="sgd", seed=0,
              init="pca", **fit_options) -> list[SelectionRow]:
    """One warm-started path over ascending ``lambda1`` at fixed ``lambda2``.

    The first fit starts from the configured initialization; each later fit
    starts from the previous solution. After a failed fit the chain resumes
    from the first (smallest ``lambda1``) solution.
    """
    formulation = dataset.formulation
    rows = []
    prev = base = None
    for lam1 in lambda1_values:
        cfg = FitConfig(K=K, reg=RegPair(lam1, lambda2), engine=engine, init=init, seed=seed,
                        **fit_options)
        try:
            res = fit(dataset, cfg, warm_start=None if prev is None else prev.generator)
        except FitError:
            rows.append(SelectionRow(formulation, engine, K, lam1, lambda2, seed, status="failed"))
            prev = base
            continue
        rows.append(_row_from_fit(dataset, res, formulation))
        prev = res
        if base is None:
            base = res
    return rows


def anneal_grid(dataset: FusionDataset, K, grid: GridSpec, engine="sgd", seeds=None,
                init="pca", **fit_options) -> SelectionTable:
    """Fit every (lambda1, lambda2) cell with warm starts along lambda1.

    For each seed and each ``lambda2`` (ascending) a chain over the
    ascending ``lambda1`` values is run by :func:`run_chain`.
    """
    if "validation" not in dataset.splits:
        raise ValueError("annealing needs a validation split")
    seeds = list(range(grid.n_inits)) if seeds is None else list(seeds)
    table = SelectionTable()
    for seed in seeds:
        for lam2 in grid.lambda2_values:
            table.extend(run_chain(dataset, K, lam2, grid.lambda1_values, engine, seed, init,
                                   **fit_options))
    return table


def select_model(table, K):
    """(lambda1, lambda2, seed) of the lowest validation SSE among fits of order K.

    Ties prefer larger lambda1, then larger lambda2, then the lowest seed.
    """
    rows = [r for r in table if r.K == K and r.status == "ok" and not math.isnan(r.val_sse)]
    if not rows:
        raise ValueError(f"no completed fits with K={K}")
    best = min(rows, key=lambda r: (r.val_sse, -r.lambda1, -r.lambda2, r.seed))
    return best.lambda1, best.lambda2, best.seed


@dataclass
class SummaryRow:
    formulation: str
    engine: str
    K: int
    lambda1: float
    lambda2: float
    n: int
    mean_test_sse: float
    sd_test_sse: float


def summarize(table, formulation, engine, K) -> SummaryRow:
    """Mean and sample sd of test SSE across seeds at the validation-selected pair.

    If no fit of this order completed, the row has ``n = 0`` and NaN entries.
    """
    sub = SelectionTable(r for r in table
                         if r.formulation == formulation and r.engine == engine and r.K == K)
    try:
        lam1, lam2, _ = select_model(sub, K)
    except ValueError:
        return SummaryRow(formulation, engine, K, math.nan, math.nan, 0, math.nan, math.nan)
    vals = [r.test_sse for r in sorted(sub, key=SelectionRow.sort_key)
            if r.lambda1 == lam1 and r.lambda2 == lam2 and r.status == "ok"]
    n = len(vals)
    mean = sum(vals) / n
    sd = math.sqrt(sum((v - mean) ** 2 for v in vals) / (n - 1)) if n > 1 else 0.0
    return SummaryRow(formulation, engine, K, lam1, lam2, n, mean, sd)


def write_summary(rows, path):
    cols = [f.name for f in fields(SummaryRow)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(getattr(r, c)) for c in cols])


def read_summary(path) -> list[SummaryRow]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            num = {k: float(rec[k]) if rec[k] != "" else math.nan
                   for k in ("lambda1", "lambda2", "mean_test_sse", "sd_test_sse")}
            out.append(SummaryRow(rec["formulation"], rec["engine"], int(rec["K"]),
                                  num["lambda1"], num["lambda2"], int(rec["n"]),
                                  num["mean_test_sse"], num["sd_test_sse"]))
    return out


def sweep_K(dataset: FusionDataset, grid: GridSpec, engines=("sgd",),
            formulations=("group", "multimodal", "multimodal_multisubject"), init="random",
            seeds=None, **fit_options):
    """Model-order experiment: anneal, select on validation, report test loss per K.

    Returns the full :class:`SelectionTable` (sorted) and one
    :class:`SummaryRow` per (formulation, engine, K).
    """
    if "test" not in dataset.splits:
        raise ValueError("sweep needs a test split")
    table = SelectionTable()
    summary = []
    for formulation in formulations:
        ds = as_formulation(dataset, formulation)
        for engine in engines:
            for K in grid.K_values:
                table.extend(anneal_grid(ds, K, grid, engine, seeds, init, **fit_options))
                summary.append(summarize(table, ds.formulation, engine, K))
    return table.sorted(), summary
