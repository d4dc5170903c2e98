"""Command-line interface: ``cogede {synth,fit,cv,sweep}``.

Every command prints one JSON object per line on stdout with the fields
``command``, ``status``, ``metrics`` and ``paths``. Exit codes: 0 success,
1 runtime failure, 2 usage error. Log verbosity comes from ``COGEDE_LOG``
(error, info, debug).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from functools import lru_cache
from pathlib import Path

import numpy as np

from .aa import fit_aa_sgd
from .core import RegPair
from .data import DatasetError, SynthConfig, as_formulation, load_dataset, save_dataset, synth_dataset
from .selection import (
    DECADES,
    GridSpec,
    SelectionTable,
    run_chain,
    select_model,
    summarize,
    write_summary,
)
from .spca import FitConfig, FitError, fit

log = logging.getLogger("cogede")

METHODS = ("spca-qp", "spca-sgd", "aa")


class UsageError(Exception):
    pass


def emit(command, status="ok", metrics=None, paths=None):
    line = {"command": command, "status": status, "metrics": metrics or {}, "paths": paths or {}}
    print(json.dumps(line, sort_keys=True), flush=True)


# ---------------------------------------------------------------------------
# argument parsing


def int_list(text):
    """``"2..5"`` -> [2, 3, 4, 5]; ``"2,4"`` -> [2, 4]."""
    out = []
    try:
        for part in str(text).split(","):
            if ".." in part:
                lo, hi = part.split("..")
                out.extend(range(int(lo), int(hi) + 1))
            else:
                out.append(int(part))
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer list: {text!r}") from None
    return out


def float_list(text):
    try:
        return sorted(float(v) for v in str(text).split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number list: {text!r}") from None


def str_list(text):
    return [v for v in str(text).split(",") if v]


def _add_fit_options(p):
    p.add_argument("--init", choices=("pca", "random"), default="pca")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=0.01, dest="learning_rate")
    p.add_argument("--max-iters", type=int, default=20_000)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--timings", action="store_true",
                   help="also write wall-clock times to the output files")


def _add_grid_options(p):
    p.add_argument("--manifest", required=True)
    p.add_argument("--engine", choices=("sgd", "qp"), default="sgd")
    p.add_argument("--l1-grid", type=float_list, default=list(DECADES))
    p.add_argument("--l2-grid", type=float_list, default=list(DECADES))
    p.add_argument("--seeds", type=int, default=1, help="number of initializations per cell")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--resume", action="store_true")
    p.add_argument("-o", "--out", required=True)
    _add_fit_options(p)


def build_parser():
    parser = argparse.ArgumentParser(prog="cogede", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON file with default values for the flags")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic multimodal ERP dataset")
    p.add_argument("--subjects", type=int, default=4)
    p.add_argument("--modalities", type=int, default=2)
    p.add_argument("--channels", type=int_list, default=[8, 12])
    p.add_argument("--timepoints", type=int, default=60)
    p.add_argument("--conditions", type=int, default=3)
    p.add_argument("--k-true", type=int, default=3)
    p.add_argument("--snr", type=float, default=4.0)
    p.add_argument("--heterogeneity", type=float, default=0.0)
    p.add_argument("--prestim", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", required=True)

    p = sub.add_parser("fit", help="fit one model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--method", choices=METHODS, default="spca-sgd")
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--l1", type=float, default=0.0)
    p.add_argument("--l2", type=float, default=0.0)
    p.add_argument("--formulation", choices=("group", "multimodal", "mmms"), default="group")
    p.add_argument("--restarts", type=int, default=10, help="random restarts for aa")
    p.add_argument("-o", "--out", required=True)
    _add_fit_options(p)

    p = sub.add_parser("cv", help="annealed regularization grid with validation selection")
    p.add_argument("--K", type=int_list, default=[2])
    p.add_argument("--formulation", choices=("group", "multimodal", "mmms"), default="group")
    _add_grid_options(p)

    p = sub.add_parser("sweep", help="model-order sweep with test-loss summary")
    p.add_argument("--K", type=int_list, default=list(range(2, 21)))
    p.add_argument("--formulations", type=str_list, default=["group", "multimodal", "mmms"])
    p.add_argument("--engines", type=str_list, default=None)
    _add_grid_options(p)
    p.set_defaults(init="random", seeds=10)
    return parser, sub


def parse_args(argv):
    parser, sub = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        try:
            cfg = json.loads(Path(known.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"cannot read config {known.config}: {exc}")
        if not isinstance(cfg, dict):
            parser.error("config file must hold a JSON object")
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        for sp in sub.choices.values():
            defaults = {}
            for action in sp._actions:
                if action.dest not in cfg:
                    continue
                value = cfg[action.dest]
                if isinstance(value, list):
                    value = ",".join(str(v) for v in value)
                if action.type is not None:
                    try:
                        value = action.type(value if action.type in (int, float) else str(value))
                    except (ValueError, argparse.ArgumentTypeError) as exc:
                        parser.error(f"config field {action.dest!r}: {exc}")
                defaults[action.dest] = value
                action.required = False
            sp.set_defaults(**defaults)
    return parser.parse_args(argv)


# ---------------------------------------------------------------------------
# commands


def _fit_config(args, K, l1, l2, engine, seed=None):
    return FitConfig(K=K, reg=RegPair(l1, l2), engine=engine, init=args.init,
                     seed=args.seed if seed is None else seed,
                     learning_rate=args.learning_rate, max_iters=args.max_iters, tol=args.tol)


def cmd_synth(args):
    try:
        cfg = SynthConfig(
            n_subjects=args.subjects, n_modalities=args.modalities,
            channels_per_modality=args.channels, n_timepoints=args.timepoints,
            n_conditions=args.conditions, k_true=args.k_true, snr=args.snr,
            heterogeneity=args.heterogeneity, seed=args.seed, prestim_len=args.prestim,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    ds = synth_dataset(cfg)
    path = save_dataset(ds, args.out)
    emit("synth", metrics={"n_blocks": len(ds.blocks), "P": ds.P}, paths={"manifest": str(path)})
    return 0


def cmd_fit(args):
    ds = as_formulation(load_dataset(args.manifest), args.formulation)
    if args.method == "aa":
        best = None
        for r in range(args.restarts):
            res = fit_aa_sgd(ds, _fit_config(args, args.K, 0.0, 0.0, "sgd", args.seed + r))
            log.info("aa restart %d: sse %.6g", r, res.final_sse)
            if best is None or res.final_sse < best.final_sse:
                best = res
        res = best
    else:
        engine = "qp" if args.method == "spca-qp" else "sgd"
        res = fit(ds, _fit_config(args, args.K, args.l1, args.l2, engine))
    out = res.save(args.out, timing=args.timings)
    metrics = res.summary(timing=True)
    emit("fit", metrics=metrics, paths={"result": str(out)})
    return 0


@lru_cache(maxsize=8)
def _dataset(manifest, formulation):
    return as_formulation(load_dataset(manifest), formulation)


def _cell_name(formulation, engine, K, seed, lam2):
    return f"{formulation}__{engine}__K{K}__seed{seed}__l2_{lam2!r}.csv"


def _run_cell(task):
    manifest, formulation, engine, K, seed, lam2, l1_grid, init, options, path, timing = task
    ds = _dataset(manifest, formulation)
    rows = run_chain(ds, K, lam2, l1_grid, engine, seed, init, **options)
    tmp = Path(str(path) + ".tmp")
    SelectionTable(rows).to_csv(tmp, timing=timing)
    os.replace(tmp, path)
    return str(path)


def _run_grid(args, formulations, engines):
    out = Path(args.out)
    cells_dir = out / "cells"
    cells_dir.mkdir(parents=True, exist_ok=True)
    options = {"learning_rate": args.learning_rate, "max_iters": args.max_iters, "tol": args.tol}
    tasks = []
    for formulation in formulations:
        _dataset(args.manifest, formulation)  # fail early on bad formulations
        for engine in engines:
            for K in args.K:
                for seed in range(args.seed, args.seed + args.seeds):
                    for lam2 in args.l2_grid:
                        path = cells_dir / _cell_name(formulation, engine, K, seed, lam2)
                        tasks.append((args.manifest, formulation, engine, K, seed, lam2,
                                      args.l1_grid, args.init, options, path, args.timings))
    todo = [t for t in tasks if not (args.resume and t[9].is_file())]
    log.info("%d grid cells, %d to run", len(tasks), len(todo))
    if args.jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            list(pool.map(_run_cell, todo))
    else:
        for t in todo:
            _run_cell(t)
    table = SelectionTable()
    for t in tasks:
        table.extend(SelectionTable.from_csv(t[9]))
    table = table.sorted()
    table.to_csv(out / "selection.csv", timing=args.timings)
    return table


def _full_formulation(name):
    return {"mmms": "multimodal_multisubject"}.get(name, name)


def cmd_cv(args):
    formulation = _full_formulation(args.formulation)
    table = _run_grid(args, [formulation], [args.engine])
    path = str(Path(args.out) / "selection.csv")
    for K in args.K:
        lam1, lam2, seed = select_model(table.where(K=K), K)
        row = min((r for r in table if r.K == K and r.lambda1 == lam1 and r.lambda2 == lam2
                   and r.seed == seed), key=lambda r: r.val_sse)
        emit("cv", metrics={"K": K, "lambda1": lam1, "lambda2": lam2, "seed": seed,
                            "val_sse": row.val_sse}, paths={"selection": path})
    return 0


def cmd_sweep(args):
    formulations = [_full_formulation(f) for f in args.formulations]
    for f in formulations:
        if f not in ("group", "multimodal", "multimodal_multisubject"):
            raise UsageError(f"unknown formulation {f!r}")
    engines = args.engines or [args.engine]
    for e in engines:
        if e not in ("sgd", "qp"):
            raise UsageError(f"unknown engine {e!r}")
    table = _run_grid(args, formulations, engines)
    summary = [summarize(table, f, e, K) for f in formulations for e in engines for K in args.K]
    out = Path(args.out)
    write_summary(summary, out / "summary.csv")
    emit("sweep", metrics={"rows": len(table), "summary_rows": len(summary)},
         paths={"selection": str(out / "selection.csv"), "summary": str(out / "summary.csv")})
    return 0


COMMANDS = {"synth": cmd_synth, "fit": cmd_fit, "cv": cmd_cv, "sweep": cmd_sweep}


def main(argv=None):
    level = os.environ.get("COGEDE_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"cogede {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (DatasetError, FitError, OSError, ValueError, KeyError, np.linalg.LinAlgError) as exc:
        log.error("%s failed: %s", args.command, exc)
        emit(args.command, status="error", metrics={"error": str(exc)})
        return 1


if __name__ == "__main__":
    sys.exit(main())
