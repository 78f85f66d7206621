"""Command-line entry point: validate, train, evaluate, tune, landscape, compare.

Every command is deterministic given its flags, config file, and seed.  Exit
codes: 0 success, 1 usage or I/O error, 2 validation or constraint failure,
3 numerical abort.  WAVECAST_SEED provides the seed default where a --seed
flag is accepted.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import data_io as io
from . import hyperopt as ho
from . import physics as ph
from .metrics import METRIC_NAMES, evaluate
from .tensor import DomainError, ShapeMismatchError
from .training import (HyperParams, MinMaxScaler, TrainingAborted, build_model,
                       kfold_indices, predict, run_fold, split_70_30)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad flags; we map usage errors to 1."""

    def error(self, message):
        raise UsageError(message)


def default_seed():
    raw = os.environ.get("WAVECAST_SEED", "0")
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"WAVECAST_SEED must be an integer, got {raw!r}") from None


def build_parser():
    parser = _Parser(prog="wavecast",
                     description="Wave-farm power forecasting toolkit.")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("validate", help="check a site CSV against the schema")
    p.add_argument("--data", required=True, help="49-column site CSV")
    p.add_argument("--site", required=True, choices=ph.SITES)
    p.add_argument("--expected-rows", type=int, default=io.EXPECTED_ROWS,
                   help="row count that avoids a warning (default 72000)")

    p = sub.add_parser("train", help="train one model per an experiment config")
    p.add_argument("--config", required=True, help="flat key=value experiment file")
    p.add_argument("--jobs", type=int, default=1,
                   help="worker processes for CV folds (default 1)")

    p = sub.add_parser("evaluate", help="score a saved run on a dataset")
    p.add_argument("--run", required=True, help="run directory from train")
    p.add_argument("--data", required=True)
    p.add_argument("--site", default=None, help="defaults to the run's site")
    p.add_argument("--out", default=None, help="write per-fold metrics CSV here")

    p = sub.add_parser("tune", help="search hyperparameters")
    p.add_argument("--optimizer", required=True, choices=("egs", "nm", "random"))
    p.add_argument("--budget", required=True, type=int)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--objective", choices=("synthetic", "cv"), default="synthetic")
    p.add_argument("--config", default=None,
                   help="experiment config (required for --objective cv)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--cv-folds", type=int, default=3)
    p.add_argument("--cv-epochs", type=int, default=8)
    p.add_argument("--relax-grid", action="store_true",
                   help="let Nelder-Mead walk the encoded grid axes continuously")
    p.add_argument("--decay-orientation", choices=("corrected", "as_printed"),
                   default="corrected",
                   help="EA step-size decay exponent sign convention")

    p = sub.add_parser("landscape", help="scan one buoy over the farm grid")
    p.add_argument("--layout", required=True, help="fixed buoys CSV (x_m,y_m)")
    p.add_argument("--climate", required=True,
                   help="sea states CSV (hs_m,tp_s,beta_rad,occurrence)")
    p.add_argument("--step", required=True, type=float, help="grid step, metres")
    p.add_argument("--out", required=True, help="output grid CSV")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--omega-points", type=int, default=50,
                   help="frequency-grid resolution (default 50)")

    p = sub.add_parser("compare", help="merge run reports into long format")
    p.add_argument("--runs", required=True, nargs="+", help="run directories")
    p.add_argument("--out", required=True, help="long-format CSV destination")
    return parser


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------

def cmd_validate(args):
    expected = args.expected_rows if args.expected_rows > 0 else None
    ds = io.load_csv(args.data, args.site, expected_rows=expected, strict=False)
    report = ds.report
    for msg in report.warnings:
        print(f"warning: {msg}")
    if report.ok():
        print(f"OK: {report.n_rows} rows validated for {args.site}")
        return EXIT_OK
    print(f"{len(report.violations)} violation(s) in {args.data}:")
    print("kind,row,col,message")
    for v in report.violations:
        col = "" if v.col is None else v.col
        print(f"{v.kind},{v.row},{col},{v.message}")
    return EXIT_VALIDATION


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _fold_seed(seed, fold):
    return int(np.random.SeedSequence([seed, fold]).generate_state(1)[0])


def _fold_task(task):
    """Train one fold in a worker process; returns only picklable pieces."""
    (name, hp_dict, x_tr, y_tr, x_va, y_va, seed, epochs) = task
    hp = HyperParams.from_dict(hp_dict)
    report, res, (xs, ys, model) = run_fold(name, hp, x_tr, y_tr, x_va, y_va,
                                            seed=seed, epochs=epochs,
                                            keep_model=True)
    params = {n: t.data.copy() for n, t in model.named_params()}
    return (report, params, (xs.lo, xs.hi), (ys.lo, ys.hi),
            res.train_losses, res.val_losses)


def _rebuild_fold(cfg, outcome, input_dim):
    report, params, (xlo, xhi), (ylo, yhi), tl, vl = outcome
    model = build_model(cfg.model, cfg.resolved_hp(), seed=0, input_dim=input_dim)
    for n, t in model.named_params():
        t.data[...] = params[n]
    return report, (model, MinMaxScaler(lo=xlo, hi=xhi),
                    MinMaxScaler(lo=ylo, hi=yhi), tl, vl)


def _subsample(x, y, n_rows, seed):
    if n_rows >= len(x):
        return x, y
    idx = np.random.default_rng([seed, 0x5AB5]).choice(len(x), n_rows,
                                                       replace=False)
    idx.sort()
    return x[idx], y[idx]


def cmd_train(args):
    cfg = io.ExperimentConfig.from_file(args.config)
    ds = io.load_csv(cfg.data, cfg.site, expected_rows=None)
    x, y = ds.features(), ds.targets()
    if cfg.subsample is not None:
        x, y = _subsample(x, y, cfg.subsample, cfg.seed)
    hp = cfg.resolved_hp()
    if cfg.cv == "holdout_70_30":
        (x_tr, y_tr), (x_va, y_va) = split_70_30(x, y, cfg.seed)
        folds = [(x_tr, y_tr, x_va, y_va)]
    else:
        folds = [(x[tr], y[tr], x[va], y[va])
                 for tr, va in kfold_indices(len(x), 10, cfg.seed)]
    tasks = [(cfg.model, hp.to_dict(), x_tr, y_tr, x_va, y_va,
              _fold_seed(cfg.seed, i), cfg.epochs)
             for i, (x_tr, y_tr, x_va, y_va) in enumerate(folds)]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            outcomes = list(pool.map(_fold_task, tasks))
    else:
        outcomes = [_fold_task(t) for t in tasks]
    reports, artifacts = [], []
    for outcome in outcomes:
        report, artifact = _rebuild_fold(cfg, outcome, x.shape[1])
        reports.append(report)
        artifacts.append(artifact)
    run_dir = io.save_run(cfg.output_dir, cfg, artifacts, reports)
    r2s = [r.r2 for r in reports]
    mean_r2 = float(np.mean([v for v in r2s if v is not None])) if any(
        v is not None for v in r2s) else float("nan")
    print(f"trained {cfg.model} on {cfg.site}: {len(reports)} fold(s), "
          f"mean R2 {mean_r2:.4f}")
    print(f"run artifacts in {run_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def cmd_evaluate(args):
    loaded = io.load_run(args.run)
    site = args.site or loaded.config["site"]
    input_dim = loaded.models[0].input_dim
    ds = io.load_csv(args.data, site, expected_rows=None)
    feats = ds.features()
    if feats.shape[1] != input_dim:
        raise io.SchemaError(f"{args.data}: {feats.shape[1]} feature columns, "
                             f"run expects {input_dim}")
    reports = []
    for fold in range(len(loaded.models)):
        xs, ys = loaded.scalers[fold]
        y_hat = predict(loaded.models[fold], xs.transform(feats))
        y_true = ys.transform(ds.targets().reshape(-1, 1)).reshape(-1)
        reports.append(evaluate(y_true, y_hat))
    if args.out:
        io.write_report_csv(args.out, site, loaded.config["model"], reports)
        print(f"wrote {args.out}")
    header = "fold," + ",".join(METRIC_NAMES)
    print(header)
    for i, rep in enumerate(reports):
        cells = [str(i)] + [("" if getattr(rep, n) is None
                             else f"{getattr(rep, n):.6g}") for n in METRIC_NAMES]
        print(",".join(cells))
    return EXIT_OK


# ---------------------------------------------------------------------------
# tune
# ---------------------------------------------------------------------------

def _kv_value(v):
    return repr(float(v)) if isinstance(v, float) else str(v)


def _tune_objective(args, seed):
    if args.objective == "synthetic":
        space = ho.default_search_space()
        fn, target = ho.synthetic_quadratic(space)
        return space, fn, target
    if not args.config:
        raise UsageError("--objective cv needs --config pointing at an "
                         "experiment file")
    cfg = io.ExperimentConfig.from_file(args.config)
    ds = io.load_csv(cfg.data, cfg.site, expected_rows=None)
    x, y = ds.features(), ds.targets()
    if cfg.subsample is not None:
        x, y = _subsample(x, y, cfg.subsample, cfg.seed)
    space = ho.default_search_space()
    fn = ho.cv_objective(cfg.model, x, y, k=args.cv_folds, epochs=args.cv_epochs,
                         seed=seed)
    return space, fn, None


def _nm_over_space(fn, space, budget, seed):
    """Nelder-Mead in the encoded space; grid axes snap on evaluation."""
    names = sorted(space)
    mid = ho.space_midpoint(space)
    x0 = np.array([space[n].encode(mid[n]) for n in names])
    trace = []
    best = {"score": -math.inf, "params": None}

    def decode(vec):
        return {n: space[n].decode(float(v)) for n, v in zip(names, vec)}

    def objective(vec):
        params = decode(vec)
        score = float(fn(params))
        if math.isnan(score):
            score = -math.inf
        if score > best["score"]:
            best["score"] = score
            best["params"] = dict(params)
        trace.append(ho.TraceRecord(eval_id=len(trace) + 1, stage="nm",
                                    params=dict(params), score=score,
                                    best_so_far=best["score"]))
        # nelder_mead minimises and rejects non-finite values, so a failed
        # evaluation becomes a large finite penalty the simplex can retreat from
        return -score if math.isfinite(score) else 1e30

    res = ho.nelder_mead(objective, x0, a=1.0, eps=1e-10, max_iter=budget)
    return ho.SearchResult(params=best["params"], score=best["score"],
                           trace=trace, evaluations=len(trace),
                           truncated=not res.converged)


def cmd_tune(args):
    seed = args.seed if args.seed is not None else default_seed()
    space, fn, target = _tune_objective(args, seed)
    if args.optimizer == "nm" and not args.relax_grid:
        grid_axes = [n for n, dom in space.items()
                     if isinstance(dom, ho.GridDomain)]
        raise UsageError(
            "Nelder-Mead cannot search discrete grid axes "
            f"({', '.join(sorted(grid_axes))}); pass --relax-grid to walk "
            "their encoded values continuously")
    if args.optimizer == "egs":
        result = ho.egs_optimize(fn, space, args.budget, seed=seed,
                                 decay_orientation=args.decay_orientation)
    elif args.optimizer == "random":
        result = ho.random_search(fn, space, args.budget, seed=seed)
    else:
        result = _nm_over_space(fn, space, args.budget, seed)
    if result.params is None:
        print("numerical abort: no configuration evaluated successfully "
              f"({result.evaluations} attempt(s) all failed)", file=sys.stderr)
        return EXIT_NUMERIC
    os.makedirs(args.out, exist_ok=True)
    names = sorted(space)
    ho.write_trace_csv(os.path.join(args.out, "trace.csv"), result.trace, names)
    pairs = [("optimizer", args.optimizer), ("objective", args.objective),
             ("budget", str(args.budget)), ("seed", str(seed)),
             ("evaluations", str(result.evaluations)),
             ("score", repr(float(result.score)))]
    pairs += [(f"hp.{n}", _kv_value(result.params[n])) for n in names]
    io.write_kv_file(os.path.join(args.out, "best.txt"), pairs)
    if args.config and args.objective == "cv":
        cfg = io.ExperimentConfig.from_file(args.config)
        tuned = io.ExperimentConfig(
            site=cfg.site, model=cfg.model, data=cfg.data,
            output_dir=cfg.output_dir, seed=cfg.seed, epochs=cfg.epochs,
            cv=cfg.cv, subsample=cfg.subsample,
            hp=HyperParams.from_dict(result.params))
        tuned.to_file(os.path.join(args.out, "tuned.cfg"))
    print(f"{args.optimizer}: best score {result.score!r} after "
          f"{result.evaluations} evaluations")
    for n in names:
        print(f"  {n} = {_kv_value(result.params[n])}")
    if target is not None:
        err = max(abs(space[n].encode(result.params[n]) - space[n].encode(target[n]))
                  for n in names)
        print(f"  max encoded distance to optimum: {err:.6g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# landscape
# ---------------------------------------------------------------------------

def cmd_landscape(args):
    fixed = io.load_layout_csv(args.layout)
    climate = io.load_climate_csv(args.climate)
    if args.omega_points < 2:
        raise UsageError("--omega-points must be >= 2")
    grid = np.logspace(math.log10(0.1), math.log10(6.3), args.omega_points)
    scan = ph.landscape_scan(fixed, climate, args.step, omega_grid=grid,
                             jobs=max(1, args.jobs))
    io.write_landscape_csv(args.out, scan)
    n_feasible = int(scan.feasible.sum())
    print(f"scanned {scan.feasible.size} cells ({n_feasible} feasible) "
          f"at step {args.step:g} m")
    print(f"best cell ({scan.best_xy[0]:g}, {scan.best_xy[1]:g}): "
          f"{scan.best_power:.6g} W")
    print(f"wrote {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# compare
# ---------------------------------------------------------------------------

def cmd_compare(args):
    rows = []
    for run_dir in args.runs:
        run_file = os.path.join(run_dir, "run.txt")
        if not os.path.exists(run_file):
            raise io.SchemaError(f"{run_dir}: not a run directory (run.txt missing)")
        kv = io.read_kv_file(run_file)
        version = int(kv.get("schema_version", "-1"))
        if version != io.SCHEMA_VERSION:
            raise io.SchemaError(f"{run_dir}: run schema version {version} != "
                                 f"reader {io.SCHEMA_VERSION}")
        try:
            folds, _ = io.read_report_csv(os.path.join(run_dir, "reports.csv"))
        except io.SchemaError as err:
            raise io.SchemaError(f"{run_dir}: {err}") from None
        for fold_row in folds:
            for metric in METRIC_NAMES:
                rows.append((fold_row["site"], fold_row["model"],
                             fold_row["fold"], metric, fold_row[metric]))
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        fh.write("site,model,fold,metric,value\n")
        for site, model, fold, metric, value in rows:
            fh.write(f"{site},{model},{fold},{metric},{value}\n")
    print(f"wrote {len(rows)} rows ({len(args.runs)} run(s)) to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

_COMMANDS = {
    "validate": cmd_validate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "tune": cmd_tune,
    "landscape": cmd_landscape,
    "compare": cmd_compare,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingAborted, ph.SingularSystemError, ho.NumericalError,
            DomainError, ShapeMismatchError) as err:
        print(f"numerical abort: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (io.SchemaError, io.DatasetError, ph.LayoutError,
            ph.NoFeasibleCellError, ho.BudgetError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


def entrypoint():
    sys.exit(main())
