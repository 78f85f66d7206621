"""Dataset ingestion/validation, run-artifact persistence, experiment configs.

The layout table is a 49-column CSV per site: columns 1-32 are buoy
coordinates X1,Y1,...,X16,Y16 in metres on [0, 566], columns 33-48 per-WEC
absorbed power in watts, column 49 their total.  Loading validates every row
and collects violations into a report instead of stopping at the first one.

Run artifacts are a directory of plain text: flat key=value config, repr'd
f64 parameter/scaler dumps, and CSV traces/reports, so a round trip is
bit-exact and diffs are readable.
"""

from __future__ import annotations

import csv
import math
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from .metrics import CSV_HEADER, METRIC_NAMES, aggregate
from .physics import SITES, FARM_BOUNDS, SeaState, check_climate
from .training import (HyperParams, MODEL_NAMES, MinMaxScaler, build_model,
                       default_hyperparams, tuned_hyperparams)

SCHEMA_VERSION = 1
N_COLUMNS = 49
COORD_COLUMNS = 32
EXPECTED_ROWS = 72000
SUM_REL_TOL = 1e-6
# fraction of bad-sum rows tolerated (with warnings) before load aborts
SUM_VIOLATION_CAP = 0.001

CV_MODES = ("holdout_70_30", "kfold_10")


class SchemaError(ValueError):
    """Structural problem: column count, non-numeric cell, artifact layout."""


class DatasetError(ValueError):
    """Invariant violations severe enough to reject the file."""

    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


class RowCountWarning(UserWarning):
    pass


# ---------------------------------------------------------------------------
# dataset loading
# ---------------------------------------------------------------------------

@dataclass
class Violation:
    row: int          # 0-based data row (header excluded)
    col: int | None   # 0-based column; None for whole-row checks
    kind: str         # "bounds" | "sum"
    message: str


@dataclass
class ValidationReport:
    path: str
    n_rows: int
    violations: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def sum_violations(self):
        return [v for v in self.violations if v.kind == "sum"]

    @property
    def bounds_violations(self):
        return [v for v in self.violations if v.kind == "bounds"]

    def ok(self):
        return not self.violations


@dataclass
class WecDataset:
    """Immutable validated site table; rows are read-only."""

    site: str
    rows: np.ndarray
    report: ValidationReport

    def __post_init__(self):
        if self.site not in SITES:
            raise ValueError(f"unknown site {self.site!r}; choose from {SITES}")
        self.rows.flags.writeable = False

    @property
    def n(self):
        return len(self.rows)

    def features(self):
        """Model inputs: the 32 coordinate columns (powers are unknown at
        prediction time)."""
        return self.rows[:, :COORD_COLUMNS]

    def per_wec_power(self):
        return self.rows[:, COORD_COLUMNS:N_COLUMNS - 1]

    def targets(self):
        return self.rows[:, N_COLUMNS - 1]


def _has_header(first_line):
    for cell in first_line.split(","):
        try:
            float(cell)
        except ValueError:
            return True
    return False


def _parse_rows(path):
    """CSV -> float array, reporting the exact (row, col) of bad cells."""
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise SchemaError(f"{path}: empty file")
    start = 1 if _has_header(lines[0]) else 0
    body = lines[start:]
    if not body:
        raise SchemaError(f"{path}: no data rows")
    out = np.empty((len(body), N_COLUMNS))
    for r, line in enumerate(body):
        cells = next(csv.reader([line]))
        if len(cells) != N_COLUMNS:
            raise SchemaError(f"{path}: row {r} has {len(cells)} columns, "
                              f"expected {N_COLUMNS}")
        for c, cell in enumerate(cells):
            try:
                out[r, c] = float(cell)
            except ValueError:
                raise SchemaError(f"{path}: non-numeric cell at row {r}, "
                                  f"column {c}: {cell!r}") from None
        if not np.all(np.isfinite(out[r])):
            c = int(np.flatnonzero(~np.isfinite(out[r]))[0])
            raise SchemaError(f"{path}: non-finite cell at row {r}, column {c}")
    return out


def validate_rows(rows, path="<memory>", expected_rows=EXPECTED_ROWS):
    """All invariant checks on a parsed table; never mutates it."""
    rows = np.asarray(rows, dtype=np.float64)
    report = ValidationReport(path=str(path), n_rows=len(rows))
    lo, hi = FARM_BOUNDS
    coords = rows[:, :COORD_COLUMNS]
    for r, c in zip(*np.nonzero((coords < lo) | (coords > hi))):
        report.violations.append(Violation(
            row=int(r), col=int(c), kind="bounds",
            message=f"coordinate {coords[r, c]!r} outside [{lo:g}, {hi:g}] "
                    f"at row {r}, column {c}"))
    sums = rows[:, COORD_COLUMNS:N_COLUMNS - 1].sum(axis=1)
    totals = rows[:, N_COLUMNS - 1]
    tol = SUM_REL_TOL * np.maximum(np.abs(totals), np.abs(sums))
    for r in np.nonzero(np.abs(totals - sums) > tol)[0]:
        report.violations.append(Violation(
            row=int(r), col=N_COLUMNS - 1, kind="sum",
            message=f"total {totals[r]!r} != sum of per-WEC powers {sums[r]!r} "
                    f"(rel tol {SUM_REL_TOL:g}) at row {r}"))
    if expected_rows is not None and len(rows) != expected_rows:
        msg = f"{path}: {len(rows)} rows (expected {expected_rows})"
        report.warnings.append(msg)
    return report


def load_csv(path, site, expected_rows=EXPECTED_ROWS, strict=True):
    """Read and validate one site file -> WecDataset (report attached).

    Schema problems (column count, non-numeric cells) raise SchemaError
    immediately.  Invariant violations are all collected; under ``strict``
    the load is rejected when bad-sum rows exceed the 0.1% allowance
    (real files keep a small rounding allowance; a fixture with a broken
    row trips it).  A row count other than ``expected_rows`` only warns.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"dataset file not found: {path}")
    rows = _parse_rows(path)
    report = validate_rows(rows, path=path, expected_rows=expected_rows)
    for msg in report.warnings:
        warnings.warn(msg, RowCountWarning, stacklevel=2)
    bad = len(report.sum_violations)
    if strict and bad and bad > SUM_VIOLATION_CAP * len(rows):
        first = report.sum_violations[0]
        raise DatasetError(
            f"{path}: {bad} rows break the total-power sum invariant "
            f"(first: {first.message})", report)
    return WecDataset(site=site, rows=rows, report=report)


def write_dataset_csv(path, rows, header=True):
    """Persist a 49-column table with full f64 round-trip fidelity."""
    from .physics import dataset_columns
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[1] != N_COLUMNS:
        raise ValueError(f"expected [n, {N_COLUMNS}] table, got {rows.shape}")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header:
            fh.write(",".join(dataset_columns()) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


# ---------------------------------------------------------------------------
# climate / layout side tables
# ---------------------------------------------------------------------------

def load_climate_csv(path):
    """Sea-state table: hs_m, tp_s, beta_rad, occurrence (header optional)."""
    states = []
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise SchemaError(f"{path}: empty climate file")
    start = 1 if _has_header(lines[0]) else 0
    for r, line in enumerate(lines[start:]):
        cells = next(csv.reader([line]))
        if len(cells) != 4:
            raise SchemaError(f"{path}: climate row {r} has {len(cells)} "
                              f"columns, expected 4 (hs_m,tp_s,beta_rad,occurrence)")
        try:
            hs, tp, beta, occ = (float(c) for c in cells)
        except ValueError:
            raise SchemaError(f"{path}: non-numeric climate cell at row {r}") from None
        states.append(SeaState(hs, tp, beta, occ))
    return tuple(check_climate(states))


def write_climate_csv(path, climate):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("hs_m,tp_s,beta_rad,occurrence\n")
        for s in climate:
            fh.write(f"{s.hs!r},{s.tp!r},{s.beta!r},{s.occurrence!r}\n")


def load_layout_csv(path):
    """Buoy positions: x_m, y_m per row (header optional) -> [N, 2]."""
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise SchemaError(f"{path}: empty layout file")
    start = 1 if _has_header(lines[0]) else 0
    coords = []
    for r, line in enumerate(lines[start:]):
        cells = next(csv.reader([line]))
        if len(cells) != 2:
            raise SchemaError(f"{path}: layout row {r} has {len(cells)} "
                              f"columns, expected 2 (x_m,y_m)")
        try:
            coords.append((float(cells[0]), float(cells[1])))
        except ValueError:
            raise SchemaError(f"{path}: non-numeric layout cell at row {r}") from None
    return np.array(coords, dtype=np.float64)


def write_landscape_csv(path, landscape):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("x_m,y_m,power_w,feasible\n")
        for x, y, p, feas in landscape.rows():
            p_txt = repr(p) if math.isfinite(p) else "nan"
            fh.write(f"{x!r},{y!r},{p_txt},{int(feas)}\n")


# ---------------------------------------------------------------------------
# flat key=value files
# ---------------------------------------------------------------------------

def parse_kv_text(text, path="<config>"):
    out = {}
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SchemaError(f"{path}: line {i} is not 'key = value': {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise SchemaError(f"{path}: line {i} has an empty key")
        if key in out:
            raise SchemaError(f"{path}: duplicate key {key!r} at line {i}")
        out[key] = value
    return out


def read_kv_file(path):
    with open(path, encoding="utf-8") as fh:
        return parse_kv_text(fh.read(), path=path)


def write_kv_file(path, pairs):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for key, value in pairs:
            fh.write(f"{key} = {value}\n")


def _hp_to_kv(hp):
    pairs = []
    for key, value in hp.to_dict().items():
        pairs.append((f"hp.{key}", repr(value) if isinstance(value, float) else str(value)))
    return pairs


def _hp_from_kv(kv, base):
    """Override ``base`` hyperparameters with any hp.* keys present."""
    d = base.to_dict()
    for key, raw in kv.items():
        if not key.startswith("hp."):
            continue
        name = key[3:]
        if name not in d:
            raise SchemaError(f"unknown hyperparameter key {key!r}")
        d[name] = type(d[name])(float(raw)) if not isinstance(d[name], float) else float(raw)
    return HyperParams.from_dict(d)


@dataclass
class ExperimentConfig:
    """One training experiment: data, model, protocol, seed, destination."""

    site: str
    model: str
    data: str
    output_dir: str
    seed: int = 0
    epochs: int = 20
    cv: str = "kfold_10"
    subsample: int | None = None
    hp: HyperParams | None = None   # None -> registry default for the model

    def __post_init__(self):
        if self.site not in SITES:
            raise ValueError(f"unknown site {self.site!r}; choose from {SITES}")
        if self.model not in MODEL_NAMES:
            raise ValueError(f"unknown model {self.model!r}; choose from {MODEL_NAMES}")
        if self.cv not in CV_MODES:
            raise ValueError(f"cv must be one of {CV_MODES}, got {self.cv!r}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.subsample is not None and self.subsample < 10:
            raise ValueError(f"subsample must be >= 10 rows, got {self.subsample}")

    def resolved_hp(self):
        if self.hp is not None:
            return self.hp
        return tuned_hyperparams() if self.model == "cnn-bilstm-sa-h" else default_hyperparams()

    @classmethod
    def from_file(cls, path, require_data=True):
        kv = read_kv_file(path)
        required = ("site", "model", "data", "output_dir")
        missing = [k for k in required if k not in kv]
        if missing:
            raise SchemaError(f"{path}: missing config keys: {', '.join(missing)}")
        base = (tuned_hyperparams() if kv["model"] == "cnn-bilstm-sa-h"
                else default_hyperparams())
        hp = _hp_from_kv(kv, base) if any(k.startswith("hp.") for k in kv) else None
        known = {"site", "model", "data", "output_dir", "seed", "epochs", "cv",
                 "subsample"}
        unknown = [k for k in kv if k not in known and not k.startswith("hp.")]
        if unknown:
            raise SchemaError(f"{path}: unknown config keys: {', '.join(sorted(unknown))}")
        cfg = cls(site=kv["site"], model=kv["model"], data=kv["data"],
                  output_dir=kv["output_dir"], seed=int(kv.get("seed", "0")),
                  epochs=int(kv.get("epochs", "20")), cv=kv.get("cv", "kfold_10"),
                  subsample=int(kv["subsample"]) if "subsample" in kv else None,
                  hp=hp)
        if require_data and not os.path.exists(cfg.data):
            raise FileNotFoundError(f"{path}: data file not found: {cfg.data}")
        return cfg

    def to_pairs(self):
        pairs = [("site", self.site), ("model", self.model), ("data", self.data),
                 ("output_dir", self.output_dir), ("seed", str(self.seed)),
                 ("epochs", str(self.epochs)), ("cv", self.cv)]
        if self.subsample is not None:
            pairs.append(("subsample", str(self.subsample)))
        if self.hp is not None:
            pairs.extend(_hp_to_kv(self.hp))
        return pairs

    def to_file(self, path):
        write_kv_file(path, self.to_pairs())


# ---------------------------------------------------------------------------
# run persistence
# ---------------------------------------------------------------------------

def _write_array_block(fh, name, arr):
    arr = np.asarray(arr, dtype=np.float64)
    dims = " ".join(str(d) for d in arr.shape)
    fh.write(f"tensor {name} {arr.ndim} {dims}\n")
    for v in arr.reshape(-1):
        fh.write(repr(float(v)) + "\n")


def _read_array_blocks(path):
    out = {}
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    i = 0
    header = {}
    while i < len(lines) and not lines[i].startswith("tensor "):
        key, _, value = lines[i].partition(" ")
        header[key] = value.strip()
        i += 1
    while i < len(lines):
        parts = lines[i].split()
        if parts[0] != "tensor":
            raise SchemaError(f"{path}: expected tensor block at line {i + 1}")
        name, ndim = parts[1], int(parts[2])
        shape = tuple(int(d) for d in parts[3:3 + ndim])
        count = int(np.prod(shape)) if shape else 1
        values = [float(v) for v in lines[i + 1:i + 1 + count]]
        if len(values) != count:
            raise SchemaError(f"{path}: tensor {name} truncated")
        out[name] = np.array(values, dtype=np.float64).reshape(shape)
        i += 1 + count
    return header, out


def save_params(path, model):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"schema_version {SCHEMA_VERSION}\n")
        fh.write(f"model {model.name}\n")
        fh.write(f"input_dim {model.input_dim}\n")
        for name, tensor in model.named_params():
            _write_array_block(fh, name, tensor.data)


def load_params_into(path, model):
    header, blocks = _read_array_blocks(path)
    if int(header.get("schema_version", "-1")) != SCHEMA_VERSION:
        raise SchemaError(f"{path}: artifact schema version "
                          f"{header.get('schema_version')!r} != reader {SCHEMA_VERSION}")
    if int(header["input_dim"]) != model.input_dim:
        raise SchemaError(f"{path}: saved input_dim {header['input_dim']} != "
                          f"model input_dim {model.input_dim}")
    if header["model"] != model.name:
        raise SchemaError(f"{path}: saved model {header['model']!r} != {model.name!r}")
    named = dict(model.named_params())
    if set(named) != set(blocks):
        missing = sorted(set(named) ^ set(blocks))
        raise SchemaError(f"{path}: parameter names do not match the "
                          f"architecture (mismatch: {missing[:4]})")
    for name, tensor in named.items():
        if blocks[name].shape != tensor.data.shape:
            raise SchemaError(f"{path}: {name} has shape {blocks[name].shape}, "
                              f"expected {tensor.data.shape}")
        tensor.data[...] = blocks[name]
    return model


def save_scalers(path, xs, ys):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"schema_version {SCHEMA_VERSION}\n")
        _write_array_block(fh, "x.lo", xs.lo)
        _write_array_block(fh, "x.hi", xs.hi)
        _write_array_block(fh, "y.lo", ys.lo)
        _write_array_block(fh, "y.hi", ys.hi)


def load_scalers(path):
    header, blocks = _read_array_blocks(path)
    if int(header.get("schema_version", "-1")) != SCHEMA_VERSION:
        raise SchemaError(f"{path}: artifact schema version "
                          f"{header.get('schema_version')!r} != reader {SCHEMA_VERSION}")
    xs = MinMaxScaler(lo=blocks["x.lo"], hi=blocks["x.hi"])
    ys = MinMaxScaler(lo=blocks["y.lo"], hi=blocks["y.hi"])
    return xs, ys


def write_loss_csv(path, train_losses, val_losses):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,val_loss\n")
        for i, (t, v) in enumerate(zip(train_losses, val_losses), start=1):
            fh.write(f"{i},{float(t)!r},{float(v)!r}\n")


def read_loss_csv(path):
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return ([float(r["train_loss"]) for r in rows],
            [float(r["val_loss"]) for r in rows])


def _fmt_metric(v):
    if v is None:
        return ""
    return repr(float(v))


def write_report_csv(path, site, model, reports):
    """Fold rows then Mean/Min/Max/STD aggregate rows, table layout."""
    stats = aggregate(reports)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(CSV_HEADER) + "\n")
        for i, rep in enumerate(reports):
            cells = [site, model, str(i)]
            cells += [_fmt_metric(getattr(rep, name)) for name in METRIC_NAMES]
            fh.write(",".join(cells) + "\n")
        for label, pick in (("Mean", "mean"), ("Min", "min"),
                            ("Max", "max"), ("STD", "std")):
            cells = [site, model, label]
            cells += [_fmt_metric(getattr(stats[name], pick)) for name in METRIC_NAMES]
            fh.write(",".join(cells) + "\n")


AGGREGATE_LABELS = ("Mean", "Min", "Max", "STD")


def read_report_csv(path):
    """-> (fold_rows, aggregate_rows); each row a dict keyed by CSV_HEADER."""
    with open(path, encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != CSV_HEADER:
            raise SchemaError(f"{path}: report header {reader.fieldnames} != "
                              f"{list(CSV_HEADER)}")
        rows = list(reader)
    folds = [r for r in rows if r["fold"] not in AGGREGATE_LABELS]
    aggs = [r for r in rows if r["fold"] in AGGREGATE_LABELS]
    return folds, aggs


@dataclass
class LoadedRun:
    config: dict
    scalers: tuple          # (x scaler, y scaler) per fold
    models: list            # rebuilt Model per fold
    losses: list            # (train, val) per fold

    def predict(self, features, fold=0):
        from .training import predict
        xs, ys = self.scalers[fold]
        scaled = predict(self.models[fold], xs.transform(features))
        return ys.inverse(scaled.reshape(-1, 1)).reshape(-1)


def save_run(run_dir, config, fold_artifacts, reports):
    """Persist one training run.

    fold_artifacts: list of (model, xs, ys, train_losses, val_losses) per fold.
    """
    os.makedirs(run_dir, exist_ok=True)
    pairs = [("schema_version", str(SCHEMA_VERSION)),
             ("n_folds", str(len(fold_artifacts)))] + config.to_pairs()
    write_kv_file(os.path.join(run_dir, "run.txt"), pairs)
    for i, (model, xs, ys, tl, vl) in enumerate(fold_artifacts):
        save_params(os.path.join(run_dir, f"params_fold{i:02d}.txt"), model)
        save_scalers(os.path.join(run_dir, f"scalers_fold{i:02d}.txt"), xs, ys)
        write_loss_csv(os.path.join(run_dir, f"loss_fold{i:02d}.csv"), tl, vl)
    write_report_csv(os.path.join(run_dir, "reports.csv"), config.site,
                     config.model, reports)
    return run_dir


def load_run(run_dir, expect_input_dim=None):
    run_file = os.path.join(run_dir, "run.txt")
    if not os.path.exists(run_file):
        raise SchemaError(f"{run_dir}: not a run directory (run.txt missing)")
    kv = read_kv_file(run_file)
    if int(kv.get("schema_version", "-1")) != SCHEMA_VERSION:
        raise SchemaError(f"{run_dir}: run schema version "
                          f"{kv.get('schema_version')!r} != reader {SCHEMA_VERSION}")
    cfg = ExperimentConfig(
        site=kv["site"], model=kv["model"], data=kv["data"],
        output_dir=kv["output_dir"], seed=int(kv["seed"]),
        epochs=int(kv["epochs"]), cv=kv["cv"],
        subsample=int(kv["subsample"]) if "subsample" in kv else None,
        hp=_hp_from_kv(kv, (tuned_hyperparams() if kv["model"] == "cnn-bilstm-sa-h"
                            else default_hyperparams()))
        if any(k.startswith("hp.") for k in kv) else None)
    n_folds = int(kv["n_folds"])
    models, scalers, losses = [], [], []
    for i in range(n_folds):
        params_path = os.path.join(run_dir, f"params_fold{i:02d}.txt")
        header, _ = _read_array_blocks(params_path)
        input_dim = int(header["input_dim"])
        if expect_input_dim is not None and input_dim != expect_input_dim:
            raise SchemaError(f"{params_path}: saved input_dim {input_dim} != "
                              f"expected {expect_input_dim}")
        model = build_model(cfg.model, cfg.resolved_hp(), seed=0,
                            input_dim=input_dim)
        load_params_into(params_path, model)
        models.append(model)
        scalers.append(load_scalers(os.path.join(run_dir, f"scalers_fold{i:02d}.txt")))
        losses.append(read_loss_csv(os.path.join(run_dir, f"loss_fold{i:02d}.csv")))
    return LoadedRun(config=kv, scalers=scalers, models=models, losses=losses)
