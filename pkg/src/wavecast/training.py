"""Model construction and training.

The twelve registry architectures all map a 32-wide feature row (sixteen
(x, y) buoy positions) to one power value.  Sequence models view the row as
16 timesteps of 2 channels; the four-layer conv stack shortens that to 8
steps (width-3 kernels, valid convolution, stride 1).

Hyperparameters are exactly twelve scalars (four conv filter counts, two
recurrent widths, two dropout rates, batch size, learning rate, attention
width, L2 strength).  Training minimises

    LOSS = (1/2N) sum (y - yhat)^2  +  l2 * sum ||W||^2

with Adam (beta1 0.9, beta2 0.999, eps 1e-8); the L2 term covers weight
matrices/kernels only, never biases.  Early stopping watches validation loss
with patience 10 and restores the best snapshot.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import (
    AttentionLayer,
    BiLstmLayer,
    Conv1dLayer,
    DenseLayer,
    DropoutLayer,
    ForwardContext,
    GruLayer,
    LstmLayer,
)
from .metrics import evaluate
from .tensor import Tensor


class TrainingAborted(RuntimeError):
    """Raised when the loss goes non-finite; carries epoch and batch index."""

    def __init__(self, epoch, batch):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


# ---------------------------------------------------------------------------
# hyperparameters
# ---------------------------------------------------------------------------

PARAM_ORDER = ("cnf1", "cnf2", "cnf3", "cnf4", "nhu1", "nhu2",
               "pdo1", "pdo2", "batch_size", "learning_rate", "attention_dim", "l2_reg")


@dataclass(frozen=True)
class HyperParams:
    """The twelve tunable scalars shared by every registry architecture."""

    cnf: tuple[int, int, int, int] = (16, 16, 8, 8)   # conv filters, layers 1-4
    nhu: tuple[int, int] = (8, 8)                     # recurrent widths, layers 1-2
    pdo: tuple[float, float] = (0.05, 0.05)           # dropout rates
    batch_size: int = 128
    learning_rate: float = 1e-3
    attention_dim: int = 8
    l2_reg: float = 1e-5

    def __post_init__(self):
        if len(self.cnf) != 4 or any(int(c) != c or c < 1 for c in self.cnf):
            raise ValueError(f"cnf must be 4 ints >= 1, got {self.cnf}")
        if len(self.nhu) != 2 or any(int(u) != u or u < 1 for u in self.nhu):
            raise ValueError(f"nhu must be 2 ints >= 1, got {self.nhu}")
        if len(self.pdo) != 2 or any(not 0.0 <= p < 1.0 for p in self.pdo):
            raise ValueError(f"pdo rates must be in [0, 1), got {self.pdo}")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise ValueError(f"batch_size must be an int >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if int(self.attention_dim) != self.attention_dim or self.attention_dim < 1:
            raise ValueError(f"attention_dim must be an int >= 1, got {self.attention_dim}")
        if self.l2_reg < 0:
            raise ValueError(f"l2_reg must be >= 0, got {self.l2_reg}")
        object.__setattr__(self, "cnf", tuple(int(c) for c in self.cnf))
        object.__setattr__(self, "nhu", tuple(int(u) for u in self.nhu))
        object.__setattr__(self, "pdo", tuple(float(p) for p in self.pdo))
        object.__setattr__(self, "batch_size", int(self.batch_size))
        object.__setattr__(self, "attention_dim", int(self.attention_dim))

    def to_dict(self):
        return {"cnf1": self.cnf[0], "cnf2": self.cnf[1], "cnf3": self.cnf[2],
                "cnf4": self.cnf[3], "nhu1": self.nhu[0], "nhu2": self.nhu[1],
                "pdo1": self.pdo[0], "pdo2": self.pdo[1], "batch_size": self.batch_size,
                "learning_rate": self.learning_rate, "attention_dim": self.attention_dim,
                "l2_reg": self.l2_reg}

    @classmethod
    def from_dict(cls, d):
        extra = set(d) - set(PARAM_ORDER)
        if extra:
            raise ValueError(f"unknown hyperparameter keys: {sorted(extra)}")
        missing = set(PARAM_ORDER) - set(d)
        if missing:
            raise ValueError(f"missing hyperparameter keys: {sorted(missing)}")
        return cls(cnf=(int(d["cnf1"]), int(d["cnf2"]), int(d["cnf3"]), int(d["cnf4"])),
                   nhu=(int(d["nhu1"]), int(d["nhu2"])),
                   pdo=(float(d["pdo1"]), float(d["pdo2"])),
                   batch_size=int(d["batch_size"]),
                   learning_rate=float(d["learning_rate"]),
                   attention_dim=int(d["attention_dim"]),
                   l2_reg=float(d["l2_reg"]))


def default_hyperparams():
    """Desk-scale defaults used when no tuning has been run."""
    return HyperParams()


def tuned_hyperparams():
    """The shipped configuration found with the evolutionary grid search
    optimizer on the bundled benchmark:

        python3 tools/find_tuned_config.py --budget 60 --seed 0

    (60 evaluations, 3-fold CV objective at 8 epochs on the 5,000-row
    Sydney corpus; best objective 0.8581.)"""
    return HyperParams(cnf=(8, 8, 8, 8), nhu=(8, 8),
                       pdo=(0.19135910058460912, 0.15),
                       batch_size=32, learning_rate=0.01, attention_dim=4,
                       l2_reg=1.8548446564356585e-05)


# ---------------------------------------------------------------------------
# scaling and splits
# ---------------------------------------------------------------------------

@dataclass
class MinMaxScaler:
    """Per-column min-max to [0, 1], fitted on training data only.

    Constant columns map to 0 (and back to their constant on inverse); fitting
    one emits a warning.
    """

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, x):
        x = np.asarray(x, dtype=np.float64)
        flat = x.reshape(len(x), -1)
        lo, hi = flat.min(axis=0), flat.max(axis=0)
        const = np.nonzero(hi == lo)[0]
        if const.size:
            warnings.warn(f"min-max scaler: {const.size} constant column(s) "
                          f"(indices {const.tolist()[:8]}...) map to 0", stacklevel=2)
        return cls(lo=lo, hi=hi)

    def _span(self):
        span = self.hi - self.lo
        span[span == 0.0] = 1.0
        return span

    def transform(self, x):
        x = np.asarray(x, dtype=np.float64)
        shape = x.shape
        out = (x.reshape(len(x), -1) - self.lo[None, :]) / self._span()[None, :]
        return out.reshape(shape)

    def inverse(self, x):
        x = np.asarray(x, dtype=np.float64)
        shape = x.shape
        out = x.reshape(len(x), -1) * self._span()[None, :] + self.lo[None, :]
        return out.reshape(shape)


def split_70_30(x, y, seed):
    """Shuffled 70/30 split; together the parts are exactly the input rows."""
    x = np.asarray(x)
    y = np.asarray(y)
    n = len(x)
    if n < 2:
        raise ValueError(f"split_70_30: need at least 2 rows, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(0.7 * n))
    n_train = min(max(n_train, 1), n - 1)
    tr, te = perm[:n_train], perm[n_train:]
    return (x[tr], y[tr]), (x[te], y[te])


def kfold_indices(n, k, seed):
    """k shuffled folds partitioning range(n); fold sizes differ by at most 1."""
    if not 2 <= k <= n:
        raise ValueError(f"kfold: need 2 <= k <= n, got k={k}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    parts = np.array_split(perm, k)
    out = []
    for i in range(k):
        val = parts[i]
        train = np.concatenate([parts[j] for j in range(k) if j != i])
        out.append((train, val))
    return out


# ---------------------------------------------------------------------------
# model registry
# ---------------------------------------------------------------------------

MODEL_NAMES = ("lstm", "stacked-lstm", "bilstm", "stacked-bilstm", "gru", "stacked-gru",
               "cnn", "cnn-lstm", "cnn-gru", "cnn-bilstm", "cnn-bilstm-sa",
               "cnn-bilstm-sa-h")

_RECURRENT = {"lstm": LstmLayer, "bilstm": BiLstmLayer, "gru": GruLayer}
_KERNEL_WIDTH = 3


class Model:
    """An ordered layer stack mapping feature rows [B, 32] to power [B]."""

    def __init__(self, name, hp, layers, seq_shape, flatten_to_seq=True):
        self.name = name
        self.hp = hp
        self.layers = layers
        self.seq_shape = seq_shape  # (T, C); input rows reshape to this
        self.input_dim = seq_shape[0] * seq_shape[1]

    def forward(self, x, ctx=None):
        ctx = ctx or ForwardContext()
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise T.ShapeMismatchError(
                f"model {self.name}: expected [B, {self.input_dim}], got {x.shape}")
        h = T.reshape(x, (x.shape[0],) + self.seq_shape)
        for layer in self.layers:
            h = layer(h, ctx)
        return T.reshape(h, (x.shape[0],))  # head emits [B, 1]

    def __call__(self, x, ctx=None):
        return self.forward(x, ctx)

    def named_params(self):
        out = []
        for i, layer in enumerate(self.layers):
            prefix = f"{i:02d}.{type(layer).__name__}"
            out.extend((f"{prefix}.{n}", t) for n, t in layer.named_params())
        return out

    def tensors(self):
        return [t for _, t in self.named_params()]

    def weights(self):
        out = []
        for layer in self.layers:
            out.extend(layer.weights())
        return out

    def n_params(self):
        return sum(t.size for t in self.tensors())


class _FlattenLayer:
    """[B, T, C] -> [B, T*C]."""

    def __call__(self, x, ctx=None):
        return T.reshape(x, (x.shape[0], x.shape[1] * x.shape[2]))

    def named_params(self):
        return []

    def weights(self):
        return []


def _conv_stack(hp, seeds, c_in, t_in):
    layers = []
    c = c_in
    t = t_in
    for i, filters in enumerate(hp.cnf):
        t = t - (_KERNEL_WIDTH - 1)
        if t < 1:
            raise ValueError(
                f"conv stack: sequence exhausted at layer {i + 1} "
                f"(length {t + _KERNEL_WIDTH - 1} < kernel {_KERNEL_WIDTH})")
        layers.append(Conv1dLayer(c, filters, _KERNEL_WIDTH, seed=seeds[i]))
        c = filters
    return layers, c, t


def build_model(name, hp=None, seed=0, input_dim=32):
    """Construct a registry architecture.

    ``cnn-bilstm-sa-h`` is the canonical hybrid under the shipped tuned
    hyperparameters; it ignores ``hp`` unless one is passed explicitly.
    """
    if name not in MODEL_NAMES:
        raise ValueError(f"unknown model {name!r}; choose from {MODEL_NAMES}")
    if name == "cnn-bilstm-sa-h" and hp is None:
        hp = tuned_hyperparams()
    hp = hp or default_hyperparams()
    if input_dim % 2 != 0 or input_dim < 2:
        raise ValueError(f"input_dim must be a positive even width, got {input_dim}")
    seq_shape = (input_dim // 2, 2)
    t_in, c_in = seq_shape
    s = [int(v) for v in np.random.SeedSequence(seed).generate_state(16, dtype=np.uint32)]

    layers = []
    if name in ("lstm", "bilstm", "gru"):
        kind = _RECURRENT[name]
        layers = [kind(c_in, hp.nhu[0], seed=s[0]),
                  DropoutLayer(hp.pdo[0]),
                  DenseLayer(hp.nhu[0] * (2 if name == "bilstm" else 1), 1, seed=s[1])]
    elif name in ("stacked-lstm", "stacked-bilstm", "stacked-gru"):
        kind = _RECURRENT[name.removeprefix("stacked-")]
        wide = 2 if name == "stacked-bilstm" else 1
        layers = [kind(c_in, hp.nhu[0], seed=s[0], return_sequences=True),
                  DropoutLayer(hp.pdo[0]),
                  kind(hp.nhu[0] * wide, hp.nhu[1], seed=s[1]),
                  DropoutLayer(hp.pdo[1]),
                  DenseLayer(hp.nhu[1] * wide, 1, seed=s[2])]
    elif name == "cnn":
        conv, c, t = _conv_stack(hp, s, c_in, t_in)
        layers = conv + [_FlattenLayer(),
                         DropoutLayer(hp.pdo[0]),
                         DenseLayer(t * c, 1, seed=s[5])]
    elif name in ("cnn-lstm", "cnn-gru", "cnn-bilstm"):
        kind = _RECURRENT[name.removeprefix("cnn-")]
        wide = 2 if name == "cnn-bilstm" else 1
        conv, c, _ = _conv_stack(hp, s, c_in, t_in)
        layers = conv + [kind(c, hp.nhu[0], seed=s[5], return_sequences=True),
                         DropoutLayer(hp.pdo[0]),
                         kind(hp.nhu[0] * wide, hp.nhu[1], seed=s[6]),
                         DropoutLayer(hp.pdo[1]),
                         DenseLayer(hp.nhu[1] * wide, 1, seed=s[7])]
    else:  # cnn-bilstm-sa and its tuned twin
        conv, c, _ = _conv_stack(hp, s, c_in, t_in)
        layers = conv + [BiLstmLayer(c, hp.nhu[0], seed=s[5], return_sequences=True),
                         DropoutLayer(hp.pdo[0]),
                         BiLstmLayer(hp.nhu[0] * 2, hp.nhu[1], seed=s[6],
                                     return_sequences=True),
                         DropoutLayer(hp.pdo[1]),
                         AttentionLayer(hp.nhu[1] * 2, hp.attention_dim, seed=s[7]),
                         DenseLayer(hp.nhu[1] * 2, 1, seed=s[8])]
    return Model(name, hp, layers, seq_shape)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class Adam:
    """Adaptive moment estimation with optional decoupled-from-biases L2.

    The caller passes the decayed subset explicitly; those tensors get
    2*l2*w added to their gradient before the moment update (the analytic
    gradient of l2*||w||^2).
    """

    BETA1 = 0.9
    BETA2 = 0.999
    EPS = 1e-8

    def __init__(self, params, lr, l2=0.0, decay_params=()):
        self.params = list(params)
        self.lr = float(lr)
        self.l2 = float(l2)
        self._decay_ids = {id(t) for t in decay_params}
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        b1, b2 = self.BETA1, self.BETA2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            if self.l2 and id(p) in self._decay_ids:
                g = g + 2.0 * self.l2 * p.data
            m = self._m[i]
            v = self._v[i]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data = p.data - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.EPS)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: Model
    train_losses: list[float]
    val_losses: list[float]
    epochs_run: int
    best_epoch: int
    stopped_early: bool
    wall_time_s: float


def _l2_penalty(model, l2):
    if not l2:
        return 0.0
    return l2 * float(sum(np.sum(w.data * w.data) for w in model.weights()))


def _mean_loss(model, x, y, chunk=2048):
    """Eval-mode LOSS (including the L2 term) over a full array."""
    total = 0.0
    for lo in range(0, len(x), chunk):
        xs = Tensor(x[lo:lo + chunk])
        pred = model.forward(xs)
        r = pred.data - y[lo:lo + chunk]
        total += float((r * r).sum())
    return total / (2.0 * len(x)) + _l2_penalty(model, model.hp.l2_reg)


def train(model, x, y, epochs=100, seed=0, val=None, patience=10):
    """Fit ``model`` on (x, y) with Adam and the half-MSE + L2 objective.

    x: [n, input_dim], y: [n] (both already scaled).  With ``val=(xv, yv)``,
    early stopping watches validation loss (patience epochs without
    improvement) and the best snapshot is restored.  Raises TrainingAborted
    the moment the loss goes non-finite.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n = len(x)
    hp = model.hp
    if hp.batch_size > n:
        raise ValueError(f"batch_size {hp.batch_size} exceeds {n} training rows")
    t0 = time.perf_counter()
    rng = np.random.default_rng([seed, 0xB47C])
    drop_rng = np.random.default_rng([seed, 0xD409])
    params = model.tensors()
    opt = Adam(params, lr=hp.learning_rate, l2=hp.l2_reg, decay_params=model.weights())

    train_losses = []
    val_losses = []
    best_val = np.inf
    best_epoch = -1
    best_snapshot = None
    stale = 0
    stopped_early = False

    for epoch in range(epochs):
        perm = rng.permutation(n)
        epoch_sq = 0.0
        for bi, lo in enumerate(range(0, n, hp.batch_size)):
            idx = perm[lo:lo + hp.batch_size]
            xb = Tensor(x[idx])
            yb = Tensor(y[idx])
            ctx = ForwardContext(train=True, rng=drop_rng)
            pred = model.forward(xb, ctx)
            resid = T.sub(pred, yb)
            loss = T.scale(T.reduce_sum(T.mul(resid, resid)), 0.5 / len(idx))
            lv = loss.item()
            if not np.isfinite(lv):
                raise TrainingAborted(epoch, bi)
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_sq += lv * len(idx)
        train_losses.append(epoch_sq / n + _l2_penalty(model, hp.l2_reg))

        if val is not None:
            vl = _mean_loss(model, np.asarray(val[0], dtype=np.float64),
                            np.asarray(val[1], dtype=np.float64).reshape(-1))
            if not np.isfinite(vl):
                raise TrainingAborted(epoch, -1)
            val_losses.append(vl)
            if vl < best_val - 1e-12:
                best_val = vl
                best_epoch = epoch
                best_snapshot = [p.data.copy() for p in params]
                stale = 0
            else:
                stale += 1
                if stale >= patience:
                    stopped_early = True
                    break

    if best_snapshot is not None:
        for p, snap in zip(params, best_snapshot):
            p.data = snap
    return TrainResult(model=model, train_losses=train_losses, val_losses=val_losses,
                       epochs_run=len(train_losses),
                       best_epoch=best_epoch if best_epoch >= 0 else len(train_losses) - 1,
                       stopped_early=stopped_early,
                       wall_time_s=time.perf_counter() - t0)


def predict(model, x, chunk=2048):
    """Eval-mode predictions for feature rows [n, input_dim] -> [n]."""
    x = np.asarray(x, dtype=np.float64)
    outs = []
    for lo in range(0, len(x), chunk):
        outs.append(model.forward(Tensor(x[lo:lo + chunk])).data)
    return np.concatenate(outs) if outs else np.zeros(0)


# ---------------------------------------------------------------------------
# cross-validated experiments
# ---------------------------------------------------------------------------

@dataclass
class FoldOutcome:
    fold: int
    report: "object"           # metrics.EvalReport
    result: TrainResult | None


@dataclass
class CvOutcome:
    model_name: str
    hp: HyperParams
    folds: list[FoldOutcome]
    wall_time_s: float

    def reports(self):
        return [f.report for f in self.folds]


def run_fold(model_name, hp, x_tr, y_tr, x_va, y_va, seed, epochs, patience=10,
             keep_model=False):
    """Scale on the training part, fit, evaluate on the held-out part.

    Metrics are computed in scaled target space (the scaler is fitted on the
    training rows only; R^2 is unaffected by the affine scaling).
    """
    xs = MinMaxScaler.fit(x_tr)
    ys = MinMaxScaler.fit(y_tr.reshape(-1, 1))
    xt, yt = xs.transform(x_tr), ys.transform(y_tr.reshape(-1, 1)).reshape(-1)
    xv, yv = xs.transform(x_va), ys.transform(y_va.reshape(-1, 1)).reshape(-1)
    model = build_model(model_name, hp, seed=seed, input_dim=x_tr.shape[1])
    res = train(model, xt, yt, epochs=epochs, seed=seed, val=(xv, yv), patience=patience)
    report = evaluate(yv, predict(model, xv))
    return report, (res if keep_model else None), (xs, ys, model)


def run_cv(model_name, x, y, hp=None, k=10, seed=0, epochs=30, patience=10,
           keep_models=False):
    """k-fold cross-validation of one architecture; returns per-fold reports."""
    if model_name == "cnn-bilstm-sa-h" and hp is None:
        hp = tuned_hyperparams()
    hp = hp or default_hyperparams()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    t0 = time.perf_counter()
    folds = []
    for i, (tr, va) in enumerate(kfold_indices(len(x), k, seed)):
        fold_seed = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
        report, res, _ = run_fold(model_name, hp, x[tr], y[tr], x[va], y[va],
                                  seed=fold_seed, epochs=epochs, patience=patience,
                                  keep_model=keep_models)
        folds.append(FoldOutcome(fold=i, report=report, result=res))
    return CvOutcome(model_name=model_name, hp=hp, folds=folds,
                     wall_time_s=time.perf_counter() - t0)
