"""Reverse-mode automatic differentiation over numpy arrays.

Every operation builds a node in a tape: the output tensor keeps
``(parent, pullback)`` pairs, where ``pullback`` maps the output gradient to
that parent's gradient contribution.  ``Tensor.backward()`` walks the graph in
reverse topological order and accumulates gradients on every tensor that
requires them.

Shapes are strict: binary elementwise ops require *identical* shapes (no
silent numpy broadcasting).  Row-vector bias adds and channel scalings are
explicit named ops so every shape transition is visible at the call site.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_DTYPE = np.float64


class ShapeMismatchError(ValueError):
    """Operands have incompatible shapes; message names both."""


class DomainError(ValueError):
    """Input outside an op's mathematical domain (e.g. log1p of x <= -1)."""


def _shape_err(op, a, b):
    return ShapeMismatchError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


class Tensor:
    """A numpy array plus gradient bookkeeping.

    Op outputs are never mutated after construction.  Leaf tensors (parameters)
    have a single owner — the optimizer — which may replace ``.data`` in place
    between forward passes.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents")

    def __init__(self, data, requires_grad=False, _parents=()):
        arr = np.asarray(data, dtype=DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Operator sugar.  Tensor-tensor ops are strict same-shape; Python scalars
    # are allowed (a scalar is not a broadcast hazard).
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return shift(self, float(other))

    def __radd__(self, other):
        return shift(self, float(other))

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return shift(self, -float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other):
        return scale(self, float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def backward(self):
        """Accumulate d(self)/d(leaf) into ``.grad`` for every reachable leaf.

        ``self`` must be a scalar (size 1); the seed gradient is 1.
        """
        if self.data.size != 1:
            raise ValueError(f"backward() requires a scalar output, got shape {self.data.shape}")
        # Iterative topological sort (graphs can exceed the recursion limit).
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent, _ in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            for parent, pullback in node._parents:
                contrib = pullback(g)
                if contrib is None:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + contrib
                else:
                    grads[key] = contrib


def _needs_grad(*tensors):
    return any(t.requires_grad or t._parents for t in tensors)


def _make(data, parents, track):
    return Tensor(data, _parents=tuple(parents) if track else ())


def tensor(data, requires_grad=False):
    return Tensor(data, requires_grad=requires_grad)


def zeros(shape, requires_grad=False):
    return Tensor(np.zeros(shape, dtype=DEFAULT_DTYPE), requires_grad=requires_grad)


def ones(shape, requires_grad=False):
    return Tensor(np.ones(shape, dtype=DEFAULT_DTYPE), requires_grad=requires_grad)


def glorot_init(shape, seed, requires_grad=True):
    """Glorot/Xavier uniform init: U(-a, a), a = sqrt(6 / (fan_in + fan_out)).

    For rank >= 2 the trailing two axes are (fan_in, fan_out) and any leading
    axes count as receptive field; rank-1 shapes use fan_in = fan_out = n.
    Same (shape, seed) always yields identical values.
    """
    shape = tuple(int(s) for s in shape)
    if any(s <= 0 for s in shape):
        raise ValueError(f"glorot_init: non-positive dimension in shape {shape}")
    if len(shape) == 1:
        fan_in = fan_out = shape[0]
    else:
        receptive = int(np.prod(shape[:-2], dtype=np.int64)) if len(shape) > 2 else 1
        fan_in = shape[-2] * receptive
        fan_out = shape[-1] * receptive
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    rng = np.random.default_rng(seed)
    data = rng.uniform(-limit, limit, size=shape).astype(DEFAULT_DTYPE)
    return Tensor(data, requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b):
    if a.shape != b.shape:
        raise _shape_err("add", a, b)
    track = _needs_grad(a, b)
    return _make(a.data + b.data, [(a, lambda g: g), (b, lambda g: g)], track)


def sub(a, b):
    if a.shape != b.shape:
        raise _shape_err("sub", a, b)
    track = _needs_grad(a, b)
    return _make(a.data - b.data, [(a, lambda g: g), (b, lambda g: -g)], track)


def mul(a, b):
    if a.shape != b.shape:
        raise _shape_err("mul", a, b)
    track = _needs_grad(a, b)
    return _make(a.data * b.data,
                 [(a, lambda g: g * b.data), (b, lambda g: g * a.data)], track)


def scale(a, c):
    c = float(c)
    return _make(a.data * c, [(a, lambda g: g * c)], _needs_grad(a))


def shift(a, c):
    c = float(c)
    return _make(a.data + c, [(a, lambda g: g)], _needs_grad(a))


def sigmoid(a):
    # Split by sign to avoid overflow in exp.
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make(out, [(a, lambda g: g * out * (1.0 - out))], _needs_grad(a))


def tanh(a):
    out = np.tanh(a.data)
    return _make(out, [(a, lambda g: g * (1.0 - out * out))], _needs_grad(a))


def exp(a):
    out = np.exp(a.data)
    return _make(out, [(a, lambda g: g * out)], _needs_grad(a))


def log1p(a):
    if np.any(a.data <= -1.0):
        bad = float(np.min(a.data))
        raise DomainError(f"log1p: input must be > -1 everywhere, min value {bad}")
    out = np.log1p(a.data)
    return _make(out, [(a, lambda g: g / (1.0 + a.data))], _needs_grad(a))


def relu(a):
    mask = a.data > 0
    return _make(a.data * mask, [(a, lambda g: g * mask)], _needs_grad(a))


def hlu(a, alpha=0.1):
    """Hybrid linear unit: x for x > 0, alpha*x/(1-x) otherwise.

    Continuous at 0; the negative branch saturates to -alpha as x -> -inf.
    Derivative: 1 for x > 0, alpha/(1-x)^2 otherwise.
    """
    alpha = float(alpha)
    x = a.data
    pos = x > 0
    out = np.where(pos, x, alpha * x / (1.0 - x))
    dx = np.where(pos, 1.0, alpha / np.square(1.0 - x))
    return _make(out, [(a, lambda g: g * dx)], _needs_grad(a))


_ELEMENTWISE_UNARY = {"sigmoid": sigmoid, "tanh": tanh, "exp": exp,
                      "log1p": log1p, "relu": relu, "hlu": hlu}
_ELEMENTWISE_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(op, a, b=None):
    """Dispatch form of the elementwise ops (op given by name)."""
    if op in _ELEMENTWISE_BINARY:
        if b is None:
            raise ValueError(f"elementwise {op!r} needs two operands")
        return _ELEMENTWISE_BINARY[op](a, b)
    if op in _ELEMENTWISE_UNARY:
        if b is not None:
            raise ValueError(f"elementwise {op!r} takes one operand")
        return _ELEMENTWISE_UNARY[op](a)
    raise ValueError(f"unknown elementwise op {op!r}")


# ---------------------------------------------------------------------------
# matmul and structural ops
# ---------------------------------------------------------------------------

def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _shape_err("matmul", a, b)
    track = _needs_grad(a, b)
    return _make(a.data @ b.data,
                 [(a, lambda g: g @ b.data.T), (b, lambda g: a.data.T @ g)], track)


def transpose(a):
    if a.ndim != 2:
        raise ShapeMismatchError(f"transpose: expected rank-2, got shape {a.shape}")
    return _make(a.data.T, [(a, lambda g: g.T)], _needs_grad(a))


def reshape(a, shape):
    shape = tuple(int(s) for s in shape)
    old = a.shape
    return _make(a.data.reshape(shape), [(a, lambda g: g.reshape(old))], _needs_grad(a))


def concat(parts, axis=-1):
    parts = list(parts)
    if not parts:
        raise ValueError("concat: empty input")
    out = np.concatenate([p.data for p in parts], axis=axis)
    track = _needs_grad(*parts)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def make_pull(i):
        lo, hi = offsets[i], offsets[i + 1]

        def pull(g):
            idx = [slice(None)] * g.ndim
            idx[axis if axis >= 0 else g.ndim + axis] = slice(lo, hi)
            return g[tuple(idx)]

        return pull

    return _make(out, [(p, make_pull(i)) for i, p in enumerate(parts)], track)


def add_rowvec(a, v):
    """a[i, :] + v for a matrix [n, d] and row vector [d] — the bias add."""
    if a.ndim != 2 or v.ndim != 1 or a.shape[1] != v.shape[0]:
        raise _shape_err("add_rowvec", a, v)
    track = _needs_grad(a, v)
    return _make(a.data + v.data[None, :],
                 [(a, lambda g: g), (v, lambda g: g.sum(axis=0))], track)


def mul_rowvec(a, v):
    """a[i, :] * v — per-column scaling of a matrix by a vector."""
    if a.ndim != 2 or v.ndim != 1 or a.shape[1] != v.shape[0]:
        raise _shape_err("mul_rowvec", a, v)
    track = _needs_grad(a, v)
    return _make(a.data * v.data[None, :],
                 [(a, lambda g: g * v.data[None, :]),
                  (v, lambda g: (g * a.data).sum(axis=0))], track)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def reduce_sum(a, axis=None):
    track = _needs_grad(a)
    if axis is None:
        out = a.data.sum()
        return _make(out, [(a, lambda g: np.full_like(a.data, float(g)))], track)
    out = a.data.sum(axis=axis)
    return _make(out, [(a, lambda g: np.broadcast_to(np.expand_dims(g, axis), a.shape).copy())],
                 track)


def reduce_mean(a, axis=None):
    track = _needs_grad(a)
    if axis is None:
        n = a.data.size
        out = a.data.mean()
        return _make(out, [(a, lambda g: np.full_like(a.data, float(g) / n))], track)
    n = a.shape[axis]
    out = a.data.mean(axis=axis)
    return _make(out, [(a, lambda g: np.broadcast_to(np.expand_dims(g / n, axis), a.shape).copy())],
                 track)


def reduce_max(a, axis=None):
    """Max reduction; gradient splits evenly across tied maxima."""
    track = _needs_grad(a)
    if axis is None:
        out = a.data.max()
        mask = (a.data == out).astype(a.data.dtype)
        mask /= mask.sum()
        return _make(out, [(a, lambda g: float(g) * mask)], track)
    out = a.data.max(axis=axis)
    expanded = np.expand_dims(out, axis)
    mask = (a.data == expanded).astype(a.data.dtype)
    mask /= mask.sum(axis=axis, keepdims=True)
    return _make(out, [(a, lambda g: np.expand_dims(g, axis) * mask)], track)


def softmax_rows(a):
    """Row-wise softmax of a matrix [n, d]; each output row sums to 1."""
    if a.ndim != 2:
        raise ShapeMismatchError(f"softmax_rows: expected rank-2, got shape {a.shape}")
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def pull(g):
        return out * (g - (g * out).sum(axis=1, keepdims=True))

    return _make(out, [(a, pull)], _needs_grad(a))


_REDUCE = {"sum": reduce_sum, "mean": reduce_mean, "max": reduce_max}


def reduce(op, a, axis=None):
    """Dispatch form of the reductions (op given by name)."""
    if op == "softmax_rows":
        if axis is not None:
            raise ValueError("softmax_rows is row-wise; axis not accepted")
        return softmax_rows(a)
    if op not in _REDUCE:
        raise ValueError(f"unknown reduce op {op!r}")
    return _REDUCE[op](a, axis=axis)


# ---------------------------------------------------------------------------
# batched rank-3 ops for sequence models ([batch, time, channels] layout)
# ---------------------------------------------------------------------------

def timestep(a, t):
    """Select step t from [B, T, C] -> [B, C]."""
    if a.ndim != 3:
        raise ShapeMismatchError(f"timestep: expected rank-3, got shape {a.shape}")
    t = int(t)

    def pull(g):
        full = np.zeros_like(a.data)
        full[:, t, :] = g
        return full

    return _make(a.data[:, t, :], [(a, pull)], _needs_grad(a))


def stack_time(parts):
    """Stack T tensors of shape [B, C] into [B, T, C]."""
    parts = list(parts)
    if not parts:
        raise ValueError("stack_time: empty input")
    out = np.stack([p.data for p in parts], axis=1)
    track = _needs_grad(*parts)

    def make_pull(i):
        return lambda g: g[:, i, :]

    return _make(out, [(p, make_pull(i)) for i, p in enumerate(parts)], track)


def matmul_batched(a, w):
    """[B, T, C] @ [C, F] -> [B, T, F]: one projection shared across batch/time."""
    if a.ndim != 3 or w.ndim != 2 or a.shape[2] != w.shape[0]:
        raise _shape_err("matmul_batched", a, w)
    track = _needs_grad(a, w)
    out = a.data @ w.data
    return _make(out,
                 [(a, lambda g: g @ w.data.T),
                  (w, lambda g: np.einsum("btc,btf->cf", a.data, g, optimize=True))],
                 track)


def add_channelvec(a, v):
    """[B, T, C] + per-channel bias [C]."""
    if a.ndim != 3 or v.ndim != 1 or a.shape[2] != v.shape[0]:
        raise _shape_err("add_channelvec", a, v)
    track = _needs_grad(a, v)
    return _make(a.data + v.data[None, None, :],
                 [(a, lambda g: g), (v, lambda g: g.sum(axis=(0, 1)))], track)


def scale_channels(a, s):
    """Scale [B, T, C] by per-(batch, channel) gates [B, C] (squeeze-excite)."""
    if a.ndim != 3 or s.ndim != 2 or a.shape[0] != s.shape[0] or a.shape[2] != s.shape[1]:
        raise _shape_err("scale_channels", a, s)
    track = _needs_grad(a, s)
    return _make(a.data * s.data[:, None, :],
                 [(a, lambda g: g * s.data[:, None, :]),
                  (s, lambda g: (g * a.data).sum(axis=1))], track)


def mean_time(a):
    """Mean over the time axis: [B, T, C] -> [B, C]."""
    if a.ndim != 3:
        raise ShapeMismatchError(f"mean_time: expected rank-3, got shape {a.shape}")
    n = a.shape[1]
    return _make(a.data.mean(axis=1),
                 [(a, lambda g: np.repeat(g[:, None, :], n, axis=1) / n)], _needs_grad(a))


def project_seq(w, x):
    """Scores F-style projection: [a, d] x [B, T, d] -> [B, a, T]."""
    if w.ndim != 2 or x.ndim != 3 or w.shape[1] != x.shape[2]:
        raise _shape_err("project_seq", w, x)
    track = _needs_grad(w, x)
    out = np.einsum("ad,btd->bat", w.data, x.data, optimize=True)
    return _make(out,
                 [(w, lambda g: np.einsum("bat,btd->ad", g, x.data, optimize=True)),
                  (x, lambda g: np.einsum("ad,bat->btd", w.data, g, optimize=True))],
                 track)


def combine_rows(s, f):
    """Score mixing: [r, a] x [B, a, T] -> [B, r, T]."""
    if s.ndim != 2 or f.ndim != 3 or s.shape[1] != f.shape[1]:
        raise _shape_err("combine_rows", s, f)
    track = _needs_grad(s, f)
    out = np.einsum("ra,bat->brt", s.data, f.data, optimize=True)
    return _make(out,
                 [(s, lambda g: np.einsum("brt,bat->ra", g, f.data, optimize=True)),
                  (f, lambda g: np.einsum("ra,brt->bat", s.data, g, optimize=True))],
                 track)


def softmax_last(a):
    """Softmax over the trailing axis of a rank-3 tensor."""
    if a.ndim != 3:
        raise ShapeMismatchError(f"softmax_last: expected rank-3, got shape {a.shape}")
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def pull(g):
        return out * (g - (g * out).sum(axis=-1, keepdims=True))

    return _make(out, [(a, pull)], _needs_grad(a))


def attend(a, x):
    """Apply attention rows: [B, r, T] x [B, T, d] -> [B, r, d]."""
    if a.ndim != 3 or x.ndim != 3 or a.shape[0] != x.shape[0] or a.shape[2] != x.shape[1]:
        raise _shape_err("attend", a, x)
    track = _needs_grad(a, x)
    out = np.einsum("brt,btd->brd", a.data, x.data, optimize=True)
    return _make(out,
                 [(a, lambda g: np.einsum("brd,btd->brt", g, x.data, optimize=True)),
                  (x, lambda g: np.einsum("brt,brd->btd", a.data, g, optimize=True))],
                 track)


def tanh3(a):
    out = np.tanh(a.data)
    return _make(out, [(a, lambda g: g * (1.0 - out * out))], _needs_grad(a))


def squeeze_row(a):
    """[B, 1, d] -> [B, d]."""
    if a.ndim != 3 or a.shape[1] != 1:
        raise ShapeMismatchError(f"squeeze_row: expected [B, 1, d], got shape {a.shape}")
    return _make(a.data[:, 0, :], [(a, lambda g: g[:, None, :])], _needs_grad(a))


def conv1d(x, w, b, stride=1):
    """Valid (no padding) 1-D cross-correlation over the time axis.

    x: [B, T, C], w: [k, C, F], b: [F] -> [B, T', F] with
    T' = floor((T - k) / stride) + 1.
    """
    if x.ndim != 3 or w.ndim != 3 or x.shape[2] != w.shape[1]:
        raise _shape_err("conv1d", x, w)
    if b.ndim != 1 or b.shape[0] != w.shape[2]:
        raise _shape_err("conv1d bias", b, w)
    stride = int(stride)
    if stride < 1:
        raise ValueError(f"conv1d: stride must be >= 1, got {stride}")
    k, t = w.shape[0], x.shape[1]
    if k > t:
        raise ShapeMismatchError(
            f"conv1d: kernel width {k} exceeds input length {t} (valid conv, no padding)")
    t_out = (t - k) // stride + 1
    out = np.zeros((x.shape[0], t_out, w.shape[2]), dtype=DEFAULT_DTYPE)
    hi = stride * (t_out - 1) + 1
    for i in range(k):
        out += x.data[:, i:i + hi:stride, :] @ w.data[i]
    out += b.data[None, None, :]
    track = _needs_grad(x, w, b)

    def pull_x(g):
        gx = np.zeros_like(x.data)
        for i in range(k):
            gx[:, i:i + hi:stride, :] += g @ w.data[i].T
        return gx

    def pull_w(g):
        gw = np.empty_like(w.data)
        for i in range(k):
            gw[i] = np.einsum("btc,btf->cf", x.data[:, i:i + hi:stride, :], g, optimize=True)
        return gw

    return _make(out, [(x, pull_x), (w, pull_w), (b, lambda g: g.sum(axis=(0, 1)))], track)


def dropout(x, p_drop, seed):
    """Inverted dropout: zero with probability p_drop, scale kept by 1/(1-p).

    Deterministic for a given seed.  Identity when p_drop == 0.  Call only in
    training mode; evaluation should skip the op entirely.
    """
    p = float(p_drop)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout: p_drop must be in [0, 1), got {p}")
    if p == 0.0:
        return x
    rng = np.random.default_rng(seed)
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return _make(x.data * mask, [(x, lambda g: g * mask)], _needs_grad(x))


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckConfig:
    epsilon: float = 1e-5
    rel_tol: float = 1e-4
    abs_tol: float = 1e-7
    n_points: int = 20


def gradient_check(fn, params, config=None, seed=0):
    """Compare analytic gradients of ``fn()`` against central differences.

    fn:     nullary callable returning a scalar Tensor (closing over params);
            must be deterministic (fix any dropout seeds).
    params: leaf tensors to probe.  Each probed coordinate is perturbed in
            place by +/-epsilon and restored.

    Returns a list of failure strings; empty means every probed coordinate
    satisfies |g_analytic - g_numeric| <= rel_tol*max(|g_a|,|g_n|) + abs_tol.
    """
    cfg = config or GradCheckConfig()
    rng = np.random.default_rng(seed)
    for p in params:
        p.zero_grad()
    out = fn()
    out.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]

    coords = []
    for _ in range(cfg.n_points):
        pi = int(rng.integers(len(params)))
        ci = int(rng.integers(params[pi].data.size))
        coords.append((pi, ci))

    failures = []
    for pi, ci in coords:
        p = params[pi]
        flat = p.data.reshape(-1)
        saved = flat[ci]
        flat[ci] = saved + cfg.epsilon
        f_plus = fn().item()
        flat[ci] = saved - cfg.epsilon
        f_minus = fn().item()
        flat[ci] = saved
        g_num = (f_plus - f_minus) / (2.0 * cfg.epsilon)
        g_ana = float(analytic[pi].reshape(-1)[ci])
        tol = cfg.rel_tol * max(abs(g_ana), abs(g_num)) + cfg.abs_tol
        if abs(g_ana - g_num) > tol:
            failures.append(
                f"param {pi} flat index {ci}: analytic {g_ana:.10g} vs numeric {g_num:.10g} "
                f"(diff {abs(g_ana - g_num):.3g} > tol {tol:.3g})")
    return failures
