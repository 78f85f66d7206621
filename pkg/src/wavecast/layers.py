"""Sequential model building blocks on top of the autodiff core.

Two API surfaces share the same cell math:

* functional, single-sequence forms (``lstm_forward(params, seq)`` with
  ``seq: [T, d]``) — convenient for unit tests and small experiments;
* ``Layer`` classes operating on batches ``[B, T, C]`` — what the training
  loop uses.

All recurrent states start at zero.  Gate equations:

LSTM:  f = sigm(W_f x + U_f h + b_f)        GRU:  z = sigm(W_z x + U_z h + b_z)
       i = sigm(W_i x + U_i h + b_i)              r = sigm(W_r x + U_r h + b_r)
       c~ = tanh(W_c x + U_c h + b_c)             h~ = tanh(W_h x + U_h (r*h) + b_h)
       c' = f*c + i*c~                            h' = (1-z)*h + z*h~
       o = sigm(W_o x + U_o h + b_o)
       h' = o * tanh(c')

BiLSTM runs one LSTM forward and one over the reversed sequence and
concatenates the two hidden sequences step-for-step (output width 2H).

Self-attention (scores form): F = tanh(S_k O^T), A = row_softmax(S_a F),
output A O.  The r=1 case is a learned temporal pooling.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import tensor as T
from .tensor import ShapeMismatchError, Tensor, glorot_init


@dataclass
class ForwardContext:
    """Per-call mode for layers whose behaviour differs train vs eval."""
    train: bool = False
    rng: np.random.Generator | None = None

    def dropout_seed(self):
        if self.rng is None:
            raise ValueError("training-mode forward needs a ForwardContext rng for dropout")
        return int(self.rng.integers(2**63))


EVAL = ForwardContext(train=False)


def _seeds(seed, n):
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n, dtype=np.uint32)]


class _ParamBag:
    """Mixin: parameter dataclasses expose ordered (name, tensor) pairs."""

    def named(self):
        return [(f.name, getattr(self, f.name)) for f in fields(self)
                if isinstance(getattr(self, f.name), Tensor)]

    def tensors(self):
        return [t for _, t in self.named()]

    def weights(self):
        """Tensors subject to L2 decay: every matrix/kernel, never biases."""
        return [t for name, t in self.named() if not name.startswith("b")]


# ---------------------------------------------------------------------------
# dense
# ---------------------------------------------------------------------------

@dataclass
class DenseParams(_ParamBag):
    w: Tensor  # [d_in, d_out]
    b: Tensor  # [d_out]

    @classmethod
    def init(cls, d_in, d_out, seed):
        return cls(w=glorot_init((d_in, d_out), seed), b=T.zeros((d_out,), requires_grad=True))


def dense(params, x):
    """x: [n, d_in] -> [n, d_out]."""
    return T.add_rowvec(T.matmul(x, params.w), params.b)


# ---------------------------------------------------------------------------
# conv
# ---------------------------------------------------------------------------

@dataclass
class Conv1dParams(_ParamBag):
    w: Tensor  # [k, C_in, F]
    b: Tensor  # [F]
    stride: int = 1

    @classmethod
    def init(cls, kernel_width, c_in, filters, seed, stride=1):
        return cls(w=glorot_init((kernel_width, c_in, filters), seed),
                   b=T.zeros((filters,), requires_grad=True), stride=stride)


def conv1d_forward(params, seq):
    """Single sequence [T, C] -> [T', F] (valid cross-correlation, no padding)."""
    if seq.ndim != 2:
        raise ShapeMismatchError(f"conv1d_forward: expected [T, C], got {seq.shape}")
    lifted = T.reshape(seq, (1,) + seq.shape)
    out = T.conv1d(lifted, params.w, params.b, stride=params.stride)
    return T.reshape(out, out.shape[1:])


# ---------------------------------------------------------------------------
# LSTM
# ---------------------------------------------------------------------------

@dataclass
class LstmParams(_ParamBag):
    w_f: Tensor; w_i: Tensor; w_c: Tensor; w_o: Tensor  # [d, H]
    u_f: Tensor; u_i: Tensor; u_c: Tensor; u_o: Tensor  # [H, H]
    b_f: Tensor; b_i: Tensor; b_c: Tensor; b_o: Tensor  # [H]
    hidden: int = 0

    @classmethod
    def init(cls, d_in, hidden, seed):
        s = _seeds(seed, 8)
        zb = lambda: T.zeros((hidden,), requires_grad=True)
        return cls(
            w_f=glorot_init((d_in, hidden), s[0]), w_i=glorot_init((d_in, hidden), s[1]),
            w_c=glorot_init((d_in, hidden), s[2]), w_o=glorot_init((d_in, hidden), s[3]),
            u_f=glorot_init((hidden, hidden), s[4]), u_i=glorot_init((hidden, hidden), s[5]),
            u_c=glorot_init((hidden, hidden), s[6]), u_o=glorot_init((hidden, hidden), s[7]),
            b_f=zb(), b_i=zb(), b_c=zb(), b_o=zb(), hidden=hidden)


def _gate(x, w, h, u, b):
    return T.add_rowvec(T.add(T.matmul(x, w), T.matmul(h, u)), b)


def lstm_cell(params, x_t, h_prev, c_prev):
    """One step.  x_t: [B, d], h_prev/c_prev: [B, H] -> (h, c)."""
    p = params
    fg = T.sigmoid(_gate(x_t, p.w_f, h_prev, p.u_f, p.b_f))
    ig = T.sigmoid(_gate(x_t, p.w_i, h_prev, p.u_i, p.b_i))
    cand = T.tanh(_gate(x_t, p.w_c, h_prev, p.u_c, p.b_c))
    c_t = T.add(T.mul(fg, c_prev), T.mul(ig, cand))
    og = T.sigmoid(_gate(x_t, p.w_o, h_prev, p.u_o, p.b_o))
    h_t = T.mul(og, T.tanh(c_t))
    return h_t, c_t


def _run_lstm(params, steps, bsz):
    h = T.zeros((bsz, params.hidden))
    c = T.zeros((bsz, params.hidden))
    outs = []
    for x_t in steps:
        h, c = lstm_cell(params, x_t, h, c)
        outs.append(h)
    return outs


def lstm_forward(params, seq):
    """Single sequence [T, d] -> hidden sequence [T, H]."""
    if seq.ndim != 2:
        raise ShapeMismatchError(f"lstm_forward: expected [T, d], got {seq.shape}")
    lifted = T.reshape(seq, (1,) + seq.shape)
    steps = [T.timestep(lifted, t) for t in range(seq.shape[0])]
    outs = _run_lstm(params, steps, 1)
    return T.reshape(T.stack_time(outs), (seq.shape[0], params.hidden))


def bilstm_forward(fwd, bwd, seq):
    """Single sequence [T, d] -> [T, 2H]: concat of forward and backward passes."""
    if fwd.hidden != bwd.hidden:
        raise ShapeMismatchError(
            f"bilstm_forward: direction widths differ ({fwd.hidden} vs {bwd.hidden})")
    if seq.ndim != 2:
        raise ShapeMismatchError(f"bilstm_forward: expected [T, d], got {seq.shape}")
    n = seq.shape[0]
    lifted = T.reshape(seq, (1,) + seq.shape)
    steps = [T.timestep(lifted, t) for t in range(n)]
    f_outs = _run_lstm(fwd, steps, 1)
    b_outs = _run_lstm(bwd, steps[::-1], 1)[::-1]
    rows = [T.concat([f, b], axis=1) for f, b in zip(f_outs, b_outs)]
    return T.reshape(T.stack_time(rows), (n, 2 * fwd.hidden))


# ---------------------------------------------------------------------------
# GRU
# ---------------------------------------------------------------------------

@dataclass
class GruParams(_ParamBag):
    w_z: Tensor; w_r: Tensor; w_h: Tensor  # [d, H]
    u_z: Tensor; u_r: Tensor; u_h: Tensor  # [H, H]
    b_z: Tensor; b_r: Tensor; b_h: Tensor  # [H]
    hidden: int = 0

    @classmethod
    def init(cls, d_in, hidden, seed):
        s = _seeds(seed, 6)
        zb = lambda: T.zeros((hidden,), requires_grad=True)
        return cls(
            w_z=glorot_init((d_in, hidden), s[0]), w_r=glorot_init((d_in, hidden), s[1]),
            w_h=glorot_init((d_in, hidden), s[2]),
            u_z=glorot_init((hidden, hidden), s[3]), u_r=glorot_init((hidden, hidden), s[4]),
            u_h=glorot_init((hidden, hidden), s[5]),
            b_z=zb(), b_r=zb(), b_h=zb(), hidden=hidden)


def gru_cell(params, x_t, h_prev):
    """One step.  x_t: [B, d], h_prev: [B, H] -> h."""
    p = params
    z = T.sigmoid(_gate(x_t, p.w_z, h_prev, p.u_z, p.b_z))
    r = T.sigmoid(_gate(x_t, p.w_r, h_prev, p.u_r, p.b_r))
    cand = T.tanh(_gate(x_t, p.w_h, T.mul(r, h_prev), p.u_h, p.b_h))
    one_minus_z = T.shift(T.scale(z, -1.0), 1.0)
    return T.add(T.mul(one_minus_z, h_prev), T.mul(z, cand))


def _run_gru(params, steps, bsz):
    h = T.zeros((bsz, params.hidden))
    outs = []
    for x_t in steps:
        h = gru_cell(params, x_t, h)
        outs.append(h)
    return outs


def gru_forward(params, seq):
    """Single sequence [T, d] -> hidden sequence [T, H]."""
    if seq.ndim != 2:
        raise ShapeMismatchError(f"gru_forward: expected [T, d], got {seq.shape}")
    lifted = T.reshape(seq, (1,) + seq.shape)
    steps = [T.timestep(lifted, t) for t in range(seq.shape[0])]
    outs = _run_gru(params, steps, 1)
    return T.reshape(T.stack_time(outs), (seq.shape[0], params.hidden))


# ---------------------------------------------------------------------------
# self-attention
# ---------------------------------------------------------------------------

@dataclass
class AttentionParams(_ParamBag):
    s_k: Tensor  # [a, d]
    s_a: Tensor  # [r, a]

    @classmethod
    def init(cls, d_in, attention_dim, seed, n_rows=1):
        s = _seeds(seed, 2)
        return cls(s_k=glorot_init((attention_dim, d_in), s[0]),
                   s_a=glorot_init((n_rows, attention_dim), s[1]))


def self_attention(params, seq):
    """Single sequence [T, d] -> [r, d].

    F = tanh(S_k seq^T); A = row_softmax(S_a F); out = A seq.  Rows of A are
    attention distributions over the T steps (each sums to 1).
    """
    if seq.ndim != 2:
        raise ShapeMismatchError(f"self_attention: expected [T, d], got {seq.shape}")
    if params.s_k.shape[1] != seq.shape[1]:
        raise _dim_err("self_attention", params.s_k, seq)
    f = T.tanh(T.matmul(params.s_k, T.transpose(seq)))  # [a, T]
    a = T.softmax_rows(T.matmul(params.s_a, f))          # [r, T]
    return T.matmul(a, seq)                              # [r, d]


def _dim_err(op, a, b):
    return ShapeMismatchError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


# ---------------------------------------------------------------------------
# squeeze-excite
# ---------------------------------------------------------------------------

@dataclass
class SeParams(_ParamBag):
    w1: Tensor  # [C, C_b]
    b1: Tensor
    w2: Tensor  # [C_b, C]
    b2: Tensor
    ratio: int = 4

    @classmethod
    def init(cls, channels, seed, ratio=4):
        if not isinstance(ratio, int) or ratio < 1:
            raise ValueError(f"se ratio must be an int >= 1, got {ratio!r}")
        cb = max(1, channels // ratio)
        s = _seeds(seed, 2)
        return cls(w1=glorot_init((channels, cb), s[0]),
                   b1=T.zeros((cb,), requires_grad=True),
                   w2=glorot_init((cb, channels), s[1]),
                   b2=T.zeros((channels,), requires_grad=True), ratio=ratio)


def se_block(params, seq):
    """Single sequence [T, C] -> [T, C]: channel reweighting.

    squeeze = mean over T; gate = sigm(fc2(relu(fc1(squeeze)))); out = seq * gate.
    """
    if seq.ndim != 2:
        raise ShapeMismatchError(f"se_block: expected [T, C], got {seq.shape}")
    sq = T.reshape(T.reduce_mean(seq, axis=0), (1, seq.shape[1]))
    gate = T.sigmoid(dense(DenseParams(params.w2, params.b2),
                           T.relu(dense(DenseParams(params.w1, params.b1), sq))))
    return T.mul_rowvec(seq, T.reshape(gate, (seq.shape[1],)))


# ---------------------------------------------------------------------------
# batched layer classes
# ---------------------------------------------------------------------------

class Layer:
    params: _ParamBag | None = None

    def __call__(self, x, ctx=EVAL):
        raise NotImplementedError

    def named_params(self):
        return self.params.named() if self.params is not None else []

    def tensors(self):
        return self.params.tensors() if self.params is not None else []

    def weights(self):
        return self.params.weights() if self.params is not None else []


class Conv1dLayer(Layer):
    """[B, T, C] -> [B, T', F] with HLU activation."""

    def __init__(self, c_in, filters, kernel_width, seed, stride=1, alpha=0.1):
        self.params = Conv1dParams.init(kernel_width, c_in, filters, seed, stride=stride)
        self.alpha = alpha

    def __call__(self, x, ctx=EVAL):
        return T.hlu(T.conv1d(x, self.params.w, self.params.b, stride=self.params.stride),
                     alpha=self.alpha)


class LstmLayer(Layer):
    """[B, T, C] -> [B, T, H] (return_sequences) or [B, H] (last step)."""

    def __init__(self, c_in, hidden, seed, return_sequences=False):
        self.params = LstmParams.init(c_in, hidden, seed)
        self.return_sequences = return_sequences

    def __call__(self, x, ctx=EVAL):
        steps = [T.timestep(x, t) for t in range(x.shape[1])]
        outs = _run_lstm(self.params, steps, x.shape[0])
        return T.stack_time(outs) if self.return_sequences else outs[-1]


class GruLayer(Layer):
    def __init__(self, c_in, hidden, seed, return_sequences=False):
        self.params = GruParams.init(c_in, hidden, seed)
        self.return_sequences = return_sequences

    def __call__(self, x, ctx=EVAL):
        steps = [T.timestep(x, t) for t in range(x.shape[1])]
        outs = _run_gru(self.params, steps, x.shape[0])
        return T.stack_time(outs) if self.return_sequences else outs[-1]


class BiLstmLayer(Layer):
    """[B, T, C] -> [B, T, 2H] or [B, 2H] (last step of each direction)."""

    def __init__(self, c_in, hidden, seed, return_sequences=False):
        s = _seeds(seed, 2)
        self.fwd = LstmParams.init(c_in, hidden, s[0])
        self.bwd = LstmParams.init(c_in, hidden, s[1])
        self.return_sequences = return_sequences

    def __call__(self, x, ctx=EVAL):
        steps = [T.timestep(x, t) for t in range(x.shape[1])]
        f_outs = _run_lstm(self.fwd, steps, x.shape[0])
        b_outs = _run_lstm(self.bwd, steps[::-1], x.shape[0])[::-1]
        if self.return_sequences:
            return T.stack_time([T.concat([f, b], axis=1)
                                 for f, b in zip(f_outs, b_outs)])
        return T.concat([f_outs[-1], b_outs[0]], axis=1)

    def named_params(self):
        return ([("fwd." + n, t) for n, t in self.fwd.named()]
                + [("bwd." + n, t) for n, t in self.bwd.named()])

    def tensors(self):
        return self.fwd.tensors() + self.bwd.tensors()

    def weights(self):
        return self.fwd.weights() + self.bwd.weights()


class AttentionLayer(Layer):
    """[B, T, d] -> [B, d]: single-row attention as learned temporal pooling."""

    def __init__(self, d_in, attention_dim, seed):
        self.params = AttentionParams.init(d_in, attention_dim, seed, n_rows=1)

    def __call__(self, x, ctx=EVAL):
        f = T.tanh3(T.project_seq(self.params.s_k, x))       # [B, a, T]
        a = T.softmax_last(T.combine_rows(self.params.s_a, f))  # [B, 1, T]
        return T.squeeze_row(T.attend(a, x))                 # [B, d]


class SeBlockLayer(Layer):
    """[B, T, C] -> [B, T, C] channel reweighting."""

    def __init__(self, channels, seed, ratio=4):
        self.params = SeParams.init(channels, seed, ratio=ratio)

    def __call__(self, x, ctx=EVAL):
        sq = T.mean_time(x)  # [B, C]
        p = self.params
        gate = T.sigmoid(dense(DenseParams(p.w2, p.b2),
                               T.relu(dense(DenseParams(p.w1, p.b1), sq))))
        return T.scale_channels(x, gate)


class DropoutLayer(Layer):
    """Inverted dropout; identity in eval mode."""

    def __init__(self, p_drop):
        if not 0.0 <= float(p_drop) < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {p_drop}")
        self.p_drop = float(p_drop)

    def __call__(self, x, ctx=EVAL):
        if not ctx.train or self.p_drop == 0.0:
            return x
        return T.dropout(x, self.p_drop, seed=ctx.dropout_seed())


class DenseLayer(Layer):
    """[B, d_in] -> [B, d_out], optional activation ('hlu' or None)."""

    def __init__(self, d_in, d_out, seed, activation=None, alpha=0.1):
        self.params = DenseParams.init(d_in, d_out, seed)
        if activation not in (None, "hlu", "relu"):
            raise ValueError(f"unknown activation {activation!r}")
        self.activation = activation
        self.alpha = alpha

    def __call__(self, x, ctx=EVAL):
        out = dense(self.params, x)
        if self.activation == "hlu":
            out = T.hlu(out, alpha=self.alpha)
        elif self.activation == "relu":
            out = T.relu(out)
        return out
