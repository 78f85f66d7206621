"""Autodiff core: forward oracles against plain numpy, gradient checks
against central finite differences, and shape/domain error contracts."""

import numpy as np
import pytest

from wavecast import tensor as wt
from wavecast.tensor import (
    DomainError,
    GradCheckConfig,
    ShapeMismatchError,
    Tensor,
    gradient_check,
)


def rand(shape, seed, lo=-2.0, hi=2.0):
    rng = np.random.default_rng(seed)
    return rng.uniform(lo, hi, size=shape)


def check(fn, params, seed=0):
    failures = gradient_check(fn, params, GradCheckConfig(), seed=seed)
    assert not failures, "\n".join(failures)


# ---------------------------------------------------------------------------
# forward oracles
# ---------------------------------------------------------------------------

def test_elementwise_forward_matches_numpy():
    a = rand((4, 5), 1)
    b = rand((4, 5), 2)
    ta, tb = Tensor(a), Tensor(b)
    np.testing.assert_allclose(wt.add(ta, tb).data, a + b, rtol=0, atol=0)
    np.testing.assert_allclose(wt.sub(ta, tb).data, a - b, rtol=0, atol=0)
    np.testing.assert_allclose(wt.mul(ta, tb).data, a * b, rtol=0, atol=0)
    np.testing.assert_allclose(wt.sigmoid(ta).data, 1 / (1 + np.exp(-a)), rtol=1e-15)
    np.testing.assert_allclose(wt.tanh(ta).data, np.tanh(a), rtol=1e-15)
    np.testing.assert_allclose(wt.exp(ta).data, np.exp(a), rtol=1e-15)
    np.testing.assert_allclose(wt.relu(ta).data, np.maximum(a, 0), rtol=0)
    c = rand((4, 5), 3, lo=-0.9, hi=3.0)
    np.testing.assert_allclose(wt.log1p(Tensor(c)).data, np.log1p(c), rtol=1e-15)


def test_elementwise_dispatch_routes_by_name():
    a, b = Tensor(rand((3, 3), 4)), Tensor(rand((3, 3), 5))
    np.testing.assert_array_equal(wt.elementwise("add", a, b).data, a.data + b.data)
    np.testing.assert_array_equal(wt.elementwise("tanh", a).data, np.tanh(a.data))
    with pytest.raises(ValueError):
        wt.elementwise("add", a)
    with pytest.raises(ValueError):
        wt.elementwise("tanh", a, b)
    with pytest.raises(ValueError):
        wt.elementwise("cosh", a)


def test_hlu_hand_values():
    x = Tensor(np.array([2.0, -1.0, 0.0, -3.0]))
    out = wt.hlu(x, alpha=0.1).data
    # x > 0: identity; x <= 0: alpha*x/(1-x)
    np.testing.assert_allclose(out, [2.0, 0.1 * -1 / 2, 0.0, 0.1 * -3 / 4])
    # continuous at 0, saturates toward -alpha for very negative x
    eps = 1e-9
    near = wt.hlu(Tensor(np.array([-eps, eps])), alpha=0.1).data
    assert abs(near[0]) < 1e-9 and abs(near[1]) < 1e-8
    deep = wt.hlu(Tensor(np.array([-1e12])), alpha=0.1).item()
    assert abs(deep - (-0.1)) < 1e-9


def test_matmul_forward_and_shape_error():
    a, b = rand((3, 4), 6), rand((4, 2), 7)
    np.testing.assert_allclose(wt.matmul(Tensor(a), Tensor(b)).data, a @ b, rtol=1e-15)
    with pytest.raises(ShapeMismatchError) as ei:
        wt.matmul(Tensor(a), Tensor(rand((3, 2), 8)))
    assert "(3, 4)" in str(ei.value) and "(3, 2)" in str(ei.value)


def test_no_silent_broadcasting():
    a = Tensor(rand((3, 4), 9))
    v = Tensor(rand((4,), 10))
    with pytest.raises(ShapeMismatchError):
        wt.add(a, v)  # must use add_rowvec explicitly
    np.testing.assert_allclose(wt.add_rowvec(a, v).data, a.data + v.data[None, :])
    np.testing.assert_allclose(wt.mul_rowvec(a, v).data, a.data * v.data[None, :])


def test_reductions_match_numpy():
    a = rand((5, 7), 11)
    t = Tensor(a)
    assert wt.reduce_sum(t).item() == pytest.approx(a.sum(), rel=1e-15)
    assert wt.reduce_mean(t).item() == pytest.approx(a.mean(), rel=1e-15)
    assert wt.reduce_max(t).item() == a.max()
    np.testing.assert_allclose(wt.reduce_sum(t, axis=0).data, a.sum(axis=0), rtol=1e-15)
    np.testing.assert_allclose(wt.reduce_mean(t, axis=1).data, a.mean(axis=1), rtol=1e-15)
    np.testing.assert_allclose(wt.reduce("sum", t).data, a.sum())
    s = wt.reduce("softmax_rows", t).data
    np.testing.assert_allclose(s.sum(axis=1), np.ones(5), rtol=1e-12)
    e = np.exp(a - a.max(axis=1, keepdims=True))
    np.testing.assert_allclose(s, e / e.sum(axis=1, keepdims=True), rtol=1e-12)


def test_softmax_rows_extreme_values_stay_finite():
    a = Tensor(np.array([[1000.0, 0.0, -1000.0], [5.0, 5.0, 5.0]]))
    s = wt.softmax_rows(a).data
    assert np.all(np.isfinite(s))
    np.testing.assert_allclose(s.sum(axis=1), [1.0, 1.0], rtol=1e-12)


def test_log1p_domain_error():
    with pytest.raises(DomainError):
        wt.log1p(Tensor(np.array([0.5, -1.0])))
    with pytest.raises(DomainError):
        wt.log1p(Tensor(np.array([-2.0])))


def conv1d_ref(x, w, b, stride):
    # independent brute-force oracle: nested loops, no vectorization
    bsz, t, c = x.shape
    k, _, f = w.shape
    t_out = (t - k) // stride + 1
    out = np.zeros((bsz, t_out, f))
    for n in range(bsz):
        for j in range(t_out):
            for ff in range(f):
                acc = 0.0
                for i in range(k):
                    for cc in range(c):
                        acc += x[n, j * stride + i, cc] * w[i, cc, ff]
                out[n, j, ff] = acc + b[ff]
    return out


@pytest.mark.parametrize("t,k,stride", [(16, 3, 1), (10, 3, 2), (7, 7, 1), (9, 2, 3)])
def test_conv1d_matches_bruteforce(t, k, stride):
    x, w, b = rand((3, t, 4), 20 + t), rand((k, 4, 5), 21 + k), rand((5,), 22)
    out = wt.conv1d(Tensor(x), Tensor(w), Tensor(b), stride=stride)
    expect = conv1d_ref(x, w, b, stride)
    assert out.shape == expect.shape == (3, (t - k) // stride + 1, 5)
    np.testing.assert_allclose(out.data, expect, rtol=1e-12, atol=1e-14)


def test_conv1d_kernel_longer_than_input_raises():
    x, w, b = Tensor(rand((1, 4, 2), 30)), Tensor(rand((5, 2, 3), 31)), Tensor(rand((3,), 32))
    with pytest.raises(ShapeMismatchError):
        wt.conv1d(x, w, b)


def test_dropout_contract():
    x = Tensor(rand((200, 50), 33), requires_grad=True)
    assert wt.dropout(x, 0.0, seed=1) is x  # p=0 is the identity
    a = wt.dropout(x, 0.3, seed=7).data
    b = wt.dropout(x, 0.3, seed=7).data
    np.testing.assert_array_equal(a, b)  # deterministic per seed
    c = wt.dropout(x, 0.3, seed=8).data
    assert not np.array_equal(a, c)
    kept = a != 0
    assert abs(kept.mean() - 0.7) < 0.02  # drop rate ~ p
    np.testing.assert_allclose(a[kept], x.data[kept] / 0.7, rtol=1e-12)  # inverted scaling
    for bad in (-0.1, 1.0, 1.5):
        with pytest.raises(ValueError):
            wt.dropout(x, bad, seed=1)


def test_glorot_bounds_and_determinism():
    t1 = wt.glorot_init((40, 60), seed=5)
    t2 = wt.glorot_init((40, 60), seed=5)
    t3 = wt.glorot_init((40, 60), seed=6)
    limit = np.sqrt(6.0 / (40 + 60))
    assert np.all(np.abs(t1.data) <= limit)
    np.testing.assert_array_equal(t1.data, t2.data)
    assert not np.array_equal(t1.data, t3.data)
    assert t1.data.std() > 0.1 * limit  # actually spread out, not degenerate
    # rank-3 kernels count leading axes as receptive field
    k = wt.glorot_init((3, 8, 16), seed=7)
    lim3 = np.sqrt(6.0 / (3 * 8 + 3 * 16))
    assert np.all(np.abs(k.data) <= lim3)
    with pytest.raises(ValueError):
        wt.glorot_init((0, 4), seed=1)


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------

def test_grad_accumulates_on_reuse():
    x = Tensor(np.array([[3.0]]), requires_grad=True)
    y = wt.reduce_sum(wt.add(x, x))
    y.backward()
    assert x.grad[0, 0] == 2.0


def test_backward_requires_scalar():
    x = Tensor(rand((3, 3), 40), requires_grad=True)
    with pytest.raises(ValueError):
        wt.add(x, x).backward()


def test_reduce_max_splits_grad_across_ties():
    x = Tensor(np.array([[1.0, 5.0, 5.0, 0.0]]), requires_grad=True)
    wt.reduce_max(x).backward()
    np.testing.assert_allclose(x.grad, [[0.0, 0.5, 0.5, 0.0]])


def test_gradcheck_elementwise_chain():
    a = Tensor(rand((4, 6), 50), requires_grad=True)
    b = Tensor(rand((4, 6), 51), requires_grad=True)

    def fn():
        z = wt.mul(wt.sigmoid(a), wt.tanh(b))
        z = wt.add(z, wt.hlu(wt.sub(a, b), alpha=0.1))
        return wt.reduce_sum(z)

    check(fn, [a, b], seed=1)


def test_gradcheck_matmul_bias_softmax():
    x = Tensor(rand((5, 4), 52), requires_grad=True)
    w = Tensor(rand((4, 3), 53), requires_grad=True)
    v = Tensor(rand((3,), 54), requires_grad=True)

    def fn():
        h = wt.add_rowvec(wt.matmul(x, w), v)
        return wt.reduce_mean(wt.mul(wt.softmax_rows(h), h))

    check(fn, [x, w, v], seed=2)


def test_gradcheck_reductions_and_structure():
    x = Tensor(rand((3, 8), 55), requires_grad=True)

    def fn():
        a = wt.reduce_sum(wt.exp(wt.scale(x, 0.3)), axis=1)  # [3]
        b = wt.reduce_mean(wt.reshape(x, (4, 6)), axis=0)    # [6]
        c = wt.concat([wt.reshape(a, (3, 1)), wt.transpose(wt.reshape(b, (1, 6)))], axis=0)
        return wt.reduce_mean(wt.log1p(wt.mul(c, c)))

    check(fn, [x], seed=3)


def test_gradcheck_conv1d_strided():
    x = Tensor(rand((2, 12, 3), 56), requires_grad=True)
    w = Tensor(rand((3, 3, 4), 57), requires_grad=True)
    b = Tensor(rand((4,), 58), requires_grad=True)

    def fn():
        return wt.reduce_mean(wt.hlu(wt.conv1d(x, w, b, stride=2), alpha=0.1))

    check(fn, [x, w, b], seed=4)


def test_gradcheck_batched_sequence_ops():
    x = Tensor(rand((2, 5, 3), 59), requires_grad=True)
    w = Tensor(rand((3, 4), 60), requires_grad=True)
    v = Tensor(rand((4,), 61), requires_grad=True)
    g = Tensor(rand((2, 4), 62), requires_grad=True)

    def fn():
        h = wt.add_channelvec(wt.matmul_batched(x, w), v)    # [2,5,4]
        h = wt.scale_channels(h, wt.sigmoid(g))              # [2,5,4]
        steps = [wt.timestep(h, t) for t in range(5)]
        h2 = wt.stack_time([wt.tanh(s) for s in steps])      # [2,5,4]
        return wt.reduce_sum(wt.mean_time(h2))

    check(fn, [x, w, v, g], seed=5)


def test_gradcheck_attention_ops():
    x = Tensor(rand((2, 6, 4), 63), requires_grad=True)
    sk = Tensor(rand((5, 4), 64), requires_grad=True)
    sa = Tensor(rand((2, 5), 65), requires_grad=True)

    def fn():
        f = wt.tanh3(wt.project_seq(sk, x))       # [2,5,6]
        a = wt.softmax_last(wt.combine_rows(sa, f))  # [2,2,6]
        o = wt.attend(a, x)                        # [2,2,4]
        return wt.reduce_sum(wt.mul(o, o))

    check(fn, [x, sk, sa], seed=6)


def test_gradcheck_dropout_fixed_seed():
    x = Tensor(rand((6, 6), 66), requires_grad=True)

    def fn():
        return wt.reduce_sum(wt.dropout(wt.tanh(x), 0.4, seed=123))

    check(fn, [x], seed=7)


def test_gradient_check_reports_wrong_gradients():
    # a deliberately wrong pullback must be caught
    x = Tensor(rand((3, 3), 67), requires_grad=True)

    def fn():
        out = wt.Tensor(x.data * x.data, _parents=((x, lambda g: g),))  # wrong: should be 2x*g
        return wt.reduce_sum(out)

    failures = gradient_check(fn, [x], GradCheckConfig(), seed=8)
    assert failures
