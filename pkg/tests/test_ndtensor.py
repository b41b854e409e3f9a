import math
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from moescope import ndtensor as nd
from moescope.errors import (ContractError, DimensionError, EmptySupportError, FormatError,
                             UninitializedStatisticsError)
from moescope.ndtensor import Tensor, kernels, serialize
from moescope.ndtensor import _pykernels

from gradcases import CASES
from oracles import check_grads, conv2d_direct


# ---------------------------------------------------------------- conv2d

def test_conv_identity_kernel(rng):
    x = rng.normal(size=(2, 3, 5, 5))
    w = np.zeros((3, 3, 1, 1))
    w[range(3), range(3)] = 1.0
    out = nd.conv2d(Tensor(x), Tensor(w), Tensor(np.zeros(3)))
    np.testing.assert_array_equal(out.data, x)


def test_conv_constant_input_interior_is_9c():
    c = 1.7
    x = np.full((1, 1, 6, 6), c)
    out = nd.conv2d(Tensor(x), Tensor(np.ones((1, 1, 3, 3))), padding=1).data
    np.testing.assert_allclose(out[0, 0, 1:-1, 1:-1], 9 * c, rtol=0, atol=1e-12)
    assert out[0, 0, 0, 0] == pytest.approx(4 * c)


def test_conv_three_stride2_blocks_96_to_12():
    x = Tensor(np.zeros((1, 1, 96, 96)))
    w = Tensor(np.zeros((1, 1, 3, 3)))
    for _ in range(3):
        x = nd.conv2d(x, w, stride=2, padding=1)
    assert x.shape == (1, 1, 12, 12)


@pytest.mark.parametrize("stride,pad,k", [(1, 0, 3), (1, 1, 3), (2, 1, 3), (2, 2, 5), (3, 0, 1)])
def test_conv_matches_direct_loop(rng, stride, pad, k):
    x = rng.normal(size=(2, 3, 9, 8))
    w = rng.normal(size=(4, 3, k, k))
    b = rng.normal(size=4)
    out = nd.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=pad).data
    np.testing.assert_allclose(out, conv2d_direct(x, w, b, stride, pad), atol=1e-12)


def test_conv_shape_errors_name_axes():
    x = Tensor(np.zeros((1, 3, 8, 8)))
    with pytest.raises(DimensionError, match="axis 1"):
        nd.conv2d(x, Tensor(np.zeros((2, 4, 3, 3))))
    with pytest.raises(DimensionError, match="odd"):
        nd.conv2d(x, Tensor(np.zeros((2, 3, 2, 2))))
    with pytest.raises(DimensionError, match="bias"):
        nd.conv2d(x, Tensor(np.zeros((2, 3, 3, 3))), Tensor(np.zeros(3)))
    with pytest.raises(DimensionError, match="rank-4"):
        nd.conv2d(Tensor(np.zeros((3, 8, 8))), Tensor(np.zeros((2, 3, 3, 3))))


def test_conv_bilinear(rng):
    x, y = rng.normal(size=(2, 2, 7, 7)), rng.normal(size=(2, 2, 7, 7))
    w, v = rng.normal(size=(3, 2, 3, 3)), rng.normal(size=(3, 2, 3, 3))
    a, b = 1.3, -0.4
    conv = lambda p, q: nd.conv2d(Tensor(p), Tensor(q), stride=2, padding=1).data
    np.testing.assert_allclose(conv(a * x + b * y, w), a * conv(x, w) + b * conv(y, w), atol=1e-10)
    np.testing.assert_allclose(conv(x, a * w + b * v), a * conv(x, w) + b * conv(x, v), atol=1e-10)


def test_backends_agree(rng):
    x = rng.normal(size=(3, 4, 11, 10))
    for stride, pad, k in [(1, 1, 3), (2, 1, 3), (2, 0, 5)]:
        a = _pykernels.im2col(x, k, k, stride, pad)
        b = kernels.im2col(x, k, k, stride, pad)
        np.testing.assert_array_equal(a, b)
        Ho = (11 + 2 * pad - k) // stride + 1
        Wo = (10 + 2 * pad - k) // stride + 1
        cols = rng.normal(size=(3 * Ho * Wo, 4 * k * k))
        np.testing.assert_allclose(_pykernels.col2im(cols, 3, 4, 11, 10, k, k, stride, pad),
                                   kernels.col2im(cols, 3, 4, 11, 10, k, k, stride, pad), atol=1e-12)


def test_compiled_backend_is_active():
    assert kernels.BACKEND in ("cython", "python")
    if kernels.compiled_backend is not None:
        assert kernels.BACKEND == "cython"


# ---------------------------------------------------------------- batchnorm

def test_bn_constant_batch_gives_zero():
    st_ = nd.BatchNormState(2)
    out = nd.batchnorm2d(Tensor(np.full((3, 2, 4, 4), 5.0)), Tensor(np.ones(2)), Tensor(np.zeros(2)), st_, True)
    np.testing.assert_allclose(out.data, 0.0, atol=1e-12)


def test_bn_train_standardises(rng):
    x = rng.normal(3.0, 2.0, size=(4, 3, 5, 5))
    out = nd.batchnorm2d(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)), nd.BatchNormState(3), True).data
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1.0, atol=1e-4)


def test_bn_affine_step(rng):
    x = rng.normal(size=(6, 3))
    s1, s2 = nd.BatchNormState(3), nd.BatchNormState(3)
    xhat = nd.batchnorm1d(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)), s1, True).data
    out = nd.batchnorm1d(Tensor(x), Tensor(np.full(3, 2.0)), Tensor(np.full(3, 3.0)), s2, True).data
    np.testing.assert_array_equal(out, 2 * xhat + 3)


def test_bn_eval_before_train_raises():
    with pytest.raises(UninitializedStatisticsError):
        nd.batchnorm2d(Tensor(np.zeros((1, 2, 2, 2))), Tensor(np.ones(2)), Tensor(np.zeros(2)), nd.BatchNormState(2), False)


def test_bn_train_needs_two_values():
    with pytest.raises(ContractError):
        nd.batchnorm1d(Tensor(np.zeros((1, 2))), Tensor(np.ones(2)), Tensor(np.zeros(2)), nd.BatchNormState(2), True)


def test_bn_running_statistics_momentum(rng):
    s = nd.BatchNormState(2, momentum=0.1)
    a, b = rng.normal(size=(8, 2)), rng.normal(1.0, 3.0, size=(8, 2))
    g, z = Tensor(np.ones(2)), Tensor(np.zeros(2))
    nd.batchnorm1d(Tensor(a), g, z, s, True)
    nd.batchnorm1d(Tensor(b), g, z, s, True)
    np.testing.assert_allclose(s.running_mean, 0.9 * a.mean(0) + 0.1 * b.mean(0))
    np.testing.assert_allclose(s.running_var, 0.9 * a.var(0, ddof=1) + 0.1 * b.var(0, ddof=1))
    out = nd.batchnorm1d(Tensor(b), g, z, s, False).data
    np.testing.assert_allclose(out, (b - s.running_mean) / np.sqrt(s.running_var + 1e-5))


# ---------------------------------------------------------------- pointwise

def test_softplus_values():
    sp = lambda v: nd.softplus(Tensor(np.array([v]))).item()
    assert sp(0.0) == pytest.approx(math.log(2), abs=1e-15)
    assert abs(sp(50.0) - 50.0) < 1e-12
    u = math.exp(-20.0)
    series = u - u * u / 2 + u ** 3 / 3
    assert abs(sp(-20.0) - series) <= 1e-12 * series
    assert np.isfinite(sp(1000.0)) and sp(-1000.0) == 0.0


def test_relu_values():
    np.testing.assert_array_equal(nd.relu(Tensor(np.array([-1.0, 0.0, 2.5]))).data, [0.0, 0.0, 2.5])


# ---------------------------------------------------------------- masked softmax

def test_softmax_examples():
    sm = lambda v: nd.softmax_masked(Tensor(np.array(v, dtype=float))).data
    np.testing.assert_allclose(sm([1, 1, 1]), [1 / 3] * 3, atol=1e-15)
    out = sm([-np.inf, 0, -np.inf, 0])
    np.testing.assert_array_equal(out, [0, 0.5, 0, 0.5])
    np.testing.assert_allclose(sm([3, 2]), [0.73106, 0.26894], atol=1e-5)


def test_softmax_all_masked_raises():
    with pytest.raises(EmptySupportError):
        nd.softmax_masked(Tensor(np.full(3, -np.inf)))


finite_or_masked = st.one_of(st.floats(-50, 50), st.just(-np.inf))


@settings(max_examples=200, deadline=None)
@given(st.lists(finite_or_masked, min_size=1, max_size=12).filter(lambda v: any(np.isfinite(v))))
def test_softmax_is_probability_vector(v):
    v = np.array(v)
    p = nd.softmax_masked(Tensor(v)).data
    assert (p >= 0).all()
    assert abs(p.sum() - 1) <= 1e-12
    assert (p[np.isneginf(v)] == 0).all()


def test_topk_lower_index_wins_ties():
    np.testing.assert_array_equal(nd.topk_indices(np.array([[1.0, 2.0, 2.0, 2.0]]), 2), [[1, 2]])


# ---------------------------------------------------------------- pooling, linear, norms

def test_gap_examples(rng):
    np.testing.assert_array_equal(nd.gap(Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))).data, [[2.5]])
    np.testing.assert_allclose(nd.gap(Tensor(np.full((2, 3, 4, 5), 1.25))).data, 1.25)
    x = rng.normal(size=(2, 4, 3, 3))
    perm = [2, 0, 3, 1]
    np.testing.assert_array_equal(nd.gap(Tensor(x[:, perm])).data, nd.gap(Tensor(x)).data[:, perm])


def test_linear_and_l2norm(rng):
    x, W, b = rng.normal(size=(3, 4)), rng.normal(size=(2, 4)), rng.normal(size=2)
    np.testing.assert_allclose(nd.linear(Tensor(x), Tensor(W), Tensor(b)).data, x @ W.T + b)
    with pytest.raises(DimensionError):
        nd.linear(Tensor(x), Tensor(rng.normal(size=(2, 5))))
    assert nd.l2norm(Tensor(np.array([3.0, 4.0]))).item() == 5.0
    assert nd.l2norm(Tensor(np.zeros(4))).item() == 0.0
    v = rng.normal(size=6)
    assert nd.l2norm(Tensor(-2.5 * v)).item() == pytest.approx(2.5 * nd.l2norm(Tensor(v)).item(), rel=1e-14)


def test_normalize_rows_rejects_zero_row():
    with pytest.raises(ContractError, match="zero-norm"):
        nd.normalize_rows(Tensor(np.array([[1.0, 0.0], [0.0, 0.0]])))


def test_no_implicit_broadcast():
    with pytest.raises(DimensionError):
        nd.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros(3)))


# ---------------------------------------------------------------- autodiff

def test_backward_sum_of_squares_exact(rng):
    x = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    nd.tsum(nd.square(x)).backward()
    np.testing.assert_array_equal(x.grad, 2 * x.data)


def test_backward_non_scalar_raises():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        nd.backward(nd.mul(x, x))


def test_grad_accumulates_across_uses(rng):
    x = Tensor(rng.normal(size=3), requires_grad=True)
    nd.tsum(nd.add(nd.mul(x, x), x)).backward()
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)
    nd.tsum(x).backward()
    np.testing.assert_allclose(x.grad, 2 * x.data + 2)


def test_grad_shapes_match_data(rng):
    x = Tensor(rng.normal(size=(2, 3, 5, 5)), requires_grad=True)
    w = Tensor(rng.normal(size=(4, 3, 3, 3)), requires_grad=True)
    nd.tsum(nd.conv2d(x, w, padding=1)).backward()
    assert x.grad.shape == x.shape and w.grad.shape == w.shape


def test_tape_visits_each_node_once(rng):
    x = Tensor(rng.normal(size=3), requires_grad=True)
    y = nd.mul(x, x)
    out = nd.tsum(nd.add(y, y))
    tape = nd.Tape.from_output(out)
    # leaf x, mul, add, sum: the shared y appears once
    assert len(tape) == 4
    assert len({id(e) for e in tape.entries}) == 4
    assert tape.entries[-1] is out and tape.entries[0] is x


def test_backward_is_bitwise_deterministic(rng):
    x0 = rng.normal(size=(2, 3, 6, 6))
    w0 = rng.normal(size=(4, 3, 3, 3))
    grads = []
    for _ in range(2):
        x, w = Tensor(x0.copy(), True), Tensor(w0.copy(), True)
        out = nd.softmax_masked(nd.reshape(nd.conv2d(x, w, stride=2, padding=1), (2, 36)))
        nd.tsum(nd.square(out)).backward()
        grads.append((x.grad.tobytes(), w.grad.tobytes()))
    assert grads[0] == grads[1]


def test_no_grad_records_nothing(rng):
    x = Tensor(rng.normal(size=3), requires_grad=True)
    with nd.no_grad():
        y = nd.mul(x, x)
    assert y.node is None and not y.requires_grad


def test_independent_tapes_in_threads(rng):
    data = [rng.normal(size=(5, 4)) for _ in range(4)]
    expected = [2 * d for d in data]
    results = [None] * 4

    def work(i):
        for _ in range(20):
            x = Tensor(data[i].copy(), True)
            nd.tsum(nd.square(x)).backward()
        results[i] = x.grad

    threads = [threading.Thread(target=work, args=(i,)) for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for r, e in zip(results, expected):
        np.testing.assert_array_equal(r, e)


@pytest.mark.parametrize("name", sorted(CASES))
def test_finite_difference_suite(name):
    rng = np.random.default_rng(sum(map(ord, name)))
    worst = max(check_grads(*CASES[name](rng)) for _ in range(20))
    assert worst < 1e-4, f"{name}: relative error {worst:.2e}"


def test_softmax_linear_chain_fd(rng):
    x = rng.normal(size=(3, 4))
    W, b = rng.normal(size=(5, 4)), rng.normal(size=5)
    R = rng.normal(size=(3, 5))
    build = lambda xt, wt, bt: nd.tsum(nd.mul(nd.softmax_masked(nd.linear(xt, wt, bt)), Tensor(R)))
    assert check_grads(build, [x, W, b]) < 1e-4


# ---------------------------------------------------------------- serialization

@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.lists(st.integers(1, 4), min_size=0, max_size=4).map(tuple)))
def test_ndt1_roundtrip_bit_exact(a):
    b = serialize.loads(serialize.dumps(a))
    assert b.shape == a.shape
    assert b.tobytes() == np.ascontiguousarray(a).tobytes()


def test_ndt1_layout():
    blob = serialize.dumps(np.array([[1.0, 2.0, 3.0]]))
    assert blob[:4] == b"NDT1" and blob[4] == 2
    assert serialize.loads(serialize.dumps(np.float64(2.5))).shape == ()
    assert np.frombuffer(blob[5:21], "<u8").tolist() == [1, 3]
    assert np.frombuffer(blob[21:], "<f8").tolist() == [1.0, 2.0, 3.0]


def test_ndt1_errors():
    blob = serialize.dumps(np.arange(6.0))
    with pytest.raises(FormatError):
        serialize.loads(blob[:-3])
    with pytest.raises(FormatError):
        serialize.loads(b"XXXX" + blob[4:])


def test_ndt1_file_roundtrip(tmp_path, rng):
    a = rng.normal(size=(3, 2, 2))
    serialize.save(tmp_path / "a.ndt", a)
    assert serialize.load(tmp_path / "a.ndt").tobytes() == a.tobytes()
