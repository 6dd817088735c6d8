import math
import threading

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mxfontpp.autodiff import (
    BackwardError,
    DimensionError,
    NonFiniteError,
    Tape,
    Tensor,
    backward,
    grad_check,
    no_grad,
    ops,
    sabotage,
)
from mxfontpp.autodiff.gradcheck import rel_err


def leaf(x, dtype=np.float64):
    return Tensor(np.asarray(x, dtype=dtype), requires_grad=True)


def project(out_fn, seed=0):
    rng = np.random.default_rng(seed)
    cache = {}

    def f():
        out = out_fn()
        if "w" not in cache:
            cache["w"] = rng.standard_normal(out.shape)
        return ops.sum(out * Tensor(cache["w"]))

    return f


# -- matmul -----------------------------------------------------------------------

def test_matmul_identity():
    b = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(ops.matmul(Tensor(np.eye(2)), Tensor(b)).data, b)


def test_matmul_hand_arithmetic():
    out = ops.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
    np.testing.assert_array_equal(out.data, [[11.0]])


def test_matmul_grad_matches_finite_differences(rng):
    a, b = leaf(rng.standard_normal((5, 4))), leaf(rng.standard_normal((4, 3)))
    report = grad_check(project(lambda: ops.matmul(a, b)), {"a": a, "b": b})
    assert report.passed, report.lines()


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


# -- softmax ----------------------------------------------------------------------

@pytest.mark.parametrize(
    "x, expected",
    [([0.0, 0.0], [0.5, 0.5]), ([1000.0, 1000.0], [0.5, 0.5]), ([0.0, math.log(3.0)], [0.25, 0.75])],
)
def test_softmax_examples(x, expected):
    np.testing.assert_allclose(ops.softmax(Tensor(x)).data, expected, rtol=0, atol=1e-12)


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)), elements=st.floats(-1e3, 1e3)))
def test_softmax_rows_are_probability_vectors(x):
    out = ops.softmax(Tensor(x), axis=-1).data
    assert np.all(out >= 0) and np.all(out <= 1)
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-6)


def test_softmax_invalid_axis():
    with pytest.raises(DimensionError):
        ops.softmax(Tensor(np.ones((2, 2))), axis=2)


# -- layer_norm -------------------------------------------------------------------

def test_layer_norm_constant_token_is_zero():
    out = ops.layer_norm(Tensor(np.full((1, 4), 7.0)), Tensor(np.ones(4)), Tensor(np.zeros(4)))
    np.testing.assert_array_equal(out.data, np.zeros((1, 4)))


def test_layer_norm_closed_form():
    out = ops.layer_norm(Tensor([1.0, 3.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=0.0)
    np.testing.assert_allclose(out.data, [-1.0, 1.0], rtol=0, atol=1e-12)


def test_layer_norm_statistics(rng):
    x = Tensor(rng.standard_normal((3, 8, 2, 2)) * 5 + 2)
    out = ops.layer_norm(x, Tensor(np.ones(8)), Tensor(np.zeros(8)), axis=1).data
    np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-9)
    np.testing.assert_allclose(out.var(axis=1), 1.0, atol=1e-3)


def test_layer_norm_grad(rng):
    x, g, b = leaf(rng.standard_normal((2, 6))), leaf(rng.standard_normal(6)), leaf(rng.standard_normal(6))
    report = grad_check(project(lambda: ops.layer_norm(x, g, b)), {"x": x, "gain": g, "bias": b})
    assert report.passed, report.lines()


def test_layer_norm_affine_shape_checked():
    with pytest.raises(DimensionError):
        ops.layer_norm(Tensor(np.ones((2, 4))), Tensor(np.ones(3)), Tensor(np.zeros(3)))


# -- conv2d -----------------------------------------------------------------------

def naive_conv(x, w, stride, pad):
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    o, c, kh, kw = w.shape
    ho = (xp.shape[1] - kh) // stride + 1
    wo = (xp.shape[2] - kw) // stride + 1
    y = np.zeros((o, ho, wo))
    for oc in range(o):
        for r in range(ho):
            for q in range(wo):
                patch = xp[:, r * stride : r * stride + kh, q * stride : q * stride + kw]
                y[oc, r, q] = (patch * w[oc]).sum()
    return y


def test_conv2d_identity_kernel(rng):
    x = rng.standard_normal((1, 5, 5))
    out = ops.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))), stride=1)
    np.testing.assert_array_equal(out.data, x)


def test_conv2d_all_ones_sum():
    out = ops.conv2d(Tensor(np.ones((1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))))
    np.testing.assert_array_equal(out.data, [[[9.0]]])


@pytest.mark.parametrize("stride, pad", [(1, 0), (1, 1), (2, 1), (2, 0)])
def test_conv2d_matches_naive_loops(rng, stride, pad):
    x, w = rng.standard_normal((3, 7, 6)), rng.standard_normal((4, 3, 3, 3))
    np.testing.assert_allclose(ops.conv2d(Tensor(x), Tensor(w), stride, pad).data, naive_conv(x, w, stride, pad), atol=1e-12)


def test_conv2d_is_cross_correlation():
    x = np.zeros((1, 3, 3))
    x[0, 0, 0] = 1.0
    w = np.arange(9.0).reshape(1, 1, 3, 3)
    # unflipped kernel: the single nonzero input picks w[0,0] at output (0,0)
    assert ops.conv2d(Tensor(x), Tensor(w)).data[0, 0, 0] == w[0, 0, 0, 0]


def test_conv2d_grad(rng):
    x, w = leaf(rng.standard_normal((2, 3, 6, 6))), leaf(rng.standard_normal((2, 3, 3, 3)))
    report = grad_check(project(lambda: ops.conv2d(x, w, 2, 1)), {"x": x, "kernel": w})
    assert report.passed, report.lines()


def test_conv2d_nonpositive_extent():
    with pytest.raises(DimensionError):
        ops.conv2d(Tensor(np.ones((1, 2, 2))), Tensor(np.ones((1, 1, 3, 3))))


# -- avg_pool2d / upsample ----------------------------------------------------------

def test_avg_pool_constant():
    out = ops.avg_pool2d(Tensor(np.full((2, 4, 4), 3.5)), 2)
    np.testing.assert_array_equal(out.data, np.full((2, 2, 2), 3.5))


def test_avg_pool_mean():
    np.testing.assert_array_equal(ops.avg_pool2d(Tensor([[[1.0, 2.0], [3.0, 4.0]]]), 2).data, [[[2.5]]])


def test_avg_pool_grad_is_uniform_share():
    x = leaf(np.arange(16.0).reshape(1, 4, 4))
    backward(ops.sum(ops.avg_pool2d(x, 2)))
    np.testing.assert_array_equal(x.grad, np.full((1, 4, 4), 0.25))
    y = leaf(np.random.default_rng(0).standard_normal((2, 4, 4)))
    assert grad_check(project(lambda: ops.avg_pool2d(y, 2)), {"x": y}).passed


def test_avg_pool_non_divisible():
    with pytest.raises(DimensionError):
        ops.avg_pool2d(Tensor(np.ones((1, 5, 4))), 2)


def test_upsample_grad(rng):
    x = leaf(rng.standard_normal((2, 3, 3)))
    assert grad_check(project(lambda: ops.upsample2x(x)), {"x": x}).passed


# -- chunk / concat ------------------------------------------------------------------

def test_chunk_preserves_order():
    z = Tensor(np.arange(4 * 2 * 2, dtype=float).reshape(4, 2, 2))
    a, b = ops.chunk_channels(z)
    np.testing.assert_array_equal(a.data, z.data[:2])
    np.testing.assert_array_equal(b.data, z.data[2:])


@given(
    arrays(np.float64, st.tuples(st.integers(1, 4).map(lambda c: 2 * c), st.integers(1, 4), st.integers(1, 4)),
           elements=st.floats(-1e6, 1e6))
)
def test_chunk_concat_round_trip_bitwise(z):
    out = ops.concat_channels(ops.chunk_channels(Tensor(z))).data
    assert out.tobytes() == z.tobytes()


def test_chunk_concat_grad_is_identity(rng):
    z = leaf(rng.standard_normal((4, 3, 3)))
    backward(ops.sum(ops.concat_channels(ops.chunk_channels(z)) * 1.0))
    np.testing.assert_array_equal(z.grad, np.ones((4, 3, 3)))
    z2 = leaf(rng.standard_normal((4, 3, 3)))
    assert grad_check(project(lambda: ops.concat_channels(ops.chunk_channels(z2))), {"z": z2}).passed


def test_chunk_odd_channels():
    with pytest.raises(DimensionError):
        ops.chunk_channels(Tensor(np.ones((3, 2, 2))))


def test_concat_single_part_identity(rng):
    x = rng.standard_normal((2, 3, 3))
    np.testing.assert_array_equal(ops.concat_channels([Tensor(x)]).data, x)


def test_concat_channel_order(rng):
    a, b = rng.standard_normal((2, 3, 3)), rng.standard_normal((3, 3, 3))
    out = ops.concat_channels([Tensor(a), Tensor(b)]).data
    assert out.shape == (5, 3, 3)
    np.testing.assert_array_equal(out[:2], a)
    np.testing.assert_array_equal(out[2:], b)


def test_concat_grad_splits_exactly(rng):
    a, b = leaf(rng.standard_normal((2, 3, 3))), leaf(rng.standard_normal((3, 3, 3)))
    w = rng.standard_normal((5, 3, 3))
    backward(ops.sum(ops.concat_channels([a, b]) * Tensor(w)))
    np.testing.assert_array_equal(a.grad, w[:2])
    np.testing.assert_array_equal(b.grad, w[2:])


def test_concat_spatial_mismatch():
    with pytest.raises(DimensionError):
        ops.concat_channels([Tensor(np.ones((1, 2, 2))), Tensor(np.ones((1, 3, 2)))])


# -- backward semantics ----------------------------------------------------------------

def test_backward_sum_gives_ones(rng):
    x = leaf(rng.standard_normal((3, 2)))
    backward(ops.sum(x))
    np.testing.assert_array_equal(x.grad, np.ones((3, 2)))


def test_backward_half_square_gives_x(rng):
    x = leaf(rng.standard_normal(5))
    backward(ops.sum(x * x) / 2.0)
    np.testing.assert_allclose(x.grad, x.data, rtol=1e-15)


def test_backward_twice_raises(rng):
    x = leaf(rng.standard_normal(3))
    loss = ops.sum(x * x)
    backward(loss)
    with pytest.raises(BackwardError):
        backward(loss)


def test_backward_non_scalar_raises(rng):
    with pytest.raises(BackwardError):
        backward(leaf(rng.standard_normal(3)) * 2.0)


def test_backward_detached_raises(rng):
    x = leaf(rng.standard_normal(3))
    with pytest.raises(BackwardError):
        backward(ops.sum(x).detach())
    with no_grad():
        loss = ops.sum(x)
    with pytest.raises(BackwardError):
        backward(loss)


def test_backward_reaches_every_leaf_through_shared_use(rng):
    a, b = leaf(rng.standard_normal(4)), leaf(rng.standard_normal(4))
    c = a * b
    backward(ops.sum(c + c * a))
    np.testing.assert_allclose(a.grad, b.data + 2 * a.data * b.data)
    np.testing.assert_allclose(b.grad, a.data + a.data * a.data)


def test_tape_records_in_order_and_is_trimmed(rng):
    with Tape() as tape:
        x = leaf(rng.standard_normal(3))
        loss = ops.sum(ops.gelu(x))
        assert [n.op for n in tape.nodes] == ["gelu", "sum"]
        backward(loss)
        assert len(tape) == 0


def test_tape_is_thread_confined():
    tape = Tape()
    errors = []

    def worker():
        try:
            tape.record("x", (), lambda g: ())
        except RuntimeError as e:
            errors.append(e)

    t = threading.Thread(target=worker)
    t.start()
    t.join()
    assert errors


def test_threads_get_separate_tapes(rng):
    results = {}

    def worker(seed):
        x = leaf(np.random.default_rng(seed).standard_normal(4))
        backward(ops.sum(x * x))
        results[seed] = x.grad.copy()

    threads = [threading.Thread(target=worker, args=(s,)) for s in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for s, g in results.items():
        np.testing.assert_allclose(g, 2 * np.random.default_rng(s).standard_normal(4))


# -- finiteness ---------------------------------------------------------------------------

def test_nan_input_rejected():
    with pytest.raises(NonFiniteError):
        Tensor([1.0, np.nan])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_overflow_names_the_op():
    with pytest.raises(NonFiniteError, match="div"):
        ops.div(Tensor([1.0]), Tensor([0.0]))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_adjoint_aborts():
    x = leaf([0.0])
    loss = ops.sum(ops.sqrt(x))
    with pytest.raises(NonFiniteError, match="sqrt"):
        backward(loss)


# -- determinism ------------------------------------------------------------------------------

def test_forward_is_bitwise_deterministic(rng):
    x, w = rng.standard_normal((2, 3, 8, 8)).astype(np.float32), rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
    outs = [ops.gelu(ops.conv2d(Tensor(x), Tensor(w), 2, 1)).data.tobytes() for _ in range(3)]
    assert len(set(outs)) == 1


# -- grad_check itself -------------------------------------------------------------------------

def test_grad_check_linear_map_is_exact(rng):
    w = leaf(rng.standard_normal((4, 3)))
    x = Tensor(rng.standard_normal((2, 4)))
    report = grad_check(lambda: ops.sum(ops.matmul(x, w)), {"w": w})
    assert report.max_rel_err < 1e-8


def test_grad_check_negative_control(rng):
    x, w = leaf(rng.standard_normal((1, 4, 4))), leaf(rng.standard_normal((2, 1, 3, 3)))
    with sabotage("conv2d", 2.0):
        report = grad_check(project(lambda: ops.conv2d(x, w, 1, 1)), {"x": x, "w": w})
    assert not report.passed
    assert {b.name for b in report.failures} == {"x", "w"}


def test_grad_check_requires_float64():
    with pytest.raises(TypeError):
        grad_check(lambda: None, {"p": Tensor(np.ones(2, np.float32), requires_grad=True)})


def test_rel_err_floor():
    assert rel_err(np.array([0.0]), np.array([1e-9]))[0] < 1e-2
    assert rel_err(np.array([1.0]), np.array([2.0]))[0] == 0.5


@pytest.mark.parametrize(
    "op",
    [ops.gelu, ops.sigmoid, ops.sqrt, lambda t: ops.mean(t, axis=0), lambda t: ops.transpose(t, (1, 0))],
)
def test_elementwise_grads(op, rng):
    x = leaf(rng.uniform(0.5, 2.0, size=(3, 4)))
    assert grad_check(project(lambda: op(x)), {"x": x}).passed


def test_cross_entropy_value_and_grad(rng):
    logits = leaf(np.zeros((2, 5)))
    np.testing.assert_allclose(ops.cross_entropy(logits, [0, 3]).data, math.log(5))
    x = leaf(rng.standard_normal((3, 4)))
    assert grad_check(lambda: ops.sum(ops.cross_entropy(x, [0, 1, 3])), {"x": x}).passed
