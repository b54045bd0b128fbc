import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from tagcn import autograd as ag
from tagcn.autograd import ShapeError, Tensor


def leaf(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


# conv2d

def test_conv_identity_kernel():
    x = np.ones((1, 3, 2))
    k = np.ones((1, 1, 1, 1))
    np.testing.assert_array_equal(ag.conv2d(x, k).data, x)


def test_conv_hand_sum():
    x = np.array([1.0, 2.0, 3.0]).reshape(1, 3, 1)
    k = np.ones((1, 1, 3, 1))
    out = ag.conv2d(x, k, pad_t=1).data
    np.testing.assert_allclose(out.ravel(), [3.0, 6.0, 5.0])


def test_conv_output_shape_canonical(rng):
    x = rng.normal(size=(3, 300, 25))
    k = rng.normal(size=(64, 3, 1, 1))
    assert ag.conv2d(x, k).shape == (64, 300, 25)


def test_conv_channel_mismatch():
    with pytest.raises(ShapeError):
        ag.conv2d(np.zeros((2, 4, 3)), np.zeros((1, 3, 1, 1)))


@pytest.mark.parametrize("t,k,stride,pad", [(7, 3, 1, 1), (8, 3, 2, 1), (9, 9, 2, 4), (5, 1, 3, 0)])
def test_conv_matches_loop_oracle(rng, t, k, stride, pad):
    x = rng.normal(size=(2, 3, t, 4))
    w = rng.normal(size=(5, 3, k, 1))
    b = rng.normal(size=5)
    out = ag.conv2d(x, w, b, stride, pad).data
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (0, 0)))
    t_out = (t + 2 * pad - k) // stride + 1
    ref = np.zeros((2, 5, t_out, 4))
    for bi in range(2):
        for o in range(5):
            for s in range(t_out):
                for n in range(4):
                    ref[bi, o, s, n] = b[o] + sum(w[o, c, j, 0] * xp[bi, c, s * stride + j, n]
                                                  for c in range(3) for j in range(k))
    np.testing.assert_allclose(out, ref, atol=1e-12)


# matmul_last

def test_matmul_last_identity(rng):
    x = rng.normal(size=(2, 3, 4))
    np.testing.assert_array_equal(ag.matmul_last(x, np.eye(4)).data, x)


def test_matmul_last_permutation():
    out = ag.matmul_last(np.array([1.0, 2.0]).reshape(1, 1, 2), np.array([[0.0, 1.0], [1.0, 0.0]]))
    np.testing.assert_array_equal(out.data.ravel(), [2.0, 1.0])


def test_matmul_last_loop_oracle(rng):
    x = rng.normal(size=(2, 3, 4))
    m = rng.normal(size=(4, 4))
    ref = np.zeros_like(x)
    for c in range(2):
        for t in range(3):
            for i in range(4):
                ref[c, t, i] = sum(x[c, t, j] * m[j, i] for j in range(4))
    np.testing.assert_allclose(ag.matmul_last(x, m).data, ref, atol=1e-13)


def test_matmul_last_shape_error():
    with pytest.raises(ShapeError):
        ag.matmul_last(np.zeros((1, 1, 3)), np.eye(4))


@given(hnp.arrays(np.float64, (2, 3, 4), elements=st.floats(-10, 10)),
       hnp.arrays(np.float64, (4, 4), elements=st.floats(-10, 10)),
       st.floats(-3, 3))
def test_matmul_last_linear(x, m, s):
    lhs = ag.matmul_last(x * s, m).data
    np.testing.assert_allclose(lhs, s * ag.matmul_last(x, m).data, atol=1e-9)
    np.testing.assert_allclose(ag.matmul_last(x, m + m).data,
                               2 * ag.matmul_last(x, m).data, atol=1e-9)


# batch norm

def test_batch_norm_eval_constant_gives_beta():
    x = np.full((2, 3, 4, 5), 7.0)
    beta = np.array([0.5, -1.0, 2.0])
    out = ag.batch_norm(x, np.ones(3), beta, np.full(3, 7.0), np.ones(3), training=False)
    np.testing.assert_allclose(out.data, np.broadcast_to(beta[None, :, None, None], x.shape))


def test_batch_norm_train_standardizes(rng):
    x = rng.normal(3.0, 5.0, size=(8, 3, 6, 5))
    rm, rv = np.zeros(3), np.ones(3)
    out = ag.batch_norm(x, np.ones(3), np.zeros(3), rm, rv, training=True).data
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1.0, atol=1e-5)


def test_batch_norm_unit_batch_nearly_identity(rng):
    x = rng.normal(size=(4, 2, 50, 5))
    x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
    out = ag.batch_norm(x, np.ones(2), np.zeros(2), np.zeros(2), np.ones(2), True).data
    np.testing.assert_allclose(out, x / np.sqrt(1 + 1e-5), atol=1e-12)


def test_batch_norm_running_stats_update(rng):
    x = rng.normal(2.0, 3.0, size=(4, 2, 5, 3))
    rm, rv = np.zeros(2), np.ones(2)
    ag.batch_norm(x, np.ones(2), np.zeros(2), rm, rv, True, momentum=0.25)
    mu = x.mean(axis=(0, 2, 3))
    var = x.var(axis=(0, 2, 3), ddof=1)
    np.testing.assert_allclose(rm, 0.25 * mu)
    np.testing.assert_allclose(rv, 0.75 + 0.25 * var)
    before = rm.copy()
    ag.batch_norm(x, np.ones(2), np.zeros(2), rm, rv, False)
    np.testing.assert_array_equal(rm, before)


# elementwise and pooling

def test_sigmoid_and_relu_values():
    assert ag.sigmoid(np.array(0.0)).item() == 0.5
    np.testing.assert_array_equal(ag.relu(np.array([-1.0, 2.0])).data, [0.0, 2.0])


def test_sigmoid_extremes_finite():
    s = ag.sigmoid(np.array([-1000.0, 1000.0])).data
    assert np.isfinite(s).all() and s[0] == 0.0 and s[1] == 1.0


def test_sigmoid_gradient_at_zero():
    x = leaf(0.0)
    ag.sigmoid(x).backward()
    assert x.grad == pytest.approx(0.25)
    assert ag.grad_check(lambda t: ag.sigmoid(t), 0.0) < 1e-8


def test_pool_values(rng):
    assert np.all(ag.global_avg_pool(np.ones((256, 75, 25))).data == 1.0)
    x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 2, 2)
    assert ag.global_avg_pool(x).data.tolist() == [2.5]
    r = rng.normal(size=(3, 4, 5))
    ref = [sum(r[c, t, n] for t in range(4) for n in range(5)) / 20 for c in range(3)]
    np.testing.assert_allclose(ag.global_avg_pool(r).data, ref)


# backward

def test_backward_sum_gives_ones(rng):
    x = leaf(rng.normal(size=(2, 3)))
    ag.tsum(x).backward()
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_backward_square():
    x = leaf([1.0, 2.0])
    ag.tsum(x * x).backward()
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])


def test_backward_accumulates_until_zeroed():
    x = leaf([1.0, 2.0])
    ag.tsum(x * x).backward()
    ag.tsum(x * x).backward()
    np.testing.assert_array_equal(x.grad, [4.0, 8.0])
    x.zero_grad()
    assert x.grad is None


def test_backward_rejects_non_scalar():
    with pytest.raises(ShapeError):
        (leaf([1.0, 2.0]) * 2.0).backward()


def test_fan_out_accumulates(rng):
    a = rng.normal(size=4)
    x = leaf(a)
    y = ag.sigmoid(x)
    (ag.tsum(y * y) + ag.tsum(ag.relu(x) * 3.0)).backward()
    s = 1 / (1 + np.exp(-a))
    np.testing.assert_allclose(x.grad, 2 * s * s * (1 - s) + 3.0 * (a > 0))


def test_record_visits_each_node_once():
    x = leaf([1.0, 2.0])
    y = x * x
    z = y + y + x
    order = ag.computation_record(ag.tsum(z))
    assert len(order) == len({id(n) for n in order})
    assert order[0] is x


# grad_check

def test_grad_check_linear_is_exact(rng):
    w = rng.normal(size=6)
    assert ag.grad_check(lambda t: ag.tsum(t * w), np.zeros(6)) <= 1e-10
    # away from the origin only rounding in f(x +/- h) remains
    assert ag.grad_check(lambda t: ag.tsum(t * w), rng.normal(size=6)) <= 1e-8


def test_grad_check_sigmoid_composition(rng):
    err = ag.grad_check(lambda t: ag.tsum(ag.sigmoid(ag.sigmoid(t) * 3.0)), rng.normal(size=5))
    assert err < 1e-6


def test_grad_check_detects_wrong_gradient():
    def bad(t):
        out = Tensor._from_op(t.data ** 2, (t,), lambda g: (g * t.data,), "bad")
        return ag.tsum(out)
    assert ag.grad_check(bad, np.array([1.0, 2.0])) > 0.4


@pytest.mark.parametrize("op", [
    lambda a, b: ag.tsum(ag.matmul_last(a, b) * a),
    lambda a, b: ag.tsum(ag.log_softmax(ag.matmul(ag.reshape(a, (6, 4)), b))),
    lambda a, b: ag.tsum(ag.transpose(a, (2, 0, 1)) * 1.5) + ag.tsum(ag.concat([a, a], 1) * 0.5),
    lambda a, b: ag.tsum(ag.mean(a * a, axis=(0, 2))) - ag.tsum(ag.sigmoid(b)),
])
def test_op_gradients(rng, op):
    a = rng.normal(size=(2, 3, 4))
    b = rng.normal(size=(4, 4))
    assert ag.grad_check(lambda ts: op(*ts), [a, b]) < 1e-6


def test_gather_frames_scatters_gradient(rng):
    x = leaf(rng.normal(size=(2, 1, 5, 2)))
    idx = np.array([[0, 3], [4, 1]])
    ag.tsum(ag.gather_frames(x, idx)).backward()
    mask = np.zeros((2, 1, 5, 2))
    mask[0, :, [0, 3]] = 1
    mask[1, :, [4, 1]] = 1
    np.testing.assert_array_equal(x.grad, mask)


def test_check_tensors_skips_kink_crossings():
    x = Tensor(np.array([1e-7, 1.0]), requires_grad=True)
    skipped = {}
    errors = ag.check_tensors(lambda: ag.tsum(ag.relu(x)), {"x": x}, skipped=skipped)
    assert skipped == {"x": 1}
    assert errors["x"] < 1e-8


def test_float32_opt_in(rng):
    x = Tensor(rng.normal(size=(1, 2, 5, 3)), dtype=np.float32)
    k = Tensor(rng.normal(size=(4, 2, 3, 1)), dtype=np.float32)
    assert ag.conv2d(x, k, pad_t=1).dtype == np.float32
