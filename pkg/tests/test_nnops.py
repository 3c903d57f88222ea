"""Neural-net ops: frozen hand values, contract edge cases, FD agreement."""

import math

import numpy as np
import pytest

from geoaware.errors import InputError, ShapeError
from geoaware.numerics import (
    Tensor,
    adaptive_avg_pool1d,
    conv1d,
    conv2d,
    cross_entropy,
    embedding_lookup,
    grad_check,
    layer_norm,
    mse_loss,
    relu,
    softmax,
    tensor_sum,
)
from geoaware.numerics.nnops import pool_bins

TOL = 1e-4


# -- relu / softmax / layer_norm ---------------------------------------------


def test_relu_values():
    out = relu(Tensor([-1.0, 0.0, 2.5]))
    assert np.array_equal(out.values, [0.0, 0.0, 2.5])


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(0)
    out = softmax(Tensor(rng.standard_normal((6, 9)) * 10.0))
    assert np.allclose(out.values.sum(axis=1), 1.0, atol=1e-6)
    assert (out.values >= 0.0).all()


def test_softmax_empty_axis_rejected():
    with pytest.raises(ShapeError):
        softmax(Tensor(np.ones((2, 0))))


def test_layer_norm_standardizes():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((5, 64)) * 3.0 + 2.0
    out = layer_norm(Tensor(x), Tensor(np.ones(64)), Tensor(np.zeros(64)))
    assert np.allclose(out.values.mean(axis=-1), 0.0, atol=1e-5)
    assert np.allclose(out.values.var(axis=-1), 1.0, atol=1e-5)


@pytest.mark.parametrize("seed", range(10))
def test_activation_grads_match_fd(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((4, 7)) + 0.05  # keep clear of the relu kink
    g, b = rng.standard_normal(7), rng.standard_normal(7)
    w = rng.standard_normal((4, 7))

    assert grad_check(lambda ts: tensor_sum(relu(ts[0]) * ts[1]), [x, w]) <= TOL
    assert grad_check(lambda ts: tensor_sum(softmax(ts[0]) * ts[1]), [x, w]) <= TOL
    assert grad_check(lambda ts: tensor_sum(layer_norm(ts[0], ts[1], ts[2]) * ts[3]), [x, g, b, w]) <= TOL


# -- conv1d ------------------------------------------------------------------


def test_conv1d_identity_kernel():
    x = np.arange(1.0, 6.0).reshape(1, 5)
    out = conv1d(Tensor(x), Tensor(np.ones((1, 1, 1))), Tensor(np.zeros(1)))
    assert np.array_equal(out.values, x)


def test_conv1d_hand_value_cross_correlation():
    # [1,2,3] * kernel [1,1], stride 1, no padding: windows [1,2],[2,3] -> [3,5]
    out = conv1d(Tensor([[1.0, 2.0, 3.0]]), Tensor([[[1.0, 1.0]]]), Tensor([0.0]))
    assert np.array_equal(out.values, [[3.0, 5.0]])


def test_conv1d_no_kernel_flip():
    # Asymmetric kernel distinguishes correlation from convolution.
    out = conv1d(Tensor([[1.0, 0.0, 0.0]]), Tensor([[[1.0, 2.0]]]), Tensor([0.0]))
    # window [1,0] . [1,2] = 1, window [0,0] . [1,2] = 0
    assert np.array_equal(out.values, [[1.0, 0.0]])


def test_conv1d_output_length():
    x = Tensor(np.ones((2, 10)))
    out = conv1d(x, Tensor(np.ones((3, 2, 3))), Tensor(np.zeros(3)), stride=2, padding=1)
    assert out.values.shape == (3, (10 + 2 - 3) // 2 + 1)


def test_conv1d_empty_output_rejected():
    with pytest.raises(ShapeError):
        conv1d(Tensor(np.ones((1, 2))), Tensor(np.ones((1, 1, 5))), Tensor(np.zeros(1)))


@pytest.mark.parametrize("seed", range(10))
def test_conv1d_grad_matches_fd(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((3, 8))
    w = rng.standard_normal((2, 3, 3))
    b = rng.standard_normal(2)
    probe = rng.standard_normal((2, 4))

    def f(ts):
        return tensor_sum(conv1d(ts[0], ts[1], ts[2], stride=2, padding=1) * ts[3])

    assert grad_check(f, [x, w, b, probe]) <= TOL


def test_conv1d_batched_grad_matches_fd():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((2, 3, 6))
    w = rng.standard_normal((4, 3, 3))
    b = rng.standard_normal(4)

    def f(ts):
        return tensor_sum(conv1d(ts[0], ts[1], ts[2], padding=1))

    assert grad_check(f, [x, w, b]) <= TOL


# -- conv2d ------------------------------------------------------------------


def test_conv2d_shapes():
    x = Tensor(np.ones((2, 3, 8, 8)))
    out = conv2d(x, Tensor(np.ones((5, 3, 3, 3))), Tensor(np.zeros(5)), stride=2, padding=1)
    assert out.values.shape == (2, 5, 4, 4)


@pytest.mark.parametrize("seed", range(5))
def test_conv2d_grad_matches_fd(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 2, 5, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)

    def f(ts):
        return tensor_sum(relu(conv2d(ts[0], ts[1], ts[2], stride=2, padding=1)))

    assert grad_check(f, [x, w, b]) <= TOL


# -- adaptive pooling --------------------------------------------------------


def test_pool_identity_when_out_equals_n():
    x = np.arange(12.0).reshape(3, 4)
    out = adaptive_avg_pool1d(Tensor(x), 4)
    assert np.array_equal(out.values, x)


def test_pool_full_mean():
    out = adaptive_avg_pool1d(Tensor([[2.0, 4.0, 6.0]]), 1)
    assert np.array_equal(out.values, [[4.0]])


def test_pool_bin_edges_formula():
    # Oracle: enumerate edges floor(i*N/out) for N=7, out_len=3.
    expected = [((i * 7) // 3, ((i + 1) * 7) // 3) for i in range(3)]
    assert pool_bins(7, 3) == expected == [(0, 2), (2, 4), (4, 7)]
    x = np.arange(7.0).reshape(1, 7)
    out = adaptive_avg_pool1d(Tensor(x), 3)
    manual = [x[0, lo:hi].mean() for lo, hi in expected]
    assert np.allclose(out.values, [manual])


def test_pool_more_bins_than_elements_rejected():
    with pytest.raises(ShapeError):
        adaptive_avg_pool1d(Tensor(np.ones((1, 3))), 5)


@pytest.mark.parametrize("seed", range(10))
def test_pool_grad_matches_fd(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 3, 7))
    probe = rng.standard_normal((2, 3, 3))

    def f(ts):
        return tensor_sum(adaptive_avg_pool1d(ts[0], 3) * ts[1])

    assert grad_check(f, [x, probe]) <= TOL


# -- embedding ---------------------------------------------------------------


def test_embedding_lookup_rows():
    table = np.arange(12.0).reshape(4, 3)
    out = embedding_lookup(Tensor(table), np.array([2, 0, 2]))
    assert np.array_equal(out.values, table[[2, 0, 2]])


def test_embedding_out_of_range():
    with pytest.raises(InputError):
        embedding_lookup(Tensor(np.ones((4, 3))), np.array([4]))


def test_embedding_grad_scatters_with_repeats():
    table = Tensor(np.zeros((4, 3)), requires_grad=True)
    out = embedding_lookup(table, np.array([1, 1, 3]))
    tensor_sum(out).backward()
    expected = np.zeros((4, 3))
    expected[1] = 2.0
    expected[3] = 1.0
    assert np.array_equal(table.grad, expected)


# -- losses ------------------------------------------------------------------


def test_mse_identical_is_zero():
    x = np.random.default_rng(0).standard_normal((3, 4))
    assert mse_loss(Tensor(x), Tensor(x.copy())).item() == 0.0


def test_mse_hand_value():
    # mean over all elements: ((1)^2 + (2)^2) / 2 = 2.5
    out = mse_loss(Tensor([1.0, 2.0]), Tensor([0.0, 0.0]))
    assert out.item() == 2.5


def test_mse_shape_mismatch():
    with pytest.raises(ShapeError):
        mse_loss(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))


@pytest.mark.parametrize("seed", range(10))
def test_mse_grad_matches_fd(seed):
    rng = np.random.default_rng(seed)
    p = rng.standard_normal((4, 6))
    t = rng.standard_normal((4, 6))
    assert grad_check(lambda ts: mse_loss(ts[0], ts[1]), [p, t]) <= TOL


def test_cross_entropy_uniform_logits():
    logits = np.zeros((3, 4))
    out = cross_entropy(Tensor(logits), np.array([0, 1, 2]))
    assert math.isclose(out.item(), math.log(4.0), rel_tol=1e-12)


def test_cross_entropy_dominant_logit_goes_to_zero():
    logits = np.zeros((2, 5))
    logits[0, 3] = 1e4
    logits[1, 0] = 1e4
    out = cross_entropy(Tensor(logits), np.array([3, 0]))
    assert out.item() == 0.0


def test_cross_entropy_label_out_of_range():
    with pytest.raises(InputError):
        cross_entropy(Tensor(np.zeros((2, 3))), np.array([0, 3]))


@pytest.mark.parametrize("seed", range(10))
def test_cross_entropy_grad_matches_fd(seed):
    rng = np.random.default_rng(seed)
    logits = rng.standard_normal((3, 5))
    labels = rng.integers(0, 5, size=3)
    assert grad_check(lambda ts: cross_entropy(ts[0], labels), [logits]) <= TOL
