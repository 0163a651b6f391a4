import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lesionseg.autodiff import (
    Tape,
    Tensor,
    clamp,
    concat,
    conv2d,
    grad_check,
    linear,
    log,
    matmul,
    mul,
    pool2d,
    relu,
    reshape,
    sigmoid,
    softmax_rows,
    tmean,
    transpose,
    tsum,
    upsample2x,
)
from lesionseg.errors import EvaluationError, ShapeError


def rand(rng, *shape):
    return Tensor(rng.uniform(-1.0, 1.0, shape))


class TestMatmul:
    def test_identity(self):
        a = Tensor(np.eye(2))
        b = Tensor([[3.0, 4.0], [5.0, 6.0]])
        assert np.array_equal(matmul(a, b).data, b.data)

    def test_hand_expansion(self):
        out = matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        assert out.data.tolist() == [[11.0]]

    def test_zero_matrix(self):
        out = matmul(Tensor(np.zeros((2, 2))), Tensor([[1.0, 2.0], [3.0, 4.0]]))
        assert np.array_equal(out.data, np.zeros((2, 2)))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 2))))

    def test_associativity(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            a, b, c = (rng.standard_normal((3, 3)) for _ in range(3))
            left = (a @ b) @ c
            right = a @ (b @ c)
            assert np.max(np.abs(left - right)) < 1e-10


class TestSoftmaxRows:
    def test_symmetry(self):
        out = softmax_rows(Tensor([[0.0, 0.0]]))
        assert np.allclose(out.data, [[0.5, 0.5]], atol=1e-15)

    def test_ln2_row(self):
        out = softmax_rows(Tensor([[math.log(2.0), 0.0]]))
        assert np.allclose(out.data, [[2.0 / 3.0, 1.0 / 3.0]], atol=1e-15)

    def test_stabilized_large_input(self):
        out = softmax_rows(Tensor([[10000.0, 0.0]]))
        assert np.isfinite(out.data).all()
        assert abs(out.data[0, 0] - 1.0) < 1e-12
        assert abs(out.data[0, 1]) < 1e-12

    def test_rows_sum_to_one_large_magnitude(self):
        rng = np.random.default_rng(3)
        s = Tensor(rng.uniform(-1e4, 1e4, (6, 9)))
        out = softmax_rows(s)
        assert np.max(np.abs(out.data.sum(axis=1) - 1.0)) < 1e-12

    def test_empty_row_dimension(self):
        with pytest.raises(ShapeError):
            softmax_rows(Tensor(np.zeros((2, 0))))


class TestConv2d:
    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = rand(rng, 3, 5, 5)
        w = Tensor(np.ones((3, 3, 1, 1)) * np.eye(3)[:, :, None, None])
        out = conv2d(x, w, Tensor(np.zeros(3)))
        assert np.allclose(out.data, x.data, atol=1e-15)

    def test_window_sum(self):
        x = Tensor(np.ones((1, 3, 3)))
        w = Tensor(np.ones((1, 1, 3, 3)))
        out = conv2d(x, w, Tensor(np.zeros(1)))
        assert out.shape == (1, 1, 1)
        assert out.data[0, 0, 0] == 9.0

    def test_zero_weights_give_bias(self):
        rng = np.random.default_rng(1)
        x = rand(rng, 2, 4, 4)
        w = Tensor(np.zeros((3, 2, 3, 3)))
        out = conv2d(x, w, Tensor([1.0, -2.0, 0.5]), padding=1)
        for c, b in enumerate([1.0, -2.0, 0.5]):
            assert np.all(out.data[c] == b)

    def test_output_shape_formula(self):
        x = Tensor(np.zeros((1, 9, 7)))
        w = Tensor(np.zeros((2, 1, 3, 3)))
        out = conv2d(x, w, Tensor(np.zeros(2)), stride=2, padding=1)
        assert out.shape == (2, (9 + 2 - 3) // 2 + 1, (7 + 2 - 3) // 2 + 1)

    def test_kernel_too_large(self):
        with pytest.raises(ShapeError, match="larger than padded"):
            conv2d(Tensor(np.zeros((1, 2, 2))), Tensor(np.zeros((1, 1, 5, 5))),
                   Tensor(np.zeros(1)))


class TestPool2d:
    def test_constant_channel(self):
        x = Tensor(np.full((2, 3, 3), 4.25))
        assert np.all(pool2d(x, "max").data == 4.25)
        assert np.all(pool2d(x, "avg").data == 4.25)

    def test_enumerated(self):
        x = Tensor([[[1.0, 2.0], [3.0, 4.0]]])
        assert pool2d(x, "max").data.tolist() == [4.0]
        assert pool2d(x, "avg").data.tolist() == [2.5]

    def test_single_pixel(self):
        x = Tensor([[[-7.5]]])
        assert pool2d(x, "max").data.tolist() == [-7.5]
        assert pool2d(x, "avg").data.tolist() == [-7.5]

    def test_max_tie_routes_to_first(self):
        x = Tensor([[[2.0, 2.0], [2.0, 1.0]]], requires_grad=True)
        with Tape() as tape:
            out = tsum(pool2d(x, "max"))
        tape.backward(out)
        assert x.grad.tolist() == [[[1.0, 0.0], [0.0, 0.0]]]


class TestUpsample:
    def test_nearest_values(self):
        x = Tensor([[[1.0, 2.0], [3.0, 4.0]]])
        out = upsample2x(x, "nearest")
        assert out.data[0].tolist() == [
            [1.0, 1.0, 2.0, 2.0],
            [1.0, 1.0, 2.0, 2.0],
            [3.0, 3.0, 4.0, 4.0],
            [3.0, 3.0, 4.0, 4.0],
        ]

    def test_bilinear_constant_preserved(self):
        x = Tensor(np.full((3, 4, 4), 0.7))
        out = upsample2x(x, "bilinear")
        assert out.shape == (3, 8, 8)
        assert np.allclose(out.data, 0.7, atol=1e-15)


class TestGradCheck:
    def test_linear_function(self):
        x = Tensor(np.arange(6, dtype=float).reshape(2, 3))
        assert grad_check(tsum, x) < 1e-10

    def test_quadratic(self):
        x = Tensor([1.0, 2.0])
        err = grad_check(lambda t: tsum(mul(t, t)), x)
        assert err < 1e-6

    def test_composed_network(self):
        rng = np.random.default_rng(11)
        x = Tensor(rng.standard_normal((4, 8, 8)) * 0.5)
        w = Tensor(rng.standard_normal((2, 4, 3, 3)) * 0.3)
        b = Tensor(np.zeros(2))
        lw = Tensor(rng.standard_normal((1, 2)) * 0.5)
        lb = Tensor(np.zeros(1))

        def f(t):
            h = relu(conv2d(t, w, b, padding=1))
            pooled = pool2d(h, "avg")
            return tsum(linear(pooled, lw, lb))

        assert grad_check(x=x, f=f) < 1e-4

    def test_rejects_nonfinite(self):
        with pytest.raises(EvaluationError):
            grad_check(lambda t: log(t), Tensor([-1.0]))

    def test_eps_range(self):
        with pytest.raises(ValueError):
            grad_check(tsum, Tensor([1.0]), eps=0.1)


def op_cases(rng):
    """(name, f, x) triples covering every differentiable operation."""
    c, h, w = 3, 4, 4
    conv_w = Tensor(rng.standard_normal((2, c, 3, 3)) * 0.4)
    conv_b = Tensor(rng.standard_normal(2) * 0.1)
    lin_w = Tensor(rng.standard_normal((3, 5)) * 0.4)
    lin_b = Tensor(rng.standard_normal(3) * 0.1)
    other = Tensor(rng.standard_normal((c, h, w)))
    vec = Tensor(rng.standard_normal((c, 1, 1)))
    mat = Tensor(rng.standard_normal((4, 3)))
    # weighting tensors make the scalar target sensitive to every output element
    soft_wt = Tensor(rng.standard_normal((3, 6)))
    cat_wt = Tensor(rng.standard_normal((2 * c, h, w)))
    up_wt = Tensor(rng.standard_normal((c, 2 * h, 2 * w)))
    tr_wt = Tensor(rng.standard_normal((h * w, c)))

    return [
        ("matmul", lambda t: tsum(matmul(t, mat)), rand(rng, 5, 4)),
        ("softmax_rows", lambda t: tsum(mul(softmax_rows(t), soft_wt)), rand(rng, 3, 6)),
        ("conv2d_input", lambda t: tsum(conv2d(t, conv_w, conv_b, stride=2, padding=1)),
         rand(rng, c, h, w)),
        ("conv2d_weight", lambda t: tsum(conv2d(other, t, conv_b, padding=1)),
         Tensor(conv_w.data.copy())),
        ("conv2d_bias", lambda t: tsum(conv2d(other, conv_w, t)), Tensor(conv_b.data.copy())),
        ("pool_max", lambda t: tsum(pool2d(t, "max")), rand(rng, c, h, w)),
        ("pool_avg", lambda t: tsum(pool2d(t, "avg")), rand(rng, c, h, w)),
        ("relu", lambda t: tsum(relu(t)), rand(rng, c, h, w)),
        ("sigmoid", lambda t: tsum(sigmoid(t)), rand(rng, c, h, w)),
        ("add_broadcast", lambda t: tsum(t + vec), rand(rng, c, h, w)),
        ("mul_broadcast", lambda t: tsum(mul(t, vec)), rand(rng, c, h, w)),
        ("concat", lambda t: tsum(mul(concat([t, other], axis=0), cat_wt)), rand(rng, c, h, w)),
        ("linear", lambda t: tsum(linear(t, lin_w, lin_b)), rand(rng, 5)),
        ("upsample_nearest", lambda t: tsum(mul(upsample2x(t, "nearest"), up_wt)),
         rand(rng, c, h, w)),
        ("upsample_bilinear", lambda t: tsum(mul(upsample2x(t, "bilinear"), up_wt)),
         rand(rng, c, h, w)),
        ("log", lambda t: tsum(log(t)), Tensor(rng.uniform(0.2, 2.0, (4, 4)))),
        ("clamp", lambda t: tsum(clamp(t, -0.5, 0.5)), rand(rng, 8)),
        ("mean", tmean, rand(rng, c, h, w)),
        ("reshape_transpose", lambda t: tsum(mul(transpose(reshape(t, (c, h * w))), tr_wt)),
         rand(rng, c, h, w)),
    ]


@pytest.mark.parametrize("seed", range(5))
def test_every_op_grad_checks(seed):
    rng = np.random.default_rng(100 + seed)
    for name, f, x in op_cases(rng):
        err = grad_check(f, x)
        assert err < 1e-4, f"{name}: max relative error {err:.3e}"


def test_tape_replays_each_node_once():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        a = x + x
        b = mul(a, x)
        out = tsum(b)
    calls = []
    for node in tape.nodes:
        original = node.backward
        node.backward = (lambda orig, n: lambda g: (calls.append(id(n)), orig(g)))(original, node)
    tape.backward(out)
    assert len(calls) == len(tape.nodes)
    assert len(set(calls)) == len(tape.nodes)


def test_gradient_accumulates_across_reuse():
    x = Tensor([2.0], requires_grad=True)
    with Tape() as tape:
        out = tsum(mul(x, x) + x)   # d/dx (x^2 + x) = 2x + 1
    tape.backward(out)
    assert np.allclose(x.grad, [5.0])


def test_no_tape_means_no_recording():
    x = Tensor([1.0], requires_grad=True)
    y = x + x
    assert not y.requires_grad
    assert y.grad is None


@settings(max_examples=40, deadline=None, derandomize=True)
@given(st.integers(0, 2**32 - 1))
def test_forward_outputs_finite(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.uniform(-100.0, 100.0, (3, 6, 6)))
    w = Tensor(rng.uniform(-100.0, 100.0, (2, 3, 3, 3)))
    outs = [
        conv2d(x, w, Tensor(rng.uniform(-100, 100, 2)), padding=1).data,
        softmax_rows(Tensor(rng.uniform(-100, 100, (4, 5)))).data,
        sigmoid(x).data,
        relu(x).data,
        pool2d(x, "max").data,
        pool2d(x, "avg").data,
        upsample2x(x, "bilinear").data,
    ]
    for out in outs:
        assert np.isfinite(out).all()
