import math

import numpy as np
import pytest

from flightcast import tensor as tc
from flightcast.errors import ContractError, NumericError, ShapeError


def scalar_loss(t):
    return tc.reduce_sum(t)


class TestMatmul:
    def test_identity(self):
        a = tc.Tensor([[1.0, 2.0], [3.0, 4.0]])
        out = tc.matmul(a, tc.Tensor(np.eye(2)))
        np.testing.assert_array_equal(out.data, a.data)

    def test_hand_product(self):
        out = tc.matmul(tc.Tensor([[1.0, 2.0], [3.0, 4.0]]), tc.Tensor([[5.0, 6.0], [7.0, 8.0]]))
        np.testing.assert_array_equal(out.data, [[19.0, 22.0], [43.0, 50.0]])

    def test_zero_matrix(self):
        out = tc.matmul(tc.Tensor(np.zeros((2, 3))), tc.Tensor(np.arange(12.0).reshape(3, 4)))
        np.testing.assert_array_equal(out.data, np.zeros((2, 4)))

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
            tc.matmul(tc.Tensor(np.zeros((2, 3))), tc.Tensor(np.zeros((2, 2))))


class TestActivations:
    def test_sigmoid_tanh_at_zero(self):
        assert tc.apply_activation(tc.Tensor([0.0]), "sigmoid").data[0] == 0.5
        assert tc.apply_activation(tc.Tensor([0.0]), "tanh").data[0] == 0.0

    def test_sigmoid_at_one(self):
        # 1 / (1 + e^-1)
        expected = 1.0 / (1.0 + math.exp(-1.0))
        assert tc.sigmoid(tc.Tensor([1.0])).data[0] == pytest.approx(expected, abs=1e-15)

    def test_softmax_symmetry(self):
        out = tc.apply_activation(tc.Tensor([0.0, 0.0, 0.0]), "softmax_lastdim")
        np.testing.assert_allclose(out.data, [1 / 3] * 3, atol=1e-15)

    def test_softmax_sums_to_one_and_positive(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            x = tc.Tensor(rng.normal(scale=50.0, size=(3, 7)))
            out = tc.softmax_lastdim(x)
            np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-12)
            assert (out.data > 0).all()

    def test_softmax_overflow_safe(self):
        out = tc.softmax_lastdim(tc.Tensor([1000.0, 1000.0]))
        np.testing.assert_allclose(out.data, [0.5, 0.5])

    def test_nonfinite_input_rejected(self):
        for kind in ("sigmoid", "tanh", "softmax_lastdim"):
            with pytest.raises(NumericError):
                tc.apply_activation(tc.Tensor([np.nan, 1.0]), kind)

    def test_unknown_kind(self):
        with pytest.raises(ContractError):
            tc.apply_activation(tc.Tensor([0.0]), "relu")


class TestElementwiseConcat:
    def test_add_zero(self):
        x = tc.Tensor([1.0, -2.0, 3.0])
        out = tc.elementwise(x, tc.Tensor(np.zeros(3)), "add")
        np.testing.assert_array_equal(out.data, x.data)

    def test_mul_hand(self):
        out = tc.elementwise(tc.Tensor([1.0, 2.0]), tc.Tensor([3.0, 4.0]), "mul")
        np.testing.assert_array_equal(out.data, [3.0, 8.0])

    def test_mismatch(self):
        with pytest.raises(ShapeError):
            tc.elementwise(tc.Tensor(np.zeros((2, 3))), tc.Tensor(np.zeros(2)), "add")

    def test_concat_axis1(self):
        out = tc.concat([tc.Tensor([[1.0], [2.0]]), tc.Tensor([[3.0], [4.0]])], axis=1)
        np.testing.assert_array_equal(out.data, [[1.0, 3.0], [2.0, 4.0]])

    def test_concat_mismatch(self):
        with pytest.raises(ShapeError):
            tc.concat([tc.Tensor(np.zeros((2, 1))), tc.Tensor(np.zeros((3, 1)))], axis=1)


class TestBackward:
    def test_square(self):
        w = tc.param([3.0])
        with tc.Tape() as tape:
            loss = tc.reduce_sum(tc.mul(w, w))
        tc.backward(tape, loss)
        np.testing.assert_allclose(w.grad, [6.0])

    def test_independent_leaf_grad_zero(self):
        w = tc.param([2.0])
        other = tc.param([5.0])
        tc.zero_grads([w, other])
        with tc.Tape() as tape:
            loss = tc.reduce_sum(tc.mul(other, other))
        tc.backward(tape, loss)
        np.testing.assert_array_equal(w.grad, [0.0])

    def test_sigmoid_grad(self):
        # d/dw sum(sigmoid(w)) at 0 is sigma(0) * (1 - sigma(0)) = 0.25
        w = tc.param([0.0])
        with tc.Tape() as tape:
            loss = tc.reduce_sum(tc.sigmoid(w))
        tc.backward(tape, loss)
        np.testing.assert_allclose(w.grad, [0.25])

    def test_fanout_accumulates(self):
        w = tc.param([1.5])
        with tc.Tape() as tape:
            y = tc.add(w, w)  # 2w
            loss = tc.reduce_sum(tc.mul(y, w))  # 2w^2 -> grad 4w
        tc.backward(tape, loss)
        np.testing.assert_allclose(w.grad, [6.0])

    def test_duplicated_leaf_matches_expanded_expression(self):
        # loss built with a shared leaf equals the gradient of the expansion
        # computed with two independent copies summed.
        rng = np.random.default_rng(7)
        v = rng.normal(size=4)
        w = tc.param(v.copy())
        with tc.Tape() as tape:
            shared = tc.tanh(w)
            loss = tc.reduce_sum(tc.mul(shared, tc.add(shared, w)))
        tc.backward(tape, loss)

        a, b = tc.param(v.copy()), tc.param(v.copy())
        with tc.Tape() as tape2:
            loss2 = tc.reduce_sum(tc.mul(tc.tanh(a), tc.add(tc.tanh(b), b)))
        tc.backward(tape2, loss2)
        # a and b are the same variable mathematically: total grad is the sum
        np.testing.assert_allclose(w.grad, a.grad + b.grad, rtol=1e-12)

    def test_loss_not_scalar(self):
        w = tc.param([1.0, 2.0])
        with tc.Tape() as tape:
            out = tc.mul(w, w)
        with pytest.raises(ContractError):
            tc.backward(tape, out)

    def test_loss_not_on_tape(self):
        w = tc.param([1.0])
        with tc.Tape() as tape:
            tc.mul(w, w)
        stranger = tc.Tensor([1.0])
        with pytest.raises(ContractError):
            tc.backward(tape, stranger)

    def test_tape_topological_order(self):
        w = tc.param(np.ones(3))
        with tc.Tape() as tape:
            a = tc.sigmoid(w)
            b = tc.add(a, w)
            tc.reduce_sum(tc.mul(a, b))
        seen = {id(w)}
        for rec in tape.records:
            for inp in rec.inputs:
                assert inp.requires_grad is False or id(inp) in seen
            seen.add(id(rec.output))


class TestSelect:
    def test_selects_by_mask(self):
        out = tc.select([True, False, True], tc.Tensor([1.0, 2.0, 3.0]),
                        tc.Tensor([9.0, 8.0, 7.0]))
        np.testing.assert_array_equal(out.data, [1.0, 8.0, 3.0])

    def test_unselected_nan_does_not_leak(self):
        out = tc.select([True, True], tc.Tensor([1.0, 2.0]), tc.Tensor([np.nan, np.nan]))
        np.testing.assert_array_equal(out.data, [1.0, 2.0])

    def test_gradient_respects_mask(self):
        a = tc.param([1.0, 2.0])
        b = tc.param([3.0, 4.0])
        with tc.Tape() as tape:
            loss = tc.reduce_sum(tc.select([True, False], a, b))
        tc.backward(tape, loss)
        np.testing.assert_array_equal(a.grad, [1.0, 0.0])
        np.testing.assert_array_equal(b.grad, [0.0, 1.0])


class TestGradCheck:
    def test_quadratic(self):
        w = tc.param([1.0, -2.0, 0.5])

        def f():
            return tc.reduce_sum(tc.mul(w, w))

        assert tc.grad_check(f, [w], eps=1e-5) < 1e-6

    def test_constant(self):
        w = tc.param([3.0])

        def f():
            return tc.reduce_sum(tc.mul(w, 0.0))

        assert tc.grad_check(f, [w], eps=1e-5) == 0.0

    def test_bad_eps(self):
        with pytest.raises(ContractError):
            tc.grad_check(lambda: tc.Tensor(0.0), [], eps=0.0)


def _random_op_cases(rng):
    """One randomized scalar loss through each primitive op."""
    shape = tuple(int(rng.integers(1, 9)) for _ in range(2))
    m, k = shape
    n = int(rng.integers(1, 9))
    a = tc.param(rng.normal(size=(m, k)))
    b = tc.param(rng.normal(size=(k, n)))
    v = tc.param(rng.normal(size=k))
    w = tc.param(rng.normal(size=(m, k)))
    r_mn = tc.Tensor(rng.normal(size=(m, n)))
    r_mk = tc.Tensor(rng.normal(size=(m, k)))
    r_m = tc.Tensor(rng.normal(size=m))
    r_k = tc.Tensor(rng.normal(size=k))
    r_3k = tc.Tensor(rng.normal(size=(3, k)))
    idx = rng.integers(0, m, size=3)
    mask = rng.random(size=(m, k)) < 0.5
    slice_lo = 0 if k == 1 else 1
    r_slice = tc.Tensor(rng.normal(size=(m, k - slice_lo)))
    return [
        ([a, b], lambda: tc.reduce_sum(tc.mul(tc.matmul(a, b), r_mn))),
        ([a, v], lambda: tc.reduce_sum(tc.mul(tc.matmul(a, v), r_m))),
        ([a, w], lambda: tc.reduce_sum(tc.mul(tc.add(a, w), r_mk))),
        ([a, w], lambda: tc.reduce_sum(tc.mul(tc.mul(a, w), r_mk))),
        ([a, v], lambda: tc.reduce_sum(tc.mul(tc.add(a, v), r_mk))),  # broadcast add
        ([a], lambda: tc.reduce_sum(tc.mul(tc.sigmoid(a), r_mk))),
        ([a], lambda: tc.reduce_sum(tc.mul(tc.tanh(a), r_mk))),
        ([a], lambda: tc.reduce_sum(tc.mul(tc.softmax_lastdim(a), r_mk))),
        ([a, w], lambda: tc.reduce_sum(tc.mul(tc.concat([a, w], axis=1), tc.Tensor(np.concatenate([r_mk.data, r_mk.data], axis=1))))),
        ([a], lambda: tc.reduce_sum(tc.mul(tc.reshape(a, (k, m)), tc.Tensor(r_mk.data.reshape(k, m))))),
        ([a], lambda: tc.reduce_sum(tc.mul(tc.transpose(a), tc.Tensor(r_mk.data.T.copy())))),
        ([a], lambda: tc.reduce_sum(tc.mul(tc.reduce_sum(a, axis=0), r_k))),
        ([a], lambda: tc.reduce_sum(tc.mul(tc.take_rows(a, idx), r_3k))),
        ([a, w], lambda: tc.reduce_sum(tc.mul(tc.select(mask, a, w), r_mk))),
        ([a], lambda: tc.reduce_sum(tc.mul(tc.slice_lastdim(a, slice_lo, k), r_slice))),
    ]


def test_randomized_gradients_match_finite_differences():
    # >= 100 randomized trials across the primitive ops, shapes <= 8
    rng = np.random.default_rng(2024)
    trials = 0
    for _ in range(9):
        for params, f in _random_op_cases(rng):
            assert tc.grad_check(f, params, eps=1e-5) < 1e-4
            trials += 1
    assert trials >= 100
