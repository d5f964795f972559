import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sql2text import autodiff as ad
from sql2text.autodiff import AutodiffError, Tensor


@pytest.fixture
def f64():
    with ad.default_dtype(np.float64):
        yield


def param(values):
    return Tensor(np.asarray(values), requires_grad=True)


class TestAffine:
    def test_identity_weights(self):
        out = ad.affine(param([[1.0, 2.0]]), param(np.eye(2)), param([0.0, 0.0]))
        assert np.allclose(out.data, [[1.0, 2.0]])

    def test_hand_multiply(self):
        out = ad.affine(
            param([[1.0, 1.0]]), param([[2.0, 3.0], [4.0, 5.0]]), param([1.0, 1.0])
        )
        assert np.allclose(out.data, [[7.0, 9.0]])

    def test_zero_input_rows_equal_bias(self):
        w = param(np.full((3, 2), 5.0))
        b = param([1.5, -2.5])
        out = ad.affine(param(np.zeros((4, 3))), w, b)
        assert np.allclose(out.data, np.tile([1.5, -2.5], (4, 1)))

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(AutodiffError) as err:
            ad.affine(param(np.zeros((1, 3))), param(np.zeros((2, 2))), param(np.zeros(2)))
        assert "(1, 3)" in str(err.value) and "(2, 2)" in str(err.value)

    def test_gradients_flow_to_all_inputs(self, f64):
        x = param([[1.0, 2.0], [3.0, 4.0]])
        w = param([[0.5, -1.0], [2.0, 0.25]])
        b = param([0.1, 0.2])
        ad.tsum(ad.affine(x, w, b)).backward()
        # d sum(xW+b)/dW[k][j] = sum_i x[i][k]
        assert np.allclose(w.grad, np.outer(x.data.sum(axis=0), [1.0, 1.0]))
        assert np.allclose(b.grad, [2.0, 2.0])
        assert np.allclose(x.grad, (w.data @ np.ones(2)).reshape(1, 2).repeat(2, axis=0))


class TestMaxReduce:
    def test_coordinatewise_max(self):
        out = ad.elementwise_max_reduce([param([1.0, 5.0]), param([3.0, 2.0])])
        assert np.allclose(out.data, [3.0, 5.0])

    def test_single_row_identity(self):
        out = ad.elementwise_max_reduce([param([7.0, -1.0])])
        assert np.allclose(out.data, [7.0, -1.0])

    def test_empty_rejected(self):
        with pytest.raises(AutodiffError):
            ad.elementwise_max_reduce([])

    @given(st.permutations(range(5)))
    def test_permutation_invariant(self, perm):
        rng = np.random.default_rng(0)
        rows = rng.normal(size=(5, 4))
        base = ad.elementwise_max_reduce([Tensor(r) for r in rows])
        shuffled = ad.elementwise_max_reduce([Tensor(rows[i]) for i in perm])
        assert np.array_equal(base.data, shuffled.data)

    def test_gradient_to_lowest_argmax_on_tie(self, f64):
        rows = [param([1.0, 2.0]), param([1.0, 0.0])]
        ad.tsum(ad.elementwise_max_reduce(rows)).backward()
        assert np.allclose(rows[0].grad, [1.0, 1.0])
        assert np.allclose(rows[1].grad, [0.0, 0.0])


class TestSoftmax:
    def test_symmetry(self):
        assert np.allclose(ad.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])

    def test_stability_under_large_inputs(self):
        out = ad.softmax(Tensor([1000.0, 1000.0])).data
        assert np.allclose(out, [0.5, 0.5])
        assert np.isfinite(out).all()

    def test_closed_form(self, f64):
        out = ad.softmax(Tensor([math.log(2.0), 0.0])).data
        assert np.allclose(out, [2.0 / 3.0, 1.0 / 3.0], atol=1e-12)

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=8))
    def test_positive_and_sums_to_one(self, values):
        out = ad.softmax(Tensor(values)).data
        assert (out > 0).all()
        assert abs(out.sum() - 1.0) < 1e-6

    @given(
        st.lists(st.integers(-1000, 1000), min_size=1, max_size=8),
        st.integers(-10**6, 10**6),
    )
    def test_shift_invariance_bitwise(self, values, c):
        # Integer-valued inputs keep x + c exact, so max-subtraction must
        # give bit-identical outputs.
        with ad.default_dtype(np.float64):
            base = ad.softmax(Tensor([float(v) for v in values])).data
            shifted = ad.softmax(Tensor([float(v + c) for v in values])).data
        assert np.array_equal(base, shifted)


class TestBackward:
    def test_sum_of_linear_map(self, f64):
        x = Tensor([[1.0, 2.0], [3.0, 4.0]])
        w = param([[1.0, 1.0], [1.0, 1.0]])
        ad.tsum(ad.matmul(x, w)).backward()
        assert np.allclose(w.grad, np.outer(x.data.sum(axis=0), [1.0, 1.0]))

    def test_unused_parameter_has_no_gradient(self, f64):
        used = param([2.0])
        unused = param([5.0])
        ad.tsum(ad.mul(used, used)).backward()
        assert np.allclose(used.grad, [4.0])
        assert unused.grad is None  # semantically all zeros

    def test_constant_loss_leaves_grads_zero(self, f64):
        p = param([1.0])
        Tensor([3.0]).backward()
        assert p.grad is None

    def test_non_scalar_loss_rejected(self):
        with pytest.raises(AutodiffError):
            Tensor([1.0, 2.0]).backward()

    def test_repeated_backward_accumulates(self, f64):
        p = param([3.0])
        ad.tsum(ad.mul(p, p)).backward()
        first = p.grad.copy()
        ad.tsum(ad.mul(p, p)).backward()
        assert np.allclose(p.grad, 2 * first)

    def test_diamond_graph(self, f64):
        p = param([1.5])
        (ad.tsum(p + p)).backward()
        assert np.allclose(p.grad, [2.0])

    def test_deep_chain_beyond_recursion_limit(self, f64):
        p = param([1.0])
        t = p
        for _ in range(5000):
            t = t + Tensor([0.0])
        ad.tsum(t).backward()
        assert np.allclose(p.grad, [1.0])


def _central_diff(loss_fn, arr, h=1e-6):
    g = np.zeros_like(arr)
    for i in range(arr.size):
        orig = arr.flat[i]
        arr.flat[i] = orig + h
        plus = loss_fn()
        arr.flat[i] = orig - h
        minus = loss_fn()
        arr.flat[i] = orig
        g.flat[i] = (plus - minus) / (2 * h)
    return g


OP_CASES = {
    "matmul_2d2d": lambda p: ad.tsum(ad.matmul(p, p)),
    "matmul_1d2d": lambda p: ad.tsum(ad.matmul(ad.row(p, 0), p)),
    "matmul_2d1d": lambda p: ad.tsum(ad.matmul(p, ad.row(p, 1))),
    "add_broadcast": lambda p: ad.tsum(p + ad.row(p, 0)),
    "mul": lambda p: ad.tsum(ad.mul(p, p)),
    "scale": lambda p: ad.tsum(ad.scale(p, -2.5)),
    "relu": lambda p: ad.tsum(ad.relu(p)),
    "tanh": lambda p: ad.tsum(ad.tanh(p)),
    "sigmoid": lambda p: ad.tsum(ad.sigmoid(p)),
    "concat": lambda p: ad.tsum(ad.concat([ad.row(p, 0), ad.row(p, 2)])),
    "stack_max": lambda p: ad.tsum(ad.max_rows(ad.stack([ad.row(p, i) for i in range(3)]))),
    "softmax": lambda p: ad.pick(ad.softmax(ad.row(p, 1)), 0),
    "log_softmax": lambda p: ad.pick(ad.log_softmax(ad.row(p, 1)), 2),
    "neg_sub": lambda p: ad.tsum(p - ad.scale(p, 0.5)),
}


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_op_gradients_match_finite_differences(name, f64):
    # Inputs chosen away from ReLU kinks and max-pool ties.
    rng = np.random.default_rng(hash(name) % 2**32)
    p = param(rng.normal(size=(3, 3)) + 0.1)
    loss = OP_CASES[name](p)
    loss.backward()
    fd = _central_diff(lambda: float(OP_CASES[name](p).data), p.data)
    assert np.allclose(p.grad, fd, atol=1e-6), f"{name}: {p.grad} vs {fd}"


def test_dropout_gradient_matches_mask(f64):
    p = param(np.ones(1000))
    out = ad.dropout(p, 0.5, np.random.default_rng(0))
    kept = out.data > 0
    assert abs(kept.mean() - 0.5) < 0.1
    assert np.allclose(out.data[kept], 2.0)  # inverted scaling
    ad.tsum(out).backward()
    assert np.allclose(p.grad[kept], 2.0)
    assert np.allclose(p.grad[~kept], 0.0)


def test_no_grad_blocks_graph_building():
    p = param([1.0, 2.0])
    with ad.no_grad():
        out = ad.tanh(p)
    assert not out.requires_grad
    assert out._parents == ()


def test_forward_values_stay_finite():
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(size=(4, 4)) * 10)
    for op in (ad.relu, ad.tanh, ad.sigmoid):
        assert np.isfinite(op(x).data).all()
    assert np.isfinite(ad.softmax(Tensor([-1e4, 0.0, 1e4])).data).all()


def test_grad_shape_matches_value_shape(f64):
    p = param(np.ones((2, 3)))
    ad.tsum(ad.mul(p, p)).backward()
    assert p.grad.shape == p.data.shape


def test_dtype_switch_controls_new_tensors():
    assert Tensor([1.0]).data.dtype == np.float32
    with ad.default_dtype(np.float64):
        assert Tensor([1.0]).data.dtype == np.float64
    assert Tensor([1.0]).data.dtype == np.float32
