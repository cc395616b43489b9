import numpy as np
import pytest

from sparsegnn.nn import Adam, BatchNorm1d, MaskedLinear, apply_grad_mask
from sparsegnn.tensor import (ScatterPlan, Tensor, add, batch_norm, dropout,
                              gather_rows, matmul, mul_const, relu,
                              scale_shift, segment_mean, segment_sum,
                              softmax_cross_entropy, tsum)

from conftest import assert_grad_close, central_diff


def linear_with(w, b, mask=None, in_dim=2, out_dim=2):
    layer = MaskedLinear(in_dim, out_dim, np.random.default_rng(0), bias=b is not None)
    layer.W.data[...] = w
    if b is not None:
        layer.b.data[...] = b
    if mask is not None:
        layer.mask = np.asarray(mask, dtype=np.float64)
    return layer


class TestMaskedLinearForward:
    def test_identity(self):
        layer = linear_with(np.eye(2), np.zeros(2), mask=np.ones((2, 2)))
        out = layer.forward(Tensor([[1.0, 2.0]]))
        np.testing.assert_array_equal(out.data, [[1.0, 2.0]])

    def test_fully_masked_reduces_to_bias(self):
        layer = linear_with(np.random.default_rng(1).normal(size=(2, 2)),
                            np.array([3.0, 4.0]), mask=np.zeros((2, 2)))
        out = layer.forward(Tensor([[1.0, 2.0]]))
        np.testing.assert_array_equal(out.data, [[3.0, 4.0]])

    def test_hand_product_mask_applied_first(self):
        # oracle: mask the weights elementwise, then take the plain product
        w = np.array([[1.0, 1.0], [2.0, 0.0]])
        mask = np.array([[1.0, 0.0], [1.0, 1.0]])
        x = np.array([[1.0, 2.0]])
        expected = np.zeros((1, 2))
        for o in range(2):
            for i in range(2):
                expected[0, o] += x[0, i] * (w[o, i] * mask[o, i])
        np.testing.assert_array_equal(expected, [[1.0, 2.0]])

        layer = linear_with(w, None, mask=mask)
        out = layer.forward(Tensor(x))
        np.testing.assert_array_equal(out.data, expected)

    def test_shape_mismatch_raises(self):
        layer = linear_with(np.eye(2), np.zeros(2))
        with pytest.raises(ValueError):
            layer.forward(Tensor([[1.0, 2.0, 3.0]]))


class TestBackward:
    def test_linear_grad_is_input_structure(self):
        # loss = sum(W @ x): dL/dW_ij = x_j for every row i
        w = Tensor(np.random.default_rng(0).normal(size=(3, 2)), requires_grad=True)
        x = Tensor([[1.0], [2.0]])
        loss = tsum(matmul(w, x))
        loss.backward()
        np.testing.assert_allclose(w.grad, np.tile([1.0, 2.0], (3, 1)))

    def test_unused_parameter_gets_no_gradient(self):
        used = Tensor(np.ones((2, 2)), requires_grad=True)
        unused = Tensor(np.ones((2, 2)), requires_grad=True)
        loss = tsum(used)
        loss.backward()
        assert unused.grad is None

    def test_non_scalar_backward_raises(self):
        t = Tensor(np.ones((2, 2)), requires_grad=True)
        with pytest.raises(ValueError):
            relu(t).backward()

    def test_backward_twice_raises(self):
        t = Tensor(np.ones((2, 2)), requires_grad=True)
        loss = tsum(t)
        loss.backward()
        with pytest.raises(RuntimeError):
            loss.backward()

    def test_diamond_graph_accumulates(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        y = add(x, x)  # dL/dx = 2
        loss = tsum(y)
        loss.backward()
        np.testing.assert_allclose(x.grad, [2.0])


class TestFiniteDifferenceProperty:
    @pytest.mark.parametrize("seed", range(4))
    def test_composite_ops_match_fd(self, seed):
        rng = np.random.default_rng(seed)
        n, d, k = 5, 4, 3
        x = Tensor(rng.normal(size=(n, d)))
        w1 = Tensor(rng.normal(size=(d, k)), requires_grad=True)
        gamma = Tensor(rng.normal(size=k) + 1.0, requires_grad=True)
        beta = Tensor(rng.normal(size=k), requires_grad=True)
        labels = rng.integers(0, k, size=n)
        bn = BatchNorm1d(k)
        bn.gamma, bn.beta = gamma, beta

        def forward():
            h = relu(matmul(x, w1))
            h = bn.forward(h, training=True)
            return softmax_cross_entropy(h, labels)

        loss = forward()
        loss.backward()
        for p in (w1, gamma, beta):
            fd = central_diff(p, lambda: float(forward().data))
            assert_grad_close(p.grad, fd)

    @pytest.mark.parametrize("seed", range(3))
    def test_segment_ops_match_fd(self, seed):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.normal(size=(6, 3)), requires_grad=True)
        idx = rng.integers(0, 6, size=10)
        plan_back = ScatterPlan(idx, 6)
        seg = rng.integers(0, 4, size=10)
        plan_seg = ScatterPlan(seg, 4)
        labels = rng.integers(0, 3, size=4)

        def forward():
            gathered = gather_rows(x, idx, plan_back)
            pooled = segment_sum(relu(gathered), plan_seg)
            return softmax_cross_entropy(pooled, labels)

        loss = forward()
        loss.backward()
        fd = central_diff(x, lambda: float(forward().data))
        assert_grad_close(x.grad, fd)

    def test_scale_shift_fd(self):
        rng = np.random.default_rng(7)
        x = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        s = Tensor(np.array(0.3), requires_grad=True)
        labels = rng.integers(0, 3, size=4)

        def forward():
            return softmax_cross_entropy(scale_shift(x, s, offset=1.0), labels)

        loss = forward()
        loss.backward()
        for p in (x, s):
            fd = central_diff(p, lambda: float(forward().data))
            assert_grad_close(p.grad, fd)


class TestOps:
    def test_relu(self):
        out = relu(Tensor([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])

    def test_softmax_ce_uniform_is_ln2(self):
        loss = softmax_cross_entropy(Tensor([[0.0, 0.0]]), [0])
        np.testing.assert_allclose(float(loss.data), np.log(2.0), rtol=1e-12)

    def test_softmax_ce_empty_batch_raises(self):
        with pytest.raises(ValueError):
            softmax_cross_entropy(Tensor(np.zeros((0, 2))), [])

    def test_batch_norm_constant_batch(self):
        bn = BatchNorm1d(3)
        bn.beta.data[...] = [1.0, 2.0, 3.0]
        x = Tensor(np.full((4, 3), 5.0))
        out = bn.forward(x, training=True)
        np.testing.assert_allclose(out.data, np.tile([1.0, 2.0, 3.0], (4, 1)), atol=1e-9)

    def test_batch_norm_empty_batch_raises(self):
        bn = BatchNorm1d(3)
        with pytest.raises(ValueError):
            bn.forward(Tensor(np.zeros((0, 3))), training=True)

    def test_batch_norm_eval_uses_running_stats(self):
        bn = BatchNorm1d(2)
        rng = np.random.default_rng(0)
        for _ in range(50):
            bn.forward(Tensor(rng.normal(loc=3.0, size=(16, 2))), training=True)
        out = bn.forward(Tensor(np.full((4, 2), 3.0)), training=False)
        np.testing.assert_allclose(out.data, 0.0, atol=0.2)

    def test_dropout_eval_is_identity(self):
        x = Tensor(np.ones((5, 5)))
        out = dropout(x, 0.5, np.random.default_rng(0), training=False)
        np.testing.assert_array_equal(out.data, x.data)

    def test_dropout_train_zeroes_and_rescales(self):
        x = Tensor(np.ones((100, 100)))
        out = dropout(x, 0.5, np.random.default_rng(0), training=True)
        kept = out.data != 0.0
        assert abs(kept.mean() - 0.5) < 0.05
        np.testing.assert_allclose(out.data[kept], 2.0)

    def test_dropout_invalid_rate(self):
        with pytest.raises(ValueError):
            dropout(Tensor(np.ones(3)), 1.0, np.random.default_rng(0), training=True)

    def test_mul_const_gradient(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        loss = tsum(mul_const(x, 3.0))
        loss.backward()
        np.testing.assert_allclose(x.grad, np.full((2, 2), 3.0))

    def test_segment_mean_empty_segment_raises(self):
        with pytest.raises(ValueError):
            segment_mean(Tensor(np.ones((2, 2))), ScatterPlan([0, 0], 2))


class TestScatterPlan:
    @pytest.mark.parametrize("seed", range(5))
    def test_sum_matches_add_at(self, seed):
        rng = np.random.default_rng(seed)
        idx = rng.integers(0, 7, size=20)
        values = rng.normal(size=(20, 3))
        expected = np.zeros((7, 3))
        np.add.at(expected, idx, values)
        plan = ScatterPlan(idx, 7)
        np.testing.assert_allclose(plan.sum(values), expected)

    def test_empty_index(self):
        plan = ScatterPlan(np.zeros(0, dtype=int), 4)
        np.testing.assert_array_equal(plan.sum(np.zeros((0, 2))), np.zeros((4, 2)))


class TestApplyGradMask:
    def test_all_ones_mask_keeps_grad(self):
        layer = linear_with(np.eye(2), None, mask=np.ones((2, 2)))
        layer.W.grad = np.array([[1.0, 2.0], [3.0, 4.0]])
        apply_grad_mask(layer)
        np.testing.assert_array_equal(layer.W.grad, [[1.0, 2.0], [3.0, 4.0]])

    def test_all_zeros_mask_kills_grad(self):
        layer = linear_with(np.eye(2), None, mask=np.zeros((2, 2)))
        layer.W.grad = np.ones((2, 2))
        apply_grad_mask(layer)
        np.testing.assert_array_equal(layer.W.grad, np.zeros((2, 2)))

    def test_elementwise(self):
        layer = MaskedLinear(2, 1, np.random.default_rng(0), bias=False)
        layer.mask = np.array([[1.0, 0.0]])
        layer.W.grad = np.array([[5.0, 7.0]])
        apply_grad_mask(layer)
        np.testing.assert_array_equal(layer.W.grad, [[5.0, 0.0]])


class TestAdam:
    def test_zero_grad_step_is_noop(self):
        p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        opt = Adam([p], lr=0.1)
        p.grad = np.zeros(2)
        opt.step()
        assert opt.t == 1
        np.testing.assert_array_equal(p.data, [1.0, 2.0])

    def test_first_step_closed_form(self):
        # with constant g=1: m_hat = 1, v_hat = 1, step = -lr / (1 + eps)
        p = Tensor(np.array([0.5]), requires_grad=True)
        opt = Adam([p], lr=0.001)
        p.grad = np.array([1.0])
        opt.step()
        np.testing.assert_allclose(p.data, [0.5 - 0.001], atol=1e-8)

    def test_deterministic(self):
        def run():
            p = Tensor(np.array([1.0, -1.0]), requires_grad=True)
            opt = Adam([p], lr=0.01)
            for i in range(10):
                p.grad = np.array([0.3, -0.2]) * (i + 1)
                opt.step()
            return p.data.copy()

        np.testing.assert_array_equal(run(), run())

    def test_masked_weights_stay_bitwise_zero(self):
        # arbitrary interleavings of forward/backward/mask/step never move a
        # masked weight off exact 0.0
        rng = np.random.default_rng(3)
        layer = MaskedLinear(4, 4, rng)
        layer.set_mask((rng.random((4, 4)) > 0.5).astype(float))
        opt = Adam(layer.parameters(), lr=0.05)
        for step in range(30):
            x = Tensor(rng.normal(size=(3, 4)))
            loss = tsum(relu(layer.forward(x)))
            opt.zero_grad()
            loss.backward()
            apply_grad_mask(layer)
            opt.step()
            w = layer.W.data[layer.mask == 0.0]
            assert (w == 0.0).all()
