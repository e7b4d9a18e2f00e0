"""Value-level checks of the differentiable ops (gradients live in
test_gradients.py)."""

import numpy as np
import pytest

from dvgait import numgrad as ng


def t64(arr, grad=False):
    return ng.Tensor(np.asarray(arr, dtype=np.float64), requires_grad=grad)


class TestConv2d:
    def test_stride2_halves_64(self):
        x = ng.Tensor(np.zeros((1, 1, 64, 64), dtype=np.float32))
        w = ng.Tensor(np.zeros((4, 1, 5, 5), dtype=np.float32))
        b = ng.Tensor(np.zeros(4, dtype=np.float32))
        out = ng.conv2d(x, w, b, stride=2, padding=2)
        assert out.shape == (1, 4, 32, 32)

    def test_1x1_kernel_scales(self):
        x = ng.Tensor(np.ones((1, 1, 2, 2), dtype=np.float32))
        w = ng.Tensor(np.full((1, 1, 1, 1), 3.0, dtype=np.float32))
        b = ng.Tensor(np.zeros(1, dtype=np.float32))
        out = ng.conv2d(x, w, b, stride=1, padding=0)
        np.testing.assert_array_equal(out.data, np.full((1, 1, 2, 2), 3.0))

    def test_six_stride2_convs_reach_1x1(self):
        x = ng.Tensor(np.zeros((1, 1, 64, 64), dtype=np.float32))
        for _ in range(6):
            c = x.shape[1]
            w = ng.Tensor(np.zeros((c, c, 5, 5), dtype=np.float32))
            b = ng.Tensor(np.zeros(c, dtype=np.float32))
            x = ng.conv2d(x, w, b, stride=2, padding=2)
        assert x.shape[2:] == (1, 1)

    def test_channel_mismatch_names_layer(self):
        x = ng.Tensor(np.zeros((1, 3, 8, 8), dtype=np.float32))
        w = ng.Tensor(np.zeros((4, 2, 3, 3), dtype=np.float32))
        b = ng.Tensor(np.zeros(4, dtype=np.float32))
        with pytest.raises(ValueError, match="e9"):
            ng.conv2d(x, w, b, 1, 1, name="e9")


class TestDeconv2d:
    def test_doubles_spatial_extent(self):
        x = ng.Tensor(np.zeros((1, 512, 1, 1), dtype=np.float32))
        w = ng.Tensor(np.zeros((512, 512, 5, 5), dtype=np.float32))
        b = ng.Tensor(np.zeros(512, dtype=np.float32))
        out = ng.deconv2d(x, w, b, stride=2, padding=2)
        assert out.shape == (1, 512, 2, 2)

    def test_six_deconvs_invert_conv_shape_map(self):
        x = ng.Tensor(np.zeros((1, 1, 1, 1), dtype=np.float32))
        for _ in range(6):
            w = ng.Tensor(np.zeros((1, 1, 5, 5), dtype=np.float32))
            b = ng.Tensor(np.zeros(1, dtype=np.float32))
            x = ng.deconv2d(x, w, b, stride=2, padding=2)
        assert x.shape[2:] == (64, 64)

    def test_impulse_stamps_kernel(self):
        # one-hot input: each output pixel (i,j) sums weight[.,.,ki,kj] over
        # the kernel taps that cover it; for a centered 4x4 -> 8x8 map the
        # response of an impulse at (r,c) is the kernel stamped around
        # (2r, 2c), cropped by the padding window
        kernel = np.arange(25, dtype=np.float64).reshape(1, 1, 5, 5)
        x = np.zeros((1, 1, 4, 4))
        r, c = 1, 2
        x[0, 0, r, c] = 1.0
        out = ng.deconv2d(t64(x), t64(kernel), t64(np.zeros(1)), 2, 2).data[0, 0]
        expected = np.zeros((8, 8))
        for ki in range(5):
            for kj in range(5):
                oi, oj = 2 * r + ki - 2, 2 * c + kj - 2
                if 0 <= oi < 8 and 0 <= oj < 8:
                    expected[oi, oj] = kernel[0, 0, ki, kj]
        np.testing.assert_allclose(out, expected)

    def test_rejects_geometry_that_cannot_double(self):
        x = ng.Tensor(np.zeros((1, 1, 4, 4), dtype=np.float32))
        w = ng.Tensor(np.zeros((1, 1, 5, 5), dtype=np.float32))
        b = ng.Tensor(np.zeros(1, dtype=np.float32))
        with pytest.raises(ValueError):
            ng.deconv2d(x, w, b, stride=2, padding=0)


class TestBatchNorm:
    def _run(self, x, training=True):
        c = x.shape[1]
        gamma = t64(np.ones(c))
        beta = t64(np.zeros(c))
        rm, rv = np.zeros(c), np.ones(c)
        return ng.batchnorm2d(t64(x), gamma, beta, rm, rv, training=training)

    def test_normalizes_to_zero_mean_unit_var(self):
        rng = np.random.default_rng(1)
        x = rng.normal(3.0, 2.0, size=(4, 3, 8, 8))
        out = self._run(x).data
        np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-5)
        np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1.0, atol=1e-4)

    def test_constant_channel_maps_to_beta(self):
        x = np.full((4, 2, 4, 4), 7.0)
        c = 2
        beta = np.array([1.5, -2.0])
        out = ng.batchnorm2d(
            t64(x), t64(np.ones(c)), t64(beta), np.zeros(c), np.ones(c), training=True
        )
        np.testing.assert_allclose(out.data[:, 0], 1.5, atol=1e-6)
        np.testing.assert_allclose(out.data[:, 1], -2.0, atol=1e-6)

    def test_batch_of_one_rejected_in_train_mode(self):
        with pytest.raises(ValueError, match="batch size"):
            self._run(np.zeros((1, 2, 4, 4)))

    def test_running_stats_updated_with_momentum(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(4, 2, 4, 4))
        rm, rv = np.zeros(2), np.ones(2)
        ng.batchnorm2d(t64(x), t64(np.ones(2)), t64(np.zeros(2)), rm, rv, training=True)
        np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)), atol=1e-12)
        np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3)), atol=1e-12)

    def test_eval_mode_uses_running_stats(self):
        x = np.ones((1, 1, 2, 2))
        rm, rv = np.array([1.0]), np.array([4.0])
        out = ng.batchnorm2d(
            t64(x), t64(np.ones(1)), t64(np.zeros(1)), rm, rv, training=False, eps=0.0
        )
        np.testing.assert_allclose(out.data, 0.0)


class TestActivations:
    def test_leaky_relu(self):
        x = ng.Tensor([-1.0, 2.0])
        np.testing.assert_allclose(ng.leaky_relu(x, 0.2).data, [-0.2, 2.0])

    def test_relu(self):
        np.testing.assert_allclose(ng.relu(ng.Tensor([-1.0, 3.0])).data, [0.0, 3.0])

    def test_sigmoid_tanh_at_zero(self):
        z = ng.Tensor([0.0])
        assert ng.sigmoid(z).item() == 0.5
        assert ng.tanh(z).item() == 0.0

    def test_sigmoid_extreme_logits_stable(self):
        out = ng.sigmoid(ng.Tensor([1000.0, -1000.0]))
        np.testing.assert_allclose(out.data, [1.0, 0.0])

    def test_prelu_negative_slope_per_channel(self):
        x = np.full((1, 2, 1, 1), -2.0)
        slopes = ng.Tensor([0.25, 0.5], requires_grad=True)
        out = ng.prelu(ng.Tensor(x), slopes)
        np.testing.assert_allclose(out.data[0, :, 0, 0], [-0.5, -1.0])


class TestPoolDenseConcat:
    def test_maxpool_basic(self):
        x = ng.Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2))
        out = ng.maxpool2x2(x)
        np.testing.assert_array_equal(out.data, [[[[4.0]]]])

    def test_maxpool_tie_routes_to_first(self):
        x = ng.Tensor(np.full((1, 1, 2, 2), 5.0, dtype=np.float64), requires_grad=True)
        out = ng.maxpool2x2(x)
        ng.l1_loss(out, np.zeros((1, 1, 1, 1))).backward()
        np.testing.assert_array_equal(x.grad.reshape(4), [1.0, 0.0, 0.0, 0.0])

    def test_dense(self):
        x = ng.Tensor([[1.0, 2.0]])
        w = ng.Tensor([[1.0, 0.0], [0.0, 1.0]])
        b = ng.Tensor([10.0, 20.0])
        np.testing.assert_allclose(ng.dense(x, w, b).data, [[11.0, 22.0]])

    def test_concat_channels_round_trip(self):
        a = ng.Tensor(np.ones((2, 3, 4, 4), dtype=np.float32), requires_grad=True)
        b = ng.Tensor(np.zeros((2, 2, 4, 4), dtype=np.float32), requires_grad=True)
        out = ng.concat_channels(a, b)
        assert out.shape == (2, 5, 4, 4)
        np.testing.assert_array_equal(out.data[:, :3], 1.0)
        np.testing.assert_array_equal(out.data[:, 3:], 0.0)

    def test_global_avg_pool(self):
        x = ng.Tensor(np.arange(8, dtype=np.float32).reshape(1, 2, 2, 2))
        np.testing.assert_allclose(ng.global_avg_pool(x).data, [[1.5, 5.5]])


class TestLosses:
    def test_l1_zero_on_equal(self):
        p = ng.Tensor([1.0, 2.0])
        assert ng.l1_loss(p, np.array([1.0, 2.0])).item() == 0.0

    def test_l1_ones_vs_zeros(self):
        p = ng.Tensor(np.ones(7))
        assert ng.l1_loss(p, np.zeros(7)).item() == 1.0

    def test_bce_logit_zero_label_one(self):
        loss = ng.bce_with_logits(ng.Tensor([0.0]), np.array([1.0]))
        assert loss.item() == pytest.approx(np.log(2.0), abs=1e-7)

    def test_bce_huge_logit_no_overflow(self):
        loss = ng.bce_with_logits(ng.Tensor([1000.0]), np.array([1.0]))
        assert loss.item() == pytest.approx(0.0, abs=1e-6)

    def test_softmax_ce_uniform_logits(self):
        for k in (2, 3, 5):
            logits = ng.Tensor(np.zeros((1, k)))
            loss = ng.softmax_ce(logits, np.array([0]))
            assert loss.item() == pytest.approx(np.log(k), abs=1e-6)

    def test_softmax_ce_label_out_of_range(self):
        with pytest.raises(ValueError, match="labels"):
            ng.softmax_ce(ng.Tensor(np.zeros((1, 3))), np.array([3]))

    def test_center_loss_zero_at_centers(self):
        centers = np.array([[1.0, 2.0], [3.0, 4.0]])
        f = ng.Tensor(centers[np.array([0, 1, 0])])
        assert ng.center_loss(f, np.array([0, 1, 0]), centers, gamma=0.008).item() == 0.0

    def test_center_loss_single_sample_value(self):
        f = ng.Tensor([[1.0, 0.0]])
        centers = np.zeros((1, 2))
        loss = ng.center_loss(f, np.array([0]), centers, gamma=0.008)
        assert loss.item() == pytest.approx(0.004, abs=1e-9)

    def test_center_loss_missing_center_rejected(self):
        with pytest.raises(ValueError, match="center"):
            ng.center_loss(ng.Tensor([[0.0]]), np.array([2]), np.zeros((2, 1)), 0.1)
