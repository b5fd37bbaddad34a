import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdn_mri.core import (
    ConvSpec,
    OptimizerConfig,
    Parameter,
    RunningStats,
    ShapeError,
    adam_step,
    batchnorm_backward,
    batchnorm_forward,
    concat_backward,
    concat_channels,
    conv2d_backward,
    conv2d_forward,
    mse_loss,
    relu,
    relu_backward,
    residual_add,
    residual_add_backward,
    step_lr,
)

from .oracles import adam_reference, conv2d_loop, grad_check_error, numeric_grad


def _conv_case(rng, n, c_in, c_out, h, w, k, d, dtype=np.float64):
    spec = ConvSpec(c_in, c_out, k, d)
    x = rng.standard_normal((n, c_in, h, w)).astype(dtype)
    weight = rng.standard_normal(spec.weight_shape).astype(dtype)
    bias = rng.standard_normal(c_out).astype(dtype)
    return spec, x, weight, bias


class TestConvSpec:
    def test_padding_and_extent(self):
        s = ConvSpec(1, 1, 3, 2)
        assert s.padding == 2
        assert s.extent == 5
        assert ConvSpec(1, 1, 3, 3).extent == 7
        assert ConvSpec(1, 1, 9, 1).padding == 4

    @pytest.mark.parametrize("kwargs", [dict(kernel_size=4), dict(kernel_size=3, dilation=0),
                                        dict(kernel_size=0)])
    def test_rejects_invalid(self, kwargs):
        with pytest.raises(ValueError):
            ConvSpec(1, 1, **kwargs)


class TestConvForward:
    def test_identity_kernel(self):
        x = np.arange(25, dtype=np.float32).reshape(1, 1, 5, 5)
        w = np.zeros((1, 1, 3, 3), dtype=np.float32)
        w[0, 0, 1, 1] = 1
        out = conv2d_forward(x, ConvSpec(1, 1, 3), w, np.zeros(1, np.float32))
        np.testing.assert_array_equal(out, x)

    def test_large_dilated_preserves_size(self):
        x = np.random.default_rng(0).random((1, 1, 378, 378)).astype(np.float32)
        spec = ConvSpec(1, 1, 3, 2)
        out = conv2d_forward(x, spec, np.ones(spec.weight_shape, np.float32),
                             np.zeros(1, np.float32))
        assert out.shape == (1, 1, 378, 378)

    def test_matches_loop_reference(self):
        rng = np.random.default_rng(1)
        spec, x, w, b = _conv_case(rng, 1, 2, 3, 6, 6, 3, 2)
        out = conv2d_forward(x, spec, w, b)
        ref = conv2d_loop(x, w, b, 2)
        assert np.max(np.abs(out - ref) / np.maximum(np.abs(ref), 1e-12)) <= 1e-6

    @pytest.mark.parametrize("c_in", [1, 2, 5])
    @pytest.mark.parametrize("k,d", [(3, 1), (3, 2), (3, 3), (5, 1), (1, 1)])
    def test_loop_reference_grid(self, c_in, k, d):
        # c_in 1-2 exercise the patch-matrix path, 5 the implicit-GEMM path.
        rng = np.random.default_rng(c_in * 100 + k * 10 + d)
        spec, x, w, b = _conv_case(rng, 2, c_in, 3, 7, 5, k, d)
        np.testing.assert_allclose(conv2d_forward(x, spec, w, b), conv2d_loop(x, w, b, d),
                                   rtol=1e-10, atol=1e-10)

    @pytest.mark.parametrize("k", [3, 9])
    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_size_preserved(self, k, d):
        spec = ConvSpec(2, 3, k, d)
        x = np.ones((1, 2, 11, 13), np.float32)
        out = conv2d_forward(x, spec, np.ones(spec.weight_shape, np.float32),
                             np.zeros(3, np.float32))
        assert out.shape == (1, 3, 11, 13)

    def test_dtype_preserved(self):
        rng = np.random.default_rng(2)
        for dtype in (np.float32, np.float64):
            spec, x, w, b = _conv_case(rng, 1, 4, 2, 5, 5, 3, 1, dtype)
            assert conv2d_forward(x, spec, w, b).dtype == dtype

    def test_channel_mismatch_names_dimension(self):
        spec = ConvSpec(2, 1, 3)
        with pytest.raises(ShapeError, match="channel"):
            conv2d_forward(np.zeros((1, 3, 4, 4)), spec, np.zeros(spec.weight_shape),
                           np.zeros(1))

    def test_rank_and_weight_errors(self):
        spec = ConvSpec(1, 1, 3)
        with pytest.raises(ShapeError, match="rank 4"):
            conv2d_forward(np.zeros((1, 4, 4)), spec, np.zeros(spec.weight_shape), np.zeros(1))
        with pytest.raises(ShapeError, match="weight"):
            conv2d_forward(np.zeros((1, 1, 4, 4)), spec, np.zeros((1, 1, 5, 5)), np.zeros(1))
        with pytest.raises(ShapeError, match="bias"):
            conv2d_forward(np.zeros((1, 1, 4, 4)), spec, np.zeros(spec.weight_shape),
                           np.zeros(2))


class TestConvBackward:
    def test_zero_upstream(self):
        rng = np.random.default_rng(3)
        spec, x, w, _ = _conv_case(rng, 1, 2, 3, 5, 5, 3, 1)
        dx, dw, db = conv2d_backward(x, spec, w, np.zeros((1, 3, 5, 5)))
        assert not dx.any() and not dw.any() and not db.any()

    def test_bias_gradient_sums_upstream(self):
        spec = ConvSpec(1, 1, 3)
        _, _, db = conv2d_backward(np.zeros((1, 1, 4, 4)), spec, np.zeros(spec.weight_shape),
                                   np.ones((1, 1, 4, 4)))
        assert db[0] == 16

    def test_upstream_shape_checked(self):
        spec = ConvSpec(1, 2, 3)
        with pytest.raises(ShapeError, match="upstream"):
            conv2d_backward(np.zeros((1, 1, 4, 4)), spec, np.zeros(spec.weight_shape),
                            np.zeros((1, 1, 4, 4)))

    @pytest.mark.parametrize("c_in", [2, 4])
    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_finite_differences(self, c_in, d):
        rng = np.random.default_rng(10 + d + c_in)
        spec, x, w, b = _conv_case(rng, 1, c_in, 3, 6, 6, 3, d)
        up = rng.standard_normal((1, 3, 6, 6))

        def f():
            return float(np.sum(conv2d_forward(x, spec, w, b) * up))

        dx, dw, db = conv2d_backward(x, spec, w, up)
        assert grad_check_error(dx, numeric_grad(f, x)) <= 1e-3
        assert grad_check_error(dw, numeric_grad(f, w)) <= 1e-3
        assert grad_check_error(db, numeric_grad(f, b)) <= 1e-3

    def test_input_grad_optional(self):
        rng = np.random.default_rng(4)
        spec, x, w, _ = _conv_case(rng, 1, 4, 2, 5, 5, 3, 2)
        dx, dw, _ = conv2d_backward(x, spec, w, np.ones((1, 2, 5, 5)), need_input_grad=False)
        assert dx is None and dw.shape == spec.weight_shape


class TestRelu:
    def test_values(self):
        np.testing.assert_array_equal(relu(np.array([-1.0, 0.0, 2.0])), [0, 0, 2])

    def test_nonnegative_identity(self):
        x = np.abs(np.random.default_rng(0).standard_normal(10))
        np.testing.assert_array_equal(relu(x), x)

    def test_backward_finite_differences(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((2, 3, 4, 4))
        x[np.abs(x) < 1e-3] = 0.5  # keep probes away from the kink
        up = rng.standard_normal(x.shape)
        num = numeric_grad(lambda: float(np.sum(relu(x) * up)), x)
        assert grad_check_error(relu_backward(x, up), num) <= 1e-3

    def test_backward_masks_nonpositive(self):
        out = relu_backward(np.array([-1.0, 0.0, 1.0]), np.array([5.0, 5.0, 5.0]))
        np.testing.assert_array_equal(out, [0, 0, 5])


class TestBatchnorm:
    def test_constant_channel_normalizes_to_zero(self):
        x = np.ones((2, 3, 4, 4)) * np.array([1.0, -2.0, 7.0])[None, :, None, None]
        out, _ = batchnorm_forward(x, np.ones(3), np.zeros(3), RunningStats.init(3, np.float64),
                                   training=True, eps=1e-5)
        assert np.all(np.isfinite(out))
        assert np.max(np.abs(out)) <= 1e-6

    def test_affine_stage(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((2, 3, 4, 4))
        stats = RunningStats(np.zeros(3), np.ones(3))
        plain, _ = batchnorm_forward(x, np.ones(3), np.zeros(3), stats, training=False, eps=1e-12)
        out, _ = batchnorm_forward(x, 2 * np.ones(3), np.ones(3), stats, training=False,
                                   eps=1e-12)
        np.testing.assert_allclose(out, 2 * plain + 1, rtol=1e-12)

    def test_running_stats_update(self):
        x = np.random.default_rng(7).standard_normal((2, 2, 3, 3)) + 4
        stats = RunningStats.init(2, np.float64)
        batchnorm_forward(x, np.ones(2), np.zeros(2), stats, training=True, momentum=0.1)
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3), ddof=1)
        np.testing.assert_allclose(stats.mean, 0.1 * mean, rtol=1e-12)
        np.testing.assert_allclose(stats.var, 0.9 + 0.1 * var, rtol=1e-12)

    def test_infer_mode_leaves_stats(self):
        stats = RunningStats(np.array([0.5]), np.array([2.0]))
        x = np.random.default_rng(8).standard_normal((1, 1, 3, 3))
        out, _ = batchnorm_forward(x, np.ones(1), np.zeros(1), stats, training=False, eps=1e-9)
        np.testing.assert_allclose(out, (x - 0.5) / np.sqrt(2.0 + 1e-9))
        assert stats.mean[0] == 0.5 and stats.var[0] == 2.0

    def test_rejects_bad_eps_and_shapes(self):
        x = np.zeros((1, 2, 2, 2))
        with pytest.raises(ValueError):
            batchnorm_forward(x, np.ones(2), np.zeros(2), RunningStats.init(2), True, eps=0)
        with pytest.raises(ShapeError):
            batchnorm_forward(x, np.ones(3), np.zeros(3), RunningStats.init(3), True)

    @pytest.mark.parametrize("training", [True, False])
    def test_finite_differences(self, training):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((2, 3, 4, 4))
        gamma = rng.standard_normal(3)
        beta = rng.standard_normal(3)
        up = rng.standard_normal(x.shape)
        fixed = RunningStats(rng.standard_normal(3), rng.random(3) + 0.5)

        def f():
            stats = RunningStats(fixed.mean.copy(), fixed.var.copy())
            out, _ = batchnorm_forward(x, gamma, beta, stats, training)
            return float(np.sum(out * up))

        _, cache = batchnorm_forward(x, gamma, beta,
                                     RunningStats(fixed.mean.copy(), fixed.var.copy()), training)
        dx, dg, db = batchnorm_backward(cache, up)
        assert grad_check_error(dx, numeric_grad(f, x)) <= 1e-3
        assert grad_check_error(dg, numeric_grad(f, gamma)) <= 1e-3
        assert grad_check_error(db, numeric_grad(f, beta)) <= 1e-3


class TestConcat:
    def test_widths_add(self):
        out = concat_channels([np.zeros((2, 64, 5, 5)), np.zeros((2, 32, 5, 5))])
        assert out.shape == (2, 96, 5, 5)

    def test_single_part_identity(self):
        x = np.random.default_rng(0).standard_normal((1, 3, 2, 2))
        assert concat_channels([x]) is x

    def test_backward_roundtrip_bit_exact(self):
        rng = np.random.default_rng(11)
        parts = [rng.standard_normal((2, c, 3, 3)) for c in (1, 4, 2)]
        out = concat_channels(parts)
        up = rng.standard_normal(out.shape)
        pieces = concat_backward(up, [1, 4, 2])
        np.testing.assert_array_equal(pieces[0], up[:, :1])
        np.testing.assert_array_equal(pieces[1], up[:, 1:5])
        np.testing.assert_array_equal(concat_channels(pieces), up)

    @pytest.mark.parametrize("shape,dim", [((1, 1, 3, 4), "W"), ((1, 1, 2, 3), "H"),
                                           ((2, 1, 3, 3), "N")])
    def test_mismatch_names_dimension(self, shape, dim):
        with pytest.raises(ShapeError, match=f"dimension {dim}"):
            concat_channels([np.zeros((1, 1, 3, 3)), np.zeros(shape)])


class TestResidualAdd:
    def test_zero_is_identity(self):
        a = np.random.default_rng(0).standard_normal((1, 2, 3, 3))
        np.testing.assert_array_equal(residual_add(a, np.zeros_like(a)), a)

    def test_commutative(self):
        rng = np.random.default_rng(1)
        a, b = rng.standard_normal((2, 1, 2, 3, 3))
        np.testing.assert_array_equal(residual_add(a, b), residual_add(b, a))

    def test_backward_passes_upstream(self):
        up = np.random.default_rng(2).standard_normal((1, 2, 3, 3))
        ga, gb = residual_add_backward(up)
        np.testing.assert_array_equal(ga, up)
        np.testing.assert_array_equal(gb, up)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            residual_add(np.zeros((1, 1, 2, 2)), np.zeros((1, 2, 2, 2)))


class TestMseLoss:
    def test_equal_inputs(self):
        x = np.random.default_rng(0).random((1, 1, 4, 4))
        loss, grads = mse_loss([x], [x.copy()])
        assert loss == 0 and not grads[0].any()

    def test_constant_difference(self):
        t = np.zeros((1, 1, 8, 8))
        loss, _ = mse_loss([t + 0.1], [t])
        assert loss == pytest.approx(0.005, rel=1e-12)

    def test_stacked_and_list_forms_agree(self):
        rng = np.random.default_rng(1)
        p, t = rng.random((2, 3, 1, 4, 4))
        l1, g1 = mse_loss(p, t)
        l2, g2 = mse_loss(list(p), list(t))
        assert l1 == l2
        np.testing.assert_array_equal(g1, np.stack(g2))

    def test_finite_differences(self):
        rng = np.random.default_rng(12)
        preds = [rng.random((1, 1, 4, 4)) for _ in range(3)]
        targets = [rng.random((1, 1, 4, 4)) for _ in range(3)]
        _, grads = mse_loss(preds, targets)
        for p, g in zip(preds, grads):
            num = numeric_grad(lambda: mse_loss(preds, targets)[0], p)
            assert grad_check_error(g, num) <= 1e-3

    def test_errors(self):
        with pytest.raises(ShapeError):
            mse_loss([], [])
        with pytest.raises(ShapeError):
            mse_loss([np.zeros((1, 1, 2, 2))], [np.zeros((1, 1, 3, 3))])


class TestAdam:
    def test_zero_gradient_is_identity(self):
        p = Parameter(np.array([1.5, -2.0]))
        adam_step(p, OptimizerConfig(weight_decay=0.0), 0.001)
        np.testing.assert_array_equal(p.value, [1.5, -2.0])

    def test_single_step_hand_computed(self):
        # m = 0.05, v = 0.00025; bias correction gives m_hat = 0.5, v_hat = 0.25.
        p = Parameter(np.array([1.0]))
        p.grad[...] = 0.5
        adam_step(p, OptimizerConfig(weight_decay=0.0), 0.001)
        assert abs(p.value[0] - (1.0 - 0.001 * 0.5 / (0.5 + 1e-8))) <= 1e-12
        assert p.step_count == 1

    def test_two_steps_hand_computed(self):
        # Second step: m = 0.095, v = 0.00049975; corrected moments are again 0.5 and 0.25.
        p = Parameter(np.array([1.0]))
        cfg = OptimizerConfig(weight_decay=0.0)
        for _ in range(2):
            p.grad[...] = 0.5
            adam_step(p, cfg, 0.001)
        assert abs(p.value[0] - (1.0 - 2 * 0.001 * 0.5 / (0.5 + 1e-8))) <= 1e-12
        assert abs(p.value[0] - adam_reference(1.0, [0.5, 0.5], 0.001)) <= 1e-12

    def test_weight_decay_is_coupled(self):
        p = Parameter(np.array([2.0]))
        adam_step(p, OptimizerConfig(weight_decay=0.1), 0.01)
        assert abs(p.value[0] - adam_reference(2.0, [0.0], 0.01, wd=0.1)) <= 1e-12

    def test_moments_start_zero(self):
        p = Parameter(np.ones((2, 3)))
        assert not p.adam_m.any() and not p.adam_v.any()
        assert p.grad.shape == p.adam_m.shape == p.adam_v.shape == p.value.shape

    def test_rejects_nonpositive_lr(self):
        with pytest.raises(ValueError):
            adam_step(Parameter(np.ones(1)), OptimizerConfig(), 0.0)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=5), st.floats(-5, 5),
           st.floats(0, 0.01))
    def test_matches_scalar_reference(self, grads, value, wd):
        p = Parameter(np.array([value]))
        cfg = OptimizerConfig(weight_decay=wd)
        for g in grads:
            p.grad[...] = g
            adam_step(p, cfg, 0.001)
        assert p.value[0] == pytest.approx(adam_reference(value, grads, 0.001, wd=wd),
                                           rel=1e-10, abs=1e-12)


class TestStepLr:
    def test_schedule_points(self):
        cfg = OptimizerConfig()
        assert step_lr(0, cfg) == 0.001
        assert step_lr(49999, cfg) == 0.001
        assert step_lr(50000, cfg) == pytest.approx(0.0001, rel=1e-12)
        assert step_lr(100000, cfg) == pytest.approx(0.00001, rel=1e-12)

    def test_negative_iteration(self):
        with pytest.raises(ValueError):
            step_lr(-1, OptimizerConfig())

    @given(st.integers(0, 10 ** 6), st.integers(0, 10 ** 6))
    def test_non_increasing(self, a, b):
        cfg = OptimizerConfig()
        lo, hi = sorted((a, b))
        assert step_lr(hi, cfg) <= step_lr(lo, cfg)

    def test_defaults(self):
        cfg = OptimizerConfig()
        assert (cfg.base_lr, cfg.weight_decay, cfg.lr_gamma, cfg.lr_step, cfg.beta1,
                cfg.max_iterations) == (0.001, 0.0001, 0.1, 50000, 0.9, 250000)
