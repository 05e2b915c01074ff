"""Tape-gradient checks against the finite-difference oracle, op by op."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

import glyphgen.autodiff as ad
from glyphgen.autodiff import Tensor
from glyphgen.errors import ConfigError, DimensionError, GradModeError

from helpers import grad_check, max_rel_err, numeric_grad

TOL = 1e-4


class TestElementwise:
    def test_add_mul_broadcast(self):
        rng = np.random.default_rng(11)
        arrays = {"a": rng.normal(size=(3, 1)), "b": rng.normal(size=(1, 4)), "c": rng.normal(size=(3, 4))}
        err = grad_check(lambda t: ((t["a"] + t["b"]) * t["c"]).sum(), arrays)
        assert err < TOL

    def test_sub_div_pow(self):
        rng = np.random.default_rng(12)
        arrays = {"a": rng.normal(size=(4, 3)), "b": rng.uniform(0.5, 2.0, size=(4, 3))}
        err = grad_check(lambda t: ((t["a"] - t["b"] ** 2.0) / t["b"]).sum(), arrays)
        assert err < TOL

    def test_scalar_operands(self):
        rng = np.random.default_rng(13)
        arrays = {"a": rng.normal(size=(5,))}
        err = grad_check(lambda t: (2.0 * t["a"] + 1.0 - t["a"] / 3.0).sum(), arrays)
        assert err < TOL

    @pytest.mark.parametrize("op", ["exp", "tanh", "sigmoid", "softplus", "elu"])
    def test_smooth_unaries(self, op):
        rng = np.random.default_rng(hash(op) % 2**32)
        arrays = {"x": rng.normal(size=(4, 5))}
        fn = getattr(ad, op)
        err = grad_check(lambda t: fn(t["x"]).sum(), arrays)
        assert err < TOL

    def test_log_sqrt_positive_domain(self):
        rng = np.random.default_rng(14)
        arrays = {"x": rng.uniform(0.2, 3.0, size=(6,))}
        err = grad_check(lambda t: (ad.log(t["x"]) + ad.sqrt(t["x"])).sum(), arrays)
        assert err < TOL

    def test_relu_away_from_kink(self):
        rng = np.random.default_rng(15)
        x = rng.normal(size=(40,))
        x[np.abs(x) < 0.05] += 0.1  # keep finite differences off the kink
        err = grad_check(lambda t: ad.relu(t["x"]).sum(), {"x": x})
        assert err < TOL

    def test_clip_min(self):
        x = np.array([-2.0, -0.5, 0.3, 2.0])
        out = ad.clip_min(Tensor(x), 0.0)
        assert_allclose(out.data, [0.0, 0.0, 0.3, 2.0])
        err = grad_check(lambda t: (ad.clip_min(t["x"], 0.0) * np.arange(1.0, 5.0)).sum(), {"x": x})
        assert err < TOL

    def test_sigmoid_extreme_inputs_stable(self):
        out = ad.sigmoid(Tensor([-800.0, 800.0]))
        assert np.all(np.isfinite(out.data))
        assert_allclose(out.data, [0.0, 1.0], atol=1e-12)


class TestShapes:
    def test_reshape_transpose(self):
        rng = np.random.default_rng(21)
        arrays = {"x": rng.normal(size=(2, 3, 4))}
        w = rng.normal(size=(2, 3, 4))
        err = grad_check(
            lambda t: (ad.transpose(ad.reshape(t["x"], (4, 3, 2)), (2, 1, 0)) * w).sum(), arrays
        )
        assert err < TOL

    def test_take_slices(self):
        rng = np.random.default_rng(22)
        arrays = {"x": rng.normal(size=(3, 8))}
        err = grad_check(lambda t: (t["x"][:, 2:6] * 3.0).sum() + t["x"][1, 0], arrays)
        assert err < TOL

    def test_concat_stack(self):
        rng = np.random.default_rng(23)
        arrays = {"a": rng.normal(size=(2, 3)), "b": rng.normal(size=(2, 2))}
        err = grad_check(lambda t: (ad.concat([t["a"], t["b"]], axis=1) ** 2.0).sum(), arrays)
        assert err < TOL
        err = grad_check(lambda t: (ad.stack([t["a"], t["a"] * 2.0], axis=0)).sum(), arrays)
        assert err < TOL


class TestReductions:
    @pytest.mark.parametrize("axis,keepdims", [(None, False), (0, False), (1, True), ((0, 1), False)])
    def test_sum_mean(self, axis, keepdims):
        rng = np.random.default_rng(31)
        arrays = {"x": rng.normal(size=(3, 5))}
        w = rng.normal(size=np.sum(np.ones((3, 5))).astype(int)) if axis is None else None
        err = grad_check(lambda t: (ad.tsum(t["x"], axis=axis, keepdims=keepdims) ** 2.0).sum(), arrays)
        assert err < TOL
        err = grad_check(lambda t: (ad.tmean(t["x"], axis=axis, keepdims=keepdims) ** 2.0).sum(), arrays)
        assert err < TOL

    def test_logsumexp_matches_naive_and_survives_large_inputs(self):
        rng = np.random.default_rng(32)
        x = rng.normal(size=(4, 6))
        out = ad.logsumexp(Tensor(x), axis=1)
        assert_allclose(out.data, np.log(np.exp(x).sum(axis=1)), rtol=1e-12)
        big = ad.logsumexp(Tensor(np.array([1000.0, 1000.0])), axis=0)
        assert_allclose(big.data, 1000.0 + np.log(2.0), rtol=1e-15)

    def test_logsumexp_grad(self):
        rng = np.random.default_rng(33)
        arrays = {"x": rng.normal(size=(3, 7))}
        w = np.arange(1.0, 4.0)
        err = grad_check(lambda t: (ad.logsumexp(t["x"], axis=1) * w).sum(), arrays)
        assert err < TOL

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(34)
        x = rng.normal(size=(5, 9)) * 10.0
        s = ad.softmax(Tensor(x), axis=1)
        assert_allclose(s.data.sum(axis=1), np.ones(5), rtol=1e-12)
        assert_allclose(ad.log_softmax(Tensor(x), axis=1).data, np.log(s.data), rtol=1e-10, atol=1e-12)


class TestMatmul:
    def test_forward_and_grad(self):
        rng = np.random.default_rng(41)
        arrays = {"a": rng.normal(size=(3, 4)), "b": rng.normal(size=(4, 2))}
        out = ad.matmul(Tensor(arrays["a"]), Tensor(arrays["b"]))
        assert_allclose(out.data, arrays["a"] @ arrays["b"], rtol=1e-13)
        err = grad_check(lambda t: (ad.matmul(t["a"], t["b"]) ** 2.0).sum(), arrays)
        assert err < TOL

    def test_shape_errors_name_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(3, 4\).*\(3, 2\)"):
            ad.matmul(Tensor(np.zeros((3, 4))), Tensor(np.zeros((3, 2))))
        with pytest.raises(DimensionError):
            ad.matmul(Tensor(np.zeros(3)), Tensor(np.zeros((3, 2))))


def conv2d_reference(x, k, b):
    """Nested-loop 3x3 convolution oracle with zero padding 1."""
    c_out = k.shape[0]
    c_in, h, w = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    out = np.zeros((c_out, h, w))
    for co in range(c_out):
        for i in range(h):
            for j in range(w):
                out[co, i, j] = np.sum(xp[:, i : i + 3, j : j + 3] * k[co]) + b[co]
    return out


class TestConv2d:
    def test_matches_reference(self):
        rng = np.random.default_rng(51)
        x = rng.normal(size=(3, 6, 5))
        k = rng.normal(size=(4, 3, 3, 3))
        b = rng.normal(size=4)
        out = ad.conv2d_3x3(Tensor(x), Tensor(k), Tensor(b))
        assert out.data.shape == (4, 6, 5)
        assert_allclose(out.data, conv2d_reference(x, k, b), rtol=1e-12, atol=1e-12)

    def test_batched_matches_per_image(self):
        rng = np.random.default_rng(52)
        x = rng.normal(size=(3, 2, 4, 4))
        k = rng.normal(size=(5, 2, 3, 3))
        b = rng.normal(size=5)
        out = ad.conv2d_3x3(Tensor(x), Tensor(k), Tensor(b))
        for n in range(3):
            assert_allclose(out.data[n], conv2d_reference(x[n], k, b), rtol=1e-12, atol=1e-12)

    def test_single_pixel_input_is_center_tap(self):
        rng = np.random.default_rng(53)
        x = rng.normal(size=(2, 1, 1))
        k = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)
        out = ad.conv2d_3x3(Tensor(x), Tensor(k), Tensor(b))
        expected = (k[:, :, 1, 1] * x[:, 0, 0]).sum(axis=1) + b
        assert_allclose(out.data.reshape(3), expected, rtol=1e-12)

    def test_grad(self):
        rng = np.random.default_rng(54)
        arrays = {
            "x": rng.normal(size=(2, 2, 5, 4)),
            "k": rng.normal(size=(3, 2, 3, 3)),
            "b": rng.normal(size=3),
        }
        w = np.random.default_rng(55).normal(size=(2, 3, 5, 4))
        err = grad_check(lambda t: (ad.conv2d_3x3(t["x"], t["k"], t["b"]) * w).sum(), arrays)
        assert err < TOL

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError, match="channels"):
            ad.conv2d_3x3(Tensor(np.zeros((2, 4, 4))), Tensor(np.zeros((3, 5, 3, 3))), Tensor(np.zeros(3)))


class TestMaxpool:
    def test_forward_even(self):
        x = np.arange(16.0).reshape(1, 4, 4)
        out = ad.maxpool_2x2(Tensor(x))
        assert_allclose(out.data, [[[5.0, 7.0], [13.0, 15.0]]])

    def test_odd_edges_padded_with_neg_inf(self):
        x = np.arange(9.0).reshape(1, 3, 3)
        out = ad.maxpool_2x2(Tensor(x))
        # bottom-right window holds only element 8; padding never wins
        assert_allclose(out.data, [[[4.0, 5.0], [7.0, 8.0]]])

    def test_tie_routes_gradient_to_first_row_major(self):
        x = Tensor(np.full((1, 2, 2), 3.0), requires_grad=True)
        out = ad.maxpool_2x2(x)
        out.sum().backward()
        assert_allclose(x.grad, [[[1.0, 0.0], [0.0, 0.0]]])

    def test_grad(self):
        rng = np.random.default_rng(61)
        # distinct values keep the argmax locally stable for differencing
        x = rng.permutation(np.arange(2 * 5 * 6, dtype=np.float64)).reshape(2, 5, 6) * 0.37
        w = rng.normal(size=(2, 3, 3))
        err = grad_check(lambda t: (ad.maxpool_2x2(t["x"]) * w).sum(), {"x": x})
        assert err < TOL


class TestBatchnorm:
    def _fresh(self, channels=3):
        store = ad.ParameterStore()
        return ad.BatchNorm(store, "bn", channels), store

    def test_train_normalizes_per_channel(self):
        rng = np.random.default_rng(71)
        bn, _ = self._fresh()
        x = rng.normal(loc=5.0, scale=3.0, size=(16, 3, 4, 4))
        out = bn(Tensor(x), "train")
        assert_allclose(out.data.mean(axis=(0, 2, 3)), np.zeros(3), atol=1e-10)
        assert_allclose(out.data.std(axis=(0, 2, 3)), np.ones(3), atol=1e-3)

    def test_running_stats_update_and_eval_uses_them(self):
        rng = np.random.default_rng(72)
        bn, _ = self._fresh(2)
        x = rng.normal(loc=2.0, scale=1.5, size=(32, 2))
        bn(Tensor(x), "train")
        n = 32
        expected_mean = 0.1 * x.mean(axis=0)
        expected_var = 0.9 * 1.0 + 0.1 * x.var(axis=0) * n / (n - 1)
        assert_allclose(bn.running_mean.data, expected_mean, rtol=1e-12)
        assert_allclose(bn.running_var.data, expected_var, rtol=1e-12)
        y = bn(Tensor(x), "eval")
        manual = (x - expected_mean) / np.sqrt(expected_var + bn.eps)
        assert_allclose(y.data, manual, rtol=1e-12)

    def test_single_sample_train_is_error_for_op(self):
        store = ad.ParameterStore()
        g = store.add("g", np.ones(2))
        b = store.add("b", np.zeros(2))
        rm = store.add("rm", np.zeros(2), trainable=False)
        rv = store.add("rv", np.ones(2), trainable=False)
        with pytest.raises(DimensionError, match="at least 2"):
            ad.batchnorm(Tensor(np.zeros((1, 2))), g.tensor, b.tensor, rm.tensor, rv.tensor, "train")

    def test_grad_through_batch_statistics(self):
        rng = np.random.default_rng(73)
        arrays = {
            "x": rng.normal(size=(6, 2, 3, 3)),
            "g": rng.uniform(0.5, 1.5, size=2),
            "b": rng.normal(size=2),
        }
        w = rng.normal(size=(6, 2, 3, 3))

        def fn(t):
            rm = Tensor(np.zeros(2))
            rv = Tensor(np.ones(2))
            return (ad.batchnorm(t["x"], t["g"], t["b"], rm, rv, "train") * w).sum()

        assert grad_check(fn, arrays) < TOL

    def test_eval_grad(self):
        rng = np.random.default_rng(74)
        arrays = {"x": rng.normal(size=(3, 4)), "g": rng.uniform(0.5, 1.5, size=4), "b": rng.normal(size=4)}
        rm, rv = rng.normal(size=4), rng.uniform(0.5, 2.0, size=4)

        def fn(t):
            return (ad.batchnorm(t["x"], t["g"], t["b"], Tensor(rm), Tensor(rv), "eval") ** 2.0).sum()

        assert grad_check(fn, arrays) < TOL


class TestDropout:
    def test_eval_is_identity(self):
        rng = np.random.default_rng(81)
        x = rng.normal(size=(50,))
        out = ad.dropout(Tensor(x), 0.7, "eval")
        assert_allclose(out.data, x)

    def test_train_zeroes_and_rescales(self):
        rng = np.random.default_rng(82)
        x = np.ones(20000)
        out = ad.dropout(Tensor(x), 0.3, "train", rng=np.random.default_rng(5))
        zeros = out.data == 0.0
        assert abs(zeros.mean() - 0.3) < 0.02
        assert_allclose(out.data[~zeros], 1.0 / 0.7)
        assert abs(out.data.mean() - 1.0) < 0.02

    def test_deterministic_given_seed(self):
        x = np.ones(100)
        a = ad.dropout(Tensor(x), 0.5, "train", rng=np.random.default_rng(9)).data
        b = ad.dropout(Tensor(x), 0.5, "train", rng=np.random.default_rng(9)).data
        assert_allclose(a, b)

    def test_p_one_rejected(self):
        with pytest.raises(ConfigError):
            ad.dropout(Tensor(np.ones(3)), 1.0, "train", rng=np.random.default_rng(0))

    def test_grad_uses_same_mask(self):
        x = np.random.default_rng(83).normal(size=(4, 4))
        err = grad_check(
            lambda t: ad.dropout(t["x"], 0.4, "train", rng=np.random.default_rng(7)).sum(), {"x": x}
        )
        assert err < TOL


class TestLSTMCell:
    def _weights(self, rng, d, u):
        return {
            "w_x": rng.normal(size=(d, 4 * u)) * 0.4,
            "w_h": rng.normal(size=(u, 4 * u)) * 0.4,
            "b": rng.normal(size=(4 * u,)) * 0.4,
            "x": rng.normal(size=(1, d)),
            "h": rng.normal(size=(1, u)) * 0.5,
            "c": rng.normal(size=(1, u)) * 0.5,
        }

    def test_zero_weights_zero_state_give_zero_output(self):
        h, c = ad.lstm_cell(
            Tensor(np.ones((1, 3))),
            Tensor(np.zeros((1, 4))),
            Tensor(np.zeros((1, 4))),
            Tensor(np.zeros((3, 16))),
            Tensor(np.zeros((4, 16))),
            Tensor(np.zeros(16)),
        )
        assert_allclose(h.data, np.zeros((1, 4)))
        assert_allclose(c.data, np.zeros((1, 4)))

    def test_saturated_forget_gate_keeps_cell_state(self):
        u = 3
        b = np.zeros(4 * u)
        b[u : 2 * u] = 50.0  # forget gate ~ 1
        b[0:u] = -50.0  # input gate ~ 0
        c_prev = np.array([[0.3, -1.2, 4.0]])
        h, c = ad.lstm_cell(
            Tensor(np.zeros((1, 2))),
            Tensor(np.zeros((1, u))),
            Tensor(c_prev),
            Tensor(np.zeros((2, 4 * u))),
            Tensor(np.zeros((u, 4 * u))),
            Tensor(b),
        )
        assert_allclose(c.data, c_prev, rtol=1e-12)

    def test_grad_all_inputs(self):
        rng = np.random.default_rng(91)
        arrays = self._weights(rng, d=3, u=4)
        wh = rng.normal(size=(1, 4))
        wc = rng.normal(size=(1, 4))

        def fn(t):
            h, c = ad.lstm_cell(t["x"], t["h"], t["c"], t["w_x"], t["w_h"], t["b"])
            return (h * wh).sum() + (c * wc).sum()

        assert grad_check(fn, arrays) < TOL


class TestDense:
    def test_tanh_dense_matches_oracle(self):
        rng = np.random.default_rng(101)
        arrays = {"x": rng.normal(size=(5, 3)), "w": rng.normal(size=(3, 4)), "b": rng.normal(size=4)}
        out = ad.dense(Tensor(arrays["x"]), Tensor(arrays["w"]), Tensor(arrays["b"]), "tanh")
        assert_allclose(out.data, np.tanh(arrays["x"] @ arrays["w"] + arrays["b"]), rtol=1e-12)
        err = grad_check(lambda t: ad.dense(t["x"], t["w"], t["b"], "tanh").sum(), arrays)
        assert err < TOL

    def test_unknown_activation(self):
        with pytest.raises(ConfigError):
            ad.dense(Tensor(np.zeros((1, 2))), Tensor(np.zeros((2, 2))), Tensor(np.zeros(2)), "gelu")


class TestBackwardContract:
    def test_backward_requires_scalar(self):
        x = Tensor(np.zeros((2, 2)), requires_grad=True)
        with pytest.raises(GradModeError):
            (x * 2.0).backward()

    def test_backward_twice_fails(self):
        x = Tensor(np.ones(3), requires_grad=True)
        y = (x * 3.0).sum()
        y.backward()
        with pytest.raises(GradModeError, match="freed"):
            y.backward()

    def test_no_grad_blocks_taping(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with ad.no_grad():
            y = (x * 3.0).sum()
        assert not y.requires_grad
        with pytest.raises(GradModeError):
            y.backward()

    def test_grad_accumulates_across_reuse(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        y = (x * x + x * 3.0).sum()
        y.backward()
        assert_allclose(x.grad, [7.0])

    def test_deep_chain_does_not_recurse(self):
        x = Tensor(np.array([0.5]), requires_grad=True)
        y = x
        for _ in range(5000):
            y = y * 1.0001
        y.sum().backward()
        assert np.isfinite(x.grad).all()


class TestParameterStore:
    def test_duplicate_names_rejected(self):
        store = ad.ParameterStore()
        store.add("w", np.zeros(2))
        with pytest.raises(ConfigError):
            store.add("w", np.zeros(2))

    def test_load_arrays_shape_checked(self):
        store = ad.ParameterStore()
        store.add("w", np.zeros((2, 3)))
        with pytest.raises(DimensionError):
            store.load_arrays({"w": np.zeros((3, 2))})
        with pytest.raises(DimensionError):
            store.load_arrays({"w": np.zeros((2, 3)), "v": np.zeros(1)})
