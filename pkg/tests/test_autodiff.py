"""Autodiff engine tests: op semantics, finite-difference checks, optimizer."""

import numpy as np
import pytest
from conftest import check_gradients, numeric_grad

from hdsa import autodiff as ad
from hdsa.autodiff import GradTape, NumericalError, Tensor
from hdsa.layers import BatchNorm, Dense, LayerNorm, MultiHeadAttention
from hdsa.optim import AdamW
from hdsa.rand import make_rng

RNG = np.random.default_rng(1234)


class TestPrimitives:
    def test_matmul_shape(self):
        out = ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 4))))
        assert out.shape == (2, 4)

    def test_matmul_shape_mismatch(self):
        with pytest.raises(ValueError):
            ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))

    def test_mul_by_ones_identity(self):
        x = RNG.standard_normal((3, 4))
        out = ad.mul(Tensor(x), Tensor(np.ones((3, 4))))
        np.testing.assert_array_equal(out.data, x)

    def test_matmul_grad(self):
        check_gradients(ad.matmul, [RNG.standard_normal((2, 3)), RNG.standard_normal((3, 4))])

    def test_batched_matmul_grad(self):
        check_gradients(
            ad.matmul, [RNG.standard_normal((2, 2, 3)), RNG.standard_normal((3, 4))]
        )

    def test_add_broadcast_grad(self):
        check_gradients(ad.add, [RNG.standard_normal((2, 3, 4)), RNG.standard_normal(4)])

    def test_sub_mul_grad(self):
        check_gradients(
            lambda a, b: ad.mul(ad.sub(a, b), a),
            [RNG.standard_normal((3, 4)), RNG.standard_normal((1, 4))],
        )

    def test_transpose_reshape_concat_grad(self):
        def build(a, b):
            c = ad.concat([ad.transpose(a), b], axis=1)
            return ad.reshape(c, (-1,))

        check_gradients(build, [RNG.standard_normal((3, 2)), RNG.standard_normal((2, 4))])

    def test_sum_mean_grad(self):
        check_gradients(
            lambda a: ad.mean(ad.tensor_sum(a, axis=-1), axis=0),
            [RNG.standard_normal((4, 3, 5))],
        )

    def test_relu_sigmoid_rsqrt_grad(self):
        x = RNG.standard_normal((4, 5)) + np.sign(RNG.standard_normal((4, 5))) * 0.2
        check_gradients(lambda a: ad.sigmoid(ad.relu(a)), [x])
        check_gradients(ad.rsqrt, [RNG.random((3, 3)) + 0.5])


class TestSoftmax:
    def test_uniform_rows(self):
        out = ad.softmax_rows(Tensor(np.zeros((2, 5))))
        np.testing.assert_allclose(out.data, 0.2)

    def test_saturation(self):
        out = ad.softmax_rows(Tensor(np.array([[0.0, 50.0]])))
        np.testing.assert_allclose(out.data, [[0.0, 1.0]], atol=1e-20)

    def test_rows_sum_to_one(self):
        out = ad.softmax_rows(Tensor(RNG.standard_normal((3, 4, 6))))
        np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-9)

    def test_grad(self):
        check_gradients(ad.softmax_rows, [RNG.standard_normal((3, 5))])


class TestSignSte:
    def test_forward(self):
        out = ad.sign_ste(Tensor(np.array([0.3, -2.0, 0.0])))
        np.testing.assert_array_equal(out.data, [1.0, -1.0, 1.0])

    def test_backward_gate(self):
        x = Tensor(np.array([0.3, -2.0, 1.0, -1.0, 5.0]), requires_grad=True)
        with GradTape() as tape:
            out = ad.sign_ste(x)
            loss = ad.tensor_sum(ad.mul(out, Tensor(np.array([2.0, 3.0, 4.0, 5.0, 6.0]))))
        tape.backward(loss)
        np.testing.assert_array_equal(x.grad, [2.0, 0.0, 4.0, 5.0, 0.0])

    def test_toy_bipolar_training_loss_decreases(self):
        """A bipolar projection plus real readout fits a separable toy monotonically."""
        rng = make_rng(5)
        w_true = np.array([1.0, -1.0, 1.0, -1.0, 1.0, 1.0, -1.0, -1.0])
        x = rng.standard_normal((256, 8))
        y = (x @ w_true > 0).astype(np.float64)
        latent = Tensor(rng.standard_normal((8, 4)) * 0.5, requires_grad=True)
        readout = Tensor(rng.standard_normal(4) * 0.1, requires_grad=True)
        opt = AdamW({"w": latent, "v": readout}, lr=0.02)
        losses = []
        for _ in range(10):
            with GradTape() as tape:
                h = ad.matmul(Tensor(x), ad.sign_ste(latent))
                logit = ad.matmul(h, ad.reshape(readout, (4, 1)))
                loss = ad.binary_cross_entropy(ad.sigmoid(ad.reshape(logit, (-1,))), y)
            losses.append(loss.item())
            tape.backward(loss)
            opt.step()
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:])), losses
        assert losses[-1] < losses[0]


class TestDropout:
    def test_rate_zero_identity(self):
        x = RNG.standard_normal((5, 5))
        out = ad.dropout(Tensor(x), 0.0, training=True, rng=np.random.default_rng(0))
        np.testing.assert_array_equal(out.data, x)

    def test_eval_identity(self):
        x = RNG.standard_normal((5, 5))
        out = ad.dropout(Tensor(x), 0.5, training=False)
        np.testing.assert_array_equal(out.data, x)

    def test_zero_fraction_matches_rate(self):
        x = np.ones(100_000)
        out = ad.dropout(Tensor(x), 0.3, training=True, rng=np.random.default_rng(42))
        zero_frac = np.mean(out.data == 0.0)
        assert abs(zero_frac - 0.3) < 0.02
        survivors = out.data[out.data != 0]
        np.testing.assert_allclose(survivors, 1.0 / 0.7, rtol=1e-6)

    def test_invalid_rate(self):
        with pytest.raises(ValueError):
            ad.dropout(Tensor(np.ones(3)), 1.0, training=True, rng=np.random.default_rng(0))


class TestGlobalAvgPool:
    def test_hand_example(self):
        out = ad.global_avg_pool(Tensor(np.array([[1.0, 3.0, 5.0, 7.0]])), 2)
        np.testing.assert_array_equal(out.data, [[2.0, 6.0]])

    def test_identity_when_dims_match(self):
        x = RNG.standard_normal((2, 6))
        np.testing.assert_array_equal(ad.global_avg_pool(Tensor(x), 6).data, x)

    def test_trailing_coordinates_discarded(self):
        # D=1000 -> F=32 gives window 31; the last 8 coordinates must not matter
        x = RNG.standard_normal((1, 1000))
        x2 = x.copy()
        x2[0, 992:] += 100.0
        a = ad.global_avg_pool(Tensor(x), 32).data
        b = ad.global_avg_pool(Tensor(x2), 32).data
        np.testing.assert_array_equal(a, b)
        assert a.shape == (1, 32)

    def test_out_dim_too_large(self):
        with pytest.raises(ValueError):
            ad.global_avg_pool(Tensor(np.ones((2, 3))), 4)

    def test_grad(self):
        check_gradients(lambda a: ad.global_avg_pool(a, 3), [RNG.standard_normal((2, 10))])


class TestEmbedding:
    def test_lookup_and_grad(self):
        idx = np.array([[0, 2], [2, 1]])
        check_gradients(lambda w: ad.embedding(w, idx), [RNG.standard_normal((3, 4))])

    def test_repeated_indices_accumulate(self):
        w = Tensor(np.zeros((3, 2)), requires_grad=True)
        with GradTape() as tape:
            out = ad.embedding(w, np.array([1, 1, 1]))
            loss = ad.tensor_sum(out)
        tape.backward(loss)
        np.testing.assert_array_equal(w.grad, [[0, 0], [3, 3], [0, 0]])


class TestLosses:
    def test_cross_entropy_uniform(self):
        logits = Tensor(np.zeros((4, 7)))
        loss = ad.cross_entropy(logits, np.zeros(4, dtype=int))
        np.testing.assert_allclose(loss.item(), np.log(7), rtol=1e-6)

    def test_cross_entropy_perfect(self):
        logits = np.full((2, 3), -50.0)
        logits[0, 1] = 50.0
        logits[1, 0] = 50.0
        loss = ad.cross_entropy(Tensor(logits), np.array([1, 0]))
        assert loss.item() < 1e-6

    def test_cross_entropy_invalid_target(self):
        with pytest.raises(ValueError):
            ad.cross_entropy(Tensor(np.zeros((2, 3))), np.array([0, 3]))

    def test_cross_entropy_grad(self):
        targets = np.array([[0, 2], [1, 1]])
        check_gradients(
            lambda a: ad.cross_entropy(a, targets), [RNG.standard_normal((2, 2, 3))]
        )

    def test_bce_perfect_and_uniform(self):
        assert ad.binary_cross_entropy(
            Tensor(np.array([1.0, 0.0])), np.array([1.0, 0.0])
        ).item() < 1e-5
        np.testing.assert_allclose(
            ad.binary_cross_entropy(Tensor(np.array([0.5])), np.array([1.0])).item(),
            np.log(2),
            rtol=1e-6,
        )

    def test_bce_grad(self):
        probs = RNG.random((6,)) * 0.8 + 0.1
        targets = (RNG.random(6) > 0.5).astype(np.float64)
        check_gradients(lambda p: ad.binary_cross_entropy(p, targets), [probs])


class TestBatchNorm:
    def test_constant_feature_gives_shift(self):
        bn = BatchNorm(3, dtype=np.float64)
        bn.beta.data = np.array([5.0, -2.0, 0.5])
        x = Tensor(np.ones((8, 3)) * np.array([10.0, 20.0, 30.0]))
        out = bn(x, training=True)
        np.testing.assert_allclose(out.data, np.broadcast_to(bn.beta.data, (8, 3)), atol=1e-6)

    def test_train_mode_standardizes(self):
        bn = BatchNorm(4, dtype=np.float64)
        x = Tensor(RNG.standard_normal((64, 5, 4)) * 3.0 + 1.0)
        out = bn(x, training=True)
        np.testing.assert_allclose(out.data.mean(axis=(0, 1)), 0.0, atol=1e-10)
        np.testing.assert_allclose(out.data.var(axis=(0, 1)), 1.0, atol=1e-3)

    def test_running_stats_update_and_eval(self):
        bn = BatchNorm(2, dtype=np.float64)
        bn.running_mean = bn.running_mean.astype(np.float64)
        bn.running_var = bn.running_var.astype(np.float64)
        x = RNG.standard_normal((32, 2)) + 4.0
        bn(Tensor(x), training=True)
        expected_mean = 0.99 * 0.0 + 0.01 * x.mean(axis=0)
        np.testing.assert_allclose(bn.running_mean, expected_mean, rtol=1e-8)
        out = bn(Tensor(x), training=False)
        manual = (x - bn.running_mean) / np.sqrt(bn.running_var + bn.eps)
        np.testing.assert_allclose(out.data, manual, rtol=1e-6)

    def test_grad(self):
        def build(x, gamma, beta):
            bn = BatchNorm(4, dtype=np.float64)
            bn.gamma = gamma
            bn.beta = beta
            return bn(x, training=True)

        check_gradients(
            build,
            [RNG.standard_normal((6, 4)), RNG.random(4) + 0.5, RNG.standard_normal(4)],
        )


class TestLayerNorm:
    def test_normalizes_last_axis(self):
        ln = LayerNorm(8, dtype=np.float64)
        out = ln(Tensor(RNG.standard_normal((3, 8)) * 4 + 2))
        np.testing.assert_allclose(out.data.mean(axis=-1), 0.0, atol=1e-9)

    def test_grad(self):
        def build(x, gamma, beta):
            ln = LayerNorm(5, eps=1e-5, dtype=np.float64)
            ln.gamma = gamma
            ln.beta = beta
            return ln(x)

        check_gradients(
            build,
            [RNG.standard_normal((4, 5)), RNG.random(5) + 0.5, RNG.standard_normal(5)],
        )


class TestMultiHeadAttention:
    def _make(self, d_model=4, heads=2, kv_dim=None):
        mha = MultiHeadAttention(d_model, heads, make_rng(0), kv_dim=kv_dim, dtype=np.float64)
        return mha

    def test_grad(self):
        mha = self._make()
        x = RNG.standard_normal((2, 3, 4))

        def build(xt, wq, wk, wv, wo):
            mha.wq.weight, mha.wk.weight, mha.wv.weight, mha.wo.weight = wq, wk, wv, wo
            return mha(xt, xt)

        check_gradients(
            build,
            [x] + [RNG.standard_normal((4, 4)) for _ in range(4)],
            tol=2e-4,
        )

    def test_mask_blocks_future(self):
        from hdsa.layers import causal_mask

        mha = self._make()
        x = RNG.standard_normal((1, 4, 4))
        mask = causal_mask(4, dtype=np.float64)
        out1 = mha(Tensor(x), Tensor(x), mask=mask).data
        x2 = x.copy()
        x2[0, 3] += 10.0  # only the last position changes
        out2 = mha(Tensor(x2), Tensor(x2), mask=mask).data
        np.testing.assert_allclose(out1[0, :3], out2[0, :3], atol=1e-10)


class TestGradTape:
    def test_cleared_after_backward(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        with GradTape() as tape:
            loss = ad.tensor_sum(ad.mul(x, x))
        tape.backward(loss)
        np.testing.assert_allclose(x.grad, [4.0])
        assert tape._records == []

    def test_no_tracking_without_tape(self):
        x = Tensor(np.ones(3), requires_grad=True)
        out = ad.mul(x, x)
        assert not out.requires_grad

    def test_scalar_root_required(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with GradTape() as tape:
            out = ad.mul(x, x)
        with pytest.raises(ValueError):
            tape.backward(out)

    def test_nested_tape_rejected(self):
        with GradTape():
            with pytest.raises(RuntimeError):
                with GradTape():
                    pass

    def test_grad_accumulates_over_reuse(self):
        x = Tensor(np.array([3.0]), requires_grad=True)
        with GradTape() as tape:
            loss = ad.tensor_sum(ad.add(ad.mul(x, x), x))
        tape.backward(loss)
        np.testing.assert_allclose(x.grad, [7.0])

    def test_same_shape_add_does_not_alias_grad_buffers(self):
        """x + y with equal shapes must not share one grad buffer.

        x is consumed twice with the second consumer recorded first, so its
        accumulation runs after the add's backward; a shared buffer would
        corrupt y's gradient.
        """
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        y = Tensor(np.array([3.0, 4.0]), requires_grad=True)
        c = Tensor(np.array([10.0, 20.0]))
        with GradTape() as tape:
            w = ad.mul(x, c)          # recorded before the add, pulled after it
            z = ad.add(x, y)
            k = Tensor(np.array([1.0, 1.0]))
            loss = ad.tensor_sum(ad.add(ad.mul(z, k), w))
        tape.backward(loss)
        np.testing.assert_allclose(y.grad, [1.0, 1.0])
        np.testing.assert_allclose(x.grad, [11.0, 21.0])


class TestAdamW:
    def test_zero_grad_no_decay_unchanged(self):
        p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        p.grad = np.zeros(2)
        opt = AdamW({"p": p}, lr=0.1, weight_decay=0.0)
        opt.step()
        np.testing.assert_array_equal(p.data, [1.0, 2.0])

    def test_missing_grad_skipped(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        opt = AdamW({"p": p}, lr=0.1)
        opt.step()
        np.testing.assert_array_equal(p.data, [1.0])

    def test_hand_computed_two_steps(self):
        lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
        p = Tensor(np.array([0.5]), requires_grad=True)
        opt = AdamW({"p": p}, lr=lr, betas=(b1, b2), eps=eps)
        # manual replay
        theta, m, v = 0.5, 0.0, 0.0
        for t in (1, 2):
            g = 1.0
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            mhat = m / (1 - b1**t)
            vhat = v / (1 - b2**t)
            theta -= lr * mhat / (np.sqrt(vhat) + eps)
            p.grad = np.array([g])
            opt.step()
        np.testing.assert_allclose(p.data, [theta], rtol=1e-12)
        np.testing.assert_allclose(opt.m["p"], [m], rtol=1e-12)
        np.testing.assert_allclose(opt.v["p"], [v], rtol=1e-12)

    def test_quadratic_converges(self):
        p = Tensor(np.array([5.0, -3.0]), requires_grad=True)
        opt = AdamW({"p": p}, lr=0.1)
        first = float(np.sum(p.data**2))
        for _ in range(100):
            with GradTape() as tape:
                loss = ad.tensor_sum(ad.mul(Tensor(p.data.copy()) * 0 + p, p))
            tape.backward(loss)
            opt.step()
        assert float(np.sum(p.data**2)) < 0.01 * first

    def test_non_finite_gradient_aborts(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        p.grad = np.array([np.nan])
        opt = AdamW({"p": p}, lr=0.1)
        with pytest.raises(NumericalError, match="p"):
            opt.step()

    def test_weight_decay_decoupled(self):
        p = Tensor(np.array([2.0]), requires_grad=True)
        p.grad = np.array([0.0])
        opt = AdamW({"p": p}, lr=0.1, weight_decay=0.5)
        opt.step()
        np.testing.assert_allclose(p.data, [2.0 - 0.1 * 0.5 * 2.0])
