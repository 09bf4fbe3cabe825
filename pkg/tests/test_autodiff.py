"""Autodiff op semantics, gradients against finite differences, and tape
behaviour."""
import numpy as np
import pytest

from biscc import autodiff as ad
from biscc.autodiff import AutodiffError, Tape, Tensor2

from gradcheck import check_grads


class TestTensorBasics:
    def test_scalar_and_vector_promotion(self):
        assert Tensor2(3.0).shape == (1, 1)
        assert Tensor2([1.0, 2.0, 3.0]).shape == (1, 3)

    def test_rank3_rejected(self):
        with pytest.raises(AutodiffError):
            Tensor2(np.zeros((2, 2, 2)))

    def test_non_finite_rejected(self):
        with pytest.raises(AutodiffError):
            Tensor2([1.0, np.inf])
        with pytest.raises(AutodiffError):
            Tensor2([[np.nan]])

    def test_op_boundary_surfaces_non_finite(self):
        x = Tensor2([[0.0]])
        with pytest.raises(AutodiffError):
            ad.log(x)

    def test_item_non_scalar(self):
        with pytest.raises(AutodiffError):
            Tensor2([[1.0, 2.0]]).item()


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = Tensor2(np.arange(6.0).reshape(2, 3), requires_grad=True)
        with Tape() as tape:
            loss = ad.total(x)
            tape.backward(loss)
        assert np.array_equal(x.grad, np.ones((2, 3)))

    def test_quadratic_gradient(self):
        x = Tensor2([1.0, 2.0, 3.0], requires_grad=True)
        with Tape() as tape:
            loss = ad.total(ad.mul(x, x))
            tape.backward(loss)
        assert np.allclose(x.grad, [[2.0, 4.0, 6.0]])

    def test_repeated_backward_is_error(self):
        x = Tensor2([1.0], requires_grad=True)
        with Tape() as tape:
            loss = ad.total(x)
            tape.backward(loss)
            with pytest.raises(AutodiffError):
                tape.backward(loss)

    def test_reset_rearms_tape(self):
        x = Tensor2([1.0, 2.0], requires_grad=True)
        tape = Tape()
        with tape:
            loss = ad.total(ad.mul(x, x))
            tape.backward(loss)
        first = x.grad.copy()
        tape.reset()
        x.zero_grad()
        with tape:
            loss = ad.total(ad.mul(x, x))
            tape.backward(loss)
        assert np.array_equal(first, x.grad)

    def test_non_scalar_root_rejected(self):
        x = Tensor2([[1.0, 2.0]], requires_grad=True)
        with Tape() as tape:
            y = ad.mul(x, x)
            with pytest.raises(AutodiffError):
                tape.backward(y)

    def test_detached_root_rejected(self):
        x = Tensor2([[1.0]], requires_grad=True)
        with Tape() as tape:
            with pytest.raises(AutodiffError):
                tape.backward(x)

    def test_constant_graph_not_recorded(self):
        x = Tensor2([[1.0, 2.0]])
        with Tape() as tape:
            y = ad.total(ad.mul(x, x))
            assert y._tape is None
        assert not tape._nodes

    def test_nested_tape_rejected(self):
        with Tape():
            with pytest.raises(AutodiffError):
                with Tape():
                    pass

    def test_gradient_bit_determinism(self):
        def run():
            rng = np.random.default_rng(11)
            x = Tensor2(rng.standard_normal((5, 4)), requires_grad=True)
            w = Tensor2(rng.standard_normal((4, 3)), requires_grad=True)
            with Tape() as tape:
                loss = ad.mean(ad.sigmoid(ad.matmul(x, w)))
                tape.backward(loss)
            return x.grad.copy(), w.grad.copy()

        gx1, gw1 = run()
        gx2, gw2 = run()
        assert gx1.tobytes() == gx2.tobytes()
        assert gw1.tobytes() == gw2.tobytes()


class TestSoftmaxRows:
    def test_uniform(self):
        out = ad.softmax_rows(Tensor2([[0.0, 0.0, 0.0]]))
        assert np.allclose(out.data, 1.0 / 3.0)

    def test_shift_invariance(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((4, 5))
        shifted = x + rng.standard_normal((4, 1))
        a = ad.softmax_rows(Tensor2(x)).data
        b = ad.softmax_rows(Tensor2(shifted)).data
        assert np.allclose(a, b, atol=1e-12)

    def test_closed_form(self):
        out = ad.softmax_rows(Tensor2([[1.0, 2.0]])).data[0]
        assert abs(out[0] - 0.26894) < 1e-5
        assert abs(out[1] - 0.73106) < 1e-5

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(1)
        out = ad.softmax_rows(Tensor2(rng.standard_normal((50, 7)) * 10)).data
        assert np.abs(out.sum(axis=1) - 1.0).max() < 1e-9


class TestConv1d:
    def test_identity_kernel(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((6, 3))
        w = np.eye(3)
        b = np.zeros((1, 3))
        out = ad.conv1d_temporal(Tensor2(x), Tensor2(w), Tensor2(b))
        assert np.allclose(out.data, x)

    def test_hand_convolution(self):
        x = Tensor2([[1.0], [2.0], [3.0]])
        w = Tensor2([[1.0], [1.0], [1.0]])
        b = Tensor2([[0.0]])
        out = ad.conv1d_temporal(x, w, b)
        assert np.allclose(out.data, [[3.0], [6.0], [5.0]])

    def test_even_kernel_rejected(self):
        x = Tensor2(np.zeros((4, 2)))
        w = Tensor2(np.zeros((4, 2)))
        with pytest.raises(AutodiffError):
            ad.conv1d_temporal(x, w, Tensor2(np.zeros((1, 2))))

    def test_blocked_equals_per_block(self):
        rng = np.random.default_rng(3)
        xs = [rng.standard_normal((5, 3)) for _ in range(4)]
        w = rng.standard_normal((9, 2))
        b = rng.standard_normal((1, 2))
        merged = ad.conv1d_temporal(Tensor2(np.concatenate(xs)), Tensor2(w),
                                    Tensor2(b), block_len=5).data
        singles = np.concatenate([
            ad.conv1d_temporal(Tensor2(x), Tensor2(w), Tensor2(b)).data
            for x in xs])
        assert np.allclose(merged, singles, atol=1e-14)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((6, 3))
        w = rng.standard_normal((9, 2))
        b = rng.standard_normal((1, 2))
        check_grads(lambda t: ad.total(ad.conv1d_temporal(t[0], t[1], t[2])),
                    [x, w, b])


class TestTopkMeanTime:
    def test_full_mean(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((6, 4))
        out = ad.topk_mean_time(Tensor2(x), k=6)
        assert np.allclose(out.data, x.mean(axis=0, keepdims=True))

    def test_sorted_oracle(self):
        col = np.arange(1.0, 9.0).reshape(8, 1)
        out = ad.topk_mean_time(Tensor2(col), k=2)
        assert np.allclose(out.data, [[7.5]])

    def test_k_one_is_column_max(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((9, 3))
        out = ad.topk_mean_time(Tensor2(x), k=1)
        assert np.allclose(out.data, x.max(axis=0, keepdims=True))

    def test_tie_routes_to_lowest_index(self):
        x = Tensor2(np.array([[5.0], [5.0], [1.0]]), requires_grad=True)
        with Tape() as tape:
            out = ad.topk_mean_time(x, k=1)
            assert out.data[0, 0] == 5.0
            tape.backward(ad.total(out))
        assert np.array_equal(x.grad, [[1.0], [0.0], [0.0]])

    def test_k_out_of_range(self):
        with pytest.raises(AutodiffError):
            ad.topk_mean_time(Tensor2(np.zeros((3, 2))), k=4)

    def test_blocked_equals_per_block(self):
        rng = np.random.default_rng(7)
        xs = [rng.standard_normal((6, 3)) for _ in range(3)]
        merged = ad.topk_mean_time(Tensor2(np.concatenate(xs)), k=2,
                                   block_len=6).data
        singles = np.concatenate([
            ad.topk_mean_time(Tensor2(x), k=2).data for x in xs])
        assert np.allclose(merged, singles, atol=1e-14)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((7, 3))
        check_grads(lambda t: ad.total(ad.topk_mean_time(t[0], k=3)), [x])


class TestKlRows:
    @staticmethod
    def _rows(mat):
        return Tensor2(np.asarray(mat, dtype=np.float64))

    def test_identical_is_exactly_zero(self):
        rng = np.random.default_rng(9)
        p = np.abs(rng.standard_normal((5, 4))) + 0.1
        p /= p.sum(axis=1, keepdims=True)
        out = ad.kl_rows(self._rows(p), self._rows(p))
        assert out.item() == 0.0

    def test_closed_form_log2(self):
        p = self._rows([[1.0, 0.0], [1.0, 0.0]])
        q = self._rows([[0.5, 0.5], [0.5, 0.5]])
        assert abs(ad.kl_rows(p, q).item() - np.log(2.0)) < 1e-6

    def test_asymmetry(self):
        p = self._rows([[0.9, 0.1]])
        q = self._rows([[0.5, 0.5]])
        assert abs(ad.kl_rows(p, q).item() - ad.kl_rows(q, p).item()) > 1e-3

    def test_non_negative_random(self):
        rng = np.random.default_rng(10)
        for _ in range(20):
            p = np.abs(rng.standard_normal((4, 5))) + 1e-3
            p /= p.sum(axis=1, keepdims=True)
            q = np.abs(rng.standard_normal((4, 5))) + 1e-3
            q /= q.sum(axis=1, keepdims=True)
            assert ad.kl_rows(self._rows(p), self._rows(q)).item() >= -1e-9

    def test_unnormalized_rejected(self):
        with pytest.raises(AutodiffError):
            ad.kl_rows(self._rows([[0.5, 0.6]]), self._rows([[0.5, 0.5]]))

    def test_target_gets_no_gradient(self):
        p = Tensor2(np.array([[0.3, 0.7]]), requires_grad=True)
        q = Tensor2(np.array([[0.6, 0.4]]), requires_grad=True)
        with Tape() as tape:
            loss = ad.kl_rows(p, q)
            tape.backward(loss)
        assert p.grad is None
        assert q.grad is not None

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(12)
        logits_p = rng.standard_normal((4, 3))
        logits_q = rng.standard_normal((4, 3))
        p_fixed = ad.softmax_rows(Tensor2(logits_p)).data

        def build(t):
            return ad.kl_rows(Tensor2(p_fixed), ad.softmax_rows(t[0]))

        check_grads(build, [logits_q])


class TestSelfAttention:
    def test_zero_weights_is_identity(self):
        rng = np.random.default_rng(13)
        x = rng.standard_normal((6, 4))
        z = np.zeros((4, 4))
        out = ad.self_attention_residual(Tensor2(x), Tensor2(z), Tensor2(z),
                                         Tensor2(z))
        assert np.allclose(out.data, x)

    def test_blocked_equals_per_block(self):
        rng = np.random.default_rng(14)
        xs = [rng.standard_normal((5, 4)) for _ in range(3)]
        wq, wk, wv = (rng.standard_normal((4, 4)) for _ in range(3))
        merged = ad.self_attention_residual(
            Tensor2(np.concatenate(xs)), Tensor2(wq), Tensor2(wk), Tensor2(wv),
            block_len=5).data
        singles = np.concatenate([
            ad.self_attention_residual(Tensor2(x), Tensor2(wq), Tensor2(wk),
                                       Tensor2(wv)).data for x in xs])
        assert np.allclose(merged, singles, atol=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(15)
        x = rng.standard_normal((5, 3))
        ws = [rng.standard_normal((3, 3)) * 0.5 for _ in range(3)]

        def build(t):
            return ad.mean(ad.self_attention_residual(t[0], t[1], t[2], t[3]))

        check_grads(build, [x] + ws, rel_tol=2e-4)


class TestElementwiseGradients:
    """Finite-difference checks for the remaining differentiable ops on
    random small shapes."""

    @pytest.mark.parametrize("seed", range(5))
    def test_arithmetic_chain(self, seed):
        rng = np.random.default_rng(100 + seed)
        a = rng.standard_normal((4, 3))
        b = rng.standard_normal((4, 3)) + 3.0

        def build(t):
            x = ad.add(t[0], t[1])
            x = ad.mul(x, t[1])
            x = ad.div(x, ad.add_const(ad.mul(t[1], t[1]), 1.0))
            return ad.mean(x)

        check_grads(build, [a, b])

    @pytest.mark.parametrize("seed", range(3))
    def test_nonlinearities(self, seed):
        rng = np.random.default_rng(200 + seed)
        # keep |x| >= 0.2 so relu/abs kinks stay far from the FD probe
        x = rng.standard_normal((5, 4))
        x = np.sign(x) * (np.abs(x) + 0.2)

        def build(t):
            y = ad.add(ad.relu(t[0]), ad.sigmoid(t[0]))
            y = ad.add(y, ad.exp(ad.scale(t[0], 0.3)))
            y = ad.add(y, ad.absolute(t[0]))
            y = ad.add(y, ad.sqrt(ad.add_const(ad.mul(t[0], t[0]), 1.0)))
            return ad.mean(y)

        check_grads(build, [x])

    def test_matmul_transpose_slice(self):
        rng = np.random.default_rng(300)
        a = rng.standard_normal((4, 3))
        b = rng.standard_normal((3, 5))

        def build(t):
            y = ad.matmul(t[0], t[1])
            y = ad.slice_col(ad.transpose(y), 2)
            return ad.total(ad.mul(y, y))

        check_grads(build, [a, b])

    def test_broadcast_column_and_row(self):
        rng = np.random.default_rng(301)
        x = rng.standard_normal((5, 4))
        col = rng.standard_normal((5, 1))
        row = rng.standard_normal((1, 4))

        def build(t):
            return ad.mean(ad.add(ad.mul(t[0], t[1]), t[2]))

        check_grads(build, [x, col, row])

    def test_sum_rows_and_gather(self):
        rng = np.random.default_rng(302)
        x = rng.standard_normal((6, 4))

        def build(t):
            g = ad.gather_rows(t[0], [0, 2, 2, 5])
            return ad.total(ad.mul(ad.sum_rows(g), ad.sum_rows(g)))

        check_grads(build, [x])

    def test_gather_block_columns(self):
        rng = np.random.default_rng(303)
        s = rng.standard_normal((8, 3))

        def build(t):
            cols = ad.gather_block_columns(t[0], [0, 1, 1], [2, 0, 1], 4)
            return ad.mean(ad.mul(cols, cols))

        check_grads(build, [s])

    def test_rows_matmul_blocks(self):
        rng = np.random.default_rng(304)
        w = rng.standard_normal((3, 4))
        x = rng.standard_normal((8, 5))
        x_const = Tensor2(x)

        def build(t):
            out = ad.rows_matmul_blocks(t[0], x_const, [0, 1, 0], 4)
            return ad.mean(ad.mul(out, out))

        check_grads(build, [w])

    def test_rows_matmul_blocks_rejects_grad_features(self):
        x = Tensor2(np.zeros((4, 2)), requires_grad=True)
        w = Tensor2(np.zeros((1, 2)))
        with pytest.raises(AutodiffError):
            ad.rows_matmul_blocks(w, x, [0], 2)

    def test_incompatible_broadcast_rejected(self):
        with pytest.raises(AutodiffError):
            ad.add(Tensor2(np.zeros((2, 3))), Tensor2(np.zeros((3, 2))))

    def test_bad_block_split_rejected(self):
        with pytest.raises(AutodiffError):
            ad.topk_mean_time(Tensor2(np.zeros((7, 2))), k=1, block_len=3)
