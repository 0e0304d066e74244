import numpy as np
import numpy.testing as npt
import pytest

import glassdepth.tensor as T
from glassdepth.errors import ContractError, ShapeError
from glassdepth.gradcheck import gradcheck
from glassdepth.tensor import Tape, Tensor


def conv2d_loop(x, kernel, stride, padding):
    """Direct-summation convolution oracle (cross-correlation, no flip)."""
    c_out, c_in, k, _ = kernel.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    h_out = (x.shape[1] + 2 * padding - k) // stride + 1
    w_out = (x.shape[2] + 2 * padding - k) // stride + 1
    out = np.zeros((c_out, h_out, w_out), dtype=np.float64)
    for co in range(c_out):
        for i in range(h_out):
            for j in range(w_out):
                acc = 0.0
                for ci in range(c_in):
                    for a in range(k):
                        for b in range(k):
                            acc += xp[ci, i * stride + a, j * stride + b] * kernel[co, ci, a, b]
                out[co, i, j] = acc
    return out


def bilinear2x_loop(x):
    """Per-pixel bilinear oracle, align-corners-false, border replicated."""
    h, w = x.shape[-2], x.shape[-1]
    out = np.zeros(x.shape[:-2] + (2 * h, 2 * w), dtype=np.float64)
    for i in range(2 * h):
        for j in range(2 * w):
            sy, sx = i / 2.0 - 0.25, j / 2.0 - 0.25
            y0, x0 = int(np.floor(sy)), int(np.floor(sx))
            fy, fx = sy - y0, sx - x0
            y0c, y1c = np.clip(y0, 0, h - 1), np.clip(y0 + 1, 0, h - 1)
            x0c, x1c = np.clip(x0, 0, w - 1), np.clip(x0 + 1, 0, w - 1)
            out[..., i, j] = ((1 - fy) * (1 - fx) * x[..., y0c, x0c]
                              + (1 - fy) * fx * x[..., y0c, x1c]
                              + fy * (1 - fx) * x[..., y1c, x0c]
                              + fy * fx * x[..., y1c, x1c])
    return out


class TestMatmul:
    def test_identity(self):
        b = np.array([[3.0, 4.0], [5.0, 6.0]])
        out = T.matmul(Tensor(np.eye(2)), Tensor(b))
        npt.assert_allclose(out.numpy(), b)

    def test_direct_formula(self):
        # [[1,2]] @ [[3],[4]] = [[1*3 + 2*4]] = [[11]]
        out = T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        npt.assert_allclose(out.numpy(), [[11.0]])

    def test_zero_case(self):
        out = T.matmul(Tensor(np.zeros((2, 2))), Tensor(np.full((2, 2), 7.0)))
        npt.assert_array_equal(out.numpy(), np.zeros((2, 2)))

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 4\)"):
            T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))))

    def test_batched_matches_loop(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((4, 3, 5))
        b = rng.standard_normal((4, 5, 2))
        out = T.matmul(Tensor(a, dtype=np.float64), Tensor(b, dtype=np.float64)).numpy()
        for i in range(4):
            npt.assert_allclose(out[i], a[i] @ b[i], rtol=1e-12)

    def test_grad(self):
        rng = np.random.default_rng(1)
        res = gradcheck(T.matmul, [rng.standard_normal((3, 4)), rng.standard_normal((4, 2))])
        assert res.ok, res

    def test_grad_broadcast_weight(self):
        rng = np.random.default_rng(2)
        res = gradcheck(T.matmul, [rng.standard_normal((3, 5, 4)), rng.standard_normal((4, 4))])
        assert res.ok, res


class TestConv2d:
    def test_one_by_one_identity(self):
        x = np.random.default_rng(0).standard_normal((1, 4, 5))
        out = T.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))), stride=1, padding=0)
        npt.assert_allclose(out.numpy(), x.astype(np.float32), rtol=1e-6)

    def test_all_ones_3x3(self):
        x = np.ones((1, 3, 3))
        k = np.ones((1, 1, 3, 3))
        out = T.conv2d(Tensor(x), Tensor(k), stride=1, padding=1).numpy()[0]
        npt.assert_allclose(out, conv2d_loop(x, k, 1, 1)[0])
        assert out[1, 1] == 9.0
        assert out[0, 0] == 4.0

    def test_zero_kernel(self):
        x = np.random.default_rng(1).standard_normal((2, 4, 4))
        out = T.conv2d(Tensor(x), Tensor(np.zeros((3, 2, 2, 2))), stride=2, padding=0)
        npt.assert_array_equal(out.numpy(), np.zeros((3, 2, 2)))

    def test_non_integral_extent_rejected(self):
        with pytest.raises(ShapeError, match="stride"):
            T.conv2d(Tensor(np.zeros((1, 5, 5))), Tensor(np.zeros((1, 1, 2, 2))),
                     stride=2, padding=0)

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            T.conv2d(Tensor(np.zeros((3, 4, 4))), Tensor(np.zeros((2, 2, 2, 2))))

    @pytest.mark.parametrize("stride,padding,k", [(1, 0, 3), (1, 1, 3), (2, 0, 2), (2, 1, 3)])
    def test_matches_loop_oracle(self, stride, padding, k):
        rng = np.random.default_rng(stride * 10 + padding)
        x = rng.standard_normal((2, 7, 9)) if (stride, padding) == (2, 1) \
            else rng.standard_normal((2, 6, 8))
        kern = rng.standard_normal((3, 2, k, k))
        out = T.conv2d(Tensor(x, dtype=np.float64), Tensor(kern, dtype=np.float64),
                       stride=stride, padding=padding)
        npt.assert_allclose(out.numpy(), conv2d_loop(x, kern, stride, padding), rtol=1e-10)

    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 0), (2, 1)])
    def test_grad(self, stride, padding):
        rng = np.random.default_rng(7)
        res = gradcheck(
            lambda x, k: T.conv2d(x, k, stride=stride, padding=padding),
            [rng.standard_normal((2, 5, 5)), rng.standard_normal((3, 2, 3, 3))])
        assert res.ok, res

    def test_grad_batched(self):
        rng = np.random.default_rng(8)
        res = gradcheck(
            lambda x, k: T.conv2d(x, k, stride=1, padding=1),
            [rng.standard_normal((2, 2, 4, 4)), rng.standard_normal((2, 2, 3, 3))])
        assert res.ok, res


class TestLayerNorm:
    def test_constant_rows_go_to_zero(self):
        x = np.full((4, 3), 2.5)
        out = T.layer_norm(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)), eps=1e-5)
        npt.assert_allclose(out.numpy(), np.zeros((4, 3)), atol=1e-6)

    def test_direct_formula(self):
        # mean 2, population var 2/3: (1-2)/sqrt(2/3) = -1.224744871391589
        out = T.layer_norm(Tensor([[1.0, 2.0, 3.0]]), Tensor(np.ones(3)),
                           Tensor(np.zeros(3)), eps=1e-12)
        npt.assert_allclose(out.numpy()[0], [-1.22474487, 0.0, 1.22474487], atol=1e-5)

    def test_gamma_zero_forces_beta(self):
        x = np.random.default_rng(0).standard_normal((2, 4))
        out = T.layer_norm(Tensor(x), Tensor(np.zeros(4)), Tensor(np.full(4, 5.0)), eps=1e-5)
        npt.assert_allclose(out.numpy(), np.full((2, 4), 5.0), atol=1e-6)

    def test_moments_property(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((5, 7, 16)) * 3.0 + 1.0
        out = T.layer_norm(Tensor(x), Tensor(np.ones(16)), Tensor(np.zeros(16)),
                           eps=1e-12).numpy()
        assert np.abs(out.mean(axis=-1)).max() < 1e-5
        npt.assert_allclose(out.var(axis=-1), np.ones((5, 7)), atol=1e-3)

    def test_grad(self):
        rng = np.random.default_rng(4)
        res = gradcheck(
            lambda x, g, b: T.layer_norm(x, g, b, eps=1e-5),
            [rng.standard_normal((3, 6)), rng.standard_normal(6), rng.standard_normal(6)])
        assert res.ok, res

    def test_bad_eps(self):
        with pytest.raises(ValueError):
            T.layer_norm(Tensor(np.zeros((2, 2))), Tensor(np.ones(2)),
                         Tensor(np.zeros(2)), eps=0.0)


class TestSoftmax:
    def test_uniform(self):
        out = T.softmax(Tensor([0.0, 0.0, 0.0]))
        npt.assert_allclose(out.numpy(), np.full(3, 1 / 3), rtol=1e-6)

    def test_direct_exp_sum(self):
        out = T.softmax(Tensor([np.log(2.0), 0.0]))
        npt.assert_allclose(out.numpy(), [2 / 3, 1 / 3], rtol=1e-6)

    def test_no_overflow(self):
        out = T.softmax(Tensor([1000.0, 0.0])).numpy()
        assert np.all(np.isfinite(out))
        npt.assert_allclose(out, [1.0, 0.0], atol=1e-6)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((4, 6, 9)) * 5
        out = T.softmax(Tensor(x)).numpy()
        assert out.min() >= 0
        npt.assert_allclose(out.sum(axis=-1), np.ones((4, 6)), atol=1e-6)

    def test_grad(self):
        rng = np.random.default_rng(6)
        res = gradcheck(T.softmax, [rng.standard_normal((3, 5))])
        assert res.ok, res


class TestGlobalAvgPool:
    def test_constant(self):
        out = T.global_avg_pool(Tensor(np.full((3, 4, 5), 2.25)))
        npt.assert_allclose(out.numpy(), np.full(3, 2.25), rtol=1e-6)

    def test_direct_mean(self):
        out = T.global_avg_pool(Tensor([[[1.0, 2.0], [3.0, 4.0]]]))
        npt.assert_allclose(out.numpy(), [2.5])

    def test_zeros(self):
        out = T.global_avg_pool(Tensor(np.zeros((2, 3, 3))))
        npt.assert_array_equal(out.numpy(), np.zeros(2))

    def test_grad(self):
        res = gradcheck(T.global_avg_pool,
                        [np.random.default_rng(9).standard_normal((2, 3, 4))])
        assert res.ok, res


class TestUpsample2x:
    def test_constant_both_modes(self):
        x = np.full((2, 3, 4), 1.5)
        for mode in ("nearest", "bilinear"):
            out = T.upsample2x(Tensor(x), mode=mode).numpy()
            assert out.shape == (2, 6, 8)
            npt.assert_allclose(out, np.full((2, 6, 8), 1.5), rtol=1e-6)

    def test_nearest_blocks(self):
        out = T.upsample2x(Tensor([[[1.0, 2.0], [3.0, 4.0]]]), mode="nearest").numpy()[0]
        expected = np.array([[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]],
                            dtype=np.float32)
        npt.assert_array_equal(out, expected)

    def test_nearest_downsample_roundtrip(self):
        rng = np.random.default_rng(10)
        for _ in range(5):
            x = rng.standard_normal((2, 4, 4)).astype(np.float32)
            up = T.upsample2x(Tensor(x), mode="nearest").numpy()
            npt.assert_array_equal(up[:, ::2, ::2], x)

    def test_bilinear_matches_loop_oracle(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((2, 3, 5))
        out = T.upsample2x(Tensor(x, dtype=np.float64), mode="bilinear").numpy()
        npt.assert_allclose(out, bilinear2x_loop(x), rtol=1e-12)

    @pytest.mark.parametrize("mode", ["nearest", "bilinear"])
    def test_grad(self, mode):
        rng = np.random.default_rng(12)
        res = gradcheck(lambda x: T.upsample2x(x, mode=mode),
                        [rng.standard_normal((2, 3, 4))])
        assert res.ok, res


class TestBackward:
    def test_sum_gives_ones(self):
        x = Tensor(np.random.default_rng(0).standard_normal((3, 4)), requires_grad=True)
        with Tape() as tape:
            loss = T.tsum(x)
        tape.backward(loss)
        npt.assert_array_equal(x.grad, np.ones((3, 4), dtype=np.float32))

    def test_analytic_derivative(self):
        # d/dx sum(x*x) = 2x
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        with Tape() as tape:
            loss = T.tsum(T.mul(x, x))
        tape.backward(loss)
        npt.assert_allclose(x.grad, [2.0, 4.0, 6.0], rtol=1e-6)

    def test_unused_leaf_gets_zeros(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        y = Tensor([3.0, 4.0], requires_grad=True)
        with Tape() as tape:
            _side = T.mul(y, y)  # y participates but never reaches the loss
            loss = T.tsum(x)
        tape.backward(loss)
        npt.assert_array_equal(y.grad, np.zeros(2, dtype=np.float32))

    def test_backward_twice_rejected(self):
        x = Tensor([1.0], requires_grad=True)
        with Tape() as tape:
            loss = T.tsum(x)
        tape.backward(loss)
        with pytest.raises(ContractError):
            tape.backward(loss)

    def test_non_scalar_loss_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            y = T.mul(x, x)
        with pytest.raises(ContractError):
            tape.backward(y)

    def test_gradients_accumulate_across_uses(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            loss = T.tsum(T.add(x, x))
        tape.backward(loss)
        npt.assert_array_equal(x.grad, np.full(2, 2.0, dtype=np.float32))

    def test_grad_accumulates_across_tapes(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        for _ in range(2):
            with Tape() as tape:
                loss = T.tsum(x)
            tape.backward(loss)
        npt.assert_array_equal(x.grad, np.full(2, 2.0, dtype=np.float32))

    def test_nested_tapes_rejected(self):
        with Tape():
            with pytest.raises(ContractError):
                with Tape():
                    pass


class TestElementwiseGrads:
    @pytest.mark.parametrize("name,fn,n_inputs", [
        ("add", T.add, 2),
        ("sub", T.sub, 2),
        ("mul", T.mul, 2),
        ("relu", T.relu, 1),
        ("gelu", T.gelu, 1),
        ("sigmoid", T.sigmoid, 1),
    ])
    def test_grad(self, name, fn, n_inputs):
        rng = np.random.default_rng(hash(name) % 2**32)
        inputs = [rng.standard_normal((3, 4)) + (0.1 if name == "relu" else 0.0)
                  for _ in range(n_inputs)]
        res = gradcheck(fn, inputs)
        assert res.ok, f"{name}: {res}"

    def test_div_grad(self):
        rng = np.random.default_rng(13)
        res = gradcheck(T.div, [rng.standard_normal((3, 4)),
                                rng.uniform(0.5, 2.0, (3, 4))])
        assert res.ok, res

    def test_sqrt_grad(self):
        res = gradcheck(T.sqrt, [np.random.default_rng(14).uniform(0.5, 4.0, (3, 4))])
        assert res.ok, res

    def test_broadcast_add_grad(self):
        rng = np.random.default_rng(15)
        res = gradcheck(T.add, [rng.standard_normal((2, 3, 4)), rng.standard_normal(4)])
        assert res.ok, res

    def test_shape_ops_grads(self):
        rng = np.random.default_rng(16)
        res = gradcheck(lambda x: T.reshape(x, (6, 2)), [rng.standard_normal((3, 4))])
        assert res.ok, res
        res = gradcheck(lambda x: T.transpose(x, (1, 0, 2)),
                        [rng.standard_normal((2, 3, 4))])
        assert res.ok, res
        res = gradcheck(lambda a, b: T.concat([a, b], axis=1),
                        [rng.standard_normal((2, 3)), rng.standard_normal((2, 2))])
        assert res.ok, res
        res = gradcheck(lambda x: x[1:, :2], [rng.standard_normal((3, 4))])
        assert res.ok, res
        res = gradcheck(lambda x: T.roll(x, (1, -2), (0, 1)),
                        [rng.standard_normal((3, 4))])
        assert res.ok, res
        res = gradcheck(lambda x: T.tmean(x, axis=1, keepdims=True),
                        [rng.standard_normal((3, 4))])
        assert res.ok, res


class TestInvariants:
    def test_forward_ops_stay_finite(self):
        rng = np.random.default_rng(17)
        x = Tensor(rng.standard_normal((2, 4, 6)).astype(np.float32) * 10)
        g = Tensor(np.ones(6, dtype=np.float32))
        b = Tensor(np.zeros(6, dtype=np.float32))
        results = [
            T.relu(x), T.gelu(x), T.sigmoid(x), T.softmax(x),
            T.layer_norm(x, g, b, eps=1e-5), T.global_avg_pool(x),
            T.upsample2x(x, "nearest"), T.upsample2x(x, "bilinear"),
            T.tsum(x), T.tmean(x), T.mul(x, x), T.add(x, x),
        ]
        for r in results:
            assert np.all(np.isfinite(r.numpy()))

    def test_float32_default(self):
        t = Tensor([1.0, 2.0])
        assert t.dtype == np.float32
        assert T.add(t, t).dtype == np.float32

    def test_float64_opt_in_propagates(self):
        t = Tensor(np.zeros(3), dtype=np.float64)
        assert t.dtype == np.float64
        assert T.relu(t).dtype == np.float64

    def test_mixed_dtype_rejected(self):
        with pytest.raises(TypeError):
            T.add(Tensor(np.zeros(2)), Tensor(np.zeros(2), dtype=np.float64))

    def test_row_major_contiguous(self):
        t = Tensor(np.asfortranarray(np.zeros((3, 4))))
        assert t.data.flags["C_CONTIGUOUS"]

    def test_grad_shape_matches(self):
        x = Tensor(np.zeros((2, 3)), requires_grad=True)
        with Tape() as tape:
            loss = T.tsum(T.mul(x, x))
        tape.backward(loss)
        assert x.grad.shape == x.shape
