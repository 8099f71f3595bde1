"""Backward-pass contracts and per-op finite-difference gradient checks."""

import numpy as np
import pytest

from bsmamba import tensor as T
from bsmamba.errors import ContractError
from bsmamba.gradcheck import check_gradient
from bsmamba.tensor import Tensor


class TestBackwardContract:
    def test_sum_grad_ones(self, rng):
        x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        x.sum().backward()
        assert np.array_equal(x.grad, np.ones((3, 4)))

    def test_quadratic_grad(self, rng):
        x = Tensor(rng.standard_normal((5,)), requires_grad=True)
        (x * x).sum().backward()
        assert np.allclose(x.grad, 2 * x.data, atol=1e-15)

    def test_non_scalar_backward_raises(self, rng):
        x = Tensor(rng.standard_normal((3,)), requires_grad=True)
        with pytest.raises(ContractError):
            (x * x).backward()

    def test_grad_accumulates_across_backwards(self, rng):
        x = Tensor(rng.standard_normal((3,)), requires_grad=True)
        x.sum().backward()
        x.sum().backward()
        assert np.allclose(x.grad, 2 * np.ones(3))

    def test_reused_operand_accumulates(self, rng):
        x = Tensor(np.array([2.0]), requires_grad=True)
        (x * x).sum().backward()
        assert x.grad[0] == pytest.approx(4.0)


def _weighted(out, w):
    return (out * Tensor(w, dtype=out.data.dtype.type)).sum()


class TestPerOpGradients:
    """Every differentiable op vs central differences at 10 random points."""

    def test_nonlinear_ops(self, rng):
        names = {
            "silu": T.silu, "sigmoid": T.sigmoid, "softplus": T.softplus,
            "exp": T.exp, "gelu": T.gelu,
        }
        for name, fn in names.items():
            x = Tensor(rng.uniform(-2, 2, 10), requires_grad=True)
            w = rng.standard_normal(10)
            worst = check_gradient(lambda: _weighted(fn(x), w), [x], rtol=1e-6, atol=1e-10)
            assert worst < 1e-6, name

    def test_log_grad(self, rng):
        x = Tensor(rng.uniform(0.1, 3.0, 10), requires_grad=True)
        w = rng.standard_normal(10)
        check_gradient(lambda: _weighted(T.log(x), w), [x], rtol=1e-6, atol=1e-10)

    def test_arithmetic_grads(self, rng):
        a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        b = Tensor(rng.uniform(0.5, 2.0, (4,)), requires_grad=True)
        w = rng.standard_normal((3, 4))
        for fn in (lambda: _weighted(a * b, w), lambda: _weighted(a + b, w),
                   lambda: _weighted(a - b, w), lambda: _weighted(a / b, w)):
            check_gradient(fn, [a, b], rtol=1e-6, atol=1e-10)

    def test_pow_grad(self, rng):
        x = Tensor(rng.uniform(0.5, 2.0, 8), requires_grad=True)
        w = rng.standard_normal(8)
        for p in (0.5, 2.0, 3.0, -1.0, 1.7):
            check_gradient(lambda: _weighted(x ** p, w), [x], rtol=1e-6, atol=1e-10)

    def test_matmul_grad(self, rng):
        a = Tensor(rng.standard_normal((2, 3, 4)), requires_grad=True)
        b = Tensor(rng.standard_normal((4, 5)), requires_grad=True)
        w = rng.standard_normal((2, 3, 5))
        check_gradient(lambda: _weighted(a @ b, w), [a, b], rtol=1e-6, atol=1e-9)

    def test_conv2d_grad(self, rng):
        x = Tensor(rng.standard_normal((1, 2, 6, 6)), requires_grad=True)
        k = Tensor(rng.standard_normal((3, 2, 3, 3)), requires_grad=True)
        w = rng.standard_normal((1, 3, 3, 3))
        check_gradient(lambda: _weighted(T.conv2d(x, k, stride=2, padding=1), w),
                       [x, k], rtol=1e-6, atol=1e-9)

    def test_layer_norm_grad(self, rng):
        x = Tensor(rng.standard_normal((4, 6)), requires_grad=True)
        g = Tensor(rng.uniform(0.5, 1.5, 6), requires_grad=True)
        b = Tensor(rng.standard_normal(6), requires_grad=True)
        w = rng.standard_normal((4, 6))
        worst = check_gradient(lambda: _weighted(T.layer_norm(x, g, b), w),
                               [x, g, b], rtol=1e-5, atol=1e-9)
        assert worst < 1e-5

    def test_gather_grad_is_scatter(self, rng):
        x = Tensor(rng.standard_normal((2, 6, 3)), requires_grad=True)
        p = rng.permutation(6)
        w = rng.standard_normal((2, 6, 3))
        check_gradient(lambda: _weighted(T.gather_tokens(x, p), w), [x],
                       rtol=1e-6, atol=1e-10)
        # gradient of gather is the scatter of the upstream gradient
        x.zero_grad()
        _weighted(T.gather_tokens(x, p), w).backward()
        assert np.array_equal(x.grad, w[:, T.invert_permutation(p), :])

    def test_reduction_grads(self, rng):
        x = Tensor(rng.standard_normal((3, 5)), requires_grad=True)
        check_gradient(lambda: T.reduce_mean(x * x), [x], rtol=1e-6, atol=1e-10)
        w = Tensor(rng.standard_normal(3))
        check_gradient(lambda: (T.reduce_max(x, axis=1) * w).sum(),
                       [x], rtol=1e-6, atol=1e-10)

    def test_clamp_grad_interior(self, rng):
        x = Tensor(rng.uniform(0.2, 0.8, 10), requires_grad=True)
        w = rng.standard_normal(10)
        check_gradient(lambda: _weighted(T.clamp(x, 0.0, 1.0), w), [x],
                       rtol=1e-6, atol=1e-10)

    def test_index_select_and_concat_grads(self, rng):
        x = Tensor(rng.standard_normal((4, 5)), requires_grad=True)
        w = rng.standard_normal((6, 5))
        idx = np.array([3, 0, 0, 2, 1, 3])
        check_gradient(lambda: _weighted(T.index_select(x, 0, idx), w), [x],
                       rtol=1e-6, atol=1e-10)
        a = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
        b = Tensor(rng.standard_normal((2, 2)), requires_grad=True)
        wc = rng.standard_normal((2, 5))
        check_gradient(lambda: _weighted(T.concat([a, b], axis=1), wc), [a, b],
                       rtol=1e-6, atol=1e-10)

    def test_upsample_grad(self, rng):
        x = Tensor(rng.standard_normal((1, 2, 3, 3)), requires_grad=True)
        w = rng.standard_normal((1, 2, 6, 6))
        check_gradient(lambda: _weighted(T.upsample2x(x), w), [x], rtol=1e-6, atol=1e-10)

    def test_fft_grads(self, rng):
        x = Tensor(rng.standard_normal((4, 4)), requires_grad=True)
        f = T.fft2_real(x)
        wr = rng.standard_normal(f.re.shape)
        wi = rng.standard_normal(f.im.shape)

        def loss():
            p = T.fft2_real(x)
            return _weighted(p.re, wr) + _weighted(p.im, wi)

        check_gradient(loss, [x], rtol=1e-6, atol=1e-10)

        re = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
        im = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
        wo = rng.standard_normal((4, 4))
        check_gradient(lambda: _weighted(T.ifft2_real(T.ComplexPair(re, im)), wo),
                       [re, im], rtol=1e-6, atol=1e-10)
