import numpy as np
import pytest

from spaer.autodiff import Tensor
from spaer.errors import NonFiniteGradient


def numeric_grad(f, x, eps=1e-6):
    """Central-difference gradient of scalar f at array x."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        xp = x.copy()
        xm = x.copy()
        xp[idx] += eps
        xm[idx] -= eps
        g[idx] = (f(xp) - f(xm)) / (2 * eps)
    return g


def check_grad(build, x, tol=1e-5):
    """build(Tensor) -> scalar Tensor; compare backward vs finite differences."""
    t = Tensor(x)
    loss = build(t)
    loss.backward()
    num = numeric_grad(lambda a: float(build(Tensor(a)).data), x)
    scale = max(1.0, np.max(np.abs(num)))
    assert np.max(np.abs(t.grad - num)) / scale < tol


class TestOpGradients:
    def test_add_broadcast(self, rng):
        x = rng.normal(0, 1, (4, 3))
        b = rng.normal(0, 1, 3)
        check_grad(lambda t: (t + Tensor(b, requires_grad=False)).square().sum(), x)

    def test_bias_receives_summed_grad(self, rng):
        x = Tensor(rng.normal(0, 1, (4, 3)))
        b = Tensor(rng.normal(0, 1, 3))
        (x + b).sum().backward()
        assert b.grad.shape == (3,)
        assert np.allclose(b.grad, 4.0)

    def test_sub(self, rng):
        x = rng.normal(0, 1, (3, 3))
        c = rng.normal(0, 1, (3, 3))
        check_grad(lambda t: (t - Tensor(c, requires_grad=False)).square().sum(), x)

    def test_mul(self, rng):
        x = rng.normal(0, 1, (3, 4))
        c = rng.normal(0, 1, (3, 4))
        check_grad(lambda t: (t * Tensor(c, requires_grad=False)).square().sum(), x)

    def test_matmul_left_and_right(self, rng):
        a = rng.normal(0, 1, (3, 4))
        b = rng.normal(0, 1, (4, 2))
        check_grad(lambda t: (t @ Tensor(b, requires_grad=False)).square().sum(), a)
        check_grad(lambda t: (Tensor(a, requires_grad=False) @ t).square().sum(), b)

    def test_matmul_batched(self, rng):
        a = rng.normal(0, 1, (2, 3, 4))
        b = rng.normal(0, 1, (2, 4, 3))
        check_grad(lambda t: (t @ Tensor(b, requires_grad=False)).square().sum(), a)
        check_grad(lambda t: (Tensor(a, requires_grad=False) @ t).square().sum(), b)

    def test_reshape_transpose(self, rng):
        x = rng.normal(0, 1, (2, 3, 4))
        check_grad(lambda t: t.reshape(6, 4).transpose(1, 0).square().sum(), x)

    def test_relu(self, rng):
        x = rng.normal(0, 1, (5, 5))
        x[np.abs(x) < 0.05] = 0.3  # keep clear of the kink
        check_grad(lambda t: t.relu().square().sum(), x)

    def test_softmax(self, rng):
        x = rng.normal(0, 1, (4, 6))
        c = rng.normal(0, 1, (4, 6))
        check_grad(lambda t: (t.softmax() * Tensor(c, requires_grad=False)).sum(), x)

    def test_softmax_rows_sum_to_one(self, rng):
        y = Tensor(rng.normal(0, 3, (5, 7))).softmax()
        assert np.allclose(y.data.sum(axis=-1), 1.0, atol=1e-12)
        assert np.all(y.data >= 0)

    def test_square_and_neg(self, rng):
        x = rng.normal(0, 1, (4,))
        check_grad(lambda t: (-t).square().sum(), x)


class TestBackward:
    def test_requires_scalar(self, rng):
        t = Tensor(rng.normal(0, 1, (2, 2)))
        with pytest.raises(ValueError):
            (t + t).backward()

    def test_shared_node_grads_accumulate(self):
        x = Tensor(np.array([2.0]))
        y = x * x + x  # dy/dx = 2x + 1 = 5
        y.sum().backward()
        assert np.allclose(x.grad, 5.0)

    def test_nonfinite_gradient_detected(self):
        x = Tensor(np.array([np.inf]))
        with pytest.raises(NonFiniteGradient):
            (x * x).sum().backward()

    def test_bitwise_deterministic(self, rng):
        x = rng.normal(0, 1, (6, 6))
        w = rng.normal(0, 1, (6, 6))

        def run():
            t = Tensor(x)
            loss = ((t @ Tensor(w, requires_grad=False)).softmax()
                    .square().sum())
            loss.backward()
            return t.grad.copy()

        assert np.array_equal(run(), run())
