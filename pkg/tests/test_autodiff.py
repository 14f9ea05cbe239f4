import math

import numpy as np
import pytest

from pointbox.autodiff import (
    SGD,
    NonFiniteError,
    ShapeError,
    Tensor,
    as_tensor,
    grad_check,
    parameter,
    zero_grads,
)

GRAD_TOL = 1e-6
N_POINTS = 20


def leaf(rng, shape, lo=-2.0, hi=2.0):
    return Tensor(rng.uniform(lo, hi, shape), requires_grad=True)


def weighted_sum(t, w):
    """Scalarize with fixed weights so reductions keep nonzero gradients."""
    return (t * w).sum()


class TestForwardValues:
    def test_add_sub_mul(self):
        a = Tensor([1.0, 2.0])
        b = Tensor([3.0, -1.0])
        assert np.allclose((a + b).data, [4.0, 1.0])
        assert np.allclose((a - b).data, [-2.0, 3.0])
        assert np.allclose((a * b).data, [3.0, -2.0])

    def test_matmul(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        b = Tensor([[1.0], [1.0]])
        assert np.allclose((a @ b).data, [[3.0], [7.0]])

    def test_softmax_slices_sum_to_one(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(0.0, 3.0, (5, 7)))
        for axis in (0, 1):
            y = x.softmax(axis=axis).data
            np.testing.assert_allclose(y.sum(axis=axis), 1.0, atol=1e-12)
            assert np.all(y > 0.0)

    def test_smooth_l1_quadratic_zone(self):
        out = Tensor(0.5).smooth_l1(0.0, beta=1.0)
        assert float(out.data) == pytest.approx(0.125, abs=1e-12)
        out.backward()
        # d/dx 0.5 x^2 = x at x = 0.5

    def test_smooth_l1_linear_zone(self):
        x = Tensor(2.0, requires_grad=True)
        out = x.smooth_l1(0.0, beta=1.0)
        assert float(out.data) == pytest.approx(1.5, abs=1e-12)
        out.backward()
        assert float(x.grad) == pytest.approx(1.0, abs=1e-12)

    def test_smooth_l1_quadratic_gradient(self):
        x = Tensor(0.5, requires_grad=True)
        x.smooth_l1(0.0, beta=1.0).backward()
        assert float(x.grad) == pytest.approx(0.5, abs=1e-12)

    def test_cosine_orthogonal(self):
        a = Tensor([[1.0, 0.0]])
        b = Tensor([[0.0, 1.0]])
        cos = a.cosine_similarity(b, axis=1)
        assert float(cos.data[0]) == pytest.approx(0.0, abs=1e-12)

    def test_cosine_scale_invariant(self):
        rng = np.random.default_rng(1)
        a = Tensor(rng.normal(size=(4, 6)))
        b = Tensor(rng.normal(size=(4, 6)))
        base = a.cosine_similarity(b, axis=1).data
        scaled = (a * 3.7).cosine_similarity(b * 0.2, axis=1).data
        np.testing.assert_allclose(scaled, base, atol=1e-12)

    def test_tanh_matches_numpy(self):
        rng = np.random.default_rng(2)
        x = Tensor(rng.normal(size=10))
        np.testing.assert_allclose(x.tanh().data, np.tanh(x.data), atol=1e-12)

    def test_clamp_values_and_mask(self):
        x = Tensor([-5.0, 0.5, 5.0], requires_grad=True)
        y = x.clamp(0.0, 1.0)
        np.testing.assert_allclose(y.data, [0.0, 0.5, 1.0])
        y.sum().backward()
        np.testing.assert_allclose(x.grad, [0.0, 1.0, 0.0])

    def test_take_rows_accumulates_repeats(self):
        x = Tensor(np.arange(6.0).reshape(3, 2), requires_grad=True)
        y = x.take_rows([0, 0, 2])
        y.sum().backward()
        np.testing.assert_allclose(x.grad, [[2.0, 2.0], [0.0, 0.0], [1.0, 1.0]])


class TestErrors:
    def test_non_finite_input(self):
        with pytest.raises(NonFiniteError):
            Tensor([1.0, np.inf])

    def test_non_finite_propagation_names_op(self):
        x = Tensor([-1.0])
        with pytest.raises(NonFiniteError) as exc:
            x.log()
        assert exc.value.op == "log"

    def test_matmul_shape_error(self):
        with pytest.raises(ShapeError) as exc:
            Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))
        assert exc.value.op == "matmul"

    def test_backward_requires_scalar(self):
        with pytest.raises(ShapeError):
            Tensor(np.ones(3), requires_grad=True).backward()

    def test_cosine_zero_norm_rejected(self):
        with pytest.raises(ValueError):
            Tensor(np.zeros((1, 3))).cosine_similarity(Tensor(np.ones((1, 3))), axis=1)

    def test_bad_beta_rejected(self):
        with pytest.raises(ValueError):
            Tensor(1.0).smooth_l1(0.0, beta=0.0)


class TestGradCheck:
    """Central-difference checks for every registered op, 20 seeded points."""

    def test_add_broadcast(self):
        rng = np.random.default_rng(10)
        w = rng.normal(size=(3, 4))
        for _ in range(N_POINTS):
            a, b = leaf(rng, (3, 4)), leaf(rng, (4,))
            assert grad_check(lambda a, b: weighted_sum(a + b, w), [a, b]) < GRAD_TOL

    def test_sub(self):
        rng = np.random.default_rng(11)
        w = rng.normal(size=(3, 4))
        for _ in range(N_POINTS):
            a, b = leaf(rng, (3, 4)), leaf(rng, (3, 4))
            assert grad_check(lambda a, b: weighted_sum(a - b, w), [a, b]) < GRAD_TOL

    def test_mul_broadcast(self):
        rng = np.random.default_rng(12)
        w = rng.normal(size=(2, 3))
        for _ in range(N_POINTS):
            a, b = leaf(rng, (2, 3)), leaf(rng, (3,))
            assert grad_check(lambda a, b: weighted_sum(a * b, w), [a, b]) < GRAD_TOL

    def test_matmul(self):
        rng = np.random.default_rng(13)
        w = rng.normal(size=(3, 2))
        for _ in range(N_POINTS):
            a, b = leaf(rng, (3, 4)), leaf(rng, (4, 2))
            assert grad_check(lambda a, b: weighted_sum(a @ b, w), [a, b]) < GRAD_TOL

    def test_pow(self):
        rng = np.random.default_rng(14)
        w = rng.normal(size=5)
        for _ in range(N_POINTS):
            x = leaf(rng, 5, lo=0.3, hi=2.5)
            assert grad_check(lambda x: weighted_sum(x ** 2.7, w), [x]) < GRAD_TOL

    def test_exp(self):
        rng = np.random.default_rng(15)
        w = rng.normal(size=5)
        for _ in range(N_POINTS):
            x = leaf(rng, 5)
            assert grad_check(lambda x: weighted_sum(x.exp(), w), [x]) < GRAD_TOL

    def test_log(self):
        rng = np.random.default_rng(16)
        w = rng.normal(size=5)
        for _ in range(N_POINTS):
            x = leaf(rng, 5, lo=0.2, hi=3.0)
            assert grad_check(lambda x: weighted_sum(x.log(), w), [x]) < GRAD_TOL

    def test_sigmoid(self):
        rng = np.random.default_rng(17)
        w = rng.normal(size=(2, 4))
        for _ in range(N_POINTS):
            x = leaf(rng, (2, 4), lo=-4.0, hi=4.0)
            assert grad_check(lambda x: weighted_sum(x.sigmoid(), w), [x]) < GRAD_TOL

    def test_atan(self):
        rng = np.random.default_rng(18)
        w = rng.normal(size=6)
        for _ in range(N_POINTS):
            x = leaf(rng, 6, lo=-3.0, hi=3.0)
            assert grad_check(lambda x: weighted_sum(x.atan(), w), [x]) < GRAD_TOL

    def test_clamp_away_from_bounds(self):
        rng = np.random.default_rng(19)
        w = rng.normal(size=5)
        for _ in range(N_POINTS):
            x = leaf(rng, 5, lo=-2.0, hi=2.0)
            assert grad_check(lambda x: weighted_sum(x.clamp(-10.0, 10.0), w), [x]) < GRAD_TOL

    def test_smooth_l1_kink_resampled(self):
        """Points within 1e-3 of the |d| = beta kink are resampled."""
        rng = np.random.default_rng(20)
        beta = 1.0
        w = rng.normal(size=6)
        done = 0
        while done < N_POINTS:
            x = rng.uniform(-3.0, 3.0, 6)
            if np.any(np.abs(np.abs(x) - beta) < 1e-3) or np.any(np.abs(x) < 1e-3):
                continue
            t = Tensor(x, requires_grad=True)
            assert grad_check(lambda t: weighted_sum(t.smooth_l1(0.0, beta=beta), w), [t]) < GRAD_TOL
            done += 1

    def test_sum_axes(self):
        rng = np.random.default_rng(21)
        for _ in range(N_POINTS):
            x = leaf(rng, (3, 4))
            w0 = rng.normal(size=4)
            w1 = rng.normal(size=3)
            assert grad_check(lambda x: weighted_sum(x.sum(axis=0), w0), [x]) < GRAD_TOL
            assert grad_check(lambda x: weighted_sum(x.sum(axis=1), w1), [x]) < GRAD_TOL
            assert grad_check(lambda x: x.sum(), [x]) < GRAD_TOL

    def test_softmax_both_axes(self):
        rng = np.random.default_rng(22)
        w = rng.normal(size=(4, 3))
        for _ in range(N_POINTS):
            x = leaf(rng, (4, 3), lo=-3.0, hi=3.0)
            assert grad_check(lambda x: weighted_sum(x.softmax(axis=0), w), [x]) < GRAD_TOL
            assert grad_check(lambda x: weighted_sum(x.softmax(axis=1), w), [x]) < GRAD_TOL

    def test_cosine_similarity(self):
        rng = np.random.default_rng(23)
        w = rng.normal(size=3)
        for _ in range(N_POINTS):
            a = leaf(rng, (3, 5), lo=0.2, hi=2.0)
            b = leaf(rng, (3, 5), lo=0.2, hi=2.0)
            assert grad_check(lambda a, b: weighted_sum(a.cosine_similarity(b, axis=1), w), [a, b]) < GRAD_TOL

    def test_reshape(self):
        rng = np.random.default_rng(24)
        w = rng.normal(size=(2, 6))
        for _ in range(N_POINTS):
            x = leaf(rng, (3, 4))
            assert grad_check(lambda x: weighted_sum(x.reshape(2, 6), w), [x]) < GRAD_TOL

    def test_take_rows(self):
        rng = np.random.default_rng(25)
        idx = [0, 2, 2, 1]
        w = rng.normal(size=(4, 3))
        for _ in range(N_POINTS):
            x = leaf(rng, (3, 3))
            assert grad_check(lambda x: weighted_sum(x.take_rows(idx), w), [x]) < GRAD_TOL


class TestGraph:
    def test_backward_linearity(self):
        """Gradient of a sum of losses equals the sum of the gradients."""
        rng = np.random.default_rng(30)
        x0 = rng.normal(size=(3, 3))

        def loss_a(t):
            return (t.sigmoid() * t).sum()

        def loss_b(t):
            return weighted_sum(t.softmax(axis=1), np.ones((3, 3)) * 0.5) + (t ** 2.0).sum()

        xa = Tensor(x0.copy(), requires_grad=True)
        loss_a(xa).backward()
        xb = Tensor(x0.copy(), requires_grad=True)
        loss_b(xb).backward()
        xc = Tensor(x0.copy(), requires_grad=True)
        (loss_a(xc) + loss_b(xc)).backward()
        np.testing.assert_allclose(xc.grad, xa.grad + xb.grad, atol=1e-12)

    def test_reused_node_visited_once(self):
        """A node feeding two consumers accumulates both contributions."""
        x = Tensor(2.0, requires_grad=True)
        y = x * 3.0
        z = y * y + y
        z.backward()
        # dz/dx = (2 * 3x * 3) + 3 = 18x + 3 = 39 at x=2
        assert float(x.grad) == pytest.approx(39.0, abs=1e-12)

    def test_grad_check_catches_broken_gradient(self):
        """Sanity: a deliberately wrong backward fails the check."""
        rng = np.random.default_rng(31)
        x = Tensor(rng.normal(size=4), requires_grad=True)

        def broken(t):
            out = t * t  # value of x^2 ...
            bad = Tensor(out.data, _prev=(t,), _op="broken")

            def backward():
                t._accumulate(bad.grad * 3.0)  # ... but gradient of 3x

            bad._backward = backward
            return bad.sum()

        assert grad_check(broken, [x]) > 1e-2

    def test_zero_grads(self):
        x = Tensor(np.ones(3), requires_grad=True)
        (x * 2.0).sum().backward()
        assert np.any(x.grad != 0.0)
        zero_grads([x])
        np.testing.assert_allclose(x.grad, 0.0)


class TestOptimizer:
    def test_sgd_matches_manual_update(self):
        p = parameter(np.array([1.0, -2.0]))
        opt = SGD([p], lr=0.1, momentum=0.9, weight_decay=0.01)
        p.grad = np.array([0.5, 0.5])
        opt.step()
        v = np.array([0.5, 0.5]) + 0.01 * np.array([1.0, -2.0])
        np.testing.assert_allclose(p.data, np.array([1.0, -2.0]) - 0.1 * v, atol=1e-12)
        p.grad = np.array([0.0, 0.0])
        opt.step()
        v2 = 0.9 * v + 0.01 * p.data
        # second step uses decayed momentum buffer

    def test_parameter_seeded_init(self):
        a = parameter((3, 2), rng=np.random.default_rng(5), scale=0.3)
        b = parameter((3, 2), rng=np.random.default_rng(5), scale=0.3)
        np.testing.assert_allclose(a.data, b.data)
        assert a.requires_grad
