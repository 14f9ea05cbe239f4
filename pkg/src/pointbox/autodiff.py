"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Each op builds a Tensor node holding its inputs and a closure that scatters
the upstream gradient; backward() releases them in reverse topological order,
so every node is visited exactly once.  All values are checked finite after
every op; a NaN or Inf raises immediately instead of propagating.
"""

from __future__ import annotations

import numpy as np


class NonFiniteError(ArithmeticError):
    """Raised when an op produces NaN or Inf."""

    def __init__(self, op: str):
        super().__init__(f"non-finite values produced by op '{op}'")
        self.op = op


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an op."""

    def __init__(self, op: str, *shapes):
        super().__init__(f"op '{op}' got incompatible shapes {shapes}")
        self.op = op
        self.shapes = shapes


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A float64 array with an optional gradient and a backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev", "_op")

    # Make numpy defer to the reflected operators below instead of trying to
    # broadcast element-by-element over the Tensor object.
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, _prev: tuple = (), _op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteError(_op)
        self.requires_grad = requires_grad or any(p.requires_grad for p in _prev)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self._backward = None
        self._prev = _prev
        self._op = _op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(op={self._op}, shape={self.shape}, grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.requires_grad:
            self.grad += g

    # ---- arithmetic -------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data + other.data, _prev=(self, other), _op="add")

        def backward():
            self._accumulate(_unbroadcast(out.grad, self.shape))
            other._accumulate(_unbroadcast(out.grad, other.shape))

        out._backward = backward
        return out

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data - other.data, _prev=(self, other), _op="sub")

        def backward():
            self._accumulate(_unbroadcast(out.grad, self.shape))
            other._accumulate(_unbroadcast(-out.grad, other.shape))

        out._backward = backward
        return out

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data * other.data, _prev=(self, other), _op="mul")

        def backward():
            self._accumulate(_unbroadcast(out.grad * other.data, self.shape))
            other._accumulate(_unbroadcast(out.grad * self.data, other.shape))

        out._backward = backward
        return out

    __rmul__ = __mul__

    def __neg__(self):
        return self * (-1.0)

    def __matmul__(self, other):
        other = as_tensor(other)
        if self.data.ndim != 2 or other.data.ndim != 2 or self.shape[1] != other.shape[0]:
            raise ShapeError("matmul", self.shape, other.shape)
        out = Tensor(self.data @ other.data, _prev=(self, other), _op="matmul")

        def backward():
            self._accumulate(out.grad @ other.data.T)
            other._accumulate(self.data.T @ out.grad)

        out._backward = backward
        return out

    def __pow__(self, exponent: float):
        k = float(exponent)
        with np.errstate(invalid="ignore"):
            out = Tensor(self.data ** k, _prev=(self,), _op="pow")

        def backward():
            self._accumulate(out.grad * k * self.data ** (k - 1.0))

        out._backward = backward
        return out

    # ---- elementwise functions -------------------------------------------

    def exp(self):
        out = Tensor(np.exp(self.data), _prev=(self,), _op="exp")

        def backward():
            self._accumulate(out.grad * out.data)

        out._backward = backward
        return out

    def log(self):
        with np.errstate(invalid="ignore", divide="ignore"):
            out = Tensor(np.log(self.data), _prev=(self,), _op="log")

        def backward():
            self._accumulate(out.grad / self.data)

        out._backward = backward
        return out

    def sigmoid(self):
        out = Tensor(1.0 / (1.0 + np.exp(-self.data)), _prev=(self,), _op="sigmoid")

        def backward():
            self._accumulate(out.grad * out.data * (1.0 - out.data))

        out._backward = backward
        return out

    def atan(self):
        out = Tensor(np.arctan(self.data), _prev=(self,), _op="atan")

        def backward():
            self._accumulate(out.grad / (1.0 + self.data * self.data))

        out._backward = backward
        return out

    def clamp(self, lo: float, hi: float):
        """Clamp values to [lo, hi]; gradient passes only where unclamped."""
        out = Tensor(np.clip(self.data, lo, hi), _prev=(self,), _op="clamp")
        mask = (self.data > lo) & (self.data < hi)

        def backward():
            self._accumulate(out.grad * mask)

        out._backward = backward
        return out

    def smooth_l1(self, target, beta: float = 1.0):
        """Elementwise smooth-L1 against target: 0.5 d^2 / beta inside the
        quadratic zone |d| < beta, |d| - 0.5 beta outside."""
        if beta <= 0.0:
            raise ValueError(f"beta must be positive, got {beta}")
        target = as_tensor(target)
        d = self.data - target.data
        quad = np.abs(d) < beta
        val = np.where(quad, 0.5 * d * d / beta, np.abs(d) - 0.5 * beta)
        out = Tensor(val, _prev=(self, target), _op="smooth_l1")

        def backward():
            dd = np.where(quad, d / beta, np.sign(d))
            self._accumulate(_unbroadcast(out.grad * dd, self.shape))
            target._accumulate(_unbroadcast(-out.grad * dd, target.shape))

        out._backward = backward
        return out

    # ---- reductions and shape ops ----------------------------------------

    def sum(self, axis: int | None = None, keepdims: bool = False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), _prev=(self,), _op="sum")

        def backward():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.shape).copy())

        out._backward = backward
        return out

    def mean(self, axis: int | None = None):
        n = self.data.size if axis is None else self.shape[axis]
        return self.sum(axis=axis) * (1.0 / n)

    def reshape(self, *shape: int):
        out = Tensor(self.data.reshape(shape), _prev=(self,), _op="reshape")

        def backward():
            self._accumulate(out.grad.reshape(self.shape))

        out._backward = backward
        return out

    def take_rows(self, indices):
        """Gather rows along axis 0.  Repeated indices accumulate in backward."""
        idx = np.asarray(indices, dtype=np.intp)
        out = Tensor(self.data[idx], _prev=(self,), _op="take_rows")

        def backward():
            if self.requires_grad:
                g = np.zeros_like(self.data)
                np.add.at(g, idx, out.grad)
                self.grad += g

        out._backward = backward
        return out

    def softmax(self, axis: int):
        """Numerically stable softmax along the given axis; slices sum to 1."""
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        y = e / e.sum(axis=axis, keepdims=True)
        out = Tensor(y, _prev=(self,), _op="softmax")

        def backward():
            dot = (out.grad * y).sum(axis=axis, keepdims=True)
            self._accumulate(y * (out.grad - dot))

        out._backward = backward
        return out

    def cosine_similarity(self, other, axis: int = -1):
        """Cosine similarity along one axis; that axis is reduced.  Raises on
        zero-norm slices, which callers are expected to filter out.  The
        denominator is sqrt(sum(a^2) * sum(b^2)), which makes the similarity
        of a slice with itself exactly 1.0."""
        other = as_tensor(other)
        if self.shape != other.shape:
            raise ShapeError("cosine_similarity", self.shape, other.shape)
        sa = (self.data * self.data).sum(axis=axis)
        sb = (other.data * other.data).sum(axis=axis)
        if np.any(sa == 0.0) or np.any(sb == 0.0):
            raise ValueError("cosine_similarity got a zero-norm slice")
        dot = (self.data * other.data).sum(axis=axis)
        denom = np.sqrt(sa * sb)
        cos = dot / denom
        out = Tensor(cos, _prev=(self, other), _op="cosine_similarity")

        def backward():
            g = np.expand_dims(out.grad, axis)
            cos_e = np.expand_dims(cos, axis)
            denom_e = np.expand_dims(denom, axis)
            sa_e = np.expand_dims(sa, axis)
            sb_e = np.expand_dims(sb, axis)
            self._accumulate(g * (other.data / denom_e - cos_e * self.data / sa_e))
            other._accumulate(g * (self.data / denom_e - cos_e * other.data / sb_e))

        out._backward = backward
        return out

    # ---- composites -------------------------------------------------------

    def tanh(self):
        return (self * 2.0).sigmoid() * 2.0 - 1.0

    # ---- graph traversal --------------------------------------------------

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar output."""
        if self.data.size != 1:
            raise ShapeError("backward", self.shape)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._prev:
                if id(parent) not in seen:
                    stack.append((parent, False))
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.requires_grad:
                node._backward()


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def parameter(data, rng: np.random.Generator | None = None, scale: float = 0.0) -> Tensor:
    """Build a trainable leaf.  With an rng, data is a shape tuple filled with
    N(0, scale) noise; otherwise data is used as-is."""
    if rng is not None:
        data = rng.normal(0.0, scale, size=data)
    return Tensor(data, requires_grad=True)


def zero_grads(params: list[Tensor]) -> None:
    for p in params:
        if p.grad is not None:
            p.grad[...] = 0.0


def grad_check(f, xs: list[Tensor], eps: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    f maps the leaf tensors to a scalar Tensor.  Error for each component is
    |analytic - numeric| / max(1, |numeric|).
    """
    zero_grads(xs)
    out = f(*xs)
    out.backward()
    analytic = [x.grad.copy() for x in xs]
    worst = 0.0
    for xi, x in enumerate(xs):
        flat = x.data.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            hi = float(f(*xs).data)
            flat[j] = orig - eps
            lo = float(f(*xs).data)
            flat[j] = orig
            numeric = (hi - lo) / (2.0 * eps)
            err = abs(analytic[xi].reshape(-1)[j] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst


class SGD:
    """Stochastic gradient descent with momentum and weight decay."""

    def __init__(self, params: list[Tensor], lr: float, momentum: float = 0.0, weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in params]

    def step(self, lr_scale: float = 1.0) -> None:
        for p, v in zip(self.params, self.velocity):
            g = p.grad + self.weight_decay * p.data
            v *= self.momentum
            v += g
            p.data -= self.lr * lr_scale * v

    def zero_grad(self) -> None:
        zero_grads(self.params)
