"""Deterministic dense numerics.

Everything downstream runs on float64 numpy arrays.  This module owns the
portable PRNG (SplitMix64, identical streams on every platform), the
numerically stable softmax, the restricted Hadamard broadcast rules, plain
SGD stepping and a central finite-difference gradient oracle.
"""

import numpy as np

from .errors import NumericError, ShapeError

_MASK64 = 0xFFFFFFFFFFFFFFFF
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_INV_2_53 = 2.0 ** -53


def _mix(z):
    z = (z ^ (z >> 30)) * _MIX1 & _MASK64
    z = (z ^ (z >> 27)) * _MIX2 & _MASK64
    return z ^ (z >> 31)


class SplitMix64:
    """Counter-based 64-bit generator with a fixed update rule.

    The state advances by a fixed odd constant per draw and the output is a
    bijective mix of the state, so blocks of draws can be produced
    vectorized without changing the stream.
    """

    def __init__(self, seed):
        self._state = int(seed) & _MASK64

    def next_u64(self):
        self._state = (self._state + _GAMMA) & _MASK64
        return _mix(self._state)

    def _raw(self, n):
        # identical to n sequential next_u64 calls
        idx = np.arange(1, n + 1, dtype=np.uint64)
        z = np.uint64(self._state) + idx * np.uint64(_GAMMA)
        self._state = (self._state + n * _GAMMA) & _MASK64
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))

    def uniform(self, size=None):
        """Uniform floats in [0, 1)."""
        if size is None:
            return (self.next_u64() >> 11) * _INV_2_53
        n = int(np.prod(size))
        out = (self._raw(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        return out.reshape(size)

    def normal(self, size=None, mean=0.0, std=1.0):
        """Standard Box-Muller normals from the uniform stream."""
        scalar = size is None
        n = 1 if scalar else int(np.prod(size))
        m = (n + 1) // 2
        # shift into (0, 1] so the log is finite
        u1 = ((self._raw(m) >> np.uint64(11)).astype(np.float64) + 1.0) * _INV_2_53
        u2 = (self._raw(m) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        z = mean + std * z
        return float(z[0]) if scalar else z.reshape(size)

    def integers(self, high, size=None):
        """Integers uniform on [0, high)."""
        if size is None:
            return int(self.uniform() * high)
        return np.minimum((self.uniform(size) * high).astype(np.int64), high - 1)

    def permutation(self, n):
        perm = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.integers(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def spawn(self):
        """Independent child generator, seeded from this stream."""
        return SplitMix64(self.next_u64())


def matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} x {b.shape}")
    return a @ b


def hadamard(a, b):
    """Element-wise product with the two sanctioned broadcast rules.

    A (d, 1) column replicates across the other operand's columns; a
    (1, n) row replicates down its rows.  Anything else is an error.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("hadamard expects 2-D operands")
    if a.shape == b.shape:
        return a * b
    for x, y in ((a, b), (b, a)):
        if x.shape[1] == 1 and x.shape[0] == y.shape[0]:
            return x * y
        if x.shape[0] == 1 and x.shape[1] == y.shape[1]:
            return x * y
    raise ShapeError(f"hadamard shapes {a.shape} vs {b.shape}")


def softmax(x, axis=-1):
    """Stable softmax along an axis; rows sum to 1."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ShapeError("softmax of empty input")
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def sgd_step(param, grad, lr):
    param = np.asarray(param, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if param.shape != grad.shape:
        raise ShapeError(f"sgd shapes {param.shape} vs {grad.shape}")
    if lr < 0:
        raise ValueError("negative learning rate")
    return param - lr * grad


def finite_diff_grad(f, x, h=1e-4):
    """Central-difference gradient of a scalar function of an array."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat_x = x.ravel()
    flat_g = grad.ravel()
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + h
        fp = f(x)
        flat_x[i] = orig - h
        fm = f(x)
        flat_x[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite evaluation at entry {i}")
        flat_g[i] = (fp - fm) / (2.0 * h)
    return grad
