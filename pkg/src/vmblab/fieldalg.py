"""Field algebra with carried time derivatives.

A TField holds a spatial field (physical-space array, leading component
axes allowed) together with its time derivative; products propagate the
derivative by the product rule, spectral-calculus operators act linearly.
Products are plain pointwise grid products (no dealiasing): with
band-limited data every identity below is exact on the grid, which is what
the order-by-order residual checks rely on.
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class TField:
    v: np.ndarray     # value
    d: np.ndarray     # time derivative

    def __add__(self, other):
        other = as_tfield(other, like=self)
        return TField(self.v + other.v, self.d + other.d)

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tfield(other, like=self)
        return TField(self.v - other.v, self.d - other.d)

    def __rsub__(self, other):
        other = as_tfield(other, like=self)
        return TField(other.v - self.v, other.d - self.d)

    def __mul__(self, other):
        if isinstance(other, TField):
            return TField(self.v * other.v,
                          self.d * other.v + self.v * other.d)
        return TField(self.v * other, self.d * other)

    __rmul__ = __mul__

    def __neg__(self):
        return TField(-self.v, -self.d)

    def __getitem__(self, idx):
        return TField(self.v[idx], self.d[idx])

    @property
    def shape(self):
        return self.v.shape


def as_tfield(x, like=None):
    if isinstance(x, TField):
        return x
    arr = np.asarray(x, dtype=float)
    return TField(arr, np.zeros_like(arr))


def const(x):
    arr = np.asarray(x, dtype=float)
    return TField(arr, np.zeros_like(arr))


def stack(fields):
    return TField(np.stack([f.v for f in fields]),
                  np.stack([f.d for f in fields]))


def dot(a, b):
    """Contraction over the leading component axis."""
    return TField(np.einsum("i...,i...->...", a.v, b.v),
                  np.einsum("i...,i...->...", a.d, b.v)
                  + np.einsum("i...,i...->...", a.v, b.d))


def cross(a, b):
    return TField(np.cross(a.v, b.v, axis=0),
                  np.cross(a.d, b.v, axis=0) + np.cross(a.v, b.d, axis=0))


def outer(a, b):
    """outer(a, b)[i, j] = a_i b_j."""
    return TField(np.einsum("i...,j...->ij...", a.v, b.v),
                  np.einsum("i...,j...->ij...", a.d, b.v)
                  + np.einsum("i...,j...->ij...", a.v, b.d))


class Calc:
    """Spectral derivative operators bound to a grid, acting on TFields."""

    def __init__(self, grid):
        self.grid = grid

    def _dx(self, arr, i):
        g = self.grid
        return g.ifft(1j * g.k[i] * g.fft(arr))

    def _apply_linear(self, f, op):
        return TField(op(f.v), op(f.d))

    def dx(self, f, i):
        return self._apply_linear(f, lambda a: self._dx(a, i))

    def grad(self, f):
        """Scalar -> (3, ...)."""
        return self._apply_linear(
            f, lambda a: np.stack([self._dx(a, i) for i in range(3)]))

    def jac(self, f):
        """Vector -> (3, 3, ...) with jac[l, m] = d_l f_m."""
        return self._apply_linear(
            f, lambda a: np.stack([np.stack([self._dx(a[m], l)
                                             for m in range(3)])
                                   for l in range(3)]))

    def grad2(self, f):
        """Scalar -> (3, 3, ...) second derivatives d_l d_m f."""
        return self._apply_linear(
            f, lambda a: np.stack([np.stack([self._dx(self._dx(a, m), l)
                                             for m in range(3)])
                                   for l in range(3)]))

    def jac2(self, f):
        """Vector -> (3, 3, 3, ...) with jac2[l, m, n] = d_l d_m f_n."""
        def op(a):
            return np.stack([np.stack([np.stack(
                [self._dx(self._dx(a[n], m), l) for n in range(3)])
                for m in range(3)]) for l in range(3)])
        return self._apply_linear(f, op)

    def div(self, f):
        return self._apply_linear(
            f, lambda a: sum(self._dx(a[i], i) for i in range(3)))

    def curl(self, f):
        def op(a):
            return np.stack([
                self._dx(a[2], 1) - self._dx(a[1], 2),
                self._dx(a[0], 2) - self._dx(a[2], 0),
                self._dx(a[1], 0) - self._dx(a[0], 1)])
        return self._apply_linear(f, op)

    def lap(self, f):
        g = self.grid
        return self._apply_linear(
            f, lambda a: g.ifft(-g.ksq * g.fft(a)))

    def poisson_mean_free(self, f):
        """Zero-mean antiderivative of Laplace u = f (mean of f dropped)."""
        g = self.grid
        def op(a):
            ah = g.fft(a)
            ah[(0,) * g.d] = 0.0
            return g.ifft(-ah * g.inv_ksq)
        return self._apply_linear(f, op)

    def to_phys(self, mode_field):
        """Real physical values of a (possibly vector) mode array."""
        g = self.grid
        arr = np.asarray(mode_field)
        if arr.ndim == g.d:
            return g.ifft(arr)
        return np.stack([g.ifft(arr[i]) for i in range(arr.shape[0])])
