"""Fourier pseudo-spectral machinery on the periodic torus [0, 2pi)^d.

Fields live as complex mode arrays shaped (..., *dims) with integer
wavenumbers; d = 2 runs are "2.5-D": vectors keep three components but
depend on (x1, x2) only (k3 = 0).  All norms are volume averaged, i.e.
||f||^2 = sum_k |f_k|^2 with the forward transform normalized by 1/N_tot.
"""

from dataclasses import dataclass
from functools import cached_property
from itertools import product

import numpy as np


@dataclass(frozen=True)
class SpectralGrid:
    dims: tuple

    def __post_init__(self):
        if len(self.dims) not in (2, 3):
            raise ValueError("dims must be 2-D or 3-D")

    @property
    def d(self):
        return len(self.dims)

    @cached_property
    def k(self):
        """Integer wavenumbers, shape (3, *dims); k3 = 0 in 2-D."""
        axes = [np.fft.fftfreq(n, 1.0 / n).astype(int) for n in self.dims]
        mesh = np.meshgrid(*axes, indexing="ij")
        k = np.zeros((3,) + self.dims)
        for i, m in enumerate(mesh):
            k[i] = m
        return k

    @cached_property
    def ksq(self):
        return np.sum(self.k**2, axis=0)

    @cached_property
    def inv_ksq(self):
        """1/|k|^2 with the zero mode mapped to 0 (mean-free solves)."""
        with np.errstate(divide="ignore"):
            out = 1.0 / self.ksq
        out[self.ksq == 0] = 0.0
        return out

    @cached_property
    def dealias_mask(self):
        mask = np.ones(self.dims, dtype=bool)
        axes = [np.fft.fftfreq(n, 1.0 / n).astype(int) for n in self.dims]
        mesh = np.meshgrid(*axes, indexing="ij")
        for i, n in enumerate(self.dims):
            mask &= np.abs(mesh[i]) <= n / 3.0
        return mask

    @cached_property
    def x(self):
        axes = [2.0 * np.pi * np.arange(n) / n for n in self.dims]
        return np.meshgrid(*axes, indexing="ij")

    @property
    def kmax(self):
        return float(np.sqrt(self.ksq.max()))

    def fft(self, f):
        n = int(np.prod(self.dims))
        return np.fft.fftn(f, axes=tuple(range(-self.d, 0))) / n

    def ifft(self, fh):
        n = int(np.prod(self.dims))
        return np.real(np.fft.ifftn(fh * n, axes=tuple(range(-self.d, 0))))

    # mode-space calculus -------------------------------------------------

    def grad(self, fh):
        """(3, *dims) gradient of a scalar mode array of shape (*dims)."""
        return 1j * self.k * fh[None]

    def div(self, vh):
        """Scalar divergence of a (3, *dims) mode array."""
        return 1j * np.sum(self.k * vh, axis=0)

    def curl(self, vh):
        """Curl of a (3, *dims) mode array."""
        k = self.k
        return 1j * np.stack([
            k[1] * vh[2] - k[2] * vh[1],
            k[2] * vh[0] - k[0] * vh[2],
            k[0] * vh[1] - k[1] * vh[0],
        ])

    def laplacian(self, fh):
        return -self.ksq * fh

    def leray(self, vh):
        """Remove the gradient part: v - k (k.v)/|k|^2 (identity at k=0)."""
        kv = np.sum(self.k * vh, axis=0)
        return vh - self.k * (kv * self.inv_ksq)

    def dealias(self, fh):
        return fh * self.dealias_mask

    # norms ----------------------------------------------------------------

    def l2sq(self, fh):
        """Volume-averaged squared L2 norm, summed over leading axes."""
        return float(np.sum(np.abs(fh) ** 2))

    def hs_sq(self, fh, s):
        """Squared H^s norm: sum over |m| <= s of ||d^m f||^2, computed
        spectrally as sum_k w_s(k) |f_k|^2 with the multinomial weight."""
        w = self._hs_weight(s)
        return float(np.sum(w * np.abs(fh) ** 2))

    def _hs_weight(self, s):
        key = "_hsw_%d" % s
        cache = getattr(self, "_hs_cache", None)
        if cache is None:
            cache = {}
            object.__setattr__(self, "_hs_cache", cache)
        if key not in cache:
            w = np.zeros(self.dims)
            for m in multi_indices_upto(s, self.d):
                term = np.ones(self.dims)
                for i, mi in enumerate(m):
                    term *= self.k[i] ** (2 * mi)
                w += term
            cache[key] = w
        return cache[key]

    def poisson_mean_free(self, rhs_hat):
        """Zero-mean solution of Laplace u = rhs (rhs must be mean free)."""
        return -rhs_hat * self.inv_ksq

    def random_real_field(self, rng, shape=(), kmax=4, amplitude=1.0):
        """Smooth band-limited real field(s) with zero mean."""
        f = np.zeros(shape + self.dims, dtype=complex)
        kint = self.k.astype(int)
        sel = (np.max(np.abs(kint), axis=0) <= kmax) & (self.ksq > 0)
        idx = np.argwhere(sel)
        vals = (rng.standard_normal((len(idx),) + shape)
                + 1j * rng.standard_normal((len(idx),) + shape))
        for n, ij in enumerate(idx):
            f[(...,) + tuple(ij)] = vals[n]
        # enforce reality
        fr = self.ifft(f)
        out = self.fft(fr)
        scale = np.sqrt(np.sum(np.abs(out) ** 2))
        if scale > 0:
            out *= amplitude / scale
        return out


def multi_indices_upto(s, d):
    """All spatial multi-indices m with |m| <= s (d active dimensions)."""
    out = []
    for m in product(range(s + 1), repeat=d):
        if sum(m) <= s:
            out.append(m)
    return out


def cross_hat(grid, ah, bh):
    """Dealiased pseudo-spectral cross product of two (3, ...) mode fields."""
    a = np.stack([grid.ifft(ah[i]) for i in range(3)])
    b = np.stack([grid.ifft(bh[i]) for i in range(3)])
    c = np.cross(a, b, axis=0)
    return np.stack([grid.dealias(grid.fft(c[i])) for i in range(3)])


def scalar_mult_hat(grid, fh, gh):
    """Dealiased product of a scalar and a (possibly vector) mode field."""
    f = grid.ifft(fh)
    if gh.ndim == fh.ndim + 1:
        g = np.stack([grid.ifft(gh[i]) for i in range(gh.shape[0])])
        return np.stack([grid.dealias(grid.fft(f * g[i]))
                         for i in range(gh.shape[0])])
    g = grid.ifft(gh)
    return grid.dealias(grid.fft(f * g))


def convect_hat(grid, uh, fh):
    """Dealiased (u . grad) f for scalar or vector mode field f."""
    u = np.stack([grid.ifft(uh[i]) for i in range(3)])
    if fh.ndim == uh.ndim:            # vector field
        out = []
        for i in range(3):
            gradf = [grid.ifft(1j * grid.k[j] * fh[i]) for j in range(3)]
            out.append(grid.dealias(grid.fft(sum(u[j] * gradf[j]
                                                 for j in range(3)))))
        return np.stack(out)
    gradf = [grid.ifft(1j * grid.k[j] * fh) for j in range(3)]
    return grid.dealias(grid.fft(sum(u[j] * gradf[j] for j in range(3))))
