"""Bivariate trigonometric polynomials with coefficients on J = {-m..m}^2.

``P(f) = sum_k C_k exp(-j 2 pi f.k)``, the convention of the dual polynomial.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .signal_model import check_odd


@dataclass(frozen=True)
class TrigPoly2D:
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError("coefficients must be a square grid")
        check_odd(c.shape[0])
        object.__setattr__(self, "coeffs", c)

    @property
    def n(self) -> int:
        return self.coeffs.shape[0]

    @property
    def m(self) -> int:
        return (self.n - 1) // 2

    def _weighted(self, i1: int, i2: int) -> np.ndarray:
        k = np.arange(-self.m, self.m + 1)
        w1 = (-2j * np.pi * k) ** i1
        w2 = (-2j * np.pi * k) ** i2
        return self.coeffs * w1[:, None] * w2[None, :]

    def __call__(self, f, i1: int = 0, i2: int = 0, chunk: int = 2048) -> np.ndarray:
        """Partial derivative (i1, i2) at points ``f`` (trailing axis of size 2)."""
        f = np.asarray(f, dtype=float)
        shape = f.shape[:-1]
        pts = f.reshape(-1, 2)
        k = np.arange(-self.m, self.m + 1)
        cw = self._weighted(i1, i2)
        out = np.empty(len(pts), dtype=complex)
        for s in range(0, len(pts), chunk):
            p = pts[s:s + chunk]
            e1 = np.exp(-2j * np.pi * p[:, :1] * k[None, :])
            e2 = np.exp(-2j * np.pi * p[:, 1:] * k[None, :])
            out[s:s + chunk] = np.einsum("pa,ab,pb->p", e1, cw, e2)
        return out.reshape(shape)

    def grid(self, points: int, i1: int = 0, i2: int = 0) -> np.ndarray:
        """Values at f = (a, b) / points for a, b in 0..points-1, via FFT."""
        if points < self.n:
            raise ValueError(f"grid needs at least n={self.n} points per axis")
        k = np.arange(-self.m, self.m + 1) % points
        buf = np.zeros((points, points), dtype=complex)
        buf[np.ix_(k, k)] = self._weighted(i1, i2)
        return np.fft.fft2(buf)
