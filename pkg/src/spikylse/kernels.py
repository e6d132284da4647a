"""Triple-Dirichlet interpolation kernel and its two-dimensional product.

The one-dimensional kernel is the product of three normalized Dirichlet
kernels with half-bandwidths floor(gamma_i * m); its Fourier coefficients
``c`` (indexed -m..m) are the convolution of three boxcars.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UnsupportedBandwidthError

GAMMAS = (0.247, 0.339, 0.414)
MAX_ORDER = 3


def _check_order(order: int) -> None:
    if not 0 <= order <= MAX_ORDER:
        raise ValueError(f"derivative order {order} unsupported (0..{MAX_ORDER})")


def half_bandwidths(m: int, gammas=GAMMAS) -> tuple[int, ...]:
    """Rounded half-bandwidths; the largest shrinks until they sum to at most m."""
    mb = [int(np.floor(g * m)) for g in gammas]
    while sum(mb) > m:
        mb[int(np.argmax(mb))] -= 1
    if min(mb) < 1:
        raise UnsupportedBandwidthError(f"m={m} too small for the triple kernel")
    return tuple(mb)


@dataclass(frozen=True)
class KernelCoeffs:
    m: int
    c: np.ndarray
    bandwidths: tuple[int, ...]

    @property
    def k(self) -> np.ndarray:
        return np.arange(-self.m, self.m + 1)


def dirichlet_coeffs(mbar: int) -> np.ndarray:
    return np.full(2 * mbar + 1, 1.0 / (2 * mbar + 1))


def triple_kernel_coeffs(m: int, gammas=GAMMAS) -> KernelCoeffs:
    mb = half_bandwidths(m, gammas)
    c = dirichlet_coeffs(mb[0])
    for b in mb[1:]:
        c = np.convolve(c, dirichlet_coeffs(b))
    half = (len(c) - 1) // 2
    full = np.zeros(2 * m + 1)
    full[m - half:m + half + 1] = 0.5 * (c + c[::-1])  # exact even symmetry
    return KernelCoeffs(m, full, mb)


def _coeff_sum(c: np.ndarray, k: np.ndarray, f, order: int, sign: float = 1.0,
               chunk: int = 4096) -> np.ndarray:
    """sum_k c_k (sign j 2 pi k)^order exp(sign j 2 pi k f), vectorized over f."""
    f = np.asarray(f, dtype=float)
    flat = f.ravel()
    nz = c != 0
    c, k = c[nz], k[nz]
    w = c * (sign * 2j * np.pi * k) ** order
    out = np.empty(flat.shape, dtype=complex)
    for s in range(0, flat.size, chunk):
        out[s:s + chunk] = np.exp(sign * 2j * np.pi * np.outer(flat[s:s + chunk], k)) @ w
    return out.reshape(f.shape)


def dirichlet_eval(mbar: int, f, order: int = 0):
    if mbar < 1:
        raise ValueError("half-bandwidth must be at least 1")
    _check_order(order)
    k = np.arange(-mbar, mbar + 1)
    return _coeff_sum(dirichlet_coeffs(mbar), k, f, order)


def kernel_eval_1d(coeffs: KernelCoeffs, f, order: int = 0):
    _check_order(order)
    return _coeff_sum(coeffs.c, coeffs.k, f, order)


def kernel_eval_2d(coeffs: KernelCoeffs, f, i1: int = 0, i2: int = 0):
    """K^{i1,i2}(f) = K^{(i1)}(f1) K^{(i2)}(f2); ``f`` has trailing axis of size 2."""
    f = np.asarray(f, dtype=float)
    return kernel_eval_1d(coeffs, f[..., 0], i1) * kernel_eval_1d(coeffs, f[..., 1], i2)


def kernel_grid_1d(coeffs: KernelCoeffs, points: int, order: int = 0) -> np.ndarray:
    """Kernel derivative at f = j / points, j = 0..points-1, by zero-padded FFT."""
    _check_order(order)
    if points < 2 * coeffs.m + 1:
        raise ValueError("grid must have at least 2m + 1 points")
    k = coeffs.k
    buf = np.zeros(points, dtype=complex)
    buf[k % points] = coeffs.c * (2j * np.pi * k) ** order
    return np.fft.ifft(buf) * points


def kappa(coeffs: KernelCoeffs) -> float:
    """1 / sqrt(|K''(0)|)."""
    k2 = float(np.real(kernel_eval_1d(coeffs, 0.0, 2)))
    if k2 == 0:
        raise ValueError("degenerate kernel: zero curvature at the origin")
    return 1.0 / np.sqrt(abs(k2))
