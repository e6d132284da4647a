"""Dual certificates for the demixing program: construction and validation.

The certificate is ``Q = Q_aux + R`` where ``R`` carries ``lam * r_l`` on the
spike support and ``Q_aux`` combines the kernel restricted to the spike-free
indices, and its two first partials, around every source:

    Q_aux(f) = sum_i alpha_i K(f - f_i) + beta1_i K^{10}(f - f_i) + beta2_i K^{01}(f - f_i)

with ``K(f) = sum_{k not in Omega} c_{k1} c_{k2} exp(-j 2 pi f.k)``. Writing
``b(k) = [1, -j2 pi kappa k1, -j2 pi kappa k2] (x) [exp(-j2 pi f_i.k)]_i`` the
interpolation system is

    E u = [h; 0; 0] - lam * sum_l r_l b(k_l),   E = sum_{k not in Omega} c_{k1} c_{k2} b(k) b(k)^H

with ``u = [alpha; -beta1 / kappa; -beta2 / kappa]``, and the coefficients are
``C_k = c_{k1} c_{k2} b(k)^H u`` off the spike support.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConstructionFailedError
from .kernels import KernelCoeffs, _coeff_sum, kappa as kernel_kappa, triple_kernel_coeffs
from .signal_model import pairwise_wrap_distances
from .trig import TrigPoly2D

RCOND_MIN = 1e-10


@dataclass(frozen=True)
class SignPattern:
    h: np.ndarray
    rsign: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.h, dtype=complex).reshape(-1)
        r = np.asarray(self.rsign, dtype=complex).reshape(-1)
        if not (np.allclose(np.abs(h), 1) and np.allclose(np.abs(r), 1)):
            raise ValueError("sign patterns must have unit modulus")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "rsign", r)

    @classmethod
    def random(cls, r: int, s: int, rng: np.random.Generator) -> "SignPattern":
        return cls(np.exp(2j * np.pi * rng.random(r)), np.exp(2j * np.pi * rng.random(s)))


def _as_omega(omega) -> np.ndarray:
    if omega is None:
        return np.zeros((0, 2), dtype=int)
    return np.asarray(omega, dtype=int).reshape(-1, 2)


def build_b(k, freqs, kappa: float) -> np.ndarray:
    """b(k) for one index pair (shape (3r,)) or many (shape (K, 3r))."""
    k = np.asarray(k, dtype=float)
    single = k.ndim == 1
    k = k.reshape(-1, 2)
    freqs = np.asarray(freqs, dtype=float).reshape(-1, 2)
    if len(freqs) == 0:
        raise ValueError("at least one atom is required")
    e = np.exp(-2j * np.pi * k @ freqs.T)
    b = np.concatenate(
        [e, (-2j * np.pi * kappa * k[:, :1]) * e, (-2j * np.pi * kappa * k[:, 1:]) * e], axis=1
    )
    return b[0] if single else b


def restricted_kernel(coeffs: KernelCoeffs, omega, f, i1: int = 0, i2: int = 0) -> np.ndarray:
    """Partial (i1, i2) of the kernel with the spike indices removed."""
    f = np.asarray(f, dtype=float)
    k, c = coeffs.k, coeffs.c
    out = _coeff_sum(c, k, f[..., 0], i1, sign=-1.0) * _coeff_sum(c, k, f[..., 1], i2, sign=-1.0)
    om = _as_omega(omega)
    if len(om):
        m = coeffs.m
        w = c[om[:, 0] + m] * c[om[:, 1] + m]
        w = w * (-2j * np.pi * om[:, 0]) ** i1 * (-2j * np.pi * om[:, 1]) ** i2
        ph = np.exp(-2j * np.pi * (f[..., :1] * om[:, 0] + f[..., 1:] * om[:, 1]))
        out = out - ph @ w
    return out


@dataclass(frozen=True)
class InterpolationSystem:
    E: np.ndarray
    rhs: np.ndarray

    @property
    def r(self) -> int:
        return self.E.shape[0] // 3


def build_E(freqs, coeffs: KernelCoeffs, kappa: float, omega=None) -> np.ndarray:
    """Interpolation matrix with blocks ordered (value, d/df1, d/df2) x atoms."""
    freqs = np.asarray(freqs, dtype=float).reshape(-1, 2)
    diff = freqs[:, None, :] - freqs[None, :, :]

    def blk(a, b):
        return restricted_kernel(coeffs, omega, diff, a, b)

    k = kappa
    return np.block([
        [blk(0, 0), -k * blk(1, 0), -k * blk(0, 1)],
        [k * blk(1, 0), -k**2 * blk(2, 0), -k**2 * blk(1, 1)],
        [k * blk(0, 1), -k**2 * blk(1, 1), -k**2 * blk(0, 2)],
    ])


def build_R(omega, rsign, n: int, lam: float | None = None) -> TrigPoly2D:
    """Polynomial with coefficient ``lam * r_l`` at each spike index (default lam = 1/n)."""
    lam = 1.0 / n if lam is None else lam
    om = _as_omega(omega)
    m = (n - 1) // 2
    c = np.zeros((n, n), dtype=complex)
    if len(om):
        c[om[:, 0] + m, om[:, 1] + m] = lam * np.asarray(rsign, dtype=complex)
    return TrigPoly2D(c)


@dataclass(frozen=True)
class Certificate:
    freqs: np.ndarray
    omega: np.ndarray
    signs: SignPattern
    alpha: np.ndarray
    beta1: np.ndarray
    beta2: np.ndarray
    u: np.ndarray
    coeffs: np.ndarray
    lam: float
    kernel: KernelCoeffs
    kappa: float
    rcond: float

    @property
    def n(self) -> int:
        return self.coeffs.shape[0]

    @property
    def poly(self) -> TrigPoly2D:
        return TrigPoly2D(self.coeffs)


def solve_certificate(freqs, omega, signs: SignPattern, n: int, lam: float | None = None,
                      coeffs: KernelCoeffs | None = None, kappa: float | None = None) -> Certificate:
    """Deterministic certificate when ``omega`` is empty, random (spike-aware) otherwise."""
    m = (n - 1) // 2
    freqs = np.asarray(freqs, dtype=float).reshape(-1, 2)
    om = _as_omega(omega)
    lam = 1.0 / n if lam is None else lam
    coeffs = coeffs or triple_kernel_coeffs(m)
    if coeffs.m != m:
        raise ValueError(f"kernel bandwidth m={coeffs.m} does not match n={n}")
    kp = kernel_kappa(coeffs) if kappa is None else kappa
    r = len(freqs)
    if len(signs.h) != r or len(signs.rsign) != len(om):
        raise ValueError("sign pattern sizes do not match the supports")

    E = build_E(freqs, coeffs, kp, om)
    rhs = np.concatenate([signs.h, np.zeros(2 * r, dtype=complex)])
    if len(om):
        rhs = rhs - lam * (build_b(om, freqs, kp).T @ signs.rsign)
    rcond = 1.0 / np.linalg.cond(E)
    if not np.isfinite(rcond) or rcond < RCOND_MIN:
        raise ConstructionFailedError(f"interpolation matrix ill-conditioned (rcond={rcond:.2e})")
    u = np.linalg.solve(E, rhs)

    k1, k2 = np.meshgrid(np.arange(-m, m + 1), np.arange(-m, m + 1), indexing="ij")
    kk = np.stack([k1.ravel(), k2.ravel()], axis=1)
    w = np.outer(coeffs.c, coeffs.c).ravel()
    C = (w * (build_b(kk, freqs, kp).conj() @ u)).reshape(n, n)
    if len(om):
        C[om[:, 0] + m, om[:, 1] + m] = lam * signs.rsign

    return Certificate(
        freqs=freqs, omega=om, signs=signs,
        alpha=u[:r], beta1=-kp * u[r:2 * r], beta2=-kp * u[2 * r:], u=u,
        coeffs=C, lam=lam, kernel=coeffs, kappa=kp, rcond=float(rcond),
    )


def eval_Q(cert: Certificate, f, i1: int = 0, i2: int = 0) -> np.ndarray:
    """Coefficient-form evaluation of a partial derivative of Q."""
    return cert.poly(f, i1, i2)


def eval_Q_kernel_form(cert: Certificate, f, i1: int = 0, i2: int = 0) -> np.ndarray:
    """Q^{i1,i2} from the kernel combination plus R; independent of ``cert.coeffs``."""
    f = np.asarray(f, dtype=float)
    out = build_R(cert.omega, cert.signs.rsign, cert.n, cert.lam)(f, i1, i2)
    for fi, a, b1, b2 in zip(cert.freqs, cert.alpha, cert.beta1, cert.beta2):
        d = f - fi
        out = out + a * restricted_kernel(cert.kernel, cert.omega, d, i1, i2)
        out = out + b1 * restricted_kernel(cert.kernel, cert.omega, d, i1 + 1, i2)
        out = out + b2 * restricted_kernel(cert.kernel, cert.omega, d, i1, i2 + 1)
    return out


def w_vector(cert: Certificate, f, i1: int = 0, i2: int = 0) -> np.ndarray:
    """Kernel vector with ``kappa^{i1+i2} Q^{i1,i2}_aux(f) = w(f) . u``."""
    kp, om, kern = cert.kappa, cert.omega, cert.kernel
    d = np.asarray(f, dtype=float)[None, :] - cert.freqs
    s = kp ** (i1 + i2)
    return s * np.concatenate([
        restricted_kernel(kern, om, d, i1, i2),
        -kp * restricted_kernel(kern, om, d, i1 + 1, i2),
        -kp * restricted_kernel(kern, om, d, i1, i2 + 1),
    ])


def w_vector_from_b(cert: Certificate, f, i1: int = 0, i2: int = 0) -> np.ndarray:
    """Same vector expanded over indices: sum_k (-j2 pi kappa)^{i1+i2} k1^i1 k2^i2 c c e^{-j2 pi f.k} conj(b(k))."""
    m, kp = cert.kernel.m, cert.kappa
    k1, k2 = np.meshgrid(np.arange(-m, m + 1), np.arange(-m, m + 1), indexing="ij")
    kk = np.stack([k1.ravel(), k2.ravel()], axis=1)
    keep = np.ones(len(kk), dtype=bool)
    if len(cert.omega):
        keep[(cert.omega[:, 0] + m) * (2 * m + 1) + cert.omega[:, 1] + m] = False
    kk = kk[keep]
    c = cert.kernel.c
    wt = c[kk[:, 0] + m] * c[kk[:, 1] + m]
    wt = wt * (-2j * np.pi * kp) ** (i1 + i2) * kk[:, 0] ** i1 * kk[:, 1] ** i2
    wt = wt * np.exp(-2j * np.pi * kk @ np.asarray(f, dtype=float))
    return wt @ build_b(kk, cert.freqs, kp).conj()


@dataclass
class ValidationReport:
    interp_residual: float
    far_grid_max: float
    far_refined_max: float
    near_max: float
    near_hessian_negative: bool
    hessian_max_eig_over_m2: float
    spike_residual: float
    offsupport_coeff_max: float
    lam: float
    grid_points_per_axis: int
    near_radius: float
    pass_interpolation: bool
    pass_bound: bool
    pass_spike_signs: bool
    pass_coeff_bound: bool

    @property
    def max_abs_offsupport(self) -> float:
        return max(self.far_refined_max, self.near_max)

    @property
    def all_pass(self) -> bool:
        return (self.pass_interpolation and self.pass_bound
                and self.pass_spike_signs and self.pass_coeff_bound)

    def to_json(self) -> str:
        d = asdict(self)
        d["all_pass"] = self.all_pass
        return json.dumps(d, sort_keys=True)


def _wrap(d):
    return (np.asarray(d) + 0.5) % 1.0 - 0.5


def _hessian_abs2(cert: Certificate, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """|Q| and the 2x2 Hessian of |Q|^2 at ``pts``."""
    P = cert.poly
    q = P(pts)
    q10, q01 = P(pts, 1, 0), P(pts, 0, 1)
    q20, q11, q02 = P(pts, 2, 0), P(pts, 1, 1), P(pts, 0, 2)
    qc = q.conj()
    h11 = 2 * np.real(q20 * qc + q10 * q10.conj())
    h22 = 2 * np.real(q02 * qc + q01 * q01.conj())
    h12 = 2 * np.real(q11 * qc + q10 * q01.conj())
    H = np.stack([np.stack([h11, h12], -1), np.stack([h12, h22], -1)], -2)
    return np.abs(q), H


def _refine_max(cert: Certificate, center: np.ndarray, step: float, radius: float,
                levels: int = 4, half: int = 5) -> float:
    """Zoom in on a far-region local maximum, never entering the near region."""
    best, c = -np.inf, center
    t = np.arange(-half, half + 1)
    for _ in range(levels):
        g = np.stack(np.meshgrid(c[0] + step * t, c[1] + step * t, indexing="ij"), -1) % 1.0
        v = np.abs(cert.poly(g))
        for fi in cert.freqs:
            v[np.abs(_wrap(g - fi)).max(-1) <= radius] = -np.inf
        idx = np.unravel_index(np.argmax(v), v.shape)
        best = max(best, float(v[idx]))
        c = g[idx]
        step /= half
    return best


def validate_certificate(cert: Certificate, grid_points_per_axis: int = 1024,
                         tol_interp: float = 1e-8, tol_strict: float = 0.0,
                         near_radius: float | None = None, near_points: int = 41,
                         refine_top: int = 16) -> ValidationReport:
    """Numerically check the four certificate conditions.

    The torus is split into a near region (l-inf ball of ``near_radius`` around
    each source, default 0.09 / m) checked by negative definiteness of the
    Hessian of |Q|^2, and the far region checked on the uniform grid with local
    refinement of its largest local maxima. The two overlap on the boundary.
    """
    if grid_points_per_axis < 64:
        raise ValueError("validation grid needs at least 64 points per axis")
    L = grid_points_per_axis
    m = cert.kernel.m
    rad = 0.09 / m if near_radius is None else near_radius
    freqs, lam = cert.freqs, cert.lam

    interp = float(np.abs(cert.poly(freqs) - cert.signs.h).max()) if len(freqs) else 0.0

    absq = np.abs(cert.poly.grid(L))
    g = np.arange(L) / L
    far = np.ones((L, L), dtype=bool)
    for fi in freqs:
        d1 = np.abs(_wrap(g - fi[0]))
        d2 = np.abs(_wrap(g - fi[1]))
        far &= ~((d1[:, None] <= rad) & (d2[None, :] <= rad))
    vals = np.where(far, absq, -np.inf)
    far_grid_max = float(vals.max()) if far.any() else 0.0
    is_peak = np.ones_like(far)
    for s1 in (-1, 0, 1):
        for s2 in (-1, 0, 1):
            if s1 or s2:
                is_peak &= vals >= np.roll(np.roll(vals, s1, 0), s2, 1)
    cand = np.argwhere(is_peak & far)
    if len(cand):
        order = np.argsort(vals[cand[:, 0], cand[:, 1]])[::-1][:refine_top]
        refined = [_refine_max(cert, cand[i] / L, 1.0 / L, rad) for i in order]
        far_refined = max(far_grid_max, max(refined))
    else:
        far_refined = far_grid_max

    near_max, hess_ok, hess_top = 0.0, True, -np.inf
    t = np.linspace(-rad, rad, near_points)
    for fi in freqs:
        pts = np.stack(np.meshgrid(fi[0] + t, fi[1] + t, indexing="ij"), -1).reshape(-1, 2) % 1.0
        a, H = _hessian_abs2(cert, pts)
        at_atom = np.abs(_wrap(pts - fi)).max(-1) < 1e-12
        if (~at_atom).any():
            near_max = max(near_max, float(a[~at_atom].max()))
        top = np.linalg.eigvalsh(H).max(-1)
        hess_top = max(hess_top, float(top.max()) / m**2)
        hess_ok &= bool((top < 0).all())

    om = cert.omega
    C = cert.coeffs
    mask = np.ones(C.shape, dtype=bool)
    if len(om):
        vals_om = C[om[:, 0] + m, om[:, 1] + m]
        spike_res = float(np.abs(vals_om / lam - cert.signs.rsign).max())
        mask[om[:, 0] + m, om[:, 1] + m] = False
    else:
        spike_res = 0.0
    off_max = float(np.abs(C[mask]).max()) if mask.any() else 0.0

    bound_ok = far_refined < 1.0 - tol_strict and near_max < 1.0 and hess_ok
    return ValidationReport(
        interp_residual=interp,
        far_grid_max=far_grid_max,
        far_refined_max=float(far_refined),
        near_max=near_max,
        near_hessian_negative=bool(hess_ok),
        hessian_max_eig_over_m2=float(hess_top) if len(freqs) else 0.0,
        spike_residual=spike_res,
        offsupport_coeff_max=off_max,
        lam=lam,
        grid_points_per_axis=L,
        near_radius=rad,
        pass_interpolation=interp <= tol_interp,
        pass_bound=bool(bound_ok),
        pass_spike_signs=spike_res <= tol_interp,
        pass_coeff_bound=off_max < lam,
    )


def lemma_bounds_E(freqs, coeffs: KernelCoeffs, kappa: float) -> dict:
    """Operator norms of I - E, E and E^{-1} for the full-grid matrix."""
    E = build_E(freqs, coeffs, kappa)
    I = np.eye(len(E))
    return {
        "norm_I_minus_E": float(np.linalg.norm(I - E, 2)),
        "norm_E": float(np.linalg.norm(E, 2)),
        "norm_E_inv": float(np.linalg.norm(np.linalg.inv(E), 2)),
        "min_separation": float(pairwise_wrap_distances(freqs)[np.triu_indices(len(freqs), 1)].min())
        if len(freqs) > 1 else np.inf,
    }
