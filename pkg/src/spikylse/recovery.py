"""Support and amplitude recovery from a solved dual, and the success metric."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateFitError
from .signal_model import AtomSet, SpikePattern, check_odd, index_grid, synthesize
from .trig import TrigPoly2D

SUCCESS_NMSE = 1e-3


@dataclass(frozen=True)
class RecoveryResult:
    sources: AtomSet
    spikes: SpikePattern
    nmse: float

    @property
    def success(self) -> bool:
        return self.nmse <= SUCCESS_NMSE

    def to_record(self) -> dict:
        return {
            "sources": self.sources.to_record(),
            "spikes": self.spikes.to_record(),
            "nmse": self.nmse,
            "success": self.success,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True)


def default_points(n: int) -> int:
    return max(4 * n, 256)


def eval_dual_poly_grid(c: np.ndarray, points_per_axis: int) -> np.ndarray:
    """|sum_k C_k exp(-j 2 pi f.k)| on the uniform grid f = (a, b) / points."""
    c = np.asarray(c)
    if points_per_axis < 4 * c.shape[0]:
        raise ValueError("grid needs at least 4n points per axis")
    return np.abs(TrigPoly2D(c).grid(points_per_axis))


def _quadratic_offset(patch: np.ndarray) -> np.ndarray:
    """Stationary point of the least-squares quadratic through a 3x3 patch, in cells."""
    t = np.array([-1.0, 0.0, 1.0])
    u, v = np.meshgrid(t, t, indexing="ij")
    u, v = u.ravel(), v.ravel()
    A = np.stack([np.ones(9), u, v, u * u, u * v, v * v], axis=1)
    a = np.linalg.lstsq(A, patch.ravel(), rcond=None)[0]
    H = np.array([[2 * a[3], a[4]], [a[4], 2 * a[5]]])
    g = -np.array([a[1], a[2]])
    try:
        off = np.linalg.solve(H, g)
    except np.linalg.LinAlgError:
        return np.zeros(2)
    if not np.all(np.isfinite(off)) or np.abs(off).max() > 1.0:
        return np.zeros(2)
    return off


def _local_patch(poly: TrigPoly2D, center: np.ndarray, step: float) -> np.ndarray:
    t = np.array([-1.0, 0.0, 1.0]) * step
    g = np.stack(np.meshgrid(center[0] + t, center[1] + t, indexing="ij"), -1)
    return np.abs(poly(g % 1.0))


def locate_sources(c: np.ndarray, points_per_axis: int | None = None, peak_tol: float = 1e-2,
                   refine_levels: int = 6) -> np.ndarray:
    """Frequencies where |dual polynomial| peaks at (nearly) one.

    Strict local maxima of the magnitude grid above ``1 - peak_tol`` are
    refined by quadratic fits over 3x3 neighbourhoods, the first on the grid
    and the following ones on local stencils whose spacing shrinks by 4 each
    level; peaks within one grid cell (wrap-around) are merged.
    """
    c = np.asarray(c)
    L = points_per_axis or default_points(c.shape[0])
    mag = eval_dual_poly_grid(c, L)
    peak = mag >= 1.0 - peak_tol
    for s1 in (-1, 0, 1):
        for s2 in (-1, 0, 1):
            if s1 or s2:
                nb = np.roll(np.roll(mag, s1, 0), s2, 1)
                strict = (s1, s2) > (0, 0)
                peak &= (mag > nb) if strict else (mag >= nb)
    idx = np.argwhere(peak)
    if not len(idx):
        return np.zeros((0, 2))
    idx = idx[np.argsort(-mag[idx[:, 0], idx[:, 1]])]
    poly = TrigPoly2D(c)
    found = []
    for i1, i2 in idx:
        patch = mag[np.ix_([(i1 - 1) % L, i1, (i1 + 1) % L], [(i2 - 1) % L, i2, (i2 + 1) % L])]
        f = (np.array([i1, i2]) + _quadratic_offset(patch)) / L
        step = 1.0 / L
        for _ in range(refine_levels):
            step /= 4.0
            f = f + step * _quadratic_offset(_local_patch(poly, f, step))
        f = f % 1.0
        if any(_wrapdist(f, g) <= 1.0 / L for g in found):
            continue
        found.append(f)
    return np.array(found).reshape(-1, 2)


def _wrapdist(a, b) -> float:
    d = np.abs(a - b) % 1.0
    return float(np.minimum(d, 1.0 - d).max())


def locate_spikes(c: np.ndarray, lam: float, sat_tol: float = 1e-3) -> np.ndarray:
    """Index pairs k with |C_k| >= lam (1 - sat_tol)."""
    c = np.asarray(c)
    n = check_odd(c.shape[0])
    m = (n - 1) // 2
    hit = np.argwhere(np.abs(c) >= lam * (1.0 - sat_tol))
    return (hit - m).astype(int).reshape(-1, 2)


def estimate_amplitudes(y: np.ndarray, freqs, spikes) -> tuple[AtomSet, SpikePattern]:
    """Joint least-squares fit of source amplitudes and spike values."""
    y = np.asarray(y, dtype=complex)
    n = check_odd(y.shape[0])
    m = (n - 1) // 2
    freqs = np.asarray(freqs, dtype=float).reshape(-1, 2) % 1.0
    spikes = np.asarray(spikes, dtype=int).reshape(-1, 2)
    r, s = len(freqs), len(spikes)
    if r + s > n * n:
        raise DegenerateFitError("more unknowns than samples")
    if r + s == 0:
        return AtomSet.empty(), SpikePattern.empty(n)
    k1, k2 = index_grid(n)
    cols = [np.exp(2j * np.pi * (k1 * f[0] + k2 * f[1])).ravel() for f in freqs]
    for k in spikes:
        e = np.zeros((n, n), dtype=complex)
        e[k[0] + m, k[1] + m] = 1.0
        cols.append(e.ravel())
    A = np.stack(cols, axis=1)
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[-1] <= sv[0] * max(A.shape) * np.finfo(float).eps * 1e3:
        raise DegenerateFitError("design matrix is rank deficient")
    coef = np.linalg.lstsq(A, y.ravel(), rcond=None)[0]
    return AtomSet(freqs, coef[:r]), SpikePattern(n, spikes, coef[r:])


def nmse(x_true: np.ndarray, sources: AtomSet, spikes: SpikePattern) -> float:
    """||X - X_hat|| / ||X|| over the indices not flagged as spikes."""
    x_true = np.asarray(x_true, dtype=complex)
    n = x_true.shape[0]
    if spikes.n != n:
        raise ValueError("grid sizes do not match")
    keep = np.ones((n, n), dtype=bool)
    m = (n - 1) // 2
    if spikes.s:
        keep[spikes.support[:, 0] + m, spikes.support[:, 1] + m] = False
    ref = np.linalg.norm(x_true[keep])
    if ref == 0:
        raise ValueError("reference grid has zero norm on the kept indices")
    est = synthesize(sources, n)
    return float(np.linalg.norm(x_true[keep] - est[keep]) / ref)


def recover(y: np.ndarray, c: np.ndarray, lam: float, points_per_axis: int | None = None,
            peak_tol: float = 1e-2, sat_tol: float = 1e-3,
            amp_tol: float = 1e-6) -> tuple[AtomSet, SpikePattern]:
    """Supports from the dual, amplitudes by least squares.

    The dual optimum need not be unique, so |F*C| can come within ``peak_tol``
    of one away from the true support. Such candidates fit to (numerically)
    zero amplitude; components below ``amp_tol`` times the largest fitted
    magnitude are dropped and the fit is repeated.
    """
    freqs = locate_sources(c, points_per_axis, peak_tol)
    spikes = locate_spikes(c, lam, sat_tol)
    atoms, z = estimate_amplitudes(y, freqs, spikes)
    mags = np.concatenate([np.abs(atoms.amps), np.abs(z.values)])
    if mags.size and mags.max() > 0:
        cut = amp_tol * mags.max()
        keep_a, keep_z = np.abs(atoms.amps) > cut, np.abs(z.values) > cut
        if not (keep_a.all() and keep_z.all()):
            atoms, z = estimate_amplitudes(y, freqs[keep_a], spikes[keep_z])
    return atoms, z


def score(x_true: np.ndarray, sources: AtomSet, spikes: SpikePattern) -> RecoveryResult:
    """Result with NMSE; a zero reference scores the absolute error instead."""
    x_true = np.asarray(x_true)
    try:
        err = nmse(x_true, sources, spikes)
    except ValueError:
        err = float(np.linalg.norm(synthesize(sources, x_true.shape[0])))
    return RecoveryResult(sources, spikes, err)
