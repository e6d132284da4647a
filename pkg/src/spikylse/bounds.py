"""Numeric checks of the kernel constants and the interpolation-matrix bounds."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .certificate import build_b, lemma_bounds_E
from .kernels import kappa as kernel_kappa, triple_kernel_coeffs
from .signal_model import REJECTION_BUDGET, pairwise_wrap_distances

KAPPA_RANGE = (0.467, 0.468)
C_INF_BOUND = 1.3
B_NORM_FACTOR = 21.0
E_BOUNDS = {"norm_I_minus_E": 0.24, "norm_E": 1.24, "norm_E_inv": 1.32}


@dataclass
class BoundCheck:
    name: str
    passed: bool
    values: dict

    def line(self) -> str:
        vals = ", ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}"
                         for k, v in self.values.items())
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {vals}"

    def to_record(self) -> dict:
        return asdict(self)


def check_kernel_constants(m: int = 2000) -> BoundCheck:
    """kappa * m within KAPPA_RANGE and m * max|c| <= C_INF_BOUND."""
    coeffs = triple_kernel_coeffs(m)
    km = kernel_kappa(coeffs) * m
    cm = float(np.abs(coeffs.c).max() * m)
    ok = KAPPA_RANGE[0] <= km <= KAPPA_RANGE[1] and cm <= C_INF_BOUND
    return BoundCheck("kernel_constants", ok, {"m": m, "kappa_times_m": km, "cinf_times_m": cm})


def check_b_norm(m: int = 2000, r: int = 10, samples: int = 1000, seed: int = 0) -> BoundCheck:
    """||b(k)||^2 <= 21 r at random indices k for random atoms."""
    rng = np.random.default_rng(seed)
    coeffs = triple_kernel_coeffs(m)
    kap = kernel_kappa(coeffs)
    freqs = rng.random((r, 2))
    ks = rng.integers(-m, m + 1, size=(samples, 2))
    sq = np.sum(np.abs(build_b(ks, freqs, kap)) ** 2, axis=1)
    worst = float(sq.max() / r)
    viol = int(np.sum(sq > B_NORM_FACTOR * r))
    return BoundCheck("b_norm", viol == 0,
                      {"m": m, "r": r, "samples": samples, "max_ratio": worst, "violations": viol})


def clustered_atoms(r: int, m: int, separation: float, rng: np.random.Generator,
                    width: float = 4.0) -> np.ndarray:
    """r frequencies inside a (width/m)-box, pairwise at least separation/m apart.

    Uniform atoms on the torus are almost always far apart, which makes the
    interpolation matrix nearly the identity; packing them tightly probes the
    regime the separation bound is about.
    """
    for _ in range(REJECTION_BUDGET):
        f = (rng.random(2) + rng.random((r, 2)) * width / m) % 1.0
        d = pairwise_wrap_distances(f)[np.triu_indices(r, 1)]
        if d.size == 0 or d.min() >= separation / m:
            return f
    raise RuntimeError("could not pack the cluster; widen the box")


def check_E_bounds(m: int = 2000, r: int = 5, sets: int = 20, separation: float = 1.68,
                   seed: int = 0) -> BoundCheck:
    """Operator-norm bounds on the interpolation matrix over tightly packed sets."""
    rng = np.random.default_rng(seed)
    coeffs = triple_kernel_coeffs(m)
    kap = kernel_kappa(coeffs)
    worst = {k: 0.0 for k in E_BOUNDS}
    for _ in range(sets):
        got = lemma_bounds_E(clustered_atoms(r, m, separation, rng), coeffs, kap)
        for k in E_BOUNDS:
            worst[k] = max(worst[k], got[k])
    ok = all(worst[k] <= E_BOUNDS[k] for k in E_BOUNDS)
    return BoundCheck("E_bounds", ok, {"m": m, "r": r, "sets": sets, **worst})


def run_all(m: int = 2000, seed: int = 0) -> list[BoundCheck]:
    return [
        check_kernel_constants(m),
        check_b_norm(m, seed=seed),
        check_E_bounds(m, seed=seed),
    ]
