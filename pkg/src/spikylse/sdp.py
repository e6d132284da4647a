"""Dual semidefinite program for TV-norm / l1 demixing on an n x n grid.

The dual reads

    maximize  Re <C, Y>
    s.t.      [[Q0, vec(C)], [vec(C)^H, 1]] >= 0,
              sum of Q0 along every two-level diagonal offset d equals delta_d,
              max_k |C_k| <= lam.

The trace constraints make ``v(f)^H Q0 v(f) = 1`` for every frequency, so the
Schur complement bounds ``|sum_k C_k exp(-j 2 pi f.k)| <= 1`` on the torus.

It is solved with a first-order splitting: the bordered Hermitian block is
split into a copy living in the affine/box set (trace families, pinned corner,
clipped border with the linear objective folded in) and a copy living in the
PSD cone, coupled by scaled ADMM with over-relaxation and residual balancing.
``vec`` stacks columns, so flat position ``p = i1 + n * i2`` for array entry
``C[i1, i2]``.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg

from .signal_model import check_odd, observe, synthesize


@dataclass(frozen=True)
class TraceConstraint:
    """One (deduplicated) trace constraint tr[Theta_d Q0] = target."""

    offset: tuple[int, int]
    rows: np.ndarray
    cols: np.ndarray
    target: float


@dataclass(frozen=True)
class SolverOptions:
    tol_psd: float = 1e-7
    tol_eq: float = 1e-7
    tol_ineq: float = 1e-9
    tol_obj: float = 1e-8
    tol_dual: float = 1e-7
    max_iter: int = 50_000
    check_every: int = 25
    rho: float = 1.0
    relaxation: float = 1.6
    adapt_rho: bool = True
    seed: int | None = None

    @classmethod
    def from_mapping(cls, data: dict) -> "SolverOptions":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown solver options: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class SdpProblem:
    y: np.ndarray
    lam: float | None = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=complex)
        if y.ndim != 2 or y.shape[0] != y.shape[1]:
            raise ValueError(f"observations must be a square grid, got {y.shape}")
        check_odd(y.shape[0])
        object.__setattr__(self, "y", y)
        lam = 1.0 / y.shape[0] if self.lam is None else float(self.lam)
        if lam <= 0:
            raise ValueError("lambda must be positive")
        object.__setattr__(self, "lam", lam)

    @property
    def n(self) -> int:
        return self.y.shape[0]


@dataclass
class SdpSolution:
    c: np.ndarray
    q0: np.ndarray
    objective: float
    lam: float
    converged: bool
    diagnostics: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.c.shape[0]

    def bordered(self) -> np.ndarray:
        return bordered_block(self.q0, self.c)

    def to_record(self) -> dict:
        return {
            "n": self.n,
            "lambda": self.lam,
            "objective": self.objective,
            "converged": self.converged,
            "c": [[float(v.real), float(v.imag)] for v in self.c.ravel(order="F")],
            "diagnostics": dict(self.diagnostics),
        }


def bordered_block(q0: np.ndarray, c: np.ndarray) -> np.ndarray:
    N = q0.shape[0]
    m = np.empty((N + 1, N + 1), dtype=complex)
    m[:N, :N] = q0
    v = np.asarray(c).ravel(order="F")
    m[:N, N] = v
    m[N, :N] = v.conj()
    m[N, N] = 1.0
    return m


def _offset_labels(n: int) -> np.ndarray:
    """Label of the 2-D offset (row - col) for every entry of an n^2 x n^2 matrix."""
    p = np.arange(n * n)
    i1, i2 = p % n, p // n
    d1 = i1[:, None] - i1[None, :]
    d2 = i2[:, None] - i2[None, :]
    w = 2 * n - 1
    return (d1 + n - 1) + w * (d2 + n - 1)


def assemble_trace_constraints(n: int) -> list[TraceConstraint]:
    """Trace constraints for all offsets |d1|, |d2| <= n-1, one per conjugate pair."""
    check_odd(n)
    labels = _offset_labels(n)
    w = 2 * n - 1
    out = []
    for d2 in range(0, n):
        for d1 in range(-(n - 1), n):
            if d2 == 0 and d1 < 0:
                continue
            lab = (d1 + n - 1) + w * (d2 + n - 1)
            rows, cols = np.nonzero(labels == lab)
            out.append(TraceConstraint((d1, d2), rows, cols, 1.0 if (d1, d2) == (0, 0) else 0.0))
    return out


def psd_project(h: np.ndarray, herm_tol: float = 1e-10) -> np.ndarray:
    """Frobenius-nearest PSD matrix: clip negative eigenvalues to zero."""
    h = np.asarray(h)
    scale = max(1.0, np.abs(h).max(initial=0.0))
    if np.abs(h - h.conj().T).max(initial=0.0) > herm_tol * scale:
        raise ValueError("psd_project expects a Hermitian matrix")
    w, v = scipy.linalg.eigh(h, check_finite=False, driver="evd")
    if w[0] >= 0:
        return h.copy()
    keep = w > 0
    vk = v[:, keep]
    return (vk * w[keep]) @ vk.conj().T


def _psd_split(h: np.ndarray) -> tuple[np.ndarray, float]:
    w, v = scipy.linalg.eigh(h, check_finite=False, driver="evd")
    keep = w > 0
    vk = v[:, keep]
    return (vk * w[keep]) @ vk.conj().T, float(w[0])


class _AffineProjector:
    """Projection of the top-left block onto the trace-family affine set."""

    def __init__(self, n: int):
        self.n = n
        self.labels = _offset_labels(n).ravel()
        self.counts = np.bincount(self.labels).astype(float)
        self.target = np.zeros_like(self.counts)
        self.target[(n - 1) + (2 * n - 1) * (n - 1)] = 1.0
        self.size = self.counts.size

    def family_sums(self, q: np.ndarray) -> np.ndarray:
        flat = q.ravel()
        re = np.bincount(self.labels, weights=flat.real, minlength=self.size)
        im = np.bincount(self.labels, weights=flat.imag, minlength=self.size)
        return re + 1j * im

    def __call__(self, q: np.ndarray) -> np.ndarray:
        corr = (self.family_sums(q) - self.target) / self.counts
        return q - corr[self.labels].reshape(q.shape)


def trace_residuals(q0: np.ndarray, n: int) -> np.ndarray:
    proj = _AffineProjector(n)
    return np.abs(proj.family_sums(q0) - proj.target)


def solve_dual_sdp(problem: SdpProblem, opts: SolverOptions | None = None) -> SdpSolution:
    """Solve the dual SDP; returns the best iterate flagged if not converged."""
    opts = opts or SolverOptions()
    t0 = time.perf_counter()
    n, lam = problem.n, problem.lam
    N = n * n
    y = problem.y.ravel(order="F")
    affine = _AffineProjector(n)

    x = np.zeros((N + 1, N + 1), dtype=complex)
    x[np.arange(N), np.arange(N)] = 1.0 / N
    x[N, N] = 1.0
    if opts.seed is not None:
        rng = np.random.default_rng(opts.seed)
        c0 = 0.1 * lam * (rng.standard_normal(N) + 1j * rng.standard_normal(N)) / np.sqrt(2)
        x[:N, N] = c0
        x[N, :N] = c0.conj()
    u = np.zeros_like(x)
    rho = opts.rho
    alpha = opts.relaxation
    ynorm = max(np.linalg.norm(y), 1e-300)

    history = []
    obj_prev = None
    converged = False
    w_mat = x
    lam_min = 0.0
    r_prim = r_dual = np.inf
    it = 0
    for it in range(1, opts.max_iter + 1):
        v = x - u
        v = 0.5 * (v + v.conj().T)
        w_mat = np.empty_like(v)
        w_mat[:N, :N] = affine(v[:N, :N])
        c = v[:N, N] + y / (2.0 * rho)
        mag = np.abs(c)
        over = mag > lam
        c[over] *= lam / mag[over]
        w_mat[:N, N] = c
        w_mat[N, :N] = c.conj()
        w_mat[N, N] = 1.0

        w_hat = alpha * w_mat + (1.0 - alpha) * x
        x_prev = x
        x, lam_min = _psd_split(w_hat + u)
        u = u + w_hat - x

        if it % opts.check_every:
            continue
        r_prim = np.linalg.norm(w_mat - x)
        r_dual = rho * np.linalg.norm(x - x_prev)
        obj = float(np.real(np.vdot(c, y)))
        history.append((it, r_prim, r_dual, obj))
        psd_res = max(0.0, -float(np.linalg.eigvalsh(w_mat)[0])) if r_prim < 10 * opts.tol_psd else np.inf
        obj_change = np.inf if obj_prev is None else abs(obj - obj_prev) / max(1.0, abs(obj))
        obj_prev = obj
        if (
            psd_res <= opts.tol_psd
            and obj_change <= opts.tol_obj
            and r_dual <= opts.tol_dual * max(1.0, ynorm)
        ):
            converged = True
            break
        if opts.adapt_rho:
            if r_prim > 10 * r_dual:
                rho *= 2.0
                u /= 2.0
            elif r_dual > 10 * r_prim:
                rho /= 2.0
                u *= 2.0

    c_final = w_mat[:N, N].reshape((n, n), order="F").copy()
    q0 = w_mat[:N, :N].copy()
    eig_min = float(np.linalg.eigvalsh(w_mat)[0])
    diagnostics = {
        "psd_residual": max(0.0, -eig_min),
        "trace_residuals_max": float(trace_residuals(q0, n).max()),
        "linf_violation": max(0.0, float(np.abs(c_final).max() - lam)),
        "iterations": it,
        "runtime": time.perf_counter() - t0,
        "primal_residual": float(r_prim),
        "dual_residual": float(r_dual),
        "rho": rho,
        "history": history,
    }
    objective = float(np.real(np.vdot(c_final, problem.y)))
    return SdpSolution(c_final, q0, objective, lam, converged, diagnostics)


def duality_gap(y: np.ndarray, solution: SdpSolution, atoms, spikes, feas_tol: float = 1e-8,
                check_feasible: bool = True) -> dict:
    """Gap between a primal candidate (atoms, spikes) and a dual solution.

    The primal value is ``||d||_1 + lam ||z||_1``; the pair must reproduce ``y``
    unless ``check_feasible`` is off (useful for sensitivity probes only).
    """
    y = np.asarray(y, dtype=complex)
    fit = observe(synthesize(atoms, y.shape[0]), spikes)
    err = np.linalg.norm(fit - y)
    if check_feasible and err > feas_tol * max(1.0, np.linalg.norm(y)):
        raise ValueError(f"primal candidate does not reproduce the observations (residual {err:.3g})")
    primal = atoms.tv_norm() + solution.lam * float(np.abs(spikes.values).sum())
    dual = float(np.real(np.vdot(solution.c, y)))
    gap = primal - dual
    return {"primal": primal, "dual": dual, "gap": gap,
            "relative": abs(gap) / max(1.0, abs(primal))}
