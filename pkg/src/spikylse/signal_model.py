"""Ground-truth spectral measures, clean samples, spiky noise and observations.

Samples live on the symmetric index set J = {-m..m}^2 with n = 2m + 1 odd.
A grid array ``X`` of shape (n, n) stores ``X[i1, i2]`` at index
``k = (i1 - m, i2 - m)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleSeparationError

REJECTION_BUDGET = 10_000


def check_odd(n: int) -> int:
    if int(n) != n or n < 1 or n % 2 == 0:
        raise ValueError(f"grid size must be a positive odd integer, got {n}")
    return int(n)


def index_grid(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Index arrays (k1, k2), each (n, n), for the symmetric set J."""
    m = (check_odd(n) - 1) // 2
    k = np.arange(-m, m + 1)
    return np.meshgrid(k, k, indexing="ij")


@dataclass(frozen=True)
class AtomSet:
    """Spectral point sources: frequencies in [0, 1)^2 and complex amplitudes."""

    freqs: np.ndarray
    amps: np.ndarray

    def __post_init__(self):
        freqs = np.asarray(self.freqs, dtype=float).reshape(-1, 2)
        amps = np.asarray(self.amps, dtype=complex).reshape(-1)
        if len(freqs) != len(amps):
            raise ValueError("one amplitude per frequency is required")
        if freqs.size and (freqs.min() < 0 or freqs.max() >= 1):
            raise ValueError("frequencies must lie in [0, 1)")
        if len(np.unique(freqs, axis=0)) != len(freqs):
            raise ValueError("frequencies must be pairwise distinct")
        object.__setattr__(self, "freqs", freqs)
        object.__setattr__(self, "amps", amps)

    @classmethod
    def empty(cls) -> "AtomSet":
        return cls(np.zeros((0, 2)), np.zeros(0, dtype=complex))

    @property
    def r(self) -> int:
        return len(self.amps)

    def tv_norm(self) -> float:
        return float(np.abs(self.amps).sum())

    def to_record(self) -> list:
        return [
            [float(f[0]), float(f[1]), float(a.real), float(a.imag)]
            for f, a in zip(self.freqs, self.amps)
        ]

    @classmethod
    def from_record(cls, rec) -> "AtomSet":
        if not rec:
            return cls.empty()
        arr = np.asarray(rec, dtype=float)
        return cls(arr[:, :2], arr[:, 2] + 1j * arr[:, 3])


@dataclass(frozen=True)
class SpikePattern:
    """Sparse corruption: index pairs in J and their (nonzero) values."""

    n: int
    support: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        check_odd(self.n)
        support = np.asarray(self.support, dtype=int).reshape(-1, 2)
        values = np.asarray(self.values, dtype=complex).reshape(-1)
        m = (self.n - 1) // 2
        if len(support) != len(values):
            raise ValueError("one value per spike index is required")
        if support.size and np.abs(support).max() > m:
            raise ValueError("spike index outside J")
        if len({tuple(k) for k in support}) != len(support):
            raise ValueError("spike indices must be distinct")
        if np.any(values == 0):
            raise ValueError("spike values must be nonzero")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "values", values)

    @classmethod
    def empty(cls, n: int) -> "SpikePattern":
        return cls(n, np.zeros((0, 2), dtype=int), np.zeros(0, dtype=complex))

    @property
    def s(self) -> int:
        return len(self.values)

    def index_set(self) -> set[tuple[int, int]]:
        return {(int(a), int(b)) for a, b in self.support}

    def to_grid(self) -> np.ndarray:
        m = (self.n - 1) // 2
        z = np.zeros((self.n, self.n), dtype=complex)
        if self.s:
            z[self.support[:, 0] + m, self.support[:, 1] + m] = self.values
        return z

    def to_record(self) -> list:
        return [
            [int(k[0]), int(k[1]), float(v.real), float(v.imag)]
            for k, v in zip(self.support, self.values)
        ]

    @classmethod
    def from_record(cls, n: int, rec) -> "SpikePattern":
        if not rec:
            return cls.empty(n)
        arr = np.asarray(rec, dtype=float)
        return cls(n, arr[:, :2].astype(int), arr[:, 2] + 1j * arr[:, 3])


def wrap_distance(a, b) -> float:
    """l-infinity wrap-around distance on the unit torus."""
    d = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) % 1.0
    return float(np.minimum(d, 1.0 - d).max())


def pairwise_wrap_distances(freqs: np.ndarray) -> np.ndarray:
    f = np.asarray(freqs, dtype=float).reshape(-1, 2)
    d = np.abs(f[:, None, :] - f[None, :, :]) % 1.0
    return np.minimum(d, 1.0 - d).max(axis=-1)


def min_separation(atoms: AtomSet | np.ndarray) -> float:
    freqs = atoms.freqs if isinstance(atoms, AtomSet) else np.asarray(atoms).reshape(-1, 2)
    if len(freqs) < 2:
        raise ValueError("minimum separation needs at least two atoms")
    d = pairwise_wrap_distances(freqs)
    iu = np.triu_indices(len(freqs), 1)
    return float(d[iu].min())


def sample_amplitude(rng: np.random.Generator, size=None):
    """|d| = 0.5 + chi-square(1), phase uniform on [0, 2 pi)."""
    g = rng.standard_normal(size)
    phase = rng.uniform(0.0, 2 * np.pi, size)
    return (0.5 + g**2) * np.exp(1j * phase)


def sample_sources(r: int, n: int, delta_min: float, rng: np.random.Generator,
                   budget: int = REJECTION_BUDGET) -> AtomSet:
    """Uniform frequencies conditioned on the separation, by whole-set rejection."""
    check_odd(n)
    if r < 0:
        raise ValueError("source count must be nonnegative")
    if r == 0:
        return AtomSet.empty()
    if r == 1 or delta_min <= 0:
        freqs = rng.random((r, 2))
    else:
        iu = np.triu_indices(r, 1)
        freqs = None
        batch = 500
        for start in range(0, budget, batch):
            cand = rng.random((min(batch, budget - start), r, 2))
            d = np.abs(cand[:, :, None, :] - cand[:, None, :, :])
            d = np.minimum(d, 1.0 - d).max(axis=-1)[:, iu[0], iu[1]].min(axis=-1)
            ok = np.nonzero(d >= delta_min)[0]
            if ok.size:
                freqs = cand[ok[0]]
                break
        if freqs is None:
            raise InfeasibleSeparationError(
                f"no {r} sources at separation {delta_min:g} after {budget} attempts"
            )
    return AtomSet(freqs, sample_amplitude(rng, r))


def synthesize(atoms: AtomSet, n: int) -> np.ndarray:
    """X_k = sum_i d_i exp(j 2 pi f_i . k) on J."""
    k1, k2 = index_grid(n)
    m = (n - 1) // 2
    k = np.arange(-m, m + 1)
    if atoms.r == 0:
        return np.zeros((n, n), dtype=complex)
    e1 = np.exp(2j * np.pi * np.outer(k, atoms.freqs[:, 0]))
    e2 = np.exp(2j * np.pi * np.outer(k, atoms.freqs[:, 1]))
    return (e1 * atoms.amps) @ e2.T


def sample_spikes(s: int, n: int, rng: np.random.Generator, mode: str = "exact") -> SpikePattern:
    """Spike support: a uniform s-subset ("exact") or Bernoulli(s/n^2) per index."""
    check_odd(n)
    if s < 0 or s > n * n:
        raise ValueError(f"spike count {s} outside [0, {n * n}]")
    m = (n - 1) // 2
    if mode == "exact":
        flat = rng.choice(n * n, size=s, replace=False)
    elif mode == "bernoulli":
        flat = np.nonzero(rng.random(n * n) < s / (n * n))[0]
    else:
        raise ValueError(f"unknown spike mode {mode!r}")
    flat = np.sort(flat)
    support = np.stack([flat // n - m, flat % n - m], axis=1)
    return SpikePattern(n, support, sample_amplitude(rng, len(flat)))


def observe(x: np.ndarray, z: SpikePattern) -> np.ndarray:
    x = np.asarray(x, dtype=complex)
    if x.shape != (z.n, z.n):
        raise ValueError(f"grid shape {x.shape} does not match spike grid n={z.n}")
    return x + z.to_grid()


@dataclass(frozen=True)
class Instance:
    """A replayable ground-truth problem instance."""

    n: int
    atoms: AtomSet
    spikes: SpikePattern

    @property
    def x(self) -> np.ndarray:
        return synthesize(self.atoms, self.n)

    @property
    def y(self) -> np.ndarray:
        return observe(self.x, self.spikes)

    def to_json(self) -> str:
        return json.dumps({
            "n": self.n,
            "atoms": self.atoms.to_record(),
            "spikes": self.spikes.to_record(),
        })

    @classmethod
    def from_json(cls, text: str) -> "Instance":
        d = json.loads(text)
        return cls(d["n"], AtomSet.from_record(d["atoms"]), SpikePattern.from_record(d["n"], d["spikes"]))
