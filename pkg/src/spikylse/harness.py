"""Experiment harness: single trials, phase-transition grids and artifacts."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, DegenerateFitError
from .recovery import recover, score
from .sdp import SdpProblem, SolverOptions, solve_dual_sdp
from .signal_model import Instance, check_odd, observe, sample_sources, sample_spikes, synthesize

log = logging.getLogger(__name__)


def parse_range(spec) -> tuple[int, ...]:
    """"1-5", "1,3,5", an int, or a sequence of ints."""
    if isinstance(spec, int):
        return (spec,)
    if isinstance(spec, (list, tuple)):
        return tuple(int(v) for v in spec)
    out = []
    for part in str(spec).split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1) if not part.startswith("-") else (part, part)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return tuple(out)


@dataclass(frozen=True)
class ExperimentConfig:
    n: int = 9
    r_values: tuple[int, ...] = (1, 2, 3, 4, 5)
    s_values: tuple[int, ...] = (1, 2, 3, 4, 5)
    lam: float | str = "theorem"
    trials: int = 10
    delta_min: float | str = "fig2"
    seed: int = 0
    spike_mode: str = "exact"
    points_per_axis: int | None = None
    peak_tol: float = 1e-2
    sat_tol: float = 1e-3
    amp_tol: float = 1e-6
    max_failure_fraction: float = 1.0
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        object.__setattr__(self, "r_values", parse_range(self.r_values))
        object.__setattr__(self, "s_values", parse_range(self.s_values))
        self.validate()

    def validate(self) -> None:
        try:
            check_odd(self.n)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if not self.r_values or not self.s_values:
            raise ConfigError("r and s ranges must be nonempty")
        if min(self.r_values) < 0 or min(self.s_values) < 0:
            raise ConfigError("r and s must be nonnegative")
        if self.spike_mode not in ("exact", "bernoulli"):
            raise ConfigError(f"unknown spike mode {self.spike_mode!r}")
        self.resolved_lambda()
        self.resolved_delta()

    def resolved_lambda(self) -> float:
        if self.lam == "theorem":
            return 1.0 / self.n
        try:
            lam = float(self.lam)
        except (TypeError, ValueError):
            raise ConfigError(f"lambda must be a number or 'theorem', got {self.lam!r}") from None
        if lam <= 0:
            raise ConfigError("lambda must be positive")
        return lam

    def resolved_delta(self) -> float:
        if self.delta_min == "fig2":
            return 3.0 / (self.n - 1) if self.n > 1 else 0.0
        if self.delta_min == "theorem":
            return 3.36 / (self.n - 1) if self.n > 1 else 0.0
        try:
            return float(self.delta_min)
        except (TypeError, ValueError):
            raise ConfigError(
                f"delta_min must be a number, 'fig2' or 'theorem', got {self.delta_min!r}"
            ) from None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["r_values"] = list(self.r_values)
        d["s_values"] = list(self.s_values)
        return d

    @classmethod
    def from_mapping(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        solver = data.pop("solver", None)
        known = set(cls.__dataclass_fields__) - {"solver"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown experiment options: {sorted(unknown)}")
        try:
            opts = SolverOptions.from_mapping(solver) if solver else SolverOptions()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        return cls(solver=opts, **data)


def trial_rng(seed: int, r: int, s: int, trial_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, r, s, trial_index]))


@dataclass
class TrialRecord:
    config: dict
    r: int
    s: int
    trial_index: int
    instance: dict
    result: dict
    solver: dict
    success: bool
    wall_time: float = 0.0

    def to_json(self) -> str:
        """Deterministic serialization; wall time is kept out of the record."""
        d = asdict(self)
        d.pop("wall_time")
        return json.dumps(d, sort_keys=True)


def _solver_summary(sol) -> dict:
    keep = ("psd_residual", "trace_residuals_max", "linf_violation", "iterations",
            "primal_residual", "dual_residual")
    out = {k: sol.diagnostics[k] for k in keep}
    out["converged"] = sol.converged
    out["objective"] = sol.objective
    return out


def run_single_trial(config: ExperimentConfig, r: int, s: int, trial_index: int) -> TrialRecord:
    """Sample an instance, solve the dual SDP, recover supports and score."""
    n = config.n
    if r + s > n * n:
        raise ConfigError(f"r + s = {r + s} exceeds n^2 = {n * n}")
    t0 = time.perf_counter()
    lam = config.resolved_lambda()
    rng = trial_rng(config.seed, r, s, trial_index)
    atoms = sample_sources(r, n, config.resolved_delta(), rng)
    spikes = sample_spikes(s, n, rng, mode=config.spike_mode)
    inst = Instance(n, atoms, spikes)
    x = synthesize(atoms, n)
    y = observe(x, spikes)

    sol = solve_dual_sdp(SdpProblem(y, lam), config.solver)
    try:
        sources, spikes_hat = recover(y, sol.c, lam, config.points_per_axis,
                                      config.peak_tol, config.sat_tol, config.amp_tol)
        result = score(x, sources, spikes_hat).to_record()
    except DegenerateFitError as exc:
        result = {"sources": [], "spikes": [], "nmse": None, "success": False,
                  "error": str(exc)}
    return TrialRecord(
        config=config.to_dict(),
        r=r, s=s, trial_index=trial_index,
        instance=json.loads(inst.to_json()),
        result=result,
        solver=_solver_summary(sol),
        success=bool(result["success"] and sol.converged),
        wall_time=time.perf_counter() - t0,
    )


@dataclass
class PhaseResult:
    config: ExperimentConfig
    records: list[TrialRecord]
    table: dict[tuple[int, int], float]

    @property
    def nonconverged_fraction(self) -> float:
        if not self.records:
            return 0.0
        return sum(not rec.solver["converged"] for rec in self.records) / len(self.records)


def _run_task(args):
    config, r, s, t = args
    return run_single_trial(config, r, s, t)


def run_phase_transition(config: ExperimentConfig, jobs: int = 1) -> PhaseResult:
    """Success rate for every (r, s) cell over ``config.trials`` trials."""
    for r in config.r_values:
        for s in config.s_values:
            if r + s > config.n ** 2:
                raise ConfigError(f"cell (r={r}, s={s}) exceeds n^2 = {config.n ** 2}")
    tasks = [(config, r, s, t) for r in config.r_values for s in config.s_values
             for t in range(config.trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_run_task, tasks))
    else:
        records = []
        for task in tasks:
            rec = _run_task(task)
            log.info("r=%d s=%d trial=%d success=%s nmse=%s (%.1fs)", rec.r, rec.s,
                     rec.trial_index, rec.success, rec.result["nmse"], rec.wall_time)
            records.append(rec)
    table = {}
    for r in config.r_values:
        for s in config.s_values:
            cell = [rec.success for rec in records if rec.r == r and rec.s == s]
            table[(r, s)] = sum(cell) / len(cell)
    return PhaseResult(config, records, table)


def monotonicity_violations(table: dict[tuple[int, int], float], trials: int) -> list[str]:
    """Steps where the success rate rises by more than 2 / trials along r or s."""
    slack = 2.0 / trials
    rs = sorted({k[0] for k in table})
    ss = sorted({k[1] for k in table})
    out = []
    for s in ss:
        for a, b in zip(rs, rs[1:]):
            if table[(b, s)] > table[(a, s)] + slack:
                out.append(f"s={s}: r {a}->{b} rate {table[(a, s)]:.3f}->{table[(b, s)]:.3f}")
    for r in rs:
        for a, b in zip(ss, ss[1:]):
            if table[(r, b)] > table[(r, a)] + slack:
                out.append(f"r={r}: s {a}->{b} rate {table[(r, a)]:.3f}->{table[(r, b)]:.3f}")
    for v in out:
        log.warning("monotonicity violation: %s", v)
    return out


def gray_level(rate: float) -> int:
    """Rate in [0, 1] to an 8-bit level, rounding half up."""
    return int(np.floor(rate * 255 + 0.5))


def table_to_csv(table: dict[tuple[int, int], float]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["r", "s", "success_rate"])
    for (r, s) in sorted(table):
        w.writerow([r, s, f"{table[(r, s)]:.3f}"])
    return buf.getvalue()


def csv_to_table(text: str) -> dict[tuple[int, int], float]:
    rows = list(csv.DictReader(io.StringIO(text)))
    return {(int(row["r"]), int(row["s"])): float(row["success_rate"]) for row in rows}


def table_to_pgm(table: dict[tuple[int, int], float]) -> bytes:
    """Binary graymap: one pixel per cell, rows = s ascending, columns = r ascending."""
    rs = sorted({k[0] for k in table})
    ss = sorted({k[1] for k in table})
    pix = bytes(gray_level(table[(r, s)]) for s in ss for r in rs)
    return f"P5\n{len(rs)} {len(ss)}\n255\n".encode("ascii") + pix


def read_pgm(data: bytes) -> np.ndarray:
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary graymap")
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


ARTIFACTS = ("manifest.json", "success.csv", "success.pgm", "trials.jsonl", "timings.json")


def emit_artifacts(records: list[TrialRecord], table: dict[tuple[int, int], float],
                   directory, config: ExperimentConfig | None = None,
                   force: bool = False) -> list[Path]:
    """Write per-trial records, CSV table, graymap, manifest and timings."""
    out = Path(directory)
    if (out / "manifest.json").exists() and not force:
        raise FileExistsError(f"{out} already holds a run; pass force to overwrite")
    try:
        out.mkdir(parents=True, exist_ok=True)
        written = []
        manifest = {
            "tool": "spikylse",
            "version": __version__,
            "config": config.to_dict() if config else None,
            "seed": config.seed if config else None,
            "cells": [[r, s] for (r, s) in sorted(table)],
            "trial_seeds": [[rec.r, rec.s, rec.trial_index] for rec in records],
        }
        path = out / "manifest.json"
        path.write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
        written.append(path)
        path = out / "success.csv"
        path.write_text(table_to_csv(table))
        written.append(path)
        if records:
            path = out / "trials.jsonl"
            path.write_text("".join(rec.to_json() + "\n" for rec in records))
            written.append(path)
            path = out / "success.pgm"
            path.write_bytes(table_to_pgm(table))
            written.append(path)
            cells = {}
            for rec in records:
                cells.setdefault(f"{rec.r},{rec.s}", 0.0)
                cells[f"{rec.r},{rec.s}"] += rec.wall_time
            path = out / "timings.json"
            path.write_text(json.dumps({"per_cell_seconds": cells}, sort_keys=True, indent=1) + "\n")
            written.append(path)
    except OSError as exc:
        raise OSError(f"failed writing artifacts to {out}: {exc}") from exc
    return written


def with_overrides(config: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(config, **{k: v for k, v in kw.items() if v is not None})


def default_jobs() -> int:
    return max(1, (os.cpu_count() or 1))
