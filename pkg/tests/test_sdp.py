import itertools
import json
from pathlib import Path

import numpy as np
import pytest

from spikylse.sdp import (SdpProblem, SolverOptions, assemble_trace_constraints, bordered_block,
                          duality_gap, psd_project, solve_dual_sdp, trace_residuals)
from spikylse.signal_model import (AtomSet, Instance, SpikePattern, observe, sample_sources,
                                   sample_spikes, synthesize)
from spikylse.trig import TrigPoly2D

DATA = Path(__file__).parent / "data" / "sdp_regression.json"


def _toeplitz_selector(n, d):
    a = np.arange(n)
    return (a[:, None] - a[None, :] == d).astype(int)


def _dense_masks(n):
    """Theta_{d2} (x) Theta_{d1} for every offset, deduplicated up to transposition."""
    masks = {}
    for d1, d2 in itertools.product(range(-(n - 1), n), repeat=2):
        mask = np.kron(_toeplitz_selector(n, d2), _toeplitz_selector(n, d1))
        key = min(mask.tobytes(), mask.T.copy().tobytes())
        masks.setdefault(key, ((d1, d2), mask))
    return masks


def test_trace_constraints_against_dense_oracle():
    n = 3
    tcs = assemble_trace_constraints(n)
    masks = _dense_masks(n)
    assert len(tcs) == len(masks) == 13
    for tc in tcs:
        mask = np.zeros((n * n, n * n), dtype=int)
        mask[tc.rows, tc.cols] = 1
        key = min(mask.tobytes(), mask.T.copy().tobytes())
        assert key in masks
    by_offset = {tc.offset: tc for tc in tcs}
    main = by_offset[(0, 0)]
    assert main.target == 1 and len(main.rows) == 9 and np.array_equal(main.rows, main.cols)
    corner = by_offset[(2, 2)]
    assert corner.target == 0 and len(corner.rows) == 1
    assert all(tc.target == 0 for tc in tcs if tc.offset != (0, 0))


@pytest.mark.parametrize("n", [5, 7])
def test_trace_constraint_count(n):
    assert len(assemble_trace_constraints(n)) == ((2 * n - 1) ** 2 + 1) // 2


def test_trace_constraints_reject_even_n():
    with pytest.raises(ValueError):
        assemble_trace_constraints(4)


def test_psd_project_examples():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((6, 6)) + 1j * rng.standard_normal((6, 6))
    p = a @ a.conj().T
    assert np.abs(psd_project(p) - p).max() <= 1e-12
    assert np.allclose(psd_project(np.diag([1.0, -2.0])), np.diag([1.0, 0.0]))
    with pytest.raises(ValueError):
        psd_project(np.array([[0, 1], [0, 0]], dtype=complex))


def test_psd_project_is_nearest():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((20, 20)) + 1j * rng.standard_normal((20, 20))
    h = (a + a.conj().T) / 2
    w, v = np.linalg.eigh(h)
    oracle = (v * np.maximum(w, 0)) @ v.conj().T
    got = psd_project(h)
    assert np.abs(got - oracle).max() <= 1e-12
    assert np.linalg.eigvalsh(got).min() >= -1e-12
    d0 = np.linalg.norm(h - got)
    for _ in range(20):
        b = rng.standard_normal((20, 3)) + 1j * rng.standard_normal((20, 3))
        other = got + 0.1 * b @ b.conj().T
        assert np.linalg.norm(h - other) >= d0


def _solve(y, lam=None, **kw):
    return solve_dual_sdp(SdpProblem(y, lam), SolverOptions(**kw))


def test_problem_validation():
    with pytest.raises(ValueError):
        SdpProblem(np.zeros((4, 4)))
    with pytest.raises(ValueError):
        SdpProblem(np.zeros((5, 5)), lam=0)
    assert SdpProblem(np.zeros((5, 5))).lam == pytest.approx(0.2)


def test_zero_observations():
    sol = _solve(np.zeros((5, 5)))
    assert sol.converged
    assert abs(sol.objective) <= 1e-9
    assert np.abs(sol.c).max() <= 1e-6


def _check_feasible(sol, n):
    lam = sol.lam
    opts = SolverOptions()
    eig = np.linalg.eigvalsh(bordered_block(sol.q0, sol.c)).min()
    d = sol.diagnostics
    assert eig >= -d["psd_residual"] - 1e-12
    assert trace_residuals(sol.q0, n).max() <= d["trace_residuals_max"] + 1e-15
    assert np.abs(sol.c).max() <= lam + d["linf_violation"] + 1e-15
    if sol.converged:
        assert d["psd_residual"] <= opts.tol_psd
        assert d["trace_residuals_max"] <= opts.tol_eq
        assert d["linf_violation"] <= opts.tol_ineq
    assert np.abs(TrigPoly2D(sol.c).grid(512)).max() <= 1 + 1e-3


def test_single_atom():
    n = 5
    atoms = AtomSet([[0.3125, 0.6]], [1.3 * np.exp(0.9j)])
    y = synthesize(atoms, n)
    sol = _solve(y, 1 / n)
    assert sol.converged
    assert sol.objective == pytest.approx(1.3, rel=1e-6)
    _check_feasible(sol, n)
    poly = TrigPoly2D(sol.c)
    assert abs(poly(atoms.freqs)[0]) == pytest.approx(1.0, abs=1e-4)
    grid = np.abs(poly.grid(256))
    assert grid.max() <= 1 + 1e-3
    gap = duality_gap(y, sol, atoms, SpikePattern.empty(n))
    assert gap["relative"] <= 1e-5


def test_single_spike():
    n, lam = 5, 0.2
    z = SpikePattern(n, [[1, -1]], [0.8 - 0.6j])
    y = observe(np.zeros((n, n)), z)
    sol = _solve(y, lam)
    assert sol.converged
    assert sol.objective == pytest.approx(lam * 1.0, rel=1e-6)
    assert abs(sol.c[3, 1]) == pytest.approx(lam, rel=1e-6)
    _check_feasible(sol, n)


def test_random_instances_feasible_and_tight():
    rng = np.random.default_rng(3)
    for n, r, s in [(5, 2, 1), (7, 1, 2)]:
        atoms = sample_sources(r, n, 0.3, rng)
        spikes = sample_spikes(s, n, rng)
        y = observe(synthesize(atoms, n), spikes)
        sol = _solve(y, 1 / n)
        assert sol.converged
        _check_feasible(sol, n)
        assert duality_gap(y, sol, atoms, spikes)["relative"] <= 1e-5


def test_residual_history_decreases_over_windows():
    rng = np.random.default_rng(4)
    n = 7
    y = observe(synthesize(sample_sources(2, n, 0.3, rng), n), sample_spikes(2, n, rng))
    sol = _solve(y, 1 / n)
    h = np.array(sol.diagnostics["history"])
    merit = h[:, 1] + h[:, 2]
    W = 8
    blocks = [merit[i:i + W].max() for i in range(0, len(merit) - W + 1, W)]
    assert all(b <= a for a, b in zip(blocks, blocks[1:]))


def test_iteration_cap_flags_not_converged():
    rng = np.random.default_rng(5)
    n = 5
    y = synthesize(sample_sources(2, n, 0.3, rng), n)
    sol = _solve(y, 1 / n, max_iter=50)
    assert not sol.converged
    assert sol.diagnostics["iterations"] == 50
    assert np.isfinite(sol.objective)


def test_solver_determinism_and_seeded_start():
    rng = np.random.default_rng(6)
    y = synthesize(sample_sources(1, 5, 0.3, rng), 5)
    a, b = _solve(y), _solve(y)
    assert np.array_equal(a.c, b.c)
    c = _solve(y, seed=7)
    assert c.converged and c.objective == pytest.approx(a.objective, rel=1e-6)


def test_solution_record_serializes():
    sol = _solve(synthesize(AtomSet([[0.1, 0.2]], [1.0]), 3))
    rec = json.loads(json.dumps(sol.to_record()))
    assert rec["n"] == 3 and len(rec["c"]) == 9


def test_duality_gap_examples():
    n, lam = 5, 0.2
    atoms = AtomSet([[0.3, 0.6]], [1.2 * np.exp(0.4j)])
    y = synthesize(atoms, n)
    sol = _solve(y, lam)
    base = duality_gap(y, sol, atoms, SpikePattern.empty(n))
    assert base["relative"] <= 1e-5
    # perturbation probe: primal-infeasible, so only with the check disabled
    bumped = AtomSet(atoms.freqs, atoms.amps * 1.01)
    with pytest.raises(ValueError):
        duality_gap(y, sol, bumped, SpikePattern.empty(n))
    probe = duality_gap(y, sol, bumped, SpikePattern.empty(n), check_feasible=False)
    assert probe["gap"] - base["gap"] == pytest.approx(0.012, rel=1e-9)
    # trivial demixing: everything is a spike
    m = (n - 1) // 2
    idx = np.argwhere(np.ones((n, n), dtype=bool)) - m
    all_spikes = SpikePattern(n, idx, y[idx[:, 0] + m, idx[:, 1] + m])
    triv = duality_gap(y, sol, AtomSet.empty(), all_spikes)
    assert triv["gap"] == pytest.approx(lam * np.abs(y).sum() - sol.objective)
    assert triv["gap"] >= 0


def _regression_set():
    return json.loads(DATA.read_text())


@pytest.mark.parametrize("entry", _regression_set()[:3], ids=lambda e: f"n{e['instance']['n']}")
def test_regression_small(entry):
    inst = Instance.from_json(json.dumps(entry["instance"]))
    sol = _solve(inst.y, entry["lambda"])
    assert sol.converged
    ref = entry["reference_objective"]
    assert abs(sol.objective - ref) <= 1e-5 * abs(ref)
