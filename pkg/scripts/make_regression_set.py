"""Build the SDP regression set with an off-the-shelf conic solver.

Each instance is sampled, solved with cvxpy (CLARABEL) on the same dual
formulation, and kept only when the reference objective agrees with the
known primal value ||d||_1 + lam ||z||_1 (so the stored instance is one with
exact recovery and a certified zero gap).

    python scripts/make_regression_set.py [--out tests/data/sdp_regression.json]
"""

import argparse
import json
import time

import cvxpy as cp
import numpy as np
import scipy.sparse as sp

from spikylse.sdp import assemble_trace_constraints
from spikylse.signal_model import Instance, sample_sources, sample_spikes

# (n, r, s, separation)
PLAN = [(3, 1, 1, 0.3), (5, 1, 2, 0.3), (5, 2, 1, 0.3), (7, 2, 2, 0.3), (7, 1, 3, 0.3)]
AGREE = 1e-7


def reference_objective(y: np.ndarray, lam: float) -> float:
    n = y.shape[0]
    N = n * n
    M = cp.Variable((N + 1, N + 1), hermitian=True)
    rows, cols, targets = [], [], []
    for i, tc in enumerate(assemble_trace_constraints(n)):
        flat = tc.rows + (N + 1) * tc.cols
        rows += [i] * len(flat)
        cols += list(flat)
        targets.append(tc.target)
    A = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(targets), (N + 1) ** 2))
    c = M[:N, N]
    cons = [M >> 0, M[N, N] == 1, A @ cp.vec(M, order="F") == np.array(targets),
            cp.abs(c) <= lam]
    prob = cp.Problem(cp.Maximize(cp.real(np.conj(y.ravel(order="F")) @ c)), cons)
    prob.solve(solver=cp.CLARABEL)
    return float(prob.value)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="tests/data/sdp_regression.json")
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    entries = []
    for n, r, s, sep in PLAN:
        lam = 1.0 / n
        for attempt in range(20):
            atoms = sample_sources(r, n, sep, rng)
            spikes = sample_spikes(s, n, rng)
            inst = Instance(n, atoms, spikes)
            primal = atoms.tv_norm() + lam * float(np.abs(spikes.values).sum())
            t0 = time.time()
            ref = reference_objective(inst.y, lam)
            rel = abs(ref - primal) / max(1.0, abs(primal))
            print(f"n={n} r={r} s={s} attempt={attempt} ref={ref:.10f} "
                  f"primal={primal:.10f} rel={rel:.2e} ({time.time() - t0:.1f}s)", flush=True)
            if rel <= AGREE:
                entries.append({"instance": json.loads(inst.to_json()), "lambda": lam,
                                "reference_objective": ref, "primal_objective": primal,
                                "reference_solver": "cvxpy/CLARABEL"})
                break
        else:
            raise SystemExit(f"no exact-recovery instance found for n={n} r={r} s={s}")
    with open(args.out, "w") as fh:
        json.dump(entries, fh, indent=1)
        fh.write("\n")


if __name__ == "__main__":
    main()
