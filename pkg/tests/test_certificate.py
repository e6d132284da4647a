import json

import numpy as np
import pytest

from spikylse.certificate import (SignPattern, build_b, build_E, build_R, eval_Q,
                                  eval_Q_kernel_form, solve_certificate, validate_certificate,
                                  w_vector, w_vector_from_b)
from spikylse.errors import ConstructionFailedError
from spikylse.kernels import kappa, kernel_eval_2d, triple_kernel_coeffs
from spikylse.signal_model import sample_sources, sample_spikes


def _atoms(m, r, sep, seed):
    return sample_sources(r, 2 * m + 1, sep, np.random.default_rng(seed)).freqs


@pytest.fixture(scope="module")
def det_cert():
    m = 50
    f = _atoms(m, 3, 3.36 / (2 * m), 0)
    signs = SignPattern.random(3, 0, np.random.default_rng(1))
    return solve_certificate(f, None, signs, 2 * m + 1)


@pytest.fixture(scope="module")
def rand_cert():
    m = 30
    n = 2 * m + 1
    rng = np.random.default_rng(2)
    f = _atoms(m, 2, 3.36 / (2 * m), 3)
    omega = sample_spikes(5, n, rng).support
    return solve_certificate(f, omega, SignPattern.random(2, 5, rng), n)


def test_build_b_examples():
    f = np.array([[0.1, 0.2], [0.7, 0.35]])
    b = build_b([0, 0], f, 0.1)
    assert np.allclose(b[:2], 1) and np.allclose(b[2:], 0)
    b = build_b([1, 1], f, 0.1)
    e = np.exp(-2j * np.pi * (f[:, 0] + f[:, 1]))
    want = [e[0], e[1], -0.2j * np.pi * e[0], -0.2j * np.pi * e[1],
            -0.2j * np.pi * e[0], -0.2j * np.pi * e[1]]
    assert np.allclose(b, want, atol=1e-15)
    with pytest.raises(ValueError):
        build_b([0, 0], np.zeros((0, 2)), 0.1)


def test_b_norm_bound():
    m, r = 2000, 10
    co = triple_kernel_coeffs(m)
    rng = np.random.default_rng(4)
    ks = rng.integers(-m, m + 1, (1000, 2))
    sq = np.sum(np.abs(build_b(ks, rng.random((r, 2)), kappa(co))) ** 2, axis=1)
    assert sq.max() <= 21 * r


def test_single_atom_E_is_identity():
    co = triple_kernel_coeffs(30)
    assert np.allclose(build_E([[0.3, 0.8]], co, kappa(co)), np.eye(3), atol=1e-12)


def _rank_one_sum(freqs, co, kap, omega=()):
    m = co.m
    k1, k2 = np.meshgrid(co.k, co.k, indexing="ij")
    kk = np.stack([k1.ravel(), k2.ravel()], 1)
    drop = {tuple(k) for k in np.asarray(omega).reshape(-1, 2)}
    keep = np.array([tuple(k) not in drop for k in kk])
    kk = kk[keep]
    w = co.c[kk[:, 0] + m] * co.c[kk[:, 1] + m]
    B = build_b(kk, freqs, kap)
    return (B.T * w) @ B.conj()


@pytest.mark.parametrize("m,r", [(10, 1), (20, 2), (30, 3)])
def test_rank_one_identity_full_grid(m, r):
    co = triple_kernel_coeffs(m)
    kap = kappa(co)
    f = np.random.default_rng(m).random((r, 2))
    assert np.linalg.norm(build_E(f, co, kap) - _rank_one_sum(f, co, kap)) <= 1e-8


def test_rank_one_identity_restricted():
    m, n = 30, 61
    co = triple_kernel_coeffs(m)
    kap = kappa(co)
    rng = np.random.default_rng(5)
    f = rng.random((2, 2))
    omega = sample_spikes(10, n, rng).support
    E = build_E(f, co, kap, omega)
    assert np.linalg.norm(E - _rank_one_sum(f, co, kap, omega)) <= 1e-8
    removed = _rank_one_sum(f, co, kap) - _rank_one_sum(f, co, kap, omega)
    assert np.linalg.norm(build_E(f, co, kap) - removed - E) <= 1e-8


def test_build_R():
    n = 9
    assert np.all(build_R(None, [], n).coeffs == 0)
    R = build_R([[0, 0]], [1.0], n)
    f = np.random.default_rng(6).random((20, 2))
    assert np.allclose(R(f), 1 / 9)
    rng = np.random.default_rng(7)
    om = sample_spikes(5, n, rng).support
    rs = np.exp(2j * np.pi * rng.random(5))
    R = build_R(om, rs, n)
    f = rng.random((100, 2))
    direct = sum(r * np.exp(-2j * np.pi * f @ k) for r, k in zip(rs, om)) / n
    assert np.abs(R(f) - direct).max() <= 1e-13
    assert np.allclose(build_R(om, rs, n)(f, 1, 2),
                       sum(r * (-2j * np.pi * k[0]) * (-2j * np.pi * k[1]) ** 2
                           * np.exp(-2j * np.pi * f @ k) for r, k in zip(rs, om)) / n)


def test_single_atom_certificate_is_the_kernel():
    m = 20
    cert = solve_certificate([[0.0, 0.0]], None, SignPattern([1.0], []), 2 * m + 1)
    assert np.allclose(cert.alpha, 1) and np.allclose(cert.beta1, 0) and np.allclose(cert.beta2, 0)
    f = np.random.default_rng(8).random((50, 2))
    assert np.allclose(eval_Q(cert, f), kernel_eval_2d(cert.kernel, f), atol=1e-13)


def test_deterministic_interpolation(det_cert):
    f = det_cert.freqs
    assert np.abs(eval_Q(det_cert, f) - det_cert.signs.h).max() <= 1e-10
    assert np.abs(eval_Q(det_cert, f, 1, 0)).max() <= 1e-8
    assert np.abs(eval_Q(det_cert, f, 0, 1)).max() <= 1e-8


def test_random_certificate_conditions(rand_cert):
    m = rand_cert.kernel.m
    om = rand_cert.omega
    vals = rand_cert.coeffs[om[:, 0] + m, om[:, 1] + m]
    assert np.array_equal(vals, rand_cert.lam * rand_cert.signs.rsign)
    assert np.allclose(vals / rand_cert.lam, rand_cert.signs.rsign, rtol=0, atol=1e-15)
    assert np.abs(eval_Q(rand_cert, rand_cert.freqs) - rand_cert.signs.h).max() <= 1e-10
    assert np.abs(eval_Q(rand_cert, rand_cert.freqs, 1, 0)).max() <= 1e-8


@pytest.mark.parametrize("which", ["det_cert", "rand_cert"])
def test_coefficient_and_kernel_forms_agree(which, request):
    cert = request.getfixturevalue(which)
    f = np.random.default_rng(9).random((100, 2))
    for i1, i2 in [(0, 0), (1, 0), (0, 1), (1, 1)]:
        a, b = eval_Q(cert, f, i1, i2), eval_Q_kernel_form(cert, f, i1, i2)
        assert np.abs(a - b).max() <= 1e-9 * (2 * np.pi * cert.kernel.m) ** (i1 + i2)


@pytest.mark.parametrize("which", ["det_cert", "rand_cert"])
def test_w_vector_expansion(which, request):
    cert = request.getfixturevalue(which)
    rng = np.random.default_rng(10)
    for f in rng.random((5, 2)):
        for i1, i2 in [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1)]:
            w = w_vector(cert, f, i1, i2)
            assert np.allclose(w, w_vector_from_b(cert, f, i1, i2), atol=1e-12)
            assert np.linalg.norm(w) <= np.abs(w).sum()
            # kappa^{i1+i2} Q_aux^{i1 i2}(f) = w . u
            qa = eval_Q(cert, f, i1, i2) - build_R(cert.omega, cert.signs.rsign, cert.n,
                                                   cert.lam)(f, i1, i2)
            assert abs(cert.kappa ** (i1 + i2) * qa - w @ cert.u) <= 1e-10


def test_global_phase_equivariance(det_cert):
    ph = np.exp(0.7j)
    rotated = solve_certificate(det_cert.freqs, None, SignPattern(ph * det_cert.signs.h, []),
                                det_cert.n)
    f = np.random.default_rng(11).random((50, 2))
    assert np.allclose(eval_Q(rotated, f), ph * eval_Q(det_cert, f), atol=1e-12)


def test_duplicate_atoms_fail_loudly():
    with pytest.raises(ConstructionFailedError):
        solve_certificate([[0.2, 0.2], [0.2, 0.2]], None, SignPattern([1, 1], []), 41)


def test_sign_pattern_sizes_checked():
    with pytest.raises(ValueError):
        solve_certificate([[0.2, 0.2]], None, SignPattern([1, 1], []), 41)
    with pytest.raises(ValueError):
        SignPattern([2.0], [])


def _window_oracle(cert, L=4096, half_width=0.1):
    """Max |Q| on the L-point grid near each atom, outside the near region.

    Rows in the window are evaluated exactly; each row is a 1-D transform in f2.
    """
    m = cert.kernel.m
    rad = 0.09 / m
    k = np.arange(-m, m + 1)
    best = 0.0
    for fi in cert.freqs:
        rows = (np.round(fi[0] * L) + np.arange(-int(half_width * L), int(half_width * L) + 1)) % L
        f1 = rows / L
        part = np.exp(-2j * np.pi * np.outer(f1, k)) @ cert.coeffs  # (rows, k2)
        buf = np.zeros((len(f1), L), dtype=complex)
        buf[:, k % L] = part
        vals = np.abs(np.fft.fft(buf, axis=1))
        f2 = np.arange(L) / L
        d1 = np.abs((f1 - fi[0] + 0.5) % 1 - 0.5)[:, None]
        d2 = np.abs((f2 - fi[1] + 0.5) % 1 - 0.5)[None, :]
        near = np.zeros_like(vals, dtype=bool)
        for fj in cert.freqs:
            e1 = np.abs((f1 - fj[0] + 0.5) % 1 - 0.5)[:, None]
            e2 = np.abs((f2 - fj[1] + 0.5) % 1 - 0.5)[None, :]
            near |= (e1 <= rad) & (e2 <= rad)
        win = (d1 <= half_width) & (d2 <= half_width) & ~near
        best = max(best, float(vals[win].max()))
    return best


def test_validation_of_deterministic_certificate(det_cert):
    rep = validate_certificate(det_cert)
    assert rep.all_pass, rep.to_json()
    assert rep.max_abs_offsupport < 1
    assert rep.spike_residual == 0 and rep.pass_spike_signs
    assert rep.offsupport_coeff_max < rep.lam
    oracle = _window_oracle(det_cert)
    assert oracle < 1
    assert oracle <= rep.far_refined_max + 1e-6
    rec = json.loads(rep.to_json())
    assert rec["all_pass"] and rec["grid_points_per_axis"] == 1024


def test_validation_of_random_certificate(rand_cert):
    rep = validate_certificate(rand_cert, grid_points_per_axis=512)
    assert rep.all_pass, rep.to_json()


def test_close_atoms_reported_not_raised():
    m = 50
    f = np.array([[0.3, 0.4], [0.3 + 0.3 / m, 0.4]])
    cert = solve_certificate(f, None, SignPattern([1, -1], []), 2 * m + 1)
    rep = validate_certificate(cert, grid_points_per_axis=256)
    assert not rep.pass_bound
    assert rep.max_abs_offsupport >= 1


def test_validation_grid_minimum(det_cert):
    with pytest.raises(ValueError):
        validate_certificate(det_cert, grid_points_per_axis=32)
