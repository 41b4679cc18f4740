import math

import numpy as np
import pytest

from siegert.channels import SpectralPoint, branch_sqrt
from siegert.continuation import parity, strip_norm_identity
from siegert.errors import BranchPoint, NotNearBic
from siegert.fields import FAR_GAP
from siegert.green import EwaldKernel
from siegert.operator import assemble, resolvent_solve
from siegert.poles import (Candidate, FluxBox, far_field_amplitudes, find_poles, normalize_bic, refine_pole,
                           residue_apply, scan_poles, strip_norm, width_from_flux)
from siegert.structures import StructureSpec

from conftest import BENCH_BIC, BENCH_KAPPA

REGION = (30.0, 38.0, -3.0, -1e-3)


def test_vacuum_has_no_candidates():
    assert scan_poles(StructureSpec(), 0.0, 0.0, REGION, grid=(6, 4)) == []


@pytest.fixture(scope="module")
def search(single_array):
    return find_poles(single_array, 0.0, 0.0, REGION, grid=(17, 7), order=8)


def test_find_poles_single_array(search):
    k = [p.kappa_n for p in search.poles]
    assert search.warnings == []
    assert any(abs(z - BENCH_KAPPA) < 1e-6 for z in k)
    assert any(abs(z - BENCH_BIC) < 1e-6 for z in k)


def test_scan_stable_under_grid_doubling(single_array, search):
    fine = find_poles(single_array, 0.0, 0.0, REGION, grid=(33, 13), order=8)
    for p in search.poles:
        assert any(abs(p.kappa_n - q.kappa_n) < 1e-8 * abs(p.kappa_n) for q in fine.poles)


def test_accepted_poles_lie_in_lower_half_plane(search):
    for p in search.poles:
        assert p.gamma >= -1e-10
        assert abs(p.lambda0 - 1) <= 1e-9


def test_defining_equation_residual(bench_pole):
    op = assemble(bench_pole.structure, 0.0, SpectralPoint(bench_pole.kappa_n, 0.0), order=10)
    E = bench_pole.state
    assert np.linalg.norm(op.A @ E - E) <= 1e-8 * np.linalg.norm(E)
    assert bench_pole.residual <= 1e-8


@pytest.mark.parametrize("order", [8, 14, 20])
def test_pole_stable_under_order(single_array, order):
    guess = BENCH_KAPPA + 0.02 - 0.01j
    ref = refine_pole(Candidate(guess, 0.0, single_array, 0.0, 0.0, 10))
    p = refine_pole(Candidate(guess, 0.0, single_array, 0.0, 0.0, order))
    assert p.iterations > 0
    assert abs(p.kappa_n - ref.kappa_n) <= 1e-6 * abs(ref.kappa_n)


def test_residue_matches_contour_integral(bench_pole):
    s = bench_pole.structure
    rhs = np.random.default_rng(0).normal(size=bench_pole.state.size) + 0j
    d = 1e-3 * abs(bench_pole.kappa_n)
    acc = 0
    n = 16
    for j in range(n):
        z = d * np.exp(2j * math.pi * (j + 0.5) / n)
        op = assemble(s, 0.0, SpectralPoint(bench_pole.kappa_n + z, 0.0), order=10)
        acc = acc + z * resolvent_solve(op, rhs) / n
    ref = residue_apply(bench_pole, rhs)
    assert np.linalg.norm(acc - ref) <= 1e-4 * np.linalg.norm(ref)


def test_derivative_of_eigenvalue_nonzero(search):
    for p in search.poles:
        assert abs(p.d_lambda_d_kappa) >= 1e-8


def test_far_field_reconstruction(bench_pole):
    disc = bench_pole.disc
    amps = far_field_amplitudes(bench_pole, range(-4, 5))
    x, z = 0.17, 0.3 + 0.5
    series = sum(up * np.exp(2j * math.pi * m * x + 1j * branch_sqrt(bench_pole.kappa_n - (2 * math.pi * m) ** 2) * z)
                 for m, (up, _) in amps.items())
    H = EwaldKernel(0.0, x - disc.nodes[:, 0], z - disc.nodes[:, 1]).full(bench_pole.kappa_n)
    direct = np.sum(H * disc.weights * disc.contrast * bench_pole.state)
    assert abs(series - direct) <= 1e-6 * abs(direct)


def test_far_field_rejects_threshold(bench_bic_pole):
    p = bench_bic_pole
    with pytest.raises(BranchPoint):
        far_field_amplitudes(type(p)(**{**p.__dict__, "kappa_n": complex((2 * math.pi) ** 2)}), [1])


def test_parity_of_symmetric_double_array(double_start):
    sign = parity(double_start)
    assert sign in (-1, 1)
    for m, (up, down) in far_field_amplitudes(double_start, range(-2, 3)).items():
        assert abs(up - sign * down) <= 1e-6 * max(abs(up), 1e-12)


def test_bloch_property(single_array):
    p = refine_pole(Candidate(BENCH_KAPPA, 0.0, single_array, 0.0, 0.3, 8))
    fe = p.field()
    x = np.array([0.1, 0.45, 0.2, 0.7])
    z = np.array([0.05, 0.1, 0.9, -0.6])
    assert np.allclose(fe(x + 1, z), np.exp(0.3j) * fe(x, z), rtol=1e-10, atol=0)


def test_closed_channels_decay(bench_pole):
    fe = bench_pole.field()
    up0 = far_field_amplitudes(bench_pole, [0])[0][0]
    q0 = branch_sqrt(bench_pole.kappa_n)
    q1 = branch_sqrt(bench_pole.kappa_n - (2 * math.pi) ** 2)
    z = np.array([0.8, 1.3])
    x = np.zeros(2)
    rest = fe(x, z) - up0 * np.exp(1j * q0 * z)
    assert abs(rest[1] / rest[0]) == pytest.approx(abs(np.exp(1j * q1 * 0.5)), rel=0.05)


def test_representations_agree_across_switch(single_array):
    # the mismatch is set by the density discretization: 3e-5 at order 10, 3e-8 at order 20
    fe = refine_pole(Candidate(BENCH_KAPPA, 0.0, single_array, 0.0, 0.0, 20)).field()
    z0 = 0.3 + FAR_GAP
    x = np.array([0.3, 0.3])
    inner, outer = fe(x, np.array([z0 - 1e-9, z0 + 1e-9]))
    assert abs(inner - outer) <= 1e-6 * abs(outer)


def test_width_from_flux(bench_pole):
    assert abs(width_from_flux(bench_pole) - bench_pole.gamma) <= 1e-2 * bench_pole.gamma
    wide = width_from_flux(bench_pole, FluxBox(-0.9, 0.9))
    assert abs(wide - bench_pole.gamma) <= 1e-2 * bench_pole.gamma


def test_guided_mode_below_continuum(single_array):
    res = find_poles(single_array, 0.0, 3.0, (4.6, 8.99, -0.05, 0.0), grid=(12, 4), order=8)
    assert len(res.poles) == 1
    p = res.poles[0]
    assert p.kappa_n.real < 9.0 and abs(p.gamma) <= 1e-10
    for box in (None, FluxBox(-1.5, 1.5)):
        assert abs(width_from_flux(p, box)) <= 1e-12


def test_flux_box_validation():
    with pytest.raises(ValueError):
        FluxBox(1.0, -1.0)


def test_normalize_bic(frozen_bic, near_bic):
    b = frozen_bic.state
    assert abs(strip_norm(b) - 1) <= 1e-8
    # a bound state is real after removing the global phase
    assert np.max(np.abs(b.state.imag)) <= 1e-6 * np.max(np.abs(b.state))
    lhs, rhs = strip_norm_identity(frozen_bic)
    assert abs(lhs - rhs) <= 1e-2 * abs(lhs)


def test_normalize_bic_rejects_resonance(bench_pole):
    with pytest.raises(NotNearBic):
        normalize_bic(bench_pole)
