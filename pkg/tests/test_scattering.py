import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from siegert.continuation import _strip_normalized, sample_near_bic
from siegert.errors import OutOfRange, PoorFit
from siegert.poles import Candidate, refine_pole
from siegert.scattering import (amplitude_box, background_field, fit_lorentzian, lorentzian, residue_amplitude,
                                solve_plane_wave, spectrum)
from siegert.structures import Disk, Inclusion, StructureSpec

from conftest import BENCH_KAPPA

VACUUM = StructureSpec((Inclusion(Disk(0.5, 0.0, 0.2), 1.0),))


def test_vacuum_is_transparent():
    sol = solve_plane_wave(VACUUM, 0.0, 3.0, 0.4)
    assert sol.T == 1.0 and sol.R == 0.0
    assert sol.flux_deficit == 0.0


def test_evanescent_incidence_below_continuum(single_array):
    with pytest.raises(OutOfRange):
        solve_plane_wave(single_array, 0.0, 2.0, 3.0, order=8)
    sol = solve_plane_wave(single_array, 0.0, 2.0, 3.0, order=8, allow_evanescent=True)
    assert math.isnan(sol.flux_deficit)
    assert np.all(np.isfinite(sol.total_field))


def test_nonpositive_k_rejected(single_array):
    with pytest.raises(OutOfRange):
        solve_plane_wave(single_array, 0.0, 0.0, 0.0)


@given(st.floats(0.5, 6.0))
@settings(max_examples=6, deadline=None)
def test_energy_conservation(single_array, k):
    sol = solve_plane_wave(single_array, 0.0, k, 0.2, order=8, exclusion=1e-4)
    assert sol.flux_deficit <= 1e-6
    assert 0.0 <= sol.T <= 1.0 + 1e-6 and 0.0 <= sol.R <= 1.0 + 1e-6


def test_spectrum_rejects_threshold_crossing(single_array):
    with pytest.raises(OutOfRange):
        spectrum(single_array, 0.0, [6.0, 6.4], 0.0)
    with pytest.raises(OutOfRange):
        spectrum(single_array, 0.0, [3.0, 2.0], 0.0)


def test_fit_recovers_synthetic_intensity():
    kap = np.linspace(9.0, 11.0, 81)
    truth = (10.1, 0.15, 0.8, 0.1, 0.02)
    fit = fit_lorentzian((kap, lorentzian(kap, *truth)), model="intensity")
    assert abs(fit.kappa_n - truth[0]) <= 1e-6 * truth[0]
    assert abs(fit.gamma - truth[1]) <= 1e-6 * truth[1]


def test_fit_recovers_synthetic_amplitude():
    kap = np.linspace(9.0, 11.0, 81)
    y = (0.3 - 0.2j) / (kap - 10.1 + 0.15j) + (0.5 + 0.1j) - 0.05j * (kap - 10.0)
    fit = fit_lorentzian((kap, y), model="amplitude")
    assert abs(fit.kappa_n - 10.1) <= 1e-6 * 10.1
    assert abs(fit.gamma - 0.15) <= 1e-6 * 0.15


def test_overlapping_doublet_is_flagged():
    kap = np.linspace(9.0, 11.0, 81)
    y = lorentzian(kap, 9.9, 0.2, 1.0, 0.0, 0.0) + lorentzian(kap, 10.25, 0.2, 0.8, 0.0, 0.0)
    with pytest.raises(PoorFit):
        fit_lorentzian((kap, y), model="intensity")


def test_too_few_samples():
    with pytest.raises(PoorFit):
        fit_lorentzian((np.arange(5.0), np.ones(5)), model="intensity")


@pytest.fixture(scope="module")
def bench8(single_array):
    return refine_pole(Candidate(BENCH_KAPPA, 0.0, single_array, 0.0, 0.0, 8))


@pytest.mark.parametrize("channel", ["t", "r"])
def test_fit_matches_pole(single_array, bench8, channel):
    p = bench8
    kap = np.linspace(p.kappa_n.real - 2.5 * p.gamma, p.kappa_n.real + 2.5 * p.gamma, 41)
    tab = spectrum(single_array, 0.0, np.sqrt(kap), 0.0, order=8)
    assert tab.errors == [] and np.nanmax(tab.flux_deficit) <= 1e-6
    fit = fit_lorentzian(tab, channel=channel)
    assert abs(fit.gamma - p.gamma) <= 0.02 * p.gamma
    assert abs(fit.kappa_n - p.kappa_n.real) <= 0.02 * p.gamma


def test_bound_state_is_not_excited(frozen_bic):
    assert abs(residue_amplitude(frozen_bic.state).a_n) <= 1e-6


@pytest.fixture(scope="module")
def near_pair(frozen_bic):
    br = sample_near_bic(frozen_bic, [1e-3, 3e-3], +1)
    return [_strip_normalized(smp.pole, frozen_bic.state) for smp in br.samples[1:]]


def test_boundary_route_matches_residue_modulus(near_pair):
    for p in near_pair:
        rec = residue_amplitude(p, 0.0)
        a, b = rec.a_n, rec.alternatives["boundary_formula"]
        # the two routes differ by complex conjugation of the phase
        assert abs(abs(a) - abs(b)) <= 0.05 * abs(a)


def test_denominator_tends_to_one(near_pair):
    dev = []
    for p in near_pair:
        z1, z2 = amplitude_box(p)
        dev.append(abs(p.field().norm_sq(z1, z2) - 1))
    assert dev[0] <= dev[1] and dev[0] <= 1e-3


def test_background_is_smooth_across_resonance(near_pair):
    p = near_pair[0]
    s = p.structure
    tot, bg = [], []
    for dk in (-20, -3, 0, 3, 20):
        sol = solve_plane_wave(s, p.h, math.sqrt(p.kappa_n.real + dk * p.gamma), 0.0, p.order)
        tot.append(np.linalg.norm(sol.total_field))
        bg.append(np.linalg.norm(background_field(sol, [p])))
    assert max(tot) / min(tot) >= 10
    assert max(bg) / min(bg) <= 1.1


def test_background_partial_fraction(near_pair):
    p = near_pair[0]
    kap = p.kappa_n.real + 50 * p.gamma
    sol = solve_plane_wave(p.structure, p.h, math.sqrt(kap), 0.0, p.order)
    diff = background_field(sol, []) - background_field(sol, [p])
    a = residue_amplitude(p, boundary=False).a_n
    assert np.allclose(diff, a * p.state / (kap - p.kappa_n), rtol=1e-12, atol=0)
    assert np.all(background_field(solve_plane_wave(VACUUM, 0.0, 3.0, 0.0), []) == 0)
