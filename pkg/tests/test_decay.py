import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from siegert.decay import (DECAY_HEADER, WavePacket, decay_constants, decay_trace, half_life, observation_window,
                           omega_direct, omega_residue, relative_deviation, transient_end)
from siegert.errors import NegativeRealPart, PoleNotEnclosed, QuadratureBudget

from conftest import BENCH_KAPPA

GAMMA = -BENCH_KAPPA.imag


@pytest.fixture(scope="module")
def packet():
    k_tilde, _ = decay_constants(BENCH_KAPPA)
    return WavePacket(k_tilde, math.sqrt(GAMMA) / 2)


def test_decay_constants_bound_state():
    assert decay_constants(1.0 + 0j) == (1.0, math.inf)


def test_decay_constants_extended_precision():
    # mpmath at 50 digits
    k_tilde, tau = decay_constants(2.0 - 0.1j)
    assert k_tilde == pytest.approx(1.41465515929679459, rel=1e-14)
    assert tau == pytest.approx(2 * k_tilde / 0.1, rel=1e-14)


def test_lifetime_narrow_limit():
    _, tau = decay_constants(4.0 - 1e-6j, c=2.0)
    assert tau == pytest.approx(2 * 2.0 / (2.0 * 1e-6), rel=1e-12)


def test_decay_constants_reject_negative_real_part():
    with pytest.raises(NegativeRealPart):
        decay_constants(-1.0 - 0.1j)
    with pytest.raises(ValueError):
        decay_constants(4.0 + 0.1j)


def test_packet_validation():
    with pytest.raises(ValueError):
        WavePacket(1.0, 0.0)
    assert WavePacket(0.1, 0.1).support == (0.0, pytest.approx(0.9))


def test_observation_window():
    t_max, _ = observation_window(2.0 - 0.1j, WavePacket(1.0, 0.1))
    assert t_max == pytest.approx(100.0, rel=1e-15)
    g = 0.01
    assert observation_window(4.0 - 1j * g, WavePacket(2.0, math.sqrt(g) / 2))[1]
    assert not observation_window(4.0 - 1j * g, WavePacket(2.0, 10 * math.sqrt(g)))[1]


@given(st.floats(0.5, 50.0), st.floats(1e-4, 1.0), st.floats(0.1, 10.0), st.floats(1e-3, 1.0))
def test_lifetime_inside_window_implies_sigma_ok(k2, gamma, k_c, sigma):
    kap = complex(k2, -gamma)
    pk = WavePacket(k_c, sigma)
    _, tau = decay_constants(kap)
    t_max, ok = observation_window(kap, pk)
    if tau <= t_max:
        assert ok


def test_initial_value_matches_adaptive_quadrature(packet):
    a, b = packet.support

    def f(k):
        return packet.amplitude(k) / (k * k - BENCH_KAPPA)

    re = integrate.quad(lambda k: f(k).real, a, b, epsabs=0, epsrel=1e-12, limit=500)[0]
    im = integrate.quad(lambda k: f(k).imag, a, b, epsabs=0, epsrel=1e-12, limit=500)[0]
    ref = math.sqrt(GAMMA) * (re + 1j * im)
    a_tilde = 0.3 - 0.7j
    val = omega_direct(BENCH_KAPPA, packet, [0.0], a_tilde=a_tilde)[0]
    assert abs(val - a_tilde * ref) <= 1e-10 * abs(ref)


def test_amplitude_vanishes_at_late_times(packet):
    early, late = np.abs(omega_direct(BENCH_KAPPA, packet, [0.0, 200.0]))
    assert late <= 1e-5 * early


def test_monochromatic_limit():
    pk = WavePacket(5.0, 1e-3)
    for t in (1.0, 5.0):
        ref = math.sqrt(GAMMA) * np.exp(-5j * t) / (25.0 - BENCH_KAPPA)
        assert abs(omega_direct(BENCH_KAPPA, pk, [t])[0] - ref) <= 1e-4 * abs(ref)


def test_residue_is_exactly_exponential(packet):
    _, tau = decay_constants(BENCH_KAPPA)
    t = np.linspace(0.0, 50.0, 11)
    slope = np.polyfit(t, np.log(np.abs(omega_residue(BENCH_KAPPA, packet, t))), 1)[0]
    assert slope == pytest.approx(-1 / tau, rel=1e-10)


def test_resonant_packet_excites_more(packet):
    off = WavePacket(packet.k_c + 5 * packet.sigma, packet.sigma)
    on = abs(omega_residue(BENCH_KAPPA, packet, [0.0])[0])
    assert on > 100 * abs(omega_residue(BENCH_KAPPA, off, [0.0])[0])


def test_agreement_after_transient(packet):
    t_max, ok = observation_window(BENCH_KAPPA, packet)
    assert ok
    t = np.linspace(transient_end(packet), 0.8 * t_max, 12)
    tr = decay_trace(BENCH_KAPPA, packet, t)
    assert np.max(relative_deviation(tr)) <= 1e-3


def test_residue_still_dominates_beyond_window(packet):
    # the Gaussian tail at k = 0 is e^{-k_c^2/(2 sigma^2)}, so the background
    # stays below roundoff here even well past t_max
    t_max, _ = observation_window(BENCH_KAPPA, packet)
    tr = decay_trace(BENCH_KAPPA, packet, np.array([1.5, 2.0, 3.0]) * t_max)
    assert np.max(relative_deviation(tr)) <= 1e-6


def test_half_life(packet):
    _, tau = decay_constants(BENCH_KAPPA)
    assert half_life(BENCH_KAPPA, packet) == pytest.approx(math.log(2) * tau, rel=0.02)


def test_bound_state_is_not_excited(packet, frozen_bic):
    t = np.linspace(0.0, 10.0, 5)
    assert np.all(omega_direct(36.0 + 0j, packet, t) == 0)
    assert np.all(omega_direct(frozen_bic.state, packet, t) == 0)
    assert np.all(omega_residue(frozen_bic.state, packet, t) == 0)


def test_pole_not_enclosed(packet):
    with pytest.raises(PoleNotEnclosed):
        omega_residue(-1.0 - 0.1j, packet, [1.0])
    with pytest.raises(NegativeRealPart):
        omega_direct(-1.0 - 0.1j, packet, [1.0])


def test_quadrature_budget(packet):
    with pytest.raises(QuadratureBudget):
        omega_direct(BENCH_KAPPA, packet, [50.0], max_panels=4)


def test_threads_do_not_change_values(packet):
    t = np.linspace(0.0, 20.0, 6)
    assert np.array_equal(omega_direct(BENCH_KAPPA, packet, t), omega_direct(BENCH_KAPPA, packet, t, threads=3))


def test_trace_rows(packet):
    tr = decay_trace(BENCH_KAPPA, packet, [0.0, 1.0])
    rows = list(tr.rows())
    assert len(rows) == 2 and len(rows[0]) == len(DECAY_HEADER)
    assert rows[1][5] == pytest.approx(abs(tr.omega_direct[1]))
