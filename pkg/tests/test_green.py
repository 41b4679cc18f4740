import cmath
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from siegert.channels import SpectralPoint
from siegert.errors import DomainError, SlowConvergence, TailDivergence
from siegert.green import (EwaldKernel, barycentric_matrix, chebyshev_nodes, green_direct, green_gradient,
                           green_spectral, hankel_h1_0, regular_proxy)

P0 = SpectralPoint(1 + 0.5j, 0.3)
H1_AT_1 = 0.765197686557966551449717526103 + 0.0882569642156769579829267660235j  # mpmath, 30 digits


def test_hankel_at_one():
    assert abs(hankel_h1_0(1.0) - H1_AT_1) <= 1e-15


@given(st.floats(1e-8, 1e4))
@settings(max_examples=40, deadline=None)
def test_hankel_matches_mpmath(z):
    ref = complex(mpmath.hankel1(0, z))
    assert abs(hankel_h1_0(z) - ref) <= 1e-12 * abs(ref)


def test_hankel_small_argument_log_divergence():
    a, b = hankel_h1_0(1e-6), hankel_h1_0(1e-12)
    assert b.imag < a.imag < 0
    assert b.imag == pytest.approx(2 / math.pi * math.log(1e-12), rel=0.02)
    with pytest.raises(DomainError):
        hankel_h1_0(0.0)


def test_hankel_asymptotic_at_50():
    z = 50.0
    asym = math.sqrt(2 / (math.pi * z)) * cmath.exp(1j * (z - math.pi / 4))
    # leading term only: relative error ~ 1/(8z)
    corr = asym * (1 - 1j / (8 * z) - 9 / (128 * z * z))
    assert abs(hankel_h1_0(z) - corr) <= 1e-6 * abs(corr)


def test_spectral_quasi_periodic_and_even():
    h = green_spectral(P0, 0.2, 0.7).value
    assert abs(green_spectral(P0, 1.2, 0.7).value - cmath.exp(0.3j) * h) <= 1e-12 * abs(h)
    assert green_spectral(P0, 0.2, -0.7).value == h


def test_spectral_matches_direct_example():
    a = green_spectral(P0, 0.2, 0.7).value
    b = green_direct(P0, 0.2, 0.7)
    assert abs(a - b) <= 1e-8 * abs(b)


@given(st.floats(-0.5, 0.5), st.floats(0.05, 1.5), st.floats(0.5, 40), st.floats(0.1, 1.0), st.floats(-3, 3),
       st.booleans())
@settings(max_examples=25, deadline=None)
def test_spectral_matches_direct(x, z, re, im, kx, flip):
    p = SpectralPoint(complex(re, im), kx)
    z = -z if flip else z
    a = green_spectral(p, x, z).value
    b = green_direct(p, x, z)
    assert abs(a - b) <= 1e-8 * abs(b)


def test_direct_single_term_is_free_space():
    k = cmath.sqrt(P0.kappa)
    ref = 0.25j * P0.kappa * special.hankel1(0, k * math.hypot(0.2, 0.7))
    assert green_direct(P0, 0.2, 0.7, M=0) == pytest.approx(ref, rel=1e-14)


def test_direct_needs_acceleration_for_real_kappa():
    with pytest.raises(TailDivergence):
        green_direct(SpectralPoint(20.0, 0.3), 0.2, 0.7)


def test_spectral_on_axis_is_slow():
    with pytest.raises(SlowConvergence):
        green_spectral(P0, 0.2, 0.0, max_terms=2001)


def test_gradient_matches_finite_differences():
    gx, gz = green_gradient(P0, 0.2, 0.7)
    d = 1e-4
    fx = (green_spectral(P0, 0.2 + d, 0.7).value - green_spectral(P0, 0.2 - d, 0.7).value) / (2 * d)
    fz = (green_spectral(P0, 0.2, 0.7 + d).value - green_spectral(P0, 0.2, 0.7 - d).value) / (2 * d)
    assert abs(gx - fx) <= 1e-6 * abs(gx) and abs(gz - fz) <= 1e-6 * abs(gz)
    assert green_gradient(P0, 0.2, -0.7)[1] == pytest.approx(-gz, rel=1e-12)


def helmholtz_residual(p, x, z, d=1e-3):
    f = lambda a, b: green_spectral(p, a, b).value
    c = f(x, z)
    lap = (f(x + d, z) + f(x - d, z) + f(x, z + d) + f(x, z - d) - 4 * c) / d**2
    return abs(lap + p.kappa * c) / abs(p.kappa * c)


@pytest.mark.parametrize("kappa, kx", [(1 + 0.5j, 0.3), (33.7 - 0.78j, 0.0), (20.0, 1.1)])
def test_helmholtz_residual(kappa, kx):
    assert helmholtz_residual(SpectralPoint(kappa, kx), 0.23, 0.61) <= 1e-4


def test_evanescent_decay_below_continuum():
    # kappa in I_0 for kx = 1: every channel is closed
    p = SpectralPoint(0.5, 1.0)
    beta = min(cmath.sqrt(p.kappa - (1.0 + 2 * math.pi * m) ** 2).imag for m in range(-3, 4))
    for z in (2.0, 4.0, 8.0):
        v = abs(green_spectral(p, 0.3, z).value)
        assert v <= 2 * abs(p.kappa) / (2 * beta) * math.exp(-beta * z)


@pytest.mark.parametrize("kappa", [1 + 0.5j, 33.709929719519764 - 0.7844726109490588j, 150.0 + 0.3j])
def test_ewald_matches_spectral(kappa):
    pts = np.array([[0.1, 0.05], [0.7, 0.3], [-0.75, -0.6], [0.3, 0.2], [0.45, 1.2]])
    ek = EwaldKernel(0.2, pts[:, 0], pts[:, 1])
    full = ek.full(kappa)
    reg = ek.regular(kappa)
    k = cmath.sqrt(kappa)
    for (x, z), f, r in zip(pts, full, reg):
        ref = green_spectral(SpectralPoint(kappa, 0.2), x, z).value
        assert abs(f - ref) <= 1e-10 * abs(ref)
        h0 = 0.25j * kappa * special.hankel1(0, k * math.hypot(x, z))
        assert abs(r - (ref - h0)) <= 1e-9 * abs(ref)


def test_ewald_regular_is_continuous_at_origin():
    kappa = 12.0 + 0.4j
    d = np.array([1e-4, 1e-6])
    v0 = EwaldKernel(0.3, np.zeros(1), np.zeros(1)).regular(kappa)[0]
    vx = EwaldKernel(0.3, d, np.zeros(2)).regular(kappa)
    vz = EwaldKernel(0.3, np.zeros(2), d).regular(kappa)
    # differences shrink linearly with the offset
    for v in (vx, vz):
        diff = np.abs(v - v0)
        assert diff[1] <= 2e-2 * diff[0] + 1e-12


def test_barycentric_reproduces_polynomials():
    xn = chebyshev_nodes(17, 0.8)
    t = np.linspace(-0.8, 0.8, 13)
    f = lambda x: 3 * x**7 - x**3 + 0.5
    assert np.max(np.abs(barycentric_matrix(xn, t) @ f(xn) - f(t))) <= 1e-13


@pytest.mark.parametrize("strip", [0, 1])
def test_proxy_interpolates_remainder(strip):
    kappa = 33.709929719519764 - 0.7844726109490588j
    pr = regular_proxy(0.0, 0.6 if strip == 0 else 0.8125, 0.65, strip)
    dx = np.array([0.1, 0.55, -0.58, 0.3, -0.2])
    dz = np.array([0.05, 0.3, -0.6, 0.0, 0.64])
    ref = EwaldKernel(0.0, dx, dz).regular(kappa)
    if strip:
        k = cmath.sqrt(kappa)
        for m in (1, -1):
            ref = ref - 0.25j * kappa * special.hankel1(0, k * np.hypot(dx - m, dz))
    assert np.max(np.abs(pr.evaluate(kappa, dx, dz) - ref) / np.abs(ref)) <= 1e-10
