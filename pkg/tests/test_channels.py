import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from siegert.channels import (SpectralPoint, branch_sqrt, channel_sqrt, classify_channels, diffraction_thresholds,
                              in_cut_plane, nearest_threshold_distance, threshold_ladder)
from siegert.errors import BranchPoint, CutPoint

TWO_PI = 2 * math.pi
finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


@pytest.mark.parametrize("w, expected", [(4, 2), (-1, 1j), (2j, 1 + 1j)])
def test_branch_sqrt_examples(w, expected):
    assert branch_sqrt(w) == pytest.approx(expected, abs=1e-15)


def test_branch_sqrt_rejects_cut():
    with pytest.raises(CutPoint):
        branch_sqrt(-2j)


@given(finite, finite)
def test_branch_sqrt_squares_back_and_stays_in_range(a, b):
    w = complex(a, b)
    if w.real == 0 and w.imag < 0:
        return
    s = branch_sqrt(w)
    assert abs(s * s - w) <= 1e-12 * max(1.0, abs(w))
    if w != 0:
        arg = cmath.phase(s)
        # arg w in (-pi/2, 3pi/2) maps to arg s in (-pi/4, 3pi/4]
        assert -math.pi / 4 - 1e-12 <= arg <= 3 * math.pi / 4 + 1e-12


@given(st.floats(0, 100, allow_nan=False))
def test_branch_sqrt_upper_on_real_axis(a):
    assert branch_sqrt(-a).imag >= 0 and branch_sqrt(a).imag == 0


def test_thresholds_examples():
    assert diffraction_thresholds(0.0, 1) == [(-1, TWO_PI**2), (0, 0.0), (1, TWO_PI**2)]
    th = dict(diffraction_thresholds(0.5, 1))
    assert th[-1] == pytest.approx((0.5 - TWO_PI) ** 2) and th[-1] == pytest.approx(33.445, abs=1e-3)
    assert th[1] == pytest.approx(46.012, abs=1e-3) and th[0] == 0.25
    assert diffraction_thresholds(math.pi, 0) == [(0, math.pi**2)]


def test_ladder_kx0_has_empty_interval():
    lad = threshold_ladder(0.0, 4)
    vals = [t.value for t in lad.thresholds]
    assert vals[0] == 0.0 and vals[1] == pytest.approx(TWO_PI**2) and vals[2] == pytest.approx(TWO_PI**2)
    lo, hi = lad.intervals[2]
    assert lo == pytest.approx(hi)


def test_ladder_kx1_nonempty():
    lad = threshold_ladder(1.0, 4)
    vals = [t.value for t in lad.thresholds]
    assert vals[:3] == pytest.approx([1.0, (TWO_PI - 1) ** 2, (TWO_PI + 1) ** 2])
    assert all(hi > lo for lo, hi in lad.intervals[1:])


@given(st.floats(-3, 3, allow_nan=False), st.integers(-3, 3))
def test_ladder_depends_on_kx_mod_2pi(kx, n):
    a = [t.value for t in threshold_ladder(kx, 5).thresholds]
    b = [t.value for t in threshold_ladder(kx + TWO_PI * n, 5).thresholds]
    assert a == pytest.approx(b, rel=1e-9, abs=1e-9)


@given(st.floats(-3, 3, allow_nan=False), st.integers(2, 9))
def test_ladder_is_ordered_and_each_threshold_is_a_channel(kx, count):
    lad = threshold_ladder(kx, count)
    vals = [t.value for t in lad.thresholds]
    assert all(b >= a - 1e-9 for a, b in zip(vals, vals[1:]))
    for t in lad.thresholds:
        assert (kx + TWO_PI * t.channel) ** 2 == pytest.approx(t.value, rel=1e-9, abs=1e-9)


@pytest.mark.parametrize("kappa, open_set", [(20, (0,)), (50, (-1, 0, 1)), (-5, ())])
def test_classify_channels(kappa, open_set):
    o, c = classify_channels(SpectralPoint(kappa, 0.0), 2 if kappa > 0 else 1)
    assert o == open_set
    assert set(o) | set(c) == set(range(-(2 if kappa > 0 else 1), (2 if kappa > 0 else 1) + 1))


def test_cut_plane_membership():
    assert in_cut_plane(SpectralPoint(1 + 0j, 0.3), 2, 0.0)
    assert in_cut_plane(SpectralPoint(0.09 + 0.5j, 0.3), 2, 0.0)
    with pytest.raises(CutPoint):
        SpectralPoint(0.09 - 0.5j, 0.3)
    assert not in_cut_plane(SpectralPoint(0.09 + 1e-9 - 0.5j, 0.3), 2, 1e-6)


def test_channel_sqrt_threshold_is_branch_point():
    with pytest.raises(BranchPoint):
        channel_sqrt(0.25, 0.5, [0])


@given(st.floats(0.1, 200), st.floats(-3, 3))
@settings(max_examples=50)
def test_nearest_threshold_distance_matches_brute_force(kr, kx):
    brute = min(abs(kr - (kx + TWO_PI * m) ** 2) for m in range(-10, 11))
    assert nearest_threshold_distance(kr, kx) == pytest.approx(brute, rel=1e-12, abs=1e-12)
