import math

import numpy as np
import pytest

from siegert.continuation import (amplification_curve, amplitude_scaling, continue_pole, detect_bic, interval_of,
                                  limit_amplitudes, parity, power_law_exponent, reduced_amplitude_limit)
from siegert.errors import NoMinimum, OutOfRange
from siegert.poles import Candidate, refine_pole
from siegert.structures import DoubleArray, Disk, Inclusion, StructureSpec

from conftest import DOUBLE_START_H, H_B, KAPPA_B, sqrt_xi_b


def test_round_trip(double_array, double_start):
    out = continue_pole(double_array, double_start, 0.47, 0.01)
    back = continue_pole(double_array, out.samples[-1].pole, DOUBLE_START_H, 0.01)
    assert abs(back.samples[-1].kappa_n - double_start.kappa_n) <= 1e-8


def test_single_array_cannot_be_continued(bench_pole, single_array):
    with pytest.raises(OutOfRange):
        continue_pole(single_array, bench_pole, 0.4, 0.01)


def test_jumps_shrink_linearly_with_step(double_array, double_start):
    jumps = []
    for step in (0.01, 0.005):
        br = continue_pole(double_array, double_start, 0.46, step)
        assert np.all(np.abs(np.diff(br.h)) <= step * (1 + 1e-12))
        jumps.append(np.max(np.abs(np.diff(br.kappa))))
    assert jumps[0] / jumps[1] == pytest.approx(2.0, rel=0.15)


def test_branch_invariants(double_branch):
    assert np.all(double_branch.gamma >= -1e-10)
    signs = {parity(smp.pole) for smp in double_branch.samples}
    assert len(signs) == 1 and signs.pop() in (-1, 1)


def test_bic_detected(bic):
    assert bic is not None
    assert abs(bic.h_b - H_B) <= 1e-6
    assert abs(bic.kappa_b - KAPPA_B) <= 1e-6 * KAPPA_B
    assert bic.gamma_min <= 1e-6
    assert bic.interval_index == 1 == interval_of(bic.kappa_b, 0.0)


def test_no_bic_without_symmetry():
    # an up-down asymmetric pair at oblique incidence: an isolated zero of the
    # width would need two tuned parameters
    up = (Inclusion(Disk(0.5, 0.0, 0.25), 2.0),)
    lo = (Inclusion(Disk(0.5, 0.0, 0.2), 2.0),)
    s = StructureSpec((), DoubleArray(up, lo), (0.3, 3.0))
    start = refine_pole(Candidate(35.53629541580639 - 0.24741277835681408j, 0.0, s, 0.5, 0.15, 8))
    br = continue_pole(s, start, 0.40, 0.01)
    assert br.gamma.min() > 1e-2
    assert detect_bic(br) is None


def test_monotone_branch_has_no_minimum(double_branch):
    from siegert.continuation import ContinuationBranch
    short = ContinuationBranch(double_branch.samples[:4])
    with pytest.raises(NoMinimum):
        detect_bic(short)


def test_open_amplitudes_scale_as_sqrt_gamma(near_bic):
    smp = near_bic.samples[1:]
    g = [s.pole.gamma for s in smp]
    assert max(g) / min(g) >= 10
    from siegert.continuation import _strip_normalized
    up = [_strip_normalized(s.pole, near_bic.samples[0].pole).field().far_field_amplitudes(np.array([0]))[0][0]
          for s in smp]
    assert power_law_exponent(g, up) == pytest.approx(0.5, abs=0.05)


def test_one_channel_limit(frozen_bic, near_bic):
    sp, sm = frozen_bic.limit_amplitudes[0]
    target = 1 / (2 * sqrt_xi_b(frozen_bic))
    assert abs(abs(sp) ** 2 - target) <= 0.02 * target
    assert abs(abs(sp) - abs(sm)) <= 1e-3 * abs(sp)


def test_closed_channel_limits_are_finite(frozen_bic, near_bic):
    lim = limit_amplitudes(near_bic, frozen_bic, closed=True)
    assert set(lim) == {-2, -1, 1, 2}
    for sp, sm in lim.values():
        assert np.isfinite(sp) and np.isfinite(sm)
        assert abs(sp) > 1e-6
    assert set(frozen_bic.limit_amplitudes) == {0}


@pytest.fixture(scope="module")
def scaling(frozen_bic, near_bic):
    return amplitude_scaling(near_bic, 0.0, frozen_bic)[1:]


def test_reduced_amplitude_is_bounded(scaling):
    g = np.array([r.gamma for r in scaling])
    mods = np.array([abs(r.a_tilde) for r in scaling])
    assert g.max() / g.min() >= 10
    assert mods.max() / mods.min() <= 1.2
    assert abs(scaling[0].a_n) < abs(scaling[-1].a_n)


def test_reduced_amplitude_limit(frozen_bic, scaling):
    lim = reduced_amplitude_limit(frozen_bic)
    first = scaling[0].a_tilde
    assert abs(first - lim) <= 0.05 * abs(lim)
    sp = frozen_bic.limit_amplitudes[0][0]
    # the conjugated upward coefficient has the same modulus
    alt = 2j * np.conj(sp) * sqrt_xi_b(frozen_bic)
    assert abs(abs(first) - abs(alt)) <= 0.05 * abs(alt)


@pytest.fixture(scope="module")
def near_subset(near_bic):
    from siegert.continuation import ContinuationBranch
    smp = near_bic.samples[1:]
    return ContinuationBranch([smp[0], smp[3], smp[-1]])


def test_amplification_law(double_array, near_subset):
    rows = amplification_curve(double_array, near_subset, 0.0)
    g = [r.gamma for r in rows]
    near = [r.near_norm for r in rows]
    assert power_law_exponent(g, near) == pytest.approx(-0.5, abs=0.05)
    assert near[0] / near[-1] > 10
    assert max(r.far_norm for r in rows) / min(r.far_norm for r in rows) < 2
    assert max(r.flux_deficit for r in rows) <= 1e-6


def test_detuned_drive_suppresses(double_array, near_subset):
    on = amplification_curve(double_array, near_subset, 0.0)
    off = amplification_curve(double_array, near_subset, 0.0, detune=10.0)
    ratio = on[0].near_norm / off[0].near_norm
    assert ratio == pytest.approx(math.sqrt(101), rel=0.1)
