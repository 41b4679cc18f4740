"""Pole branches in the coupling parameter and bound states in the continuum.

A simple pole ``kappa_n(h)`` moves smoothly with the coupling ``h``.  Branches
are followed by a linear predictor and a Newton corrector with step halving;
a corrector result is accepted only when its state overlaps the previous one,
which keeps the branch inside one symmetry sector.  Where the width
``Gamma(h)`` touches zero the state is a bound state in the continuum (BIC);
near it open-channel amplitudes vanish like ``sqrt(Gamma)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .channels import threshold_ladder
from .errors import BranchLost, InsufficientSamples, LeftCutPlane, NoMinimum, NumericalError, OutOfRange
from .poles import (CUT_MARGIN, GAMMA_BIC_TOL, Candidate, SiegertPole, _on_or_near_cut, normalize_bic,
                    refine_pole, scale_pole, strip_norm)
from .scattering import residue_amplitude, solve_plane_wave
from .structures import StructureSpec, support_box


@dataclass
class BranchSample:
    h: float
    kappa_n: complex
    pole: SiegertPole = field(repr=False)


@dataclass
class ContinuationBranch:
    samples: list = field(default_factory=list)
    policy: dict = field(default_factory=dict)

    @property
    def h(self) -> np.ndarray:
        return np.array([s.h for s in self.samples])

    @property
    def kappa(self) -> np.ndarray:
        return np.array([s.kappa_n for s in self.samples])

    @property
    def gamma(self) -> np.ndarray:
        return -self.kappa.imag

    def sorted(self) -> "ContinuationBranch":
        return ContinuationBranch(sorted(self.samples, key=lambda s: s.h), dict(self.policy))


@dataclass
class BicRecord:
    h_b: float
    kappa_b: float
    state: SiegertPole = field(repr=False)
    limit_amplitudes: dict = field(default_factory=dict)
    interval_index: int = 0
    gamma_min: float = 0.0


def _overlap(a: SiegertPole, b: SiegertPole) -> float:
    w = a.disc.weights
    ip = np.sum(w * np.conj(a.state) * b.state)
    na = math.sqrt(float(np.sum(w * np.abs(a.state) ** 2)))
    nb = math.sqrt(float(np.sum(w * np.abs(b.state) ** 2)))
    return float(abs(ip) / (na * nb))


def _reflection_map(pole: SiegertPole):
    """Node permutation for ``z -> -z`` when the placed structure is
    symmetric, else ``None``."""
    nodes = pole.disc.nodes
    if len(nodes) == 0:
        return None
    mirror = nodes * np.array([1.0, -1.0])
    d = np.abs(mirror[:, None, :] - nodes[None, :, :]).sum(axis=2)
    idx = np.argmin(d, axis=1)
    if np.max(d[np.arange(len(nodes)), idx]) > 1e-10:
        return None
    if not np.allclose(pole.disc.contrast[idx], pole.disc.contrast):
        return None
    return idx


def parity(pole: SiegertPole):
    """``+1`` (even) or ``-1`` (odd) under ``z -> -z``; ``None`` when the
    structure is not reflection symmetric or the state has mixed parity."""
    idx = _reflection_map(pole)
    if idx is None:
        return None
    w = pole.disc.weights
    E = pole.state
    r = float(np.real(np.sum(w * np.conj(E) * E[idx])) / np.sum(w * np.abs(E) ** 2))
    if abs(abs(r) - 1.0) > 1e-6:
        return None
    return int(round(r))


def interval_of(kappa_real: float, kx: float):
    """Index of the threshold-ladder interval holding a real ``kappa``."""
    count = int(math.sqrt(max(kappa_real, 0.0)) / math.pi) + 4
    return threshold_ladder(kx, count).interval_index(kappa_real)


def _refine_at(s, h, guess, kx, order, tol):
    return refine_pole(Candidate(complex(guess), 0.0, s, float(h), kx, order), tol=tol)


def continue_pole(s: StructureSpec, start: SiegertPole, h_target: float, step0: float,
                  min_step: float = 1e-6, overlap_min: float = 0.9, tol: float = 1e-10,
                  max_samples: int = 10_000) -> ContinuationBranch:
    """Follow ``kappa_n(h)`` from ``start.h`` to ``h_target``.

    Each step predicts ``kappa_n`` linearly from the last two samples and
    corrects with Newton's method.  A corrected pole is accepted when it
    stays within the predictor tolerance, keeps the state overlap with the
    previous sample above ``overlap_min``, and does not cross a threshold;
    otherwise the step is halved.

    Raises
    ------
    BranchLost
        When the step falls below ``min_step``.
    LeftCutPlane
        When the branch reaches a diffraction threshold.
    """
    if s.coupling is None:
        raise OutOfRange("continuation needs a coupled structure")
    s.check_h(h_target)
    s.check_h(start.h)
    kx, order = start.kx, start.order
    direction = 1.0 if h_target >= start.h else -1.0
    branch = ContinuationBranch([BranchSample(float(start.h), start.kappa_n, start)],
                                {"step0": step0, "min_step": min_step, "overlap_min": overlap_min,
                                 "halvings": 0})
    step = abs(step0)
    l0 = interval_of(start.kappa_n.real, kx)
    while abs(h_target - branch.samples[-1].h) > 1e-14:
        last = branch.samples[-1]
        h_new = last.h + direction * min(step, abs(h_target - last.h))
        if len(branch.samples) >= 2:
            prev = branch.samples[-2]
            slope = (last.kappa_n - prev.kappa_n) / (last.h - prev.h)
            pred = last.kappa_n + slope * (h_new - last.h)
            pred_tol = 0.5 * abs(slope * (h_new - last.h)) + 1e-6 * max(1.0, abs(last.kappa_n))
        else:
            pred = last.kappa_n
            pred_tol = math.inf
        ok = False
        try:
            pole = _refine_at(s, h_new, pred, kx, order, tol)
            ok = (abs(pole.kappa_n - pred) <= pred_tol and _overlap(last.pole, pole) >= overlap_min
                  and pole.gamma >= -1e-10)
        except NumericalError:
            ok = False
        if ok and _on_or_near_cut(pole.kappa_n, kx, CUT_MARGIN):
            raise LeftCutPlane(f"branch reached a threshold at h={h_new}")
        if ok and l0 is not None:
            l1 = interval_of(pole.kappa_n.real, kx)
            if l1 != l0:
                raise LeftCutPlane(f"branch crossed into interval {l1} at h={h_new}")
        if not ok:
            step *= 0.5
            branch.policy["halvings"] += 1
            if step < min_step:
                raise BranchLost(f"corrector failed at h={h_new} with step below {min_step}")
            continue
        branch.samples.append(BranchSample(float(h_new), pole.kappa_n, pole))
        step = min(abs(step0), 1.5 * step)
        if len(branch.samples) > max_samples:
            raise BranchLost("sample budget exhausted")
    return branch


def _interp_kappa(branch: ContinuationBranch, h: float) -> complex:
    hs, ks = branch.h, branch.kappa
    order = np.argsort(np.abs(hs - h))[:3]
    if len(order) < 2:
        return complex(ks[order[0]])
    c = np.polyfit(hs[order] - h, ks[order], len(order) - 1)
    return complex(np.polyval(c, 0.0))


def detect_bic(branch: ContinuationBranch, tol: float = GAMMA_BIC_TOL, xtol: float = 1e-10):
    """Minimize ``Gamma(h)`` on the branch and accept a BIC when the minimum
    is below ``tol``.

    Returns
    -------
    BicRecord or None
        ``None`` when the minimum width exceeds ``tol`` or the minimizer is a
        bound state below the continuum.

    Raises
    ------
    NoMinimum
        When ``Gamma`` has no interior local minimum on the sampled branch.
    """
    br = branch.sorted()
    g = br.gamma
    if len(g) < 3:
        raise NoMinimum("need at least three samples")
    i = int(np.argmin(g))
    if i == 0 or i == len(g) - 1:
        raise NoMinimum("width is monotone on the sampled branch")
    ref = br.samples[i].pole
    s = ref.structure
    lo, hi = br.samples[i - 1].h, br.samples[i + 1].h
    cache = {}

    def gamma_at(h):
        pole = _refine_at(s, h, _interp_kappa(br, h), ref.kx, ref.order, 1e-12)
        if _overlap(ref, pole) < 0.9:
            raise BranchLost(f"minimizer left the branch at h={h}")
        cache[h] = pole
        return pole.gamma

    res = optimize.minimize_scalar(gamma_at, bounds=(lo, hi), method="bounded",
                                   options={"xatol": xtol, "maxiter": 200})
    h_b = float(res.x)
    pole = cache.get(res.x) or _refine_at(s, h_b, _interp_kappa(br, h_b), ref.kx, ref.order, 1e-12)
    gmin = pole.gamma
    if gmin > tol:
        return None
    l = interval_of(pole.kappa_n.real, pole.kx)
    if l is None or l < 1:
        return None
    bic_pole = normalize_bic(pole, gamma_tol=tol)
    return BicRecord(h_b, float(pole.kappa_n.real), bic_pole, {}, l, float(gmin))


def sample_near_bic(bic: BicRecord, deltas, side: float = +1.0) -> ContinuationBranch:
    """Branch samples at ``h_b + side * delta`` for increasing ``delta``,
    continued outward from the BIC."""
    s = bic.state.structure
    out = ContinuationBranch([BranchSample(bic.h_b, bic.state.kappa_n, bic.state)], {"deltas": list(deltas)})
    last = bic.state
    for d in sorted(deltas):
        h = bic.h_b + side * d
        piece = continue_pole(s, last, h, step0=max(d - abs(last.h - bic.h_b), 1e-6))
        last = piece.samples[-1].pole
        out.samples.append(piece.samples[-1])
    return out


def _strip_normalized(pole: SiegertPole, ref: SiegertPole) -> SiegertPole:
    """Unit strip norm with the phase fixed by ``<ref, E>`` real positive."""
    n = strip_norm(pole)
    w = pole.disc.weights
    ip = np.sum(w * np.conj(ref.state) * pole.state)
    alpha = np.conj(ip) / abs(ip) / math.sqrt(n)
    return scale_pole(pole, alpha, "strip_normalized")


def _open_orders(kappa_b: float, kx: float):
    from .scattering import _open_orders as f
    return [int(m) for m in f(kappa_b, kx)]


def limit_amplitudes(branch: ContinuationBranch, bic: BicRecord, gamma_range=(1e-6, 1e-2),
                     degree: int = 2, closed: bool = False) -> dict:
    """Limits ``S+-_m / sqrt(Gamma)`` at ``h_b`` for open channels (or of
    ``S+-_m`` themselves for closed channels when ``closed`` is set).

    States along the branch are normalized to unit strip norm with a phase
    locked to the BIC state; the ratios are extrapolated to ``h_b`` by a
    polynomial of the given degree in ``h - h_b``.

    Raises
    ------
    InsufficientSamples
        When fewer than five samples with ``Gamma`` in ``gamma_range`` lie
        on one side of ``h_b``.
    """
    lo, hi = gamma_range
    sides = {+1: [], -1: []}
    for smp in branch.samples:
        g = smp.pole.gamma
        if lo <= g <= hi and smp.h != bic.h_b:
            sides[1 if smp.h > bic.h_b else -1].append(smp)
    side = max(sides, key=lambda k: len(sides[k]))
    use = sorted(sides[side], key=lambda smp: abs(smp.h - bic.h_b))
    if len(use) < 5:
        raise InsufficientSamples(f"{len(use)} usable samples; five are required on one side of h_b")
    kx = bic.state.kx
    if closed:
        ms = [m for m in range(-2, 3) if m not in _open_orders(bic.kappa_b, kx)]
    else:
        ms = _open_orders(bic.kappa_b, kx)
    dh = np.array([smp.h - bic.h_b for smp in use])
    vals = {m: ([], []) for m in ms}
    for smp in use:
        p = _strip_normalized(smp.pole, bic.state)
        up, down = p.field().far_field_amplitudes(np.array(ms))
        scale = 1.0 if closed else math.sqrt(p.gamma)
        for j, m in enumerate(ms):
            vals[m][0].append(up[j] / scale)
            vals[m][1].append(down[j] / scale)
    out = {}
    deg = min(degree, len(use) - 2)
    for m in ms:
        lim = []
        for arr in vals[m]:
            arr = np.asarray(arr)
            c = np.polyfit(dh, arr, deg)
            lim.append(complex(np.polyval(c, 0.0)))
        out[m] = (lim[0], lim[1])
    if not closed:
        bic.limit_amplitudes = dict(out)
    return out


def strip_norm_identity(bic: BicRecord) -> tuple:
    """Both sides of ``int_S |E_b|^2 eps = sum_open sqrt(xi_m) (|S+_mb|^2 +
    |S-_mb|^2)`` for the normalized BIC state."""
    lhs = strip_norm(bic.state)
    kx = bic.state.kx
    rhs = 0.0
    for m, (sp, sm) in bic.limit_amplitudes.items():
        xi = bic.kappa_b - (kx + 2.0 * math.pi * m) ** 2
        rhs += math.sqrt(xi) * (abs(sp) ** 2 + abs(sm) ** 2)
    return lhs, rhs


def power_law_exponent(gammas, values) -> float:
    """Least-squares slope of ``log|values|`` against ``log gammas``."""
    x = np.log(np.asarray(gammas, dtype=float))
    y = np.log(np.abs(np.asarray(values)))
    return float(np.polyfit(x, y, 1)[0])


@dataclass
class ScalingRow:
    h: float
    gamma: float
    a_n: complex
    a_tilde: complex
    a_boundary: complex | None = None


def amplitude_scaling(branch: ContinuationBranch, kx: float, bic: BicRecord | None = None) -> list:
    """Residues ``a_n`` and reduced residues ``a_n / sqrt(Gamma)`` along the
    branch, with states at unit strip norm (phase locked to ``bic`` when
    given)."""
    rows = []
    for smp in branch.samples:
        p = smp.pole
        if p.gamma <= 1e-12 * abs(p.kappa_n):  # a bound state, up to roundoff
            rows.append(ScalingRow(smp.h, p.gamma, 0j, complex("nan"), None))
            continue
        ref = bic.state if bic is not None else branch.samples[0].pole
        pn = _strip_normalized(p, ref)
        rec = residue_amplitude(pn, kx)
        a = rec.a_n
        rows.append(ScalingRow(smp.h, p.gamma, a, a / math.sqrt(p.gamma), rec.alternatives.get("boundary_formula")))
    return rows


def reduced_amplitude_limit(bic: BicRecord) -> complex:
    """Near-BIC limit of ``a_n / sqrt(Gamma)`` for incidence from below:
    ``2i sqrt(kappa_b - kx**2) S-_0b`` for a real BIC state of unit strip norm.

    Its modulus is ``2 sqrt(kappa_b - kx**2) |S+_0b|`` whenever
    ``|S+_0b| = |S-_0b|`` (reflection-symmetric structures).
    """
    sm = bic.limit_amplitudes[0][1]
    return 2j * sm * math.sqrt(bic.kappa_b - bic.state.kx**2)


@dataclass
class AmplificationRow:
    h: float
    gamma: float
    k: float
    near_norm: float
    far_norm: float
    flux_deficit: float


def amplification_curve(s: StructureSpec, branch: ContinuationBranch, kx: float, detune: float = 0.0,
                        far_offset: float = 2.0) -> list:
    """Drive each sample at ``k**2 = Re kappa_n + detune * Gamma`` and record
    ``||E||_{L2(D)}`` on the support box and the far-field line norm at
    ``far_offset`` above it."""
    box = support_box(s)
    rows = []
    for smp in branch.samples:
        p = smp.pole
        k = math.sqrt(p.kappa_n.real + detune * p.gamma)
        sol = solve_plane_wave(s, smp.h, k, kx, p.order)
        fe = sol.evaluator
        near = math.sqrt(fe.norm_sq(box.z_minus, box.z_plus, eps_weighted=False))
        far = math.sqrt(fe.line_norm_sq(box.z_plus + far_offset))
        rows.append(AmplificationRow(smp.h, p.gamma, k, near, far, sol.flux_deficit))
    return rows
