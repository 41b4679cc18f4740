"""Plane-wave scattering: driven solves, spectra, Lorentzian fits and residues.

The incident wave ``exp(i (kx x + qz z))`` with ``qz = sqrt(kappa - kx**2)``
travels upward.  Reflection coefficients ``r_m`` are the scattered downgoing
amplitudes below the structure, transmission coefficients ``t_m`` the
scattered upgoing amplitudes above it, both referenced to ``z = 0``; the
total zeroth-order transmission amplitude is ``t_0 + 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .channels import SpectralPoint, TWO_PI, _branch_sqrt_array, diffraction_thresholds
from .errors import BranchPoint, DimensionMismatch, NumericalError, OutOfRange, PoorFit, SiegertError
from .fields import FieldEvaluator, PlaneWave
from .operator import OperatorMatrix, assemble_matrix, discretization, resolvent_solve
from .poles import SiegertPole
from .structures import StructureSpec, support_box

THRESHOLD_EXCLUSION = 1e-4


@dataclass
class ScatteringSolution:
    p: SpectralPoint
    total_field: np.ndarray = field(repr=False)
    r: dict = field(default_factory=dict)
    t: dict = field(default_factory=dict)
    flux_deficit: float = 0.0
    incident: PlaneWave | None = field(default=None, repr=False)
    evaluator: FieldEvaluator | None = field(default=None, repr=False)
    residual: float = 0.0

    @property
    def R(self) -> float:
        return abs(self.r.get(0, 0.0)) ** 2

    @property
    def T(self) -> float:
        return abs(self.t.get(0, 0.0) + 1.0) ** 2


@dataclass
class AmplitudeRecord:
    a_n: complex
    route: str
    alternatives: dict = field(default_factory=dict)


def _disc_for(s: StructureSpec, h: float, kx: float, order: int):
    return discretization(s, float(h) if s.coupling is not None else 0.0, float(kx), int(order))


def _open_orders(kappa: float, kx: float):
    M = int(math.sqrt(max(kappa, 0.0)) / TWO_PI) + 2
    ms = np.arange(-M, M + 1)
    km = kx + TWO_PI * ms
    return ms[kappa > km**2]


def _check_threshold(kappa: float, kx: float, exclusion: float):
    M = int(math.sqrt(max(kappa, 0.0)) / TWO_PI) + 2
    for m, thr in diffraction_thresholds(kx, M):
        if abs(kappa - thr) < exclusion:
            raise BranchPoint(f"kappa={kappa} lies within {exclusion} of the threshold of order {m}")


def solve_plane_wave(s: StructureSpec, h: float, k: float, kx: float, order: int = 10,
                     allow_evanescent: bool = False, exclusion: float = 0.0) -> ScatteringSolution:
    """Solve ``(I - A) E = E_inc`` for plane-wave incidence at real ``k``.

    Parameters
    ----------
    k : float
        Vacuum wavenumber, ``kappa = k**2``.
    allow_evanescent : bool
        Accept ``k**2 < kx**2``; the incident wave is then evanescent and
        the flux deficit is reported as ``nan``.
    exclusion : float
        Minimum distance of ``kappa`` from every threshold.

    Raises
    ------
    NearSingular
        When ``kappa`` is a real pole (a bound state in the continuum).
    """
    if not k > 0:
        raise OutOfRange("k must be positive")
    kappa = float(k) ** 2
    kx = float(kx)
    if kappa <= kx * kx and not allow_evanescent:
        raise OutOfRange(f"k**2={kappa} does not exceed kx**2={kx * kx}: incidence is not propagating")
    _check_threshold(kappa, kx, exclusion)
    if kappa == kx * kx:
        raise BranchPoint("grazing incidence sits on a threshold")
    p = SpectralPoint(complex(kappa), kx)
    qz = complex(_branch_sqrt_array(np.asarray(kappa - kx * kx + 0j)))
    inc = PlaneWave(kx, qz)
    disc = _disc_for(s, h, kx, order)
    if disc.N == 0:
        return ScatteringSolution(p, np.zeros(0, dtype=complex), {}, {}, 0.0 if kappa > kx * kx else math.nan, inc)
    A = assemble_matrix(disc, p.kappa)
    op = OperatorMatrix(p, h, A, disc.q, disc)
    rhs = inc(disc.nodes[:, 0], disc.nodes[:, 1])
    E = resolvent_solve(op, rhs)
    residual = float(np.linalg.norm(E - A @ E - rhs) / max(np.linalg.norm(rhs), 1e-300))
    fe = FieldEvaluator(disc, p.kappa, E, inc)
    ms = _open_orders(kappa, kx)
    up, down = fe.far_field_amplitudes(ms)
    r = {int(m): complex(d) for m, d in zip(ms, down)}
    t = {int(m): complex(u) for m, u in zip(ms, up)}
    if kappa > kx * kx:
        q0 = qz.real
        total = 0.0
        for m in ms:
            qm = math.sqrt(kappa - (kx + TWO_PI * m) ** 2)
            total += qm / q0 * (abs(r[int(m)]) ** 2 + abs(t[int(m)] + (1.0 if m == 0 else 0.0)) ** 2)
        deficit = abs(1.0 - total)
    else:
        deficit = math.nan
    return ScatteringSolution(p, E, r, t, float(deficit), inc, fe, residual)


@dataclass
class SpectrumTable:
    """Rows ``(k, kappa, T, R, flux_deficit)`` with the complex zeroth-order
    amplitudes kept alongside for fitting."""

    k: np.ndarray
    kappa: np.ndarray
    T: np.ndarray
    R: np.ndarray
    flux_deficit: np.ndarray
    r0: np.ndarray = field(repr=False)
    t0: np.ndarray = field(repr=False)
    errors: list = field(default_factory=list)

    HEADER = ("k", "kappa", "T", "R", "flux_deficit")

    def rows(self):
        for i in range(len(self.k)):
            yield (self.k[i], self.kappa[i], self.T[i], self.R[i], self.flux_deficit[i])


def spectrum(s: StructureSpec, h: float, k_grid, kx: float, order: int = 10,
             exclusion: float = THRESHOLD_EXCLUSION) -> SpectrumTable:
    """One solve per grid point; failures are recorded and yield ``nan`` rows.

    The grid must be increasing and lie in a single interval between
    consecutive thresholds.
    """
    k_grid = np.asarray(k_grid, dtype=float)
    if k_grid.ndim != 1 or len(k_grid) == 0:
        raise DimensionMismatch("k_grid must be a nonempty 1-d array")
    if np.any(np.diff(k_grid) <= 0):
        raise OutOfRange("k_grid must be strictly increasing")
    kap = k_grid**2
    M = int(math.sqrt(kap[-1]) / TWO_PI) + 2
    for m, thr in diffraction_thresholds(kx, M):
        if kap[0] < thr < kap[-1]:
            raise OutOfRange(f"k grid crosses the threshold {thr:.6g} of order {m}")
    n = len(k_grid)
    T = np.full(n, np.nan)
    R = np.full(n, np.nan)
    D = np.full(n, np.nan)
    r0 = np.full(n, np.nan, dtype=complex)
    t0 = np.full(n, np.nan, dtype=complex)
    errors = []
    for i, k in enumerate(k_grid):
        try:
            sol = solve_plane_wave(s, h, k, kx, order, exclusion=exclusion)
        except SiegertError as exc:
            errors.append((i, float(k), exc.to_dict()))
            continue
        T[i], R[i], D[i] = sol.T, sol.R, sol.flux_deficit
        r0[i], t0[i] = sol.r.get(0, 0j), sol.t.get(0, 0j)
    return SpectrumTable(k_grid, kap, T, R, D, r0, t0, errors)


@dataclass
class LorentzianFit:
    kappa_n: float
    gamma: float
    params: np.ndarray = field(repr=False)
    rel_residual: float = 0.0
    model: str = "intensity"


def lorentzian(kappa, kn2, gamma, amp, b0, b1):
    return amp * gamma**2 / ((kappa - kn2) ** 2 + gamma**2) + b0 + b1 * (kappa - kn2)


def _window_mask(kappa, window):
    if window is None:
        return np.isfinite(kappa)
    lo, hi = window
    return (kappa >= lo) & (kappa <= hi)


def fit_lorentzian(table, window=None, model: str = "amplitude", channel: str = "t",
                   max_rel_residual: float = 1e-3) -> LorentzianFit:
    """Fit one resonance feature in ``kappa``.

    ``model="intensity"`` fits ``amp Gamma^2 / ((kappa - kn^2)^2 + Gamma^2)``
    plus a linear background to ``T`` (or ``R``).  ``model="amplitude"`` fits
    the complex zeroth-order amplitude with one pole ``c / (kappa - kn^2 +
    i Gamma)`` plus a linear complex background; the squared modulus of the
    pole term is the same Lorentzian, but Fano interference with the
    background is captured exactly.

    ``table`` may be a :class:`SpectrumTable` or a tuple ``(kappa, values)``.

    Raises
    ------
    PoorFit
        When the relative RMS residual exceeds ``max_rel_residual``.
    """
    if isinstance(table, SpectrumTable):
        kap = table.kappa
        if model == "amplitude":
            y = table.t0 if channel == "t" else table.r0
        else:
            y = table.T if channel == "t" else table.R
    else:
        kap, y = (np.asarray(a) for a in table)
    mask = _window_mask(kap, window) & np.isfinite(y)
    kap, y = np.asarray(kap[mask], dtype=float), np.asarray(y[mask])
    if len(kap) < 8:
        raise PoorFit("fewer than 8 usable samples in the window")
    scale_k = float(kap.max() - kap.min())
    if model == "intensity":
        y = y.real
        i0 = int(np.argmax(np.abs(y - np.median(y))))
        base = float(np.median(y))
        x0 = [kap[i0], 0.1 * scale_k, y[i0] - base, base, 0.0]

        def res(p):
            return lorentzian(kap, *p) - y

        sol = optimize.least_squares(res, x0, x_scale="jac", xtol=1e-15, ftol=1e-15, gtol=1e-15,
                                     max_nfev=20000)
        kn2, gam = sol.x[0], abs(sol.x[1])
        resid = res(sol.x)
    elif model == "amplitude":
        y = y.astype(complex)
        kc = float(0.5 * (kap.max() + kap.min()))
        dy = np.abs(np.gradient(y, kap))
        i0 = int(np.argmax(dy))

        def solve_linear(kn2, gam):
            # given the pole, the residue and background enter linearly
            B = np.column_stack([1.0 / (kap - kn2 + 1j * gam), np.ones_like(kap), kap - kc])
            coef, *_ = np.linalg.lstsq(B, y, rcond=None)
            return B, coef

        def res(p):
            B, coef = solve_linear(p[0], p[1])
            d = B @ coef - y
            return np.concatenate([d.real, d.imag])

        best = None
        for g0 in (0.02, 0.1, 0.3):
            sol = optimize.least_squares(res, [kap[i0], g0 * scale_k], x_scale="jac", xtol=1e-15,
                                         ftol=1e-15, gtol=1e-15, max_nfev=5000)
            if best is None or sol.cost < best.cost:
                best = sol
        sol = best
        kn2, gam = sol.x[0], abs(sol.x[1])
        resid = res(sol.x)
    else:
        raise ValueError(f"unknown model {model!r}")
    rel = float(np.sqrt(np.mean(resid**2)) / max(np.max(np.abs(y)), 1e-300))
    fit = LorentzianFit(float(kn2), float(gam), np.asarray(sol.x), rel, model)
    if rel > max_rel_residual:
        raise PoorFit(f"relative residual {rel:.2e} exceeds {max_rel_residual:.1e}")
    return fit


# ---------------------------------------------------------------------------
# Residue amplitudes
# ---------------------------------------------------------------------------


def incident_at_pole(pole: SiegertPole, direction: int = +1):
    """Plane wave continued to ``kappa = kappa_n``."""
    qz = complex(_branch_sqrt_array(np.asarray(pole.kappa_n - pole.kx**2)))
    return PlaneWave(pole.kx, direction * qz)


def amplitude_box(pole: SiegertPole, decay: float = 1e-10):
    """Box ``(z1, z2)`` beyond which every closed-channel term of the state has
    decayed by ``decay``."""
    box = support_box(pole.structure)
    kap = pole.kappa_n
    M = int(math.sqrt(max(kap.real, 0.0)) / TWO_PI) + 3
    ms = np.arange(-M, M + 1)
    km = pole.kx + TWO_PI * ms
    closed = kap.real < km**2
    beta = _branch_sqrt_array(kap - km[closed] ** 2).imag
    d = -math.log(decay) / (2.0 * float(beta.min())) if beta.size else 0.25
    d = max(d, 0.25)
    return box.z_minus - d, box.z_plus + d


def boundary_amplitude(pole: SiegertPole, box=None) -> complex:
    """Residue from the boundary representation in the near-BIC limit.

    The numerator is the flux integral of the incident wave against the
    state over the box boundary, written through ``S+_0`` and ``S-_0``; the
    denominator keeps only ``int_{D'} |E|^2 eps`` (its boundary term vanishes
    as the width goes to zero).
    """
    z1, z2 = amplitude_box(pole) if box is None else box
    q0 = complex(_branch_sqrt_array(np.asarray(pole.kappa_n - pole.kx**2)))
    up, down = pole.field().far_field_amplitudes(np.array([0]))
    sp, sm = complex(up[0]), complex(down[0])
    num = (2j * q0.real * np.conj(sp) * np.exp(-2.0 * z2 * q0.imag)
           + 2.0 * q0.imag * np.conj(sm) * np.exp(2j * z1 * q0.real))
    den = pole.field().norm_sq(z1, z2, eps_weighted=True)
    return complex(-num / den)


def residue_amplitude(pole: SiegertPole, kx: float | None = None, boundary: bool = True,
                      box=None) -> AmplitudeRecord:
    """``a_n = <phi_n, E_i(kappa_n)>`` with the boundary route as a cross-check.

    The boundary route is only computed when ``boundary`` is set and ``kx``
    lies in the first zone (the incident wave is the zeroth order).
    """
    if kx is not None and abs(kx - pole.kx) > 1e-14:
        raise DimensionMismatch("pole and incidence must share kx")
    inc = incident_at_pole(pole)
    disc = pole.disc
    psi = inc(disc.nodes[:, 0], disc.nodes[:, 1])
    a = complex(np.sum(disc.weights * np.conj(pole.left_functional) * psi))
    alts = {"residue_formula": a}
    if boundary:
        try:
            alts["boundary_formula"] = boundary_amplitude(pole, box)
        except (NumericalError, ValueError):
            pass
    return AmplitudeRecord(a, "residue_formula", alts)


def background_field(sol: ScatteringSolution, poles) -> np.ndarray:
    """``E_a = E - E_inc - sum_n a_n E_n / (kappa - kappa_n)`` on the nodes."""
    if sol.evaluator is None:
        return np.zeros_like(sol.total_field)
    disc = sol.evaluator.disc
    inc = sol.incident(disc.nodes[:, 0], disc.nodes[:, 1])
    Ea = sol.total_field - inc
    for pole in poles:
        if abs(pole.kx - sol.p.kx) > 1e-14 or pole.state.shape != Ea.shape:
            raise DimensionMismatch("pole belongs to a different discretization")
        a = residue_amplitude(pole, boundary=False).a_n
        Ea = Ea - a / (sol.p.kappa - pole.kappa_n) * pole.state
    return Ea
