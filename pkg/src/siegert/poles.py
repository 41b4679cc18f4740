"""Siegert poles: scanning, Newton refinement, residues and far fields.

A pole is a ``kappa_n`` in the cut plane where ``A(kappa)`` has the eigenvalue
1.  Refinement runs Newton's method on ``lambda0(kappa) - 1`` where
``lambda0`` is the eigenvalue of ``A`` closest to 1, tracked between
iterations by two-sided Rayleigh quotient iteration and differentiated through
``w^H A' v / w^H v``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla

from .channels import SpectralPoint, TWO_PI, _branch_sqrt_array, diffraction_thresholds, default_truncation
from .errors import (CutCollision, MultipleInDisk, NoConvergence, NoneInDisk, NotNearBic, BranchPoint,
                     CutPoint)
from .fields import FieldEvaluator
from .green import spectral_modes
from .operator import Discretization, assemble_matrix, discretization, eigen_near_one
from .structures import StructureSpec, support_box

GAMMA_BIC_TOL = 1e-6
CUT_MARGIN = 1e-6


@dataclass(frozen=True)
class FluxBox:
    z1: float
    z2: float

    def __post_init__(self):
        if not self.z1 < self.z2:
            raise ValueError("flux box needs z1 < z2")


@dataclass
class Candidate:
    kappa: complex
    indicator: float
    structure: StructureSpec = field(repr=False)
    h: float = 0.0
    kx: float = 0.0
    order: int = 10


@dataclass
class SiegertPole:
    kappa_n: complex
    state: np.ndarray = field(repr=False)
    left_functional: np.ndarray = field(repr=False)
    amplitudes: dict = field(default_factory=dict)
    d_lambda_d_kappa: complex = 0j
    normalization_tag: str = "max_abs_one"
    structure: StructureSpec = field(default=None, repr=False)
    h: float = 0.0
    kx: float = 0.0
    order: int = 10
    residual: float = 0.0
    lambda0: complex = 1.0
    iterations: int = 0

    @property
    def gamma(self) -> float:
        return -self.kappa_n.imag

    @property
    def disc(self) -> Discretization:
        return _disc(self.structure, self.h, self.kx, self.order)

    def field(self) -> FieldEvaluator:
        return FieldEvaluator(self.disc, self.kappa_n, self.state)


def _disc(s, h, kx, order):
    return discretization(s, float(h) if s.coupling is not None else 0.0, float(kx), int(order))


def _on_or_near_cut(kappa: complex, kx: float, margin: float) -> bool:
    if kappa.imag > 0:
        return False
    M = int(math.sqrt(max(kappa.real, 0.0)) / TWO_PI) + 2
    return any(abs(kappa.real - thr) <= margin for _, thr in diffraction_thresholds(kx, M))


# ---------------------------------------------------------------------------
# Scanning
# ---------------------------------------------------------------------------


def smallest_sv(disc: Discretization, kappa: complex) -> float:
    A = assemble_matrix(disc, kappa)
    return float(sla.svdvals(np.eye(disc.N) - A, check_finite=False)[-1])


def scan_poles(s: StructureSpec, h: float, kx: float, region, grid=(24, 12), order: int = 10,
               threshold: float = 0.25):
    """Grid scan of the smallest singular value of ``I - A(kappa)``.

    Parameters
    ----------
    region : tuple
        ``(re_min, re_max, im_min, im_max)`` of the search rectangle.
    grid : tuple
        Number of samples along the real and imaginary directions.

    Returns
    -------
    list of Candidate
        Strict local minima below ``threshold``, sorted by indicator value.
    """
    disc = _disc(s, h, kx, order)
    if disc.N == 0:
        return []
    re0, re1, im0, im1 = region
    nx, ny = grid
    xs = np.linspace(re0, re1, nx)
    ys = np.linspace(im0, im1, ny)
    vals = np.full((nx, ny), np.inf)
    for i, xr in enumerate(xs):
        for j, yi in enumerate(ys):
            kap = complex(xr, yi)
            if _on_or_near_cut(kap, kx, CUT_MARGIN):
                continue
            try:
                vals[i, j] = smallest_sv(disc, kap)
            except (BranchPoint, CutPoint):
                continue
    out = []
    for i in range(nx):
        for j in range(ny):
            v = vals[i, j]
            if not np.isfinite(v) or v >= threshold:
                continue
            nb = vals[max(i - 1, 0):i + 2, max(j - 1, 0):j + 2]
            if v <= nb.min() and np.sum(nb == v) == 1:
                out.append(Candidate(complex(xs[i], ys[j]), float(v), s, h, kx, order))
    out.sort(key=lambda c: (c.indicator, c.kappa.real, c.kappa.imag))
    return out


# ---------------------------------------------------------------------------
# Refinement
# ---------------------------------------------------------------------------


class _Tracker:
    """Eigenvalue of ``A(kappa)`` nearest 1 with left/right vectors, updated by
    two-sided Rayleigh quotient iteration from the previous iterate."""

    def __init__(self, disc: Discretization):
        self.disc = disc
        self.v = self.w = None
        self.lam = None

    def full(self, A):
        lam, vl, vr = sla.eig(A, left=True, right=True, check_finite=False)
        i = int(np.argmin(np.abs(lam - 1.0)))
        self.v = vr[:, i] / np.linalg.norm(vr[:, i])
        self.w = vl[:, i] / np.linalg.norm(vl[:, i])
        self.lam = complex(lam[i])
        return self.lam

    def update(self, A):
        if self.v is None:
            self.full(A)
            return self.lam
        v, w, lam = self.v, self.w, self.lam
        N = A.shape[0]
        for _ in range(4):
            try:
                lu = sla.lu_factor(A - (lam + 1e-15) * np.eye(N), check_finite=False)
            except (sla.LinAlgError, ValueError):
                break
            v2 = sla.lu_solve(lu, v, check_finite=False)
            w2 = sla.lu_solve(lu, w, trans=2, check_finite=False)
            if not (np.all(np.isfinite(v2)) and np.all(np.isfinite(w2))):
                break
            v2 /= np.linalg.norm(v2)
            w2 /= np.linalg.norm(w2)
            new = complex(np.vdot(w2, A @ v2) / np.vdot(w2, v2))
            done = abs(new - lam) <= 1e-15 * max(1.0, abs(new))
            v, w, lam = v2, w2, new
            if done:
                break
        if abs(np.vdot(self.v, v)) < 0.3:  # jumped to another eigenvalue
            self.full(A)
            return self.lam
        self.v, self.w, self.lam = v, w, lam
        return lam


def _dA(disc, kappa, richardson=False):
    d = 1e-6 * max(abs(kappa), 1.0)
    D1 = (assemble_matrix(disc, kappa + d) - assemble_matrix(disc, kappa - d)) / (2 * d)
    if not richardson:
        return D1
    D2 = (assemble_matrix(disc, kappa + 2 * d) - assemble_matrix(disc, kappa - 2 * d)) / (4 * d)
    return (4.0 * D1 - D2) / 3.0


def d_lambda(disc, kappa, v, w, richardson=True):
    """``d lambda0 / d kappa`` from the eigenvector sandwich ``w^H A' v / w^H v``."""
    Ad = _dA(disc, kappa, richardson)
    return complex(np.vdot(w, Ad @ v) / np.vdot(w, v))


def refine_pole(candidate: Candidate, tol: float = 1e-10, max_iter: int = 50,
                margin: float = CUT_MARGIN, delta: float | None = None) -> SiegertPole:
    """Newton refinement of a candidate to ``|lambda0(kappa_n) - 1| <= tol``."""
    s, h, kx, order = candidate.structure, candidate.h, candidate.kx, candidate.order
    disc = _disc(s, h, kx, order)
    kappa = complex(candidate.kappa)
    tr = _Tracker(disc)
    A = assemble_matrix(disc, kappa)
    tr.full(A)
    lam = tr.lam
    for it in range(1, max_iter + 1):
        f = lam - 1.0
        if abs(f) <= tol:
            break
        dl = d_lambda(disc, kappa, tr.v, tr.w, richardson=False)
        if dl == 0:
            raise NoConvergence("vanishing derivative of lambda0")
        step = -f / dl
        for _ in range(41):
            trial = kappa + step
            if not _on_or_near_cut(trial, kx, margin):
                break
            step *= 0.5
        else:
            raise CutCollision(f"Newton step collides with a cut near kappa={kappa}")
        kappa = trial
        A = assemble_matrix(disc, kappa)
        lam = tr.update(A)
    else:
        raise NoConvergence(f"no convergence after {max_iter} Newton steps (|lambda0-1|={abs(lam - 1):.2e})")
    return _finish(disc, s, h, kx, order, kappa, A, tr, delta, it)


def _finish(disc, s, h, kx, order, kappa, A, tr, delta, iterations):
    lam_all = np.linalg.eigvals(A)
    dist = np.sort(np.abs(lam_all - 1.0))
    gap = dist[1] if len(dist) > 1 else np.inf
    dsk = 0.5 * gap if delta is None else delta
    if np.sum(np.abs(lam_all - 1.0) <= dsk) > 1:
        raise MultipleInDisk("several eigenvalues near 1 at the refined pole", lam_all[np.abs(lam_all - 1) <= dsk])
    v, w = tr.v, tr.w
    j = int(np.argmax(np.abs(v)))
    E = v / v[j]  # max-abs node value = 1, real positive
    dl = d_lambda(disc, kappa, E, w, richardson=True)
    phi = _left_functional(disc, E, w, dl)
    residual = float(np.linalg.norm(A @ E - E) / np.linalg.norm(E))
    pole = SiegertPole(kappa, E, phi, {}, dl, "max_abs_one", s, h, kx, order, residual, tr.lam, iterations)
    pole.amplitudes = far_field_amplitudes(pole, range(-2, 3))
    return pole


def _left_functional(disc, E, w, dl):
    """``phi`` with ``<phi, psi> = -(w^H psi) / (dl * w^H E)`` in the quadrature
    inner product, so the residue of ``(I - A)^-1`` is ``<phi, .> E``."""
    c = -1.0 / (dl * np.vdot(w, E))
    return np.conj(c) * w / disc.weights


@dataclass
class PoleSearch:
    poles: list
    warnings: list


def find_poles(s: StructureSpec, h: float, kx: float, region, grid=(24, 12), order: int = 10,
               tol: float = 1e-10, threshold: float = 0.25, merge_tol: float = 1e-6) -> PoleSearch:
    """Scan ``region`` and refine every candidate.

    Refined poles that drift more than one grid step outside ``region`` are
    dropped, duplicates within ``merge_tol`` are merged, and candidates that
    fail to refine are reported as warnings instead of aborting the search.
    """
    re0, re1, im0, im1 = region
    nx, ny = grid
    dre = (re1 - re0) / max(nx - 1, 1)
    dim = (im1 - im0) / max(ny - 1, 1)
    poles, warnings = [], []
    for c in scan_poles(s, h, kx, region, grid, order, threshold):
        try:
            p = refine_pole(c, tol=tol)
        except (MultipleInDisk, NoConvergence, CutCollision) as e:
            warnings.append({"type": type(e).__name__, "kappa_guess": [c.kappa.real, c.kappa.imag],
                             "message": str(e)})
            continue
        k = p.kappa_n
        if not (re0 - dre <= k.real <= re1 + dre and im0 - dim <= k.imag <= im1 + dim):
            continue
        if any(abs(k - q.kappa_n) <= merge_tol * max(1.0, abs(k)) for q in poles):
            continue
        poles.append(p)
    poles.sort(key=lambda q: (q.kappa_n.real, q.kappa_n.imag))
    return PoleSearch(poles, warnings)


def residue_apply(pole: SiegertPole, psi) -> np.ndarray:
    return np.sum(pole.disc.weights * np.conj(pole.left_functional) * psi) * pole.state


def far_field_amplitudes(pole: SiegertPole, m_range) -> dict:
    """``m -> (S+_m, S-_m)`` referenced to ``z = 0``."""
    ms = np.array(list(m_range))
    km = pole.kx + TWO_PI * ms
    if np.any(pole.kappa_n - km**2 == 0):
        raise BranchPoint("pole sits on a threshold")
    up, down = pole.field().far_field_amplitudes(ms)
    return {int(m): (complex(u), complex(d)) for m, u, d in zip(ms, up, down)}


def eval_siegert_field(pole: SiegertPole, x, z):
    return pole.field()(x, z)


def default_flux_box(pole: SiegertPole, margin: float = 0.25) -> FluxBox:
    box = support_box(pole.structure)
    return FluxBox(box.z_minus - margin, box.z_plus + margin)


def flux_numerator(fe: FieldEvaluator, box: FluxBox) -> float:
    """Outgoing flux through the top and bottom of the box."""
    rules = fe.disc.rules
    ztop = max(r.inclusion.shape.zrange[1] for r in rules)
    zbot = min(r.inclusion.shape.zrange[0] for r in rules)
    p = fe.p
    M = default_truncation(p, min(box.z2 - ztop, zbot - box.z1))
    mkq = spectral_modes(fe.kappa, fe.kx, M)
    q = mkq[2]
    up = fe.upgoing(mkq, box.z2)
    down = fe.downgoing(mkq, box.z1)
    return float(np.sum(q.real * (np.abs(up) ** 2 + np.abs(down) ** 2)))


def width_from_flux(pole: SiegertPole, box: FluxBox | None = None) -> float:
    """Width from the Green's-identity balance: outgoing flux over the
    eps-weighted norm of the state in the box."""
    box = default_flux_box(pole) if box is None else box
    fe = pole.field()
    num = flux_numerator(fe, box)
    den = fe.norm_sq(box.z1, box.z2, eps_weighted=True)
    return num / den


def strip_norm(pole: SiegertPole) -> float:
    """Eps-weighted norm over the support box plus closed-channel tails."""
    box = support_box(pole.structure)
    return pole.field().norm_sq(box.z_minus, box.z_plus, eps_weighted=True, tails=True)


def scale_pole(pole: SiegertPole, alpha: complex, tag: str | None = None) -> SiegertPole:
    """Multiply the state by ``alpha`` keeping the residue unchanged."""
    amps = {m: (alpha * a, alpha * b) for m, (a, b) in pole.amplitudes.items()}
    return replace(pole, state=alpha * pole.state, left_functional=pole.left_functional / np.conj(alpha),
                   amplitudes=amps, normalization_tag=tag or pole.normalization_tag)


def normalize_bic(pole: SiegertPole, gamma_tol: float = GAMMA_BIC_TOL) -> SiegertPole:
    """Scale a near-BIC state to unit eps-weighted norm on the strip."""
    if pole.gamma > gamma_tol:
        raise NotNearBic(f"Gamma={pole.gamma:.3e} exceeds {gamma_tol:.1e}")
    n = strip_norm(pole)
    # a nondegenerate bound state is real up to a global phase; remove it
    b = np.sum(pole.disc.weights * pole.state**2)
    phase = np.conj(np.sqrt(b)) / math.sqrt(abs(b)) if abs(b) > 0 else 1.0
    return scale_pole(pole, phase / math.sqrt(n), "bic_normalized")
