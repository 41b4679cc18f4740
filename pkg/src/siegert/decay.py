"""Time dependence of a Siegert state excited by a Gaussian wave packet.

The modal amplitude is

    Omega_n(t) = a_tilde sqrt(Gamma) int_0^inf A(k) exp(-i c k t) / (k**2 - kappa_n) dk

with ``kappa_n = k_n**2 - i Gamma``.  ``omega_direct`` evaluates the integral by
panel Gauss-Legendre quadrature; ``omega_residue`` is the closed-form pole
contribution that carries the exponential decay.
"""

from __future__ import annotations

import cmath
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import NegativeRealPart, PoleNotEnclosed, QuadratureBudget

TRUNCATION = 8.0  # packet support is k_c +- 8 sigma, tail weight below e^-32
DECAY_HEADER = ("t", "re_omega_direct", "im_omega_direct", "re_omega_residue", "im_omega_residue",
                "envelope_direct")

_GL = {n: np.polynomial.legendre.leggauss(n) for n in (16, 32)}


@dataclass(frozen=True)
class WavePacket:
    """Gaussian distribution of wavenumbers centred at ``k_c``."""

    k_c: float
    sigma: float
    c: float = 1.0

    def __post_init__(self):
        if not (self.k_c > 0 and self.sigma > 0 and self.c > 0):
            raise ValueError("k_c, sigma and c must be positive")

    def amplitude(self, k):
        """``A(k)``; accepts complex ``k``."""
        k = np.asarray(k)
        return np.exp(-(k - self.k_c) ** 2 / (2 * self.sigma**2)) / (self.sigma * math.sqrt(2 * math.pi))

    @property
    def support(self) -> tuple[float, float]:
        return max(0.0, self.k_c - TRUNCATION * self.sigma), self.k_c + TRUNCATION * self.sigma


@dataclass
class DecayTrace:
    times: np.ndarray
    omega_direct: np.ndarray
    omega_residue: np.ndarray
    k_tilde: float
    tau: float
    window_t_max: float

    @property
    def envelope(self) -> np.ndarray:
        return np.abs(self.omega_direct)

    def rows(self):
        for t, d, r in zip(self.times, self.omega_direct, self.omega_residue):
            yield (t, d.real, d.imag, r.real, r.imag, abs(d))


def _kappa(pole) -> complex:
    """Pole as a complex number; widths within roundoff of zero are snapped to 0."""
    kap = complex(getattr(pole, "kappa_n", pole))
    if kap.imag > 0:
        if kap.imag > 1e-10 * max(1.0, abs(kap)):
            raise ValueError("pole lies in the upper half-plane")
        kap = complex(kap.real, 0.0)
    return kap


def decay_constants(pole, c: float = 1.0) -> tuple[float, float]:
    """Radiated wavenumber ``k_tilde`` and lifetime ``tau`` of a pole.

    ``pole`` is a :class:`~siegert.poles.SiegertPole` or a complex ``kappa_n``.
    """
    kap = _kappa(pole)
    k2, gamma = kap.real, -kap.imag
    if k2 <= 0:
        raise NegativeRealPart(f"Re kappa_n = {k2:.6g} <= 0")
    k_tilde = math.sqrt((k2 + math.hypot(k2, gamma)) / 2)
    tau = math.inf if gamma == 0 else 2 * k_tilde / (c * gamma)
    return k_tilde, tau


def observation_window(pole, packet: WavePacket) -> tuple[float, bool]:
    """Latest time ``k_c/(c sigma**2)`` at which the pole term still dominates,
    and whether the half-life fits inside it."""
    kap = _kappa(pole)
    k2, gamma = kap.real, -kap.imag
    t_max = packet.k_c / (packet.c * packet.sigma**2)
    lhs = math.log(2) * math.sqrt(k2 + math.hypot(k2, gamma)) / packet.k_c
    return t_max, bool(lhs <= gamma / packet.sigma**2)


def _breakpoints(kap: complex, packet: WavePacket, t: float) -> np.ndarray:
    a, b = packet.support
    step = packet.sigma / 2
    if t > 0:
        step = min(step, math.pi / (4 * packet.c * t))
    pts = [np.linspace(a, b, max(2, int(math.ceil((b - a) / step)) + 1))]
    # geometric grading towards the pole, whose Lorentzian width can be far
    # below sigma for narrow resonances
    root = cmath.sqrt(kap)
    w = abs(root.imag)
    if w > 0 and a < root.real < b:
        j = np.arange(int(math.ceil(math.log2(max(packet.sigma / w, 1.0)))) + 1)
        off = w * 2.0**j
        pts.append(np.clip(np.concatenate([root.real - off, root.real + off, [root.real]]), a, b))
    return np.unique(np.concatenate(pts))


def _panel_sum(f, edges: np.ndarray, n: int) -> tuple[complex, float]:
    x, w = _GL[n]
    lo, hi = edges[:-1, None], edges[1:, None]
    half = (hi - lo) / 2
    v = f(lo + half * (x + 1)) * w * half
    return complex(np.sum(v)), float(np.sum(np.abs(v)))


def _direct_one(kap, packet, t, rtol, max_panels):
    def f(k):
        return packet.amplitude(k) * np.exp(-1j * packet.c * k * t) / (k * k - kap)

    edges = _breakpoints(kap, packet, t)
    while True:
        if edges.size - 1 > max_panels:
            raise QuadratureBudget(f"t={t:.6g} needs more than {max_panels} panels")
        coarse, _ = _panel_sum(f, edges, 16)
        fine, scale = _panel_sum(f, edges, 32)
        # late times cancel to far below the integrand scale; roundoff sets a floor
        if abs(fine - coarse) <= max(rtol * abs(fine), 1e-12 * scale):
            return fine
        mid = (edges[:-1] + edges[1:]) / 2
        edges = np.sort(np.concatenate([edges, mid]))


def omega_direct(pole, packet: WavePacket, t_grid, a_tilde: complex = 1.0, rtol: float = 1e-10,
                 max_panels: int = 2_000_000, threads: int = 1) -> np.ndarray:
    """Direct quadrature of the modal amplitude on ``t_grid``.

    Panels are no wider than ``pi/(4 c t)`` and are graded towards the pole.
    A bound state (``Gamma = 0``) is not excited and returns zeros.
    """
    kap = _kappa(pole)
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    gamma = -kap.imag
    if kap.real <= 0:
        raise NegativeRealPart(f"Re kappa_n = {kap.real:.6g} <= 0")
    if gamma <= 0:
        return np.zeros(t_grid.shape, dtype=complex)
    pref = a_tilde * math.sqrt(gamma)

    def one(t):
        return pref * _direct_one(kap, packet, float(t), rtol, max_panels)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            vals = list(ex.map(one, t_grid))
    else:
        vals = [one(t) for t in t_grid]
    return np.array(vals, dtype=complex)


def omega_residue(pole, packet: WavePacket, t_grid, a_tilde: complex = 1.0) -> np.ndarray:
    """Pole contribution ``-pi i a_tilde sqrt(Gamma)/sqrt(kappa_n) A(sqrt(kappa_n)) exp(-i c t sqrt(kappa_n))``.

    The real k axis is pushed into the lower half-plane past the pole, which
    is therefore encircled clockwise.
    """
    kap = _kappa(pole)
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    if kap.real <= 0:
        raise PoleNotEnclosed(f"Re kappa_n = {kap.real:.6g} <= 0: pole leaves the deformed contour")
    gamma = -kap.imag
    if gamma <= 0:
        return np.zeros(t_grid.shape, dtype=complex)
    root = cmath.sqrt(kap)
    amp = -math.pi * 1j * a_tilde * math.sqrt(gamma) / root * complex(packet.amplitude(root))
    return amp * np.exp(-1j * packet.c * t_grid * root)


def decay_trace(pole, packet: WavePacket, t_grid, a_tilde: complex = 1.0, **kw) -> DecayTrace:
    k_tilde, tau = decay_constants(pole, packet.c)
    t_max, _ = observation_window(pole, packet)
    t_grid = np.asarray(t_grid, dtype=float)
    return DecayTrace(t_grid, omega_direct(pole, packet, t_grid, a_tilde, **kw),
                      omega_residue(pole, packet, t_grid, a_tilde), k_tilde, tau, t_max)


def relative_deviation(trace: DecayTrace) -> np.ndarray:
    """``|direct - residue| / |residue|`` per sample."""
    return np.abs(trace.omega_direct - trace.omega_residue) / np.abs(trace.omega_residue)


def transient_end(packet: WavePacket) -> float:
    """Time after which the packet transient ``exp(-c**2 t**2 sigma**2 / 2)`` is below ``e^-8``."""
    return max(3 / (packet.c * packet.k_c), 4 / (packet.c * packet.sigma))


def half_life(pole, packet: WavePacket, t0: float | None = None, a_tilde: complex = 1.0,
              rtol: float = 1e-10) -> float:
    """Time for ``|Omega_n|`` to fall from its value at ``t0`` to half of it.

    ``t0`` defaults to :func:`transient_end`.  The crossing is bracketed on a
    doubling grid and located with Brent's method on the direct quadrature.
    """
    if t0 is None:
        t0 = transient_end(packet)

    def env(t):
        return abs(omega_direct(pole, packet, [t], a_tilde, rtol=rtol)[0])

    target = env(t0) / 2
    _, tau = decay_constants(pole, packet.c)
    lo, hi = t0, t0 + 0.25 * tau
    while env(hi) > target:
        lo, hi = hi, t0 + 2 * (hi - t0)
        if hi - t0 > 64 * tau:
            raise QuadratureBudget("envelope does not halve")
    return brentq(lambda t: env(t) - target, lo, hi, xtol=1e-12 * hi, rtol=1e-12) - t0
