"""Quasi-periodic kernel ``H(kappa; x, z)`` of the Lippmann-Schwinger operator.

``H`` is ``kappa`` times the Bloch-periodic outgoing Green's function of the
Helmholtz operator with period 1 in ``x``.  Three independent evaluation
routes are provided:

* :func:`green_spectral` -- the plane-wave (Rayleigh) series
  ``(i kappa / 2) sum_m exp(i (x k_m + |z| q_m)) / q_m``, fast off the axis;
* :func:`green_direct` -- the image sum of free-space Hankel kernels, used as
  an oracle;
* :class:`EwaldKernel` -- an Ewald split that converges everywhere and yields
  the smooth remainder ``H - (i kappa / 4) H0(k rho)`` needed by the
  singularity-subtracted quadrature.

:class:`ChebyshevProxy` tabulates the smooth remainder on a tensor Chebyshev
grid so that operator assembly only pays for interpolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special

from .channels import SpectralPoint, TWO_PI, _branch_sqrt_array, channel_sqrt
from .errors import BranchPoint, DomainError, SlowConvergence, TailDivergence


@dataclass(frozen=True)
class KernelEval:
    value: complex
    terms_used: int
    est_error: float


def hankel_h1_0(z):
    """Hankel function of the first kind and order zero.

    Raises :class:`DomainError` at ``z = 0`` where the function has a
    logarithmic singularity.
    """
    if np.ndim(z) == 0:
        if z == 0:
            raise DomainError("H0 is singular at z = 0")
        return complex(special.hankel1(0, complex(z)))
    z = np.asarray(z, dtype=complex)
    if np.any(z == 0):
        raise DomainError("H0 is singular at z = 0")
    return special.hankel1(0, z)


def _center_order(kx: float) -> int:
    return int(round(-kx / TWO_PI))


def _spectral_terms(kappa, kx, ms, x, z):
    km = kx + TWO_PI * np.asarray(ms, dtype=float)
    q = channel_sqrt(kappa, kx, ms)
    return 0.5j * kappa * np.exp(1j * (x * km + abs(z) * q)) / q, q


def green_spectral(p: SpectralPoint, x: float, z: float, tol: float = 1e-13,
                   max_terms: int = 200_001) -> KernelEval:
    """Plane-wave series for ``H`` with adaptive symmetric truncation.

    Terms are added in pairs around the order with the smallest ``|k_m|``
    until the geometric tail bound drops below ``tol * |value|``.

    Raises
    ------
    SlowConvergence
        When the bound cannot be met within ``max_terms`` terms, which is
        the case on the axis ``z = 0``.
    BranchPoint
        When ``kappa`` equals a threshold.
    """
    kappa, kx = p.kappa, p.kx
    m0 = _center_order(kx)
    value, _ = _spectral_terms(kappa, kx, [m0], x, z)
    total = complex(value[0])
    ratio = math.exp(-TWO_PI * abs(z))
    j, used = 0, 1
    block = 16
    while True:
        js = np.arange(j + 1, j + 1 + block)
        ms = np.concatenate([m0 + js, m0 - js])
        terms, q = _spectral_terms(kappa, kx, ms, x, z)
        # Sum pairwise in a fixed order for reproducibility.
        pair = terms[:block] + terms[block:]
        for i in range(block):
            total += pair[i]
            used += 2
            jj = j + 1 + i
            nxt_ms = [m0 + jj + 1, m0 - jj - 1]
            qn = channel_sqrt(kappa, kx, nxt_ms)
            if np.all(qn.imag > 0) and np.all(np.abs(qn) > abs(kappa) ** 0.5) and ratio < 1.0:
                mags = abs(kappa) / 2.0 * np.exp(-abs(z) * qn.imag) / np.abs(qn)
                est = float(np.sum(mags)) / (1.0 - ratio)
                if est <= tol * max(abs(total), 1e-300):
                    return KernelEval(total, used, est)
        j += block
        if used >= max_terms:
            raise SlowConvergence(
                f"spectral series did not reach tol={tol} within {max_terms} terms at z={z}")


def green_gradient(p: SpectralPoint, x: float, z: float, tol: float = 1e-13,
                   max_terms: int = 200_001):
    """Term-wise derivatives ``(dH/dx, dH/dz)`` of the spectral series."""
    if z == 0:
        raise SlowConvergence("gradient series requires z != 0")
    kappa, kx = p.kappa, p.kx
    m0 = _center_order(kx)
    sgn = 1.0 if z > 0 else -1.0
    ratio = math.exp(-TWO_PI * abs(z))
    gx = gz = 0j
    j = 0
    used = 0
    while True:
        ms = [m0] if j == 0 else [m0 + j, m0 - j]
        terms, q = _spectral_terms(kappa, kx, ms, x, z)
        km = kx + TWO_PI * np.asarray(ms, dtype=float)
        gx += complex(np.sum(1j * km * terms))
        gz += complex(np.sum(1j * q * sgn * terms))
        used += len(ms)
        qn = channel_sqrt(kappa, kx, [m0 + j + 1, m0 - j - 1])
        if np.all(qn.imag > 0) and np.all(np.abs(qn) > abs(kappa) ** 0.5):
            kn = np.abs(kx + TWO_PI * np.array([m0 + j + 1, m0 - j - 1], dtype=float))
            mags = abs(kappa) / 2.0 * np.exp(-abs(z) * qn.imag) * (kn + np.abs(qn)) / np.abs(qn)
            est = float(np.sum(mags)) / (1.0 - ratio)
            if est <= tol * max(abs(gx) + abs(gz), 1e-300):
                return gx, gz
        j += 1
        if used >= max_terms:
            raise SlowConvergence("gradient series did not converge")


def _wynn_epsilon(partial_sums):
    """Wynn's epsilon algorithm; returns the last even-column estimate."""
    s = list(partial_sums)
    n = len(s)
    prev = [0j] * (n + 1)
    cur = list(s)
    best = s[-1]
    for col in range(1, n):
        nxt = []
        for i in range(len(cur) - 1):
            d = cur[i + 1] - cur[i]
            if d == 0:
                return best
            nxt.append(prev[i + 1] + 1.0 / d)
        prev, cur = cur, nxt
        if col % 2 == 0 and cur:
            best = cur[-1]
        if len(cur) < 2:
            break
    return best


def green_direct(p: SpectralPoint, x: float, z: float, M: int | None = None,
                 accelerate: bool = False) -> complex:
    """Image sum ``sum_{|m|<=M} exp(i m kx) (i kappa/4) H0(k |(x - m, z)|)``.

    For ``Im k > 0`` the tail decays geometrically; ``M`` defaults to the
    smallest truncation whose tail bound is below ``1e-15`` relative, and an
    explicit ``M`` returns the truncated sum as is.  For real ``kappa`` the
    sum is only conditionally convergent and ``accelerate=True`` applies
    Wynn's epsilon algorithm to partial sums; otherwise
    :class:`TailDivergence` is raised.
    """
    kappa, kx = p.kappa, p.kx
    k = complex(_branch_sqrt_array(np.asarray(kappa)))
    if k == 0:
        raise BranchPoint("kappa = 0 is a threshold for kx = 0")
    imk = k.imag
    if imk <= 0 and not accelerate:
        raise TailDivergence("real kappa: image sum needs acceleration")

    def terms(ms):
        ms = np.asarray(ms, dtype=float)
        rho = np.hypot(x - ms, z)
        if np.any(rho == 0):
            raise DomainError("evaluation point coincides with a lattice image")
        return np.exp(1j * ms * kx) * 0.25j * kappa * special.hankel1(0, k * rho)

    if imk > 0 and not accelerate:
        auto = M is None
        if auto:
            M = int(math.ceil((38.0 + 0.5 * math.log(max(abs(k), 1e-3))) / imk + abs(x) + 2))
            M = min(M, 2_000_000)
        ms = np.arange(-M, M + 1)
        t = terms(ms)
        order = np.argsort(np.abs(ms), kind="stable")
        total = complex(np.sum(t[order][::-1]))
        # Geometric tail estimate from the asymptotic envelope of H0.
        r = math.exp(-imk)
        rho_next = M + 1 - abs(x)
        env = abs(kappa) / 4.0 * math.sqrt(2.0 / (math.pi * abs(k) * rho_next)) * math.exp(-imk * rho_next)
        tail_bound = 2.0 * env / (1.0 - r)
        if auto and tail_bound > 1e-6 * max(abs(total), 1e-300):
            raise TailDivergence(f"tail bound {tail_bound:.3e} too large for M={M}")
        return total
    # Accelerated route: epsilon algorithm on partial sums over growing |m|.
    M = 400 if M is None else M
    ms = np.arange(1, M + 1)
    tp = terms(ms)
    tn = terms(-ms)
    s0 = complex(terms([0])[0])
    chunk = max(1, M // 40)
    partial = np.cumsum(tp + tn)[chunk - 1::chunk] + s0
    return complex(_wynn_epsilon(partial[-24:]))


# ---------------------------------------------------------------------------
# Ewald split
# ---------------------------------------------------------------------------

EULER_GAMMA = 0.5772156649015329
_Q_TERMS = 72
_IMAGE_CUTOFF = 60.0  # drop images with rho^2 E^2 beyond this (E_1 < e^-60)


def ewald_parameter(kappa: complex) -> float:
    """Splitting parameter ``E`` on a power-of-two ladder so tables can be
    reused; grows with ``|kappa|`` to bound cancellation between the two
    Ewald parts."""
    j = max(0, math.ceil(math.log2(max(abs(kappa), 1e-300) / (16.0 * math.pi))))
    return math.sqrt(math.pi * 2.0**j)


class EwaldKernel:
    """Ewald evaluation of ``H`` and of its smooth remainder on fixed points.

    The table of generalized exponential integrals ``E_{q+1}(rho_m**2 E**2)``
    is independent of ``kappa``; it is built once per splitting parameter and
    reused for every spectral point with the same ``kx``.

    Parameters
    ----------
    kx : float
        Bloch wavenumber.
    x, z : array_like
        Evaluation points (same shape).  Intended for ``|x| <= 1`` and
        ``|z| E <= 10``.
    """

    def __init__(self, kx: float, x, z):
        self.kx = float(kx)
        self.x = np.ascontiguousarray(np.ravel(np.asarray(x, dtype=float)))
        self.z = np.ascontiguousarray(np.ravel(np.asarray(z, dtype=float)))
        self.shape = np.shape(x)
        self._tables = {}

    def _table(self, E):
        key = round(E * E / math.pi)
        if key in self._tables:
            return self._tables[key]
        x, z = self.x, self.z
        mmax = int(math.ceil(math.sqrt(_IMAGE_CUTOFF) / E + np.max(np.abs(x)) + 1))
        images = []
        for m in range(-mmax, mmax + 1):
            y = ((x - m) ** 2 + z**2) * E * E
            if np.min(y) > _IMAGE_CUTOFF:
                continue
            if m == 0:
                y = np.where(y == 0, 1.0, y)  # origin handled analytically
            qs = np.arange(1, _Q_TERMS + 1)
            tab = special.expn(qs[None, :], np.minimum(y, 700.0)[:, None])
            tab[y > _IMAGE_CUTOFF] = 0.0
            images.append((m, tab))
        origin = (x == 0) & (z == 0)
        out = (images, origin)
        self._tables[key] = out
        return out

    def _spatial(self, kappa, E, exclude_center):
        images, origin = self._table(E)
        xk = kappa / (4.0 * E * E)
        q = np.arange(_Q_TERMS)
        coef = np.exp(q * np.log(xk) - special.gammaln(q + 1)) if xk != 0 else (q == 0).astype(complex)
        total = np.zeros(self.x.shape, dtype=complex)
        for m, tab in images:
            if exclude_center and m == 0:
                continue
            total += np.exp(1j * m * self.kx) * (tab @ coef)
        return total / (4.0 * math.pi), coef, images, origin

    def _spectral(self, kappa, E):
        x, z = self.x, self.z
        az = np.abs(z)
        k_abs = abs(kappa) ** 0.5
        reach = 2.0 * E * (float(np.max(az)) * E + 7.0) + k_abs
        n0 = _center_order(self.kx)
        nmax = int(math.ceil(reach / TWO_PI)) + 1
        total = np.zeros(x.shape, dtype=complex)
        for n in range(n0 - nmax, n0 + nmax + 1):
            kn = self.kx + TWO_PI * n
            w = kappa - kn * kn
            if w == 0:
                raise BranchPoint(f"kappa={kappa} equals a diffraction threshold")
            qn = complex(_branch_sqrt_array(np.asarray(w)))
            a = -1j * qn / (2.0 * E)
            pref = np.exp(qn * qn / (4.0 * E * E) - az * az * E * E)
            val = pref * (special.erfcx(a - az * E) + special.erfcx(a + az * E))
            total += np.exp(1j * kn * x) * (0.25j / qn) * val
        return total

    def full(self, kappa: complex, E: float | None = None):
        """``H(kappa; x, z)``; infinite at lattice points."""
        kappa = complex(kappa)
        E = ewald_parameter(kappa) if E is None else E
        spat, coef, images, origin = self._spatial(kappa, E, exclude_center=False)
        g = spat + self._spectral(kappa, E)
        g = np.where(origin, np.inf, g)
        return (kappa * g).reshape(self.shape)

    def regular(self, kappa: complex, E: float | None = None):
        """Smooth remainder ``H - (i kappa/4) H0(k rho)`` with ``rho = |(x, z)|``."""
        kappa = complex(kappa)
        E = ewald_parameter(kappa) if E is None else E
        k = complex(_branch_sqrt_array(np.asarray(kappa)))
        spat, coef, images, origin = self._spatial(kappa, E, exclude_center=True)
        tab0 = dict(images).get(0)
        rho = np.hypot(self.x, self.z)
        center = np.zeros(self.x.shape, dtype=complex)
        if tab0 is not None:
            center = (tab0 @ coef) / (4.0 * math.pi)
        safe = np.where(origin, 1.0, rho)
        h0 = special.hankel1(0, k * safe)
        reg = spat + center - 0.25j * h0
        if np.any(origin):
            xk = kappa / (4.0 * E * E)
            qs = np.arange(1, _Q_TERMS)
            series = np.sum(np.exp(qs * np.log(xk) - special.gammaln(qs + 1)) / qs) if xk != 0 else 0.0
            d0 = (EULER_GAMMA + 2.0 * np.log(k / (2.0 * E)) + series) / (4.0 * math.pi) - 0.25j
            reg = np.where(origin, spat + d0, reg)
        g = reg + self._spectral(kappa, E)
        return (kappa * g).reshape(self.shape)


# ---------------------------------------------------------------------------
# Chebyshev proxy of the smooth remainder
# ---------------------------------------------------------------------------


def chebyshev_nodes(n: int, half_width: float) -> np.ndarray:
    return half_width * np.cos(np.pi * np.arange(n) / (n - 1))


def barycentric_matrix(nodes: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Rows of the barycentric interpolation operator for Chebyshev points of
    the second kind."""
    n = len(nodes)
    w = (-1.0) ** np.arange(n)
    w[0] *= 0.5
    w[-1] *= 0.5
    t = np.asarray(t, dtype=float)
    d = t[:, None] - nodes[None, :]
    exact = d == 0
    d = np.where(exact, 1.0, d)
    c = w[None, :] / d
    B = c / np.sum(c, axis=1, keepdims=True)
    hit = np.any(exact, axis=1)
    if np.any(hit):
        B[hit] = exact[hit].astype(float)
    return B


def proxy_size(half_width_x: float, half_width_z: float, digits: float = 14.0,
               x_sing: float = 1.0, z_sing: float | None = None) -> tuple[int, int]:
    """Chebyshev grid sizes from the Bernstein-ellipse distance to the nearest
    singularity: real ``x = +-x_sing`` and imaginary ``z = +-i z_sing``."""
    z_sing = (x_sing - half_width_x) if z_sing is None else z_sing
    ax = x_sing / max(half_width_x, 1e-3)
    rho_x = ax + math.sqrt(max(ax * ax - 1.0, 1e-12))
    b = max(z_sing, 1e-3) / max(half_width_z, 1e-3)
    rho_z = b + math.sqrt(b * b + 1.0)
    nx = int(math.ceil(digits * math.log(10) / math.log(rho_x))) + 3
    nz = int(math.ceil(digits * math.log(10) / math.log(rho_z))) + 3
    nx = min(max(nx | 1, 9), 129)
    nz = min(max(nz | 1, 9), 129)
    return nx, nz


class ChebyshevProxy:
    """Tensor Chebyshev interpolant of a smooth kernel remainder on
    ``[-X, X] x [-Z, Z]``.

    With ``strip_images = 0`` the remainder is ``H_reg = H - (i kappa/4) H0``;
    with ``strip_images = 1`` the Hankel terms of the images at ``x = +-1`` are
    removed as well, pushing the nearest singularity to ``x = +-2``.  The
    kernel is even in ``z``; that symmetry halves the Ewald evaluations.
    """

    def __init__(self, kx: float, half_width_x: float, half_width_z: float, strip_images: int = 0):
        if half_width_x >= 1.0 + strip_images:
            raise ValueError("proxy box must stay clear of the first retained image")
        self.kx = float(kx)
        self.X = float(half_width_x)
        self.Z = float(max(half_width_z, 1e-3))
        self.strip_images = int(strip_images)
        self.nx, self.nz = proxy_size(self.X, self.Z, x_sing=1.0 + strip_images)
        self.xn = chebyshev_nodes(self.nx, self.X)
        self.zn = chebyshev_nodes(self.nz, self.Z)
        # nodes run from +Z to -Z and are antisymmetric by index
        nh = (self.nz + 1) // 2
        self._zidx = np.arange(nh)
        self._mirror = np.minimum(np.arange(self.nz), self.nz - 1 - np.arange(self.nz))
        gx, gz = np.meshgrid(self.xn, self.zn[self._zidx], indexing="ij")
        self._gx, self._gz = gx, gz
        self._ewald = EwaldKernel(kx, gx, gz)
        self._cache_key = None
        self._values = None

    def values(self, kappa: complex) -> np.ndarray:
        kappa = complex(kappa)
        if self._cache_key != kappa:
            half = self._ewald.regular(kappa)
            if self.strip_images:
                k = complex(_branch_sqrt_array(np.asarray(kappa)))
                for m in range(1, self.strip_images + 1):
                    for sgn in (1, -1):
                        rho = np.hypot(self._gx - sgn * m, self._gz)
                        half = half - np.exp(1j * sgn * m * self.kx) * 0.25j * kappa * special.hankel1(0, k * rho)
            self._values = half[:, self._mirror]
            self._cache_key = kappa
        return self._values

    def basis(self, dx, dz):
        return barycentric_matrix(self.xn, np.ravel(dx)), barycentric_matrix(self.zn, np.ravel(dz))

    def evaluate(self, kappa: complex, dx, dz, basis=None):
        Bx, Bz = self.basis(dx, dz) if basis is None else basis
        F = self.values(kappa)
        return np.einsum("pj,pj->p", Bx @ F, Bz).reshape(np.shape(dx))


@lru_cache(maxsize=16)
def _cached_proxy(kx: float, X: float, Z: float, strip_images: int) -> ChebyshevProxy:
    return ChebyshevProxy(kx, X, Z, strip_images)


def regular_proxy(kx: float, half_width_x: float, half_width_z: float, strip_images: int = 0) -> ChebyshevProxy:
    """Shared proxy instance; box sizes are rounded up so nearby requests hit
    the cache."""
    X = math.ceil(half_width_x * 64.0) / 64.0
    Z = math.ceil(half_width_z * 64.0) / 64.0
    return _cached_proxy(float(kx), X, Z, int(strip_images))


def spectral_modes(kappa: complex, kx: float, M: int):
    """Orders ``-M..M`` around the centre order, their ``k_m`` and ``q_m``."""
    m0 = _center_order(kx)
    ms = np.arange(m0 - M, m0 + M + 1)
    km = kx + TWO_PI * ms
    q = channel_sqrt(kappa, kx, ms)
    return ms, km, q
