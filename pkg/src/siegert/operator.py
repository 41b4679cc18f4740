"""Nystrom discretization of the Lippmann-Schwinger operator.

``A[i, j]`` approximates the action of the integral operator
``E -> int (eps - 1) H(kappa; r - r') E(r') dr'`` on nodal values.  Blocks that
couple two inclusions whose z-ranges are separated use the plane-wave series
in separable form.  Within an inclusion the kernel is split into the
free-space Hankel term, integrated against the nodal interpolant by product
integration (angular Fourier modes plus Graf's addition theorem on disks,
target-centred Duffy triangles on rectangles), and the smooth Ewald remainder,
which is sampled from a Chebyshev proxy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
from scipy import special

from .channels import SpectralPoint, TWO_PI, _branch_sqrt_array, default_truncation, in_cut_plane
from .errors import (ContourHitsEigenvalue, CutPoint, DegenerateProjection, DimensionMismatch,
                     MultipleInDisk, NearSingular, NoneInDisk)
from .green import regular_proxy, spectral_modes
from .structures import QuadratureDomain, StructureSpec, build_quadrature

SEPARATION_GAP = 0.05  # z-gap above which inclusion pairs use the separable series


# ---------------------------------------------------------------------------
# Product-integration helpers
# ---------------------------------------------------------------------------


def lagrange_matrix(nodes: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Rows evaluate the polynomial interpolant through ``nodes`` at ``t``."""
    nodes = np.asarray(nodes, dtype=float)
    t = np.asarray(t, dtype=float)
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    w = 1.0 / np.prod(diff, axis=1)
    d = t[:, None] - nodes[None, :]
    exact = d == 0
    d = np.where(exact, 1.0, d)
    c = w[None, :] / d
    L = c / np.sum(c, axis=1, keepdims=True)
    hit = np.any(exact, axis=1)
    if np.any(hit):
        L[hit] = exact[hit].astype(float)
    return L


def _gl(n, a, b):
    t, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * t + 0.5 * (b + a), 0.5 * (b - a) * w


class GrafDisk:
    """Product integration of ``H0(k |r - r'|)`` over one disk.

    For a target at polar coordinates ``(rho_t, theta_t)`` about the disk
    centre, Graf's theorem turns the integral into
    ``sum_n exp(i n theta_t) int_0^R s J_n(k s_<) H_n(k s_>) f_n(s) ds`` where
    ``f_n`` are angular Fourier coefficients of the nodal data, interpolated in
    the radius by the Lagrange polynomial through the Gauss nodes.  The radial
    integral is split at ``rho_t`` and graded geometrically towards it.
    """

    def __init__(self, rule, n_sub: int | None = None):
        self.rule = rule
        disk = rule.inclusion.shape
        self.cx, self.cz, self.R = disk.cx, disk.cz, disk.r
        self.nr, self.nt = rule.n1, rule.n2
        self.rho = rule.t1
        self.theta = rule.t2
        self.nmax = (self.nt - 1) // 2
        self.n_sub = n_sub or (self.nr + 14)
        self._geom = {}

    def _geometry(self, rho_t: float):
        key = float(rho_t)
        if key in self._geom:
            return self._geom[key]
        R, n = self.R, self.n_sub
        tiny = rho_t <= 1e-10 * R
        inner = outer = None
        if not tiny:
            s1, w1 = _gl(n, 0.0, min(rho_t, R))
            inner = (s1, w1 * s1, lagrange_matrix(self.rho, s1))
        if rho_t < R:
            start = max(rho_t, 1e-10 * R)
            edges = [start]
            while edges[-1] * 2.0 < R:
                edges.append(edges[-1] * 2.0)
            edges.append(R)
            ss, ww = [], []
            for a, b in zip(edges[:-1], edges[1:]):
                s, w = _gl(n, a, b)
                ss.append(s)
                ww.append(w)
            s2 = np.concatenate(ss)
            w2 = np.concatenate(ww)
            if tiny:  # log singularity of H0 at the centre: add the inner cap
                s0, w0 = _gl(n, 0.0, start)
                s2 = np.concatenate([s0, s2])
                w2 = np.concatenate([w0, w2])
            outer = (s2, w2 * s2, lagrange_matrix(self.rho, s2))
        g = (tiny, inner, outer)
        self._geom[key] = g
        return g

    def radial(self, k: complex, rho_t: float) -> np.ndarray:
        """``R[n, a]`` for ``n = 0..nmax``: radial weights of mode ``n``."""
        tiny, inner, outer = self._geometry(rho_t)
        ns = np.arange(self.nmax + 1)
        out = np.zeros((self.nmax + 1, self.nr), dtype=complex)
        if tiny:
            s2, w2, L2 = outer
            out[0] = (w2 * special.hankel1(0, k * s2)) @ L2
            return out
        s1, w1, L1 = inner
        jn_in = special.jv(ns[:, None], k * s1[None, :])
        hn_t = special.hankel1(ns, k * rho_t)
        out += hn_t[:, None] * ((jn_in * w1[None, :]) @ L1)
        if outer is not None:
            s2, w2, L2 = outer
            hn_out = special.hankel1(ns[:, None], k * s2[None, :])
            jn_t = special.jv(ns, k * rho_t)
            out += jn_t[:, None] * ((hn_out * w2[None, :]) @ L2)
        return out

    def self_block(self, k: complex) -> np.ndarray:
        """``G[t, j] ~ int H0(k |r_t - r'|) L_j(r') dr'`` for node targets."""
        nr, nt, nmax = self.nr, self.nt, self.nmax
        Rn = np.stack([self.radial(k, r) for r in self.rho])  # (nr_t, n, nr)
        ns = np.arange(nmax + 1)
        dth = 2.0 * math.pi * np.arange(nt) / nt
        c = np.cos(ns[:, None] * dth[None, :]) * 2.0
        c[0] = 1.0
        c *= 2.0 * math.pi / nt
        T = np.einsum("tna,nd->tad", Rn, c)  # (nr_t, nr, nt)
        bt = np.arange(nt)
        didx = (bt[:, None] - bt[None, :]) % nt  # (b_t, b)
        G = np.empty((nr, nt, nr, nt), dtype=complex)
        for a_t in range(nr):
            G[a_t] = np.transpose(T[a_t][:, didx], (1, 0, 2))
        return G.reshape(nr * nt, nr * nt)

    def field_rows(self, k: complex, xt, zt) -> np.ndarray:
        """Rows of the same product rule for arbitrary targets (``x`` already
        reduced to the period cell of the disk)."""
        xt = np.atleast_1d(np.asarray(xt, dtype=float))
        zt = np.atleast_1d(np.asarray(zt, dtype=float))
        dx, dz = xt - self.cx, zt - self.cz
        rho_t = np.hypot(dx, dz)
        th_t = np.arctan2(dz, dx)
        ns = np.arange(self.nmax + 1)
        rows = np.empty((len(xt), self.nr * self.nt), dtype=complex)
        for i in range(len(xt)):
            Rn = self.radial(k, rho_t[i])
            c = np.cos(ns[:, None] * (th_t[i] - self.theta)[None, :]) * 2.0
            c[0] = 1.0
            c *= 2.0 * math.pi / self.nt
            rows[i] = np.einsum("na,nb->ab", Rn, c).ravel()
        return rows


class DuffyRect:
    """Product integration of ``H0(k |r - r'|)`` over a rectangle for targets
    inside it: four triangles with apex at the target, a cubic radial
    substitution to smooth the logarithm, and tensor Lagrange interpolation of
    the nodal data."""

    def __init__(self, rule, n_sub: int | None = None):
        self.rule = rule
        rect = rule.inclusion.shape
        self.rect = rect
        self.xs, self.zs = rule.t1, rule.t2
        self.nx, self.nz = rule.n1, rule.n2
        self.n_sub = n_sub or max(2 * self.nx + 4, 16)
        self._geom = {}

    def _geometry(self, xt: float, zt: float):
        key = (float(xt), float(zt))
        if key in self._geom:
            return self._geom[key]
        r = self.rect
        corners = [(r.x0, r.z0), (r.x1, r.z0), (r.x1, r.z1), (r.x0, r.z1)]
        sig, wsig = _gl(self.n_sub, 0.0, 1.0)
        s = sig**3
        ws = 3.0 * sig**2 * wsig
        u, wu = _gl(self.n_sub, 0.0, 1.0)
        pts, wts = [], []
        for c in range(4):
            p1 = np.array(corners[c])
            p2 = np.array(corners[(c + 1) % 4])
            t = np.array([xt, zt])
            jac = abs((p1[0] - t[0]) * (p2[1] - p1[1]) - (p1[1] - t[1]) * (p2[0] - p1[0]))
            if jac == 0:
                continue
            base = p1[None, :] + u[:, None] * (p2 - p1)[None, :]  # (nu, 2)
            P = t[None, None, :] + s[:, None, None] * (base[None, :, :] - t[None, None, :])
            W = (ws * s)[:, None] * wu[None, :] * jac
            pts.append(P.reshape(-1, 2))
            wts.append(W.ravel())
        P = np.vstack(pts)
        W = np.concatenate(wts)
        rho = np.hypot(P[:, 0] - xt, P[:, 1] - zt)
        keep = rho > 0
        P, W, rho = P[keep], W[keep], rho[keep]
        Lx = lagrange_matrix(self.xs, P[:, 0])
        Lz = lagrange_matrix(self.zs, P[:, 1])
        g = (rho, W, Lx, Lz)
        self._geom[key] = g
        return g

    def rows(self, k: complex, xt, zt) -> np.ndarray:
        xt = np.atleast_1d(xt)
        zt = np.atleast_1d(zt)
        out = np.empty((len(xt), self.nx * self.nz), dtype=complex)
        for i in range(len(xt)):
            rho, W, Lx, Lz = self._geometry(xt[i], zt[i])
            f = W * special.hankel1(0, k * rho)
            out[i] = np.einsum("q,qa,qb->ab", f, Lx, Lz).ravel()
        return out

    def self_block(self, k: complex) -> np.ndarray:
        X, Z = np.meshgrid(self.xs, self.zs, indexing="ij")
        return self.rows(k, X.ravel(), Z.ravel())


# ---------------------------------------------------------------------------
# Discretization with kappa-independent caches
# ---------------------------------------------------------------------------


def _zgap(r1, r2):
    a0, a1 = r1.inclusion.shape.zrange
    b0, b1 = r2.inclusion.shape.zrange
    if a0 >= b1:
        return a0 - b1, 1
    if b0 >= a1:
        return b0 - a1, -1
    return -1.0, 0


class Discretization:
    """Quadrature, block plan and kappa-independent tables for one geometry.

    Parameters
    ----------
    s : StructureSpec
    h : float
        Coupling parameter (ignored for structures without coupling).
    kx : float
        Bloch wavenumber.
    order : int
        Quadrature order per inclusion.
    """

    def __init__(self, s: StructureSpec, h: float, kx: float, order: int):
        self.structure = s
        self.h = float(h)
        self.kx = float(kx)
        self.order = int(order)
        self.q = build_quadrature(s, h, order)
        self.nodes = self.q.nodes
        self.weights = self.q.weights
        self.contrast = self.q.contrast
        self.rules = self.q.rules
        self.N = self.q.size
        self.self_ops = []
        for rule in self.rules:
            self.self_ops.append(GrafDisk(rule) if rule.kind == "disk" else DuffyRect(rule))
        # Pair plan: separable (gap, direction) or near (needs proxy).
        self.plan = {}
        X = Z = 0.0
        for i, ri in enumerate(self.rules):
            for j, rj in enumerate(self.rules):
                if i == j:
                    sl_i = self.nodes[ri.start:ri.stop]
                    dx = sl_i[:, 0][:, None] - sl_i[:, 0][None, :]
                    dz = sl_i[:, 1][:, None] - sl_i[:, 1][None, :]
                    X = max(X, float(np.max(np.abs(dx))))
                    Z = max(Z, float(np.max(np.abs(dz))))
                    self.plan[i, j] = ("self", 0.0, 0)
                    continue
                gap, sign = _zgap(ri, rj)
                if gap >= SEPARATION_GAP:
                    self.plan[i, j] = ("sep", gap, sign)
                else:
                    self.plan[i, j] = ("near", 0.0, 0)
                    si = self.nodes[ri.start:ri.stop]
                    sj = self.nodes[rj.start:rj.stop]
                    dz = si[:, 1][:, None] - sj[:, 1][None, :]
                    X = max(X, 0.5)
                    Z = max(Z, float(np.max(np.abs(dz))))
        self.proxy = regular_proxy(kx, X, Z) if self.N else None
        self._pair_basis = {}
        for (i, j), (kind, _, _) in self.plan.items():
            if kind in ("self", "near"):
                ri, rj = self.rules[i], self.rules[j]
                dx, dz, phase_n = self._pair_diff(ri, rj, wrap=(kind == "near"))
                self._pair_basis[i, j] = (dx, dz, phase_n, self.proxy.basis(dx, dz))

    def _pair_diff(self, ri, rj, wrap):
        si = self.nodes[ri.start:ri.stop]
        sj = self.nodes[rj.start:rj.stop]
        dx = si[:, 0][:, None] - sj[:, 0][None, :]
        dz = si[:, 1][:, None] - sj[:, 1][None, :]
        n = np.round(dx) if wrap else np.zeros_like(dx)
        return dx - n, dz, n

    def kernel_matrix(self, kappa: complex) -> np.ndarray:
        """``K[i, j]``: quadrature weight of node ``j`` in ``int H(r_i - r') E(r') dr'``."""
        N = self.N
        K = np.zeros((N, N), dtype=complex)
        if N == 0:
            return K
        kappa = complex(kappa)
        k = complex(_branch_sqrt_array(np.asarray(kappa)))
        w = self.weights
        for (i, j), (kind, gap, sign) in self.plan.items():
            ri, rj = self.rules[i], self.rules[j]
            bi, bj = slice(ri.start, ri.stop), slice(rj.start, rj.stop)
            if kind == "sep":
                K[bi, bj] = self._separable_block(kappa, ri, rj, gap, sign) * w[bj][None, :]
                continue
            dx, dz, phase_n, basis = self._pair_basis[i, j]
            Bx, Bz = basis
            F = self.proxy.values(kappa)
            reg = np.einsum("pj,pj->p", Bx @ F, Bz).reshape(dx.shape)
            if kind == "self":
                sing = 0.25j * kappa * self.self_ops[i].self_block(k)
                K[bi, bj] = sing + reg * w[bj][None, :]
            else:
                rho = np.hypot(dx, dz)
                h0 = special.hankel1(0, k * rho)
                phase = np.exp(1j * self.kx * phase_n)
                K[bi, bj] = phase * (0.25j * kappa * h0 + reg) * w[bj][None, :]
        return K

    def _separable_block(self, kappa, ri, rj, gap, sign):
        """Plane-wave series between z-separated inclusions (``sign = +1``
        when the targets lie above the sources)."""
        p = SpectralPoint(kappa, self.kx)
        M = default_truncation(p, gap)
        ms, km, q = spectral_modes(kappa, self.kx, M)
        si = self.nodes[ri.start:ri.stop]
        sj = self.nodes[rj.start:rj.stop]
        zi0, zi1 = ri.inclusion.shape.zrange
        zj0, zj1 = rj.inclusion.shape.zrange
        zref = 0.5 * (zj1 + zi0) if sign > 0 else 0.5 * (zi1 + zj0)
        # |z_i - z_j| = sign * ((z_i - zref) + (zref - z_j))
        U = np.exp(1j * (si[:, 0][:, None] * km[None, :] + sign * (si[:, 1][:, None] - zref) * q[None, :]))
        V = np.exp(1j * (-sj[:, 0][:, None] * km[None, :] + sign * (zref - sj[:, 1][:, None]) * q[None, :]))
        return (U * (0.5j * kappa / q)[None, :]) @ V.T


@lru_cache(maxsize=12)
def discretization(s: StructureSpec, h: float, kx: float, order: int) -> Discretization:
    return Discretization(s, h, kx, order)


# ---------------------------------------------------------------------------
# Operator-level API
# ---------------------------------------------------------------------------


@dataclass
class OperatorMatrix:
    p: SpectralPoint
    h: float
    A: np.ndarray = field(repr=False)
    q: QuadratureDomain = field(repr=False)
    disc: Discretization = field(repr=False, default=None)

    @property
    def frobenius(self) -> float:
        """Discrete Hilbert-Schmidt norm in the weighted ``L2`` geometry."""
        w = np.sqrt(self.q.weights)
        if len(w) == 0:
            return 0.0
        return float(np.linalg.norm(w[:, None] * self.A / w[None, :]))

    @property
    def size(self):
        return self.A.shape[0]


def assemble(s: StructureSpec, h: float, p: SpectralPoint, q: QuadratureDomain | None = None,
             order: int | None = None, margin: float = 0.0) -> OperatorMatrix:
    """Nystrom matrix of the Lippmann-Schwinger operator at ``(h, kappa)``.

    Either a prebuilt quadrature ``q`` (its order is reused) or an ``order`` may
    be passed.
    """
    order = order if order is not None else (q.order if q is not None else 10)
    if not in_cut_plane(p, 64, margin):
        raise CutPoint(f"kappa={p.kappa} is within {margin} of a cut")
    disc = discretization(s, float(h) if s.coupling is not None else 0.0, p.kx, order)
    A = disc.kernel_matrix(p.kappa) * disc.contrast[None, :]
    return OperatorMatrix(p, h, A, disc.q, disc)


def assemble_matrix(disc: Discretization, kappa: complex) -> np.ndarray:
    return disc.kernel_matrix(kappa) * disc.contrast[None, :]


def inner(q_weights, f, g) -> complex:
    """Quadrature inner product, conjugate-linear in ``f``."""
    return complex(np.sum(q_weights * np.conj(f) * g))


def apply(op: OperatorMatrix, field_values) -> np.ndarray:
    v = np.asarray(field_values)
    if v.shape[0] != op.size:
        raise DimensionMismatch(f"field has {v.shape[0]} values, operator has {op.size} nodes")
    return op.A @ v


def resolvent_solve(op: OperatorMatrix, rhs, rcond: float = 1e-13) -> np.ndarray:
    """Solve ``(I - A) E = rhs``; raises :class:`NearSingular` when
    ``I - A`` is numerically singular."""
    rhs = np.asarray(rhs, dtype=complex)
    if rhs.shape[0] != op.size:
        raise DimensionMismatch("rhs size does not match the operator")
    if op.size == 0:
        return rhs.copy()
    M = np.eye(op.size) - op.A
    lu, piv = sla.lu_factor(M, check_finite=False)
    E = sla.lu_solve((lu, piv), rhs, check_finite=False)
    d = np.abs(np.diag(lu))
    if d.min() <= rcond * d.max():
        smin = float(np.linalg.svd(M, compute_uv=False)[-1])
        raise NearSingular(f"I - A is near singular (smallest singular value {smin:.3e})", smin)
    # one step of iterative refinement keeps the residual at roundoff level
    r = rhs - M @ E
    E = E + sla.lu_solve((lu, piv), r, check_finite=False)
    return E


def smallest_singular_value(op_or_matrix) -> float:
    A = op_or_matrix.A if isinstance(op_or_matrix, OperatorMatrix) else op_or_matrix
    return float(np.linalg.svd(np.eye(A.shape[0]) - A, compute_uv=False)[-1])


@dataclass
class EigenPairNearOne:
    lambda0: complex
    right: np.ndarray = field(repr=False)
    left: np.ndarray = field(repr=False)
    gap: float = 0.0


def eigen_near_one(op: OperatorMatrix, delta: float) -> EigenPairNearOne:
    """The unique eigenvalue of ``A`` in ``|lambda - 1| <= delta`` with its
    right and left eigenvectors (unit Euclidean norm)."""
    A = op.A if isinstance(op, OperatorMatrix) else op
    if A.shape[0] == 0:
        raise NoneInDisk("empty operator")
    lam, vl, vr = sla.eig(A, left=True, right=True, check_finite=False)
    dist = np.abs(lam - 1.0)
    inside = np.where(dist <= delta)[0]
    if len(inside) == 0:
        raise NoneInDisk(f"no eigenvalue within {delta} of 1 (closest at {dist.min():.3e})")
    if len(inside) > 1:
        raise MultipleInDisk(f"{len(inside)} eigenvalues within {delta} of 1", lam[inside])
    i = inside[0]
    others = np.delete(lam, i)
    gap = float(np.min(np.abs(others - lam[i]))) if len(others) else math.inf
    v = vr[:, i] / np.linalg.norm(vr[:, i])
    u = vl[:, i] / np.linalg.norm(vl[:, i])
    # polish with one step of two-sided inverse iteration at the computed shift
    lam0 = complex(lam[i])
    try:
        Ms = A - (lam0 + 1e-14 * max(1.0, abs(lam0))) * np.eye(A.shape[0])
        lu = sla.lu_factor(Ms, check_finite=False)
        v2 = sla.lu_solve(lu, v, check_finite=False)
        u2 = sla.lu_solve(lu, u, trans=2, check_finite=False)
        if np.all(np.isfinite(v2)) and np.all(np.isfinite(u2)):
            v = v2 / np.linalg.norm(v2)
            u = u2 / np.linalg.norm(u2)
            lam0 = complex(np.vdot(u, A @ v) / np.vdot(u, v))
    except (sla.LinAlgError, ValueError):
        pass
    return EigenPairNearOne(lam0, v, u, gap)


@dataclass
class RieszProjection:
    P: np.ndarray = field(repr=False)
    delta: float = 0.0
    rank_estimate: int = 0


def riesz_projection(op: OperatorMatrix, delta: float, n_quad: int = 64) -> RieszProjection:
    """Trapezoidal contour quadrature of ``(1/2 pi i) oint (lambda - A)^-1``
    over ``|lambda - 1| = delta``."""
    A = op.A if isinstance(op, OperatorMatrix) else op
    N = A.shape[0]
    lam = np.linalg.eigvals(A)
    ring = np.abs(np.abs(lam - 1.0) - delta)
    if N and ring.min() < 1e-3 * delta:
        raise ContourHitsEigenvalue(f"an eigenvalue lies within {ring.min():.2e} of the contour")
    P = np.zeros((N, N), dtype=complex)
    I = np.eye(N)
    for j in range(n_quad):
        z = delta * np.exp(2j * math.pi * (j + 0.5) / n_quad)
        P += z * np.linalg.inv((1.0 + z) * I - A)
    P /= n_quad
    return RieszProjection(P, delta, int(round(float(np.trace(P).real))))


def lambda0_formula(op: OperatorMatrix, P: RieszProjection, E_ref) -> complex:
    """Perturbed eigenvalue ``<E, A P E> / <E, P E>`` in the quadrature inner product."""
    w = op.q.weights
    PE = P.P @ E_ref
    den = inner(w, E_ref, PE)
    scale = math.sqrt(abs(inner(w, E_ref, E_ref)) * abs(inner(w, PE, PE)))
    if abs(den) <= 1e-12 * max(scale, 1e-300):
        raise DegenerateProjection("<E, P E> vanishes")
    return inner(w, E_ref, op.A @ PE) / den
