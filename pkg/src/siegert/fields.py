"""Fields generated by a source density on the quadrature nodes.

Given nodal values ``E`` of a field satisfying ``E = E_inc + H[E]``, the
scattered part anywhere in the plane is ``int H(r - r') (eps - 1) E(r') dr'``.
Targets well above or below an inclusion use the plane-wave series; nearby
targets use the same product rules as the operator (Graf multipoles on disks,
Duffy triangles inside rectangles) plus the smooth Ewald remainder.

The module also integrates ``|E|**2`` over horizontal boxes exactly in ``z``
wherever the field is a sum of plane-wave modes, which is how norms over the
flux box, the support box and the whole strip are obtained.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special

from .channels import SpectralPoint, TWO_PI, _branch_sqrt_array, default_truncation
from .green import barycentric_matrix, chebyshev_nodes, proxy_size, regular_proxy, spectral_modes
from .operator import Discretization, GrafDisk, DuffyRect, lagrange_matrix, _gl
from .structures import Disk

FAR_GAP = 0.05  # beyond this z-distance from an inclusion the modal series is used
_CHUNK = 256


def _expm1_ratio(x):
    """``(exp(x) - 1) / x`` with the removable singularity at 0."""
    x = np.asarray(x, dtype=complex)
    small = np.abs(x) < 1e-8
    safe = np.where(small, 1.0, x)
    return np.where(small, 1.0 + 0.5 * x, np.expm1(safe) / safe)


@dataclass
class PlaneWave:
    """Incident ``exp(i (kx x + qz z))``."""

    kx: float
    qz: complex

    def __call__(self, x, z):
        return np.exp(1j * (self.kx * np.asarray(x) + self.qz * np.asarray(z)))


class FieldEvaluator:
    """Evaluate a field and its norms from nodal values.

    Parameters
    ----------
    disc : Discretization
    kappa : complex
    values : ndarray
        Total field at the quadrature nodes.
    incident : PlaneWave or None
        Incident wave included in the total field (``None`` for Siegert
        states).
    """

    def __init__(self, disc: Discretization, kappa: complex, values, incident: PlaneWave | None = None):
        self.disc = disc
        self.kappa = complex(kappa)
        self.k = complex(_branch_sqrt_array(np.asarray(self.kappa)))
        self.kx = disc.kx
        self.values = np.asarray(values, dtype=complex)
        self.incident = incident
        self.density = disc.contrast * self.values  # (eps - 1) E at nodes
        self.strength = self.density * disc.weights
        self.p = SpectralPoint(self.kappa, self.kx)
        half_x = 0.0
        for rule in disc.rules:
            sh = rule.inclusion.shape
            half_x = max(half_x, sh.r if isinstance(sh, Disk) else 0.5 * (sh.x1 - sh.x0))
        self._half_x = half_x
        self._proxy = None
        self._upsampled = {}

    # -- modal coefficients -------------------------------------------------

    def _modes(self, distance):
        M = default_truncation(self.p, max(distance, 1e-3))
        return spectral_modes(self.kappa, self.kx, M)

    def upgoing(self, ms_km_q, z_ref, subset=None):
        """Coefficients of ``exp(i k_m x + i q_m (z - z_ref))`` radiated upward
        by the inclusions in ``subset`` (all lying below ``z_ref``)."""
        ms, km, q = ms_km_q
        sl = self._subset_slice(subset)
        x, z = self.disc.nodes[sl, 0], self.disc.nodes[sl, 1]
        ph = np.exp(-1j * np.outer(km, x) + 1j * np.outer(q, z_ref - z))
        return (0.5j * self.kappa / q) * (ph @ self.strength[sl])

    def downgoing(self, ms_km_q, z_ref, subset=None):
        """Coefficients of ``exp(i k_m x - i q_m (z - z_ref))`` radiated
        downward by inclusions lying above ``z_ref``."""
        ms, km, q = ms_km_q
        sl = self._subset_slice(subset)
        x, z = self.disc.nodes[sl, 0], self.disc.nodes[sl, 1]
        ph = np.exp(-1j * np.outer(km, x) + 1j * np.outer(q, z - z_ref))
        return (0.5j * self.kappa / q) * (ph @ self.strength[sl])

    def _subset_slice(self, subset):
        if subset is None:
            return np.arange(self.disc.N)
        idx = [np.arange(self.disc.rules[i].start, self.disc.rules[i].stop) for i in subset]
        return np.concatenate(idx) if idx else np.zeros(0, dtype=int)

    def far_field_amplitudes(self, ms):
        """``S+_m``, ``S-_m`` referenced to ``z = 0``."""
        ms = np.asarray(ms)
        km = self.kx + TWO_PI * ms
        q = _branch_sqrt_array(self.kappa - km**2)
        up = self.upgoing((ms, km, q), 0.0)
        down = self.downgoing((ms, km, q), 0.0)
        return up, down

    # -- pointwise evaluation ----------------------------------------------

    def field_proxy(self):
        """Proxy for the kernel with the ``x = 0, +-1`` images removed."""
        if self._proxy is None:
            zspan = 0.0
            for rule in self.disc.rules:
                a, b = rule.inclusion.shape.zrange
                zspan = max(zspan, (b - a) + FAR_GAP)
            X = 0.5 + self._half_x + 1e-9
            self._proxy = regular_proxy(self.kx, X, zspan, strip_images=1)
        return self._proxy

    def scattered(self, x, z):
        """Scattered field ``int H (eps - 1) E`` at arbitrary points."""
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        shape = np.broadcast(x, z).shape
        x = np.broadcast_to(x, shape).ravel()
        z = np.broadcast_to(z, shape).ravel()
        out = np.zeros(x.shape, dtype=complex)
        for i, rule in enumerate(self.disc.rules):
            z0, z1 = rule.inclusion.shape.zrange
            above = z >= z1 + FAR_GAP
            below = z <= z0 - FAR_GAP
            near = ~(above | below)
            if np.any(above):
                d = float(np.min(z[above])) - z1
                mkq = self._modes(d)
                c = self.upgoing(mkq, z1, [i])
                out[above] += self._modal_sum(mkq, c, x[above], z[above] - z1, +1)
            if np.any(below):
                d = z0 - float(np.max(z[below]))
                mkq = self._modes(d)
                c = self.downgoing(mkq, z0, [i])
                out[below] += self._modal_sum(mkq, c, x[below], z[below] - z0, -1)
            if np.any(near):
                out[near] += self._near(i, rule, x[near], z[near])
        return out.reshape(shape)

    def __call__(self, x, z):
        """Total field (incident plus scattered)."""
        u = self.scattered(x, z)
        if self.incident is not None:
            u = u + self.incident(x, z)
        return u

    def _modal_sum(self, mkq, c, x, dz, sign):
        ms, km, q = mkq
        out = np.empty(x.shape, dtype=complex)
        for s in range(0, len(x), 4096):
            e = slice(s, s + 4096)
            ph = np.exp(1j * (np.outer(x[e], km) + sign * np.outer(dz[e], q)))
            out[e] = ph @ c
        return out

    def _near(self, i, rule, x, z):
        sh = rule.inclusion.shape
        cx = sh.cx if isinstance(sh, Disk) else 0.5 * (sh.x0 + sh.x1)
        n = np.round(x - cx)
        xw = x - n
        phase = np.exp(1j * self.kx * n)
        sl = slice(rule.start, rule.stop)
        dens = self.density[sl]
        if rule.kind == "disk":
            sing = self._disk_singular(i, rule, xw, z, dens)
        else:
            sing = self._rect_singular(i, rule, xw, z, dens)
        reg = self._regular_part(i, rule, xw, z)
        return phase * (sing + reg)

    def _disk_singular(self, i, rule, xw, z, dens):
        g = self.disc.self_ops[i]
        assert isinstance(g, GrafDisk)
        rho_t = np.hypot(xw - g.cx, z - g.cz)
        th_t = np.arctan2(z - g.cz, xw - g.cx)
        out = np.zeros(xw.shape, dtype=complex)
        ext = rho_t >= g.R
        if np.any(ext):
            out[ext] = self._disk_exterior(g, xw[ext], z[ext], dens) / (0.25j * self.kappa)
        inside = np.where(~ext)[0]
        for s in range(0, len(inside), _CHUNK):
            idx = inside[s:s + _CHUNK]
            rows = g.field_rows(self.k, xw[idx], z[idx])
            out[idx] = rows @ dens
        return 0.25j * self.kappa * out

    def _disk_exterior(self, g: GrafDisk, xw, z, dens):
        """Free-space field of one disk at targets outside it."""
        rho_t = np.hypot(xw - g.cx, z - g.cz)
        th_t = np.arctan2(z - g.cz, xw - g.cx)
        alpha = self._multipoles(g, dens)  # n = -N..N
        ns = np.arange(-g.nmax, g.nmax + 1)
        hn = special.hankel1(np.abs(ns)[None, :], self.k * rho_t[:, None])
        hn = hn * np.where(ns < 0, (-1.0) ** np.abs(ns), 1.0)[None, :]
        return 0.25j * self.kappa * np.sum(hn * np.exp(1j * ns[None, :] * th_t[:, None]) * alpha[None, :], axis=1)

    def _multipoles(self, g: GrafDisk, dens):
        """Outgoing multipole coefficients ``alpha_n`` (``n = -N..N``) of the
        interpolated density."""
        key = ("mp", id(g))
        N = g.nmax
        if key not in self._upsampled:
            s, w = _gl(g.n_sub, 0.0, g.R)
            L = lagrange_matrix(g.rho, s)
            ns = np.arange(N + 1)
            jn = special.jv(ns[:, None], self.k * s[None, :])
            self._upsampled[key] = (jn * (w * s)[None, :]) @ L  # (N+1, nr)
        W = self._upsampled[key]
        f = dens.reshape(g.nr, g.nt)
        ns = np.arange(-N, N + 1)
        Fn = (2.0 * math.pi / g.nt) * (f @ np.exp(-1j * np.outer(g.theta, ns)))  # (nr, 2N+1)
        Wn = W[np.abs(ns)] * np.where(ns < 0, (-1.0) ** np.abs(ns), 1.0)[:, None]
        return np.einsum("na,an->n", Wn, Fn)

    def _rect_singular(self, i, rule, xw, z, dens):
        d = self.disc.self_ops[i]
        assert isinstance(d, DuffyRect)
        sh = rule.inclusion.shape
        inside = (xw > sh.x0) & (xw < sh.x1) & (z > sh.z0) & (z < sh.z1)
        out = np.zeros(xw.shape, dtype=complex)
        idx = np.where(inside)[0]
        for s in range(0, len(idx), _CHUNK):
            ii = idx[s:s + _CHUNK]
            out[ii] = d.rows(self.k, xw[ii], z[ii]) @ dens
        out_idx = np.where(~inside)[0]
        if len(out_idx):
            out[out_idx] = self._rect_exterior(i, rule, xw[out_idx], z[out_idx], dens) / (0.25j * self.kappa)
        return 0.25j * self.kappa * out

    def _rect_exterior(self, i, rule, xw, z, dens):
        """Free-space field of one rectangle from a 4x upsampled rule."""
        sh = rule.inclusion.shape
        key = ("up", i)
        if key not in self._upsampled:
            n = 4 * rule.n1
            xs, wx = _gl(n, sh.x0, sh.x1)
            zs, wz = _gl(n, sh.z0, sh.z1)
            Lx = lagrange_matrix(rule.t1, xs)
            Lz = lagrange_matrix(rule.t2, zs)
            X, Z = np.meshgrid(xs, zs, indexing="ij")
            self._upsampled[key] = (X.ravel(), Z.ravel(), np.outer(wx, wz).ravel(), Lx, Lz)
        X, Z, W, Lx, Lz = self._upsampled[key]
        fine = (Lx @ dens.reshape(rule.n1, rule.n2) @ Lz.T).ravel() * W
        out = np.empty(xw.shape, dtype=complex)
        for s in range(0, len(xw), _CHUNK):
            e = slice(s, s + _CHUNK)
            rho = np.hypot(xw[e][:, None] - X[None, :], z[e][:, None] - Z[None, :])
            out[e] = special.hankel1(0, self.k * rho) @ fine
        return 0.25j * self.kappa * out

    def _regular_part(self, i, rule, xw, z):
        """All images except the inclusion itself: the two neighbours by
        multipoles (or fine quadrature for rectangles), the rest by
        interpolating a smooth target-grid field."""
        sh = rule.inclusion.shape
        out = np.zeros(xw.shape, dtype=complex)
        for m in (1, -1):
            xs = xw - m
            if rule.kind == "disk":
                img = self._disk_exterior(self.disc.self_ops[i], xs, z, self.density[rule.start:rule.stop])
            else:
                img = self._rect_exterior(i, rule, xs, z, self.density[rule.start:rule.stop])
            out += np.exp(1j * m * self.kx) * img
        xg, zg, U = self._remainder_grid(i, rule)
        Bx = barycentric_matrix(xg, xw)
        Bz = barycentric_matrix(zg, z)
        out += np.einsum("pa,ab,pb->p", Bx, U, Bz)
        return out

    def _remainder_grid(self, i, rule):
        key = ("grid", i)
        if key not in self._upsampled:
            sh = rule.inclusion.shape
            cx = sh.cx if isinstance(sh, Disk) else 0.5 * (sh.x0 + sh.x1)
            z0, z1 = sh.zrange
            zc, Zt = 0.5 * (z0 + z1), 0.5 * (z1 - z0) + FAR_GAP
            hx = self._half_x
            nx, nz = proxy_size(0.5, Zt, x_sing=2.0 - hx, z_sing=1.5 - hx)
            xg = cx + chebyshev_nodes(nx, 0.5)
            zg = zc + chebyshev_nodes(nz, Zt)
            proxy = self.field_proxy()
            sl = slice(rule.start, rule.stop)
            xs, zs = self.disc.nodes[sl, 0], self.disc.nodes[sl, 1]
            st = self.strength[sl]
            F = proxy.values(self.kappa)
            GX, GZ = np.meshgrid(xg, zg, indexing="ij")
            gx, gz = GX.ravel(), GZ.ravel()
            U = np.empty(gx.shape, dtype=complex)
            step = max(1, 100_000 // max(len(xs), 1))
            for s in range(0, len(gx), step):
                e = slice(s, s + step)
                dx = (gx[e][:, None] - xs[None, :]).ravel()
                dz = (gz[e][:, None] - zs[None, :]).ravel()
                Bx, Bz = proxy.basis(dx, dz)
                vals = np.einsum("pj,pj->p", Bx @ F, Bz).reshape(-1, len(xs))
                U[e] = vals @ st
            self._upsampled[key] = (xg, zg, U.reshape(nx, nz))
        return self._upsampled[key]

    # -- norms ------------------------------------------------------------

    def bands(self, pad=FAR_GAP):
        """Merged z-intervals of the inclusions, each grown by ``pad``."""
        iv = sorted((r.inclusion.shape.zrange[0], r.inclusion.shape.zrange[1], i)
                    for i, r in enumerate(self.disc.rules))
        merged = []
        for a, b, i in iv:
            if merged and a - merged[-1][1] < 2.0 * pad:
                merged[-1][1] = max(merged[-1][1], b)
                merged[-1][2].append(i)
            else:
                merged.append([a, b, [i]])
        return [(a - pad, b + pad, idx) for a, b, idx in merged]

    def norm_sq(self, z1: float, z2: float, eps_weighted: bool = True, tails: bool = False,
                n_band: int = 24) -> float:
        """``int_{[0,1] x [z1, z2]} |E|^2 (eps)``, optionally adding the
        closed-channel tails beyond the box (open channels excluded)."""
        zmin = min(r.inclusion.shape.zrange[0] for r in self.disc.rules)
        zmax = max(r.inclusion.shape.zrange[1] for r in self.disc.rules)
        pad = min(FAR_GAP, zmin - z1, z2 - zmax)
        if pad <= 0:
            raise ValueError("integration box must contain every inclusion")
        bands = self.bands(pad)
        total = 0.0
        # inclusion interiors: the eps - 1 excess
        if eps_weighted:
            total += float(np.sum(self.disc.contrast * self.disc.weights * np.abs(self.values) ** 2))
        edges = [z1]
        for a, b, idx in bands:
            total += self._band_norm(a, b, idx, n_band)
            edges += [a, b]
        edges.append(z2)
        for s in range(0, len(edges), 2):
            za, zb = edges[s], edges[s + 1]
            if zb > za:
                total += self._slab_norm(za, zb)
        if tails:
            total += self._tail_norm(z2, +1) + self._tail_norm(z1, -1)
        return float(total)

    def _slab_coeffs(self, za, zb):
        below = [i for i, r in enumerate(self.disc.rules) if r.inclusion.shape.zrange[1] <= za + 1e-12]
        above = [i for i, r in enumerate(self.disc.rules) if r.inclusion.shape.zrange[0] >= zb - 1e-12]
        dist = []
        for i in below:
            dist.append(za - self.disc.rules[i].inclusion.shape.zrange[1])
        for i in above:
            dist.append(self.disc.rules[i].inclusion.shape.zrange[0] - zb)
        mkq = self._modes(min(dist) if dist else 1.0)
        ms, km, q = mkq
        U = self.upgoing(mkq, za, below) if below else np.zeros(len(ms), dtype=complex)
        D = self.downgoing(mkq, zb, above) if above else np.zeros(len(ms), dtype=complex)
        if self.incident is not None:
            j = np.argmin(np.abs(km - self.incident.kx))
            if abs(km[j] - self.incident.kx) < 1e-12:
                U = U.copy()
                U[j] += np.exp(1j * self.incident.qz * za)
        return mkq, U, D

    def _slab_norm(self, za, zb):
        (ms, km, q), U, D = self._slab_coeffs(za, zb)
        L = zb - za
        beta = q.imag
        alpha = q.real
        t1 = (np.abs(U) ** 2 + np.abs(D) ** 2) * L * _expm1_ratio(-2.0 * beta * L).real
        cross = 2.0 * np.real(np.conj(U) * D * np.exp(1j * q * L) * L * _expm1_ratio(-2j * alpha * L))
        return float(np.sum(t1 + cross))

    def _tail_norm(self, zedge, sign):
        """Closed-channel tail ``int |E|^2`` beyond ``zedge`` (upward for
        ``sign = +1``)."""
        rules = self.disc.rules
        if sign > 0:
            ztop = max(r.inclusion.shape.zrange[1] for r in rules)
            mkq = self._modes(zedge - ztop)
            c = self.upgoing(mkq, zedge)
        else:
            zbot = min(r.inclusion.shape.zrange[0] for r in rules)
            mkq = self._modes(zbot - zedge)
            c = self.downgoing(mkq, zedge)
        ms, km, q = mkq
        closed = self.kappa.real < km**2
        beta = q.imag
        return float(np.sum(np.abs(c[closed]) ** 2 / (2.0 * beta[closed])))

    def line_norm_sq(self, z: float) -> float:
        """``int_0^1 |E(x, z)|^2 dx`` at a height outside every band."""
        rules = self.disc.rules
        ztop = max(r.inclusion.shape.zrange[1] for r in rules)
        zbot = min(r.inclusion.shape.zrange[0] for r in rules)
        if z > ztop:
            mkq = self._modes(z - ztop)
            c = self.upgoing(mkq, z)
            ms, km, q = mkq
        elif z < zbot:
            mkq = self._modes(zbot - z)
            c = self.downgoing(mkq, z)
            ms, km, q = mkq
        else:
            raise ValueError("line must lie outside the structure")
        if self.incident is not None:
            j = np.argmin(np.abs(km - self.incident.kx))
            c = c.copy()
            c[j] += np.exp(1j * self.incident.qz * z)
        return float(np.sum(np.abs(c) ** 2))

    def _band_norm(self, a, b, idx, n):
        """``int |E|^2`` over ``[0,1] x [a, b]`` (interiors included, no eps)."""
        rules = [self.disc.rules[i] for i in idx]
        inner = 0.0
        for r in rules:
            sl = slice(r.start, r.stop)
            inner += float(np.sum(self.disc.weights[sl] * np.abs(self.values[sl]) ** 2))
        if len(rules) == 1 and rules[0].kind == "disk":
            pts, w = _disk_band_rule(rules[0].inclusion.shape, a, b, n)
        elif len(rules) == 1:
            pts, w = _rect_band_rule(rules[0].inclusion.shape, a, b, n)
        else:
            warnings.warn("several inclusions share a band; using masked tensor quadrature")
            pts, w = _masked_band_rule([r.inclusion.shape for r in rules], a, b, n)
        vals = self(pts[:, 0], pts[:, 1])
        return inner + float(np.sum(w * np.abs(vals) ** 2))


def _disk_band_rule(disk: Disk, a, b, n):
    """Quadrature for ``([cx-1/2, cx+1/2] x [a, b])`` minus the disk, in polar
    sectors about the disk centre (one sector per rectangle side)."""
    cx, cz, R = disk.cx, disk.cz, disk.r
    xl, xr = cx - 0.5, cx + 0.5
    corners = [(xr, a), (xr, b), (xl, b), (xl, a)]
    angs = [math.atan2(zc - cz, xc - cx) for xc, zc in corners]
    # sides: right (a1 -> a2), top, left, bottom
    sectors = [
        (angs[0], angs[1], lambda t: (xr - cx) / np.cos(t)),
        (angs[1], angs[2], lambda t: (b - cz) / np.sin(t)),
        (angs[2], angs[3] + 2 * math.pi, lambda t: (xl - cx) / np.cos(t)),
        (angs[3] + 2 * math.pi, angs[0] + 2 * math.pi, lambda t: (a - cz) / np.sin(t)),
    ]
    pts, wts = [], []
    u, wu = np.polynomial.legendre.leggauss(n)
    for t0, t1, rmax in sectors:
        # split each sector in two at its midpoint for tangent-point smoothness
        for ta, tb in ((t0, 0.5 * (t0 + t1)), (0.5 * (t0 + t1), t1)):
            th = 0.5 * (tb - ta) * u + 0.5 * (tb + ta)
            wth = 0.5 * (tb - ta) * wu
            rm = rmax(th)
            for j in range(n):
                if rm[j] <= R:
                    continue
                rr = 0.5 * (rm[j] - R) * u + 0.5 * (rm[j] + R)
                wr = 0.5 * (rm[j] - R) * wu * rr
                pts.append(np.column_stack([cx + rr * np.cos(th[j]), cz + rr * np.sin(th[j])]))
                wts.append(wr * wth[j])
    return np.vstack(pts), np.concatenate(wts)


def _rect_band_rule(rect, a, b, n):
    """Complement of a rectangle inside ``[x0, x0 + 1] x [a, b]``."""
    pieces = [(rect.x1, rect.x0 + 1.0, rect.z0, rect.z1), (rect.x0, rect.x0 + 1.0, rect.z1, b),
              (rect.x0, rect.x0 + 1.0, a, rect.z0)]
    pts, wts = [], []
    for x0, x1, z0, z1 in pieces:
        if x1 <= x0 or z1 <= z0:
            continue
        xs, wx = _gl(n, x0, x1)
        zs, wz = _gl(n, z0, z1)
        X, Z = np.meshgrid(xs, zs, indexing="ij")
        pts.append(np.column_stack([X.ravel(), Z.ravel()]))
        wts.append(np.outer(wx, wz).ravel())
    return np.vstack(pts), np.concatenate(wts)


def _masked_band_rule(shapes, a, b, n, panels=8):
    xs, wx = [], []
    for p in range(panels):
        x, w = _gl(n, p / panels, (p + 1) / panels)
        xs.append(x)
        wx.append(w)
    zs, wz = [], []
    for p in range(panels):
        z, w = _gl(n, a + (b - a) * p / panels, a + (b - a) * (p + 1) / panels)
        zs.append(z)
        wz.append(w)
    X, Z = np.meshgrid(np.concatenate(xs), np.concatenate(zs), indexing="ij")
    W = np.outer(np.concatenate(wx), np.concatenate(wz))
    mask = np.ones(X.shape, dtype=bool)
    for sh in shapes:
        mask &= ~sh.contains(X, Z)
    return np.column_stack([X[mask], Z[mask]]), W[mask]
