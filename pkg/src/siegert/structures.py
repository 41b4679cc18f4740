"""Periodic dielectric geometry and quadrature on its support.

A structure is a list of inclusions (disks or axis-aligned rectangles) inside
one period ``0 <= x < 1``.  The double-array coupling places an upper copy of
one inclusion list at ``z + h`` and a lower copy of another at ``z - h``;
their permittivity contrasts add where they overlap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import OutOfRange


@dataclass(frozen=True)
class Disk:
    cx: float
    cz: float
    r: float

    def __post_init__(self):
        if not (0 < self.r < 0.5):
            raise ValueError("disk radius must lie in (0, 0.5) to fit one period")

    def shifted(self, dz: float) -> "Disk":
        return Disk(self.cx, self.cz + dz, self.r)

    def contains(self, x, z):
        x = np.asarray(x, dtype=float)
        dx = x - self.cx
        dx = dx - np.round(dx)
        return dx * dx + (np.asarray(z) - self.cz) ** 2 < self.r * self.r

    @property
    def zrange(self):
        return (self.cz - self.r, self.cz + self.r)

    @property
    def area(self):
        return math.pi * self.r * self.r


@dataclass(frozen=True)
class Rectangle:
    x0: float
    x1: float
    z0: float
    z1: float

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.z1 > self.z0):
            raise ValueError("rectangle corners must satisfy x1 > x0 and z1 > z0")
        if self.x1 - self.x0 >= 1.0:
            raise ValueError("rectangle must be narrower than the period")

    def shifted(self, dz: float) -> "Rectangle":
        return Rectangle(self.x0, self.x1, self.z0 + dz, self.z1 + dz)

    def contains(self, x, z):
        x = np.asarray(x, dtype=float)
        xr = self.x0 + np.mod(x - self.x0, 1.0)
        z = np.asarray(z)
        return (xr > self.x0) & (xr < self.x1) & (z > self.z0) & (z < self.z1)

    @property
    def zrange(self):
        return (self.z0, self.z1)

    @property
    def area(self):
        return (self.x1 - self.x0) * (self.z1 - self.z0)


@dataclass(frozen=True)
class Inclusion:
    shape: Disk | Rectangle
    eps: float

    def __post_init__(self):
        if not self.eps >= 1.0:
            raise ValueError("permittivity must be >= 1")


@dataclass(frozen=True)
class DoubleArray:
    """Upper list placed at ``z + h``, lower list at ``z - h``."""

    upper: tuple = ()
    lower: tuple = ()


@dataclass(frozen=True)
class StructureSpec:
    inclusions: tuple = ()
    coupling: DoubleArray | None = None
    h_range: tuple = (-math.inf, math.inf)

    def __post_init__(self):
        object.__setattr__(self, "inclusions", tuple(self.inclusions))
        lo, hi = self.h_range
        if not lo < hi:
            raise ValueError("h_range must be a nonempty open interval")
        if self.coupling is not None and not (math.isfinite(lo) and math.isfinite(hi)):
            raise ValueError("double arrays need a bounded h_range")

    def check_h(self, h: float):
        lo, hi = self.h_range
        if not lo < h < hi:
            raise OutOfRange(f"h={h} outside the coupling interval ({lo}, {hi})")

    def placed(self, h: float = 0.0) -> tuple:
        """Inclusions at coupling value ``h``."""
        out = list(self.inclusions)
        if self.coupling is not None:
            self.check_h(h)
            out += [Inclusion(i.shape.shifted(h), i.eps) for i in self.coupling.upper]
            out += [Inclusion(i.shape.shifted(-h), i.eps) for i in self.coupling.lower]
        return tuple(out)

    @property
    def is_empty(self) -> bool:
        n = len(self.inclusions)
        if self.coupling is not None:
            n += len(self.coupling.upper) + len(self.coupling.lower)
        return n == 0 or all(i.eps == 1.0 for i in self._all_base())

    def _all_base(self):
        out = list(self.inclusions)
        if self.coupling is not None:
            out += list(self.coupling.upper) + list(self.coupling.lower)
        return out


def single_disk_array(r: float, eps: float, cx: float = 0.5, cz: float = 0.0) -> StructureSpec:
    return StructureSpec((Inclusion(Disk(cx, cz, r), eps),))


def double_disk_array(r: float, eps: float, h_range=(0.3, 3.0), cx: float = 0.5) -> StructureSpec:
    """Two identical disk arrays at ``z = +-h`` (a z-symmetric structure)."""
    inc = (Inclusion(Disk(cx, 0.0, r), eps),)
    return StructureSpec((), DoubleArray(inc, inc), tuple(h_range))


def eval_epsilon(s: StructureSpec, h: float, x, z):
    """Permittivity ``1 + sum_i (eps_i - 1) chi_i(x, z)`` at coupling ``h``."""
    if s.coupling is not None:
        s.check_h(h)
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    out = np.ones(np.broadcast(x, z).shape)
    for inc in s.placed(h if s.coupling is not None else 0.0):
        out = out + (inc.eps - 1.0) * inc.shape.contains(x, z)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class Box:
    z_minus: float
    z_plus: float
    degenerate: bool = False

    @property
    def height(self):
        return self.z_plus - self.z_minus


def support_box(s: StructureSpec) -> Box:
    """Box ``[0,1] x [z-, z+]`` holding the support for every admissible ``h``,
    padded by 10% of its height on each side."""
    if s.is_empty:
        return Box(0.0, 0.0, degenerate=True)
    lo, hi = [], []
    for inc in s.inclusions:
        a, b = inc.shape.zrange
        lo.append(a)
        hi.append(b)
    if s.coupling is not None:
        h0, h1 = s.h_range
        for inc in s.coupling.upper:
            a, b = inc.shape.zrange
            lo.append(a + h0)
            hi.append(b + h1)
        for inc in s.coupling.lower:
            a, b = inc.shape.zrange
            lo.append(a - h1)
            hi.append(b - h0)
    zmin, zmax = min(lo), max(hi)
    pad = 0.1 * (zmax - zmin)
    return Box(zmin - pad, zmax + pad)


@dataclass(frozen=True)
class InclusionRule:
    """Quadrature data for one placed inclusion."""

    inclusion: Inclusion
    start: int
    stop: int
    kind: str  # "disk" or "rect"
    n1: int  # radial (disk) or x (rect) node count
    n2: int  # angular (disk) or z (rect) node count
    t1: np.ndarray = field(repr=False)  # radii or x nodes
    t2: np.ndarray = field(repr=False)  # angles or z nodes
    w1: np.ndarray = field(repr=False)  # radial GL weights (without rho) or x weights
    w2: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class QuadratureDomain:
    nodes: np.ndarray
    weights: np.ndarray
    contrast: np.ndarray  # eps_i - 1 of the owning inclusion, per node
    rules: tuple
    box: Box
    h: float
    order: int

    @property
    def size(self) -> int:
        return len(self.weights)


def _gauss_legendre(n, a, b):
    t, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * t + 0.5 * (b + a), 0.5 * (b - a) * w


def disk_rule(disk: Disk, order: int):
    """Gauss-Legendre in radius times the trapezoidal rule in angle.

    Weights carry the polar Jacobian ``rho``; the rule is exact for the area
    and for every polynomial ``rho**j exp(i n theta)`` with ``j < 2 order`` and
    ``|n| <= order``.
    """
    nr, nt = order, 2 * order + 1
    rho, wr = _gauss_legendre(nr, 0.0, disk.r)
    th = 2.0 * math.pi * np.arange(nt) / nt
    R, T = np.meshgrid(rho, th, indexing="ij")
    x = disk.cx + R * np.cos(T)
    z = disk.cz + R * np.sin(T)
    w = (rho * wr)[:, None] * np.full(nt, 2.0 * math.pi / nt)[None, :]
    return np.column_stack([x.ravel(), z.ravel()]), w.ravel(), (nr, nt, rho, th, wr)


def rect_rule(rect: Rectangle, order: int):
    nx = nz = order
    xs, wx = _gauss_legendre(nx, rect.x0, rect.x1)
    zs, wz = _gauss_legendre(nz, rect.z0, rect.z1)
    X, Z = np.meshgrid(xs, zs, indexing="ij")
    w = np.outer(wx, wz)
    return np.column_stack([X.ravel(), Z.ravel()]), w.ravel(), (nx, nz, xs, zs, wx, wz)


def build_quadrature(s: StructureSpec, h: float = 0.0, order: int = 10) -> QuadratureDomain:
    """Nodes and weights on the support of ``eps - 1`` at coupling ``h``."""
    if order < 1:
        raise ValueError("order must be >= 1")
    nodes, weights, contrast, rules = [], [], [], []
    start = 0
    for inc in s.placed(h):
        if inc.eps == 1.0:
            continue
        if isinstance(inc.shape, Disk):
            pts, w, (n1, n2, t1, t2, w1) = disk_rule(inc.shape, order)
            w2 = np.full(n2, 2.0 * math.pi / n2)
            kind = "disk"
        else:
            pts, w, (n1, n2, t1, t2, w1, w2) = rect_rule(inc.shape, order)
            kind = "rect"
        stop = start + len(w)
        rules.append(InclusionRule(inc, start, stop, kind, n1, n2, t1, t2, w1, w2))
        nodes.append(pts)
        weights.append(w)
        contrast.append(np.full(len(w), inc.eps - 1.0))
        start = stop
    if nodes:
        nodes_a = np.vstack(nodes)
        weights_a = np.concatenate(weights)
        contrast_a = np.concatenate(contrast)
    else:
        nodes_a = np.zeros((0, 2))
        weights_a = np.zeros(0)
        contrast_a = np.zeros(0)
    return QuadratureDomain(nodes_a, weights_a, contrast_a, tuple(rules), support_box(s), float(h), order)
