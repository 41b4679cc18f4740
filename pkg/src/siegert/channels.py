"""Branch convention, diffraction thresholds and channel bookkeeping.

The period of the structure is fixed to 1, so the Bloch-shifted transverse
wavenumbers are ``k_m = kx + 2*pi*m`` and channel ``m`` opens at the
threshold ``kappa = k_m**2``.  Every square root of ``kappa - k_m**2`` in the
library goes through :func:`branch_sqrt`, whose cut runs down the negative
imaginary axis so that closed channels decay and the cut plane excludes the
vertical half lines below each threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BranchPoint, CutPoint

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class SpectralPoint:
    """Spectral parameter ``kappa = k**2`` together with the Bloch wavenumber."""

    kappa: complex
    kx: float

    def __post_init__(self):
        object.__setattr__(self, "kappa", complex(self.kappa))
        object.__setattr__(self, "kx", float(self.kx))
        if not (math.isfinite(self.kx) and np.isfinite(self.kappa)):
            raise ValueError("kappa and kx must be finite")
        if self.kappa.imag < 0 and nearest_threshold_distance(self.kappa.real, self.kx) == 0.0:
            raise CutPoint(f"kappa={self.kappa} lies on a vertical cut")

    @property
    def k(self) -> complex:
        return branch_sqrt(self.kappa)


@dataclass(frozen=True)
class Threshold:
    value: float
    label: int  # signed ladder label: +m or -m
    channel: int  # diffraction order m' with (kx + 2 pi m')**2 == value


@dataclass(frozen=True)
class ChannelTable:
    kx: float
    thresholds: tuple = ()
    intervals: tuple = ()
    open_set: tuple = ()
    closed_set: tuple = ()
    M: int = 0
    extra: dict = field(default_factory=dict, compare=False)

    def interval_index(self, kappa_real: float) -> int | None:
        """Index ``l`` of the ladder interval containing a real ``kappa``."""
        for l, (lo, hi) in enumerate(self.intervals):
            if lo < kappa_real < hi:
                return l
        return None


def branch_sqrt(w):
    """Square root with ``arg w`` taken in ``(-pi/2, 3pi/2)``.

    Parameters
    ----------
    w : complex or array_like
        Argument.  Scalars on the open negative imaginary axis raise
        :class:`CutPoint`; arrays are evaluated without the check.

    Returns
    -------
    complex or ndarray
        ``sqrt(w)`` with ``Im >= 0`` on the real axis.
    """
    if np.ndim(w) == 0:
        w = complex(w)
        if w.real == 0.0 and w.imag < 0.0:
            raise CutPoint(f"branch_sqrt argument {w} lies on the cut")
        return complex(_branch_sqrt_array(np.asarray(w)))
    return _branch_sqrt_array(np.asarray(w, dtype=complex))


def _branch_sqrt_array(w):
    w = np.asarray(w, dtype=complex)
    s = np.sqrt(w)
    re, im = w.real, w.imag
    s = np.where((re < 0) & (im < 0), -s, s)
    neg_real = (im == 0) & (re < 0)
    if np.any(neg_real):
        s = np.where(neg_real, 1j * np.sqrt(np.abs(re)), s)
    return s


def transverse_wavenumbers(kx: float, ms) -> np.ndarray:
    return kx + TWO_PI * np.asarray(ms, dtype=float)


def channel_sqrt(kappa: complex, kx: float, ms) -> np.ndarray:
    """``q_m = branch_sqrt(kappa - k_m**2)`` for each order in ``ms``.

    Raises :class:`BranchPoint` when ``kappa`` equals one of the thresholds.
    """
    km = transverse_wavenumbers(kx, ms)
    w = complex(kappa) - km**2
    if np.any(w == 0):
        raise BranchPoint(f"kappa={kappa} equals a diffraction threshold")
    return _branch_sqrt_array(w)


def diffraction_thresholds(kx: float, M: int):
    """List of ``(m, (kx + 2 pi m)**2)`` for ``m = -M..M``."""
    if M < 0:
        raise ValueError("M must be nonnegative")
    return [(m, (kx + TWO_PI * m) ** 2) for m in range(-M, M + 1)]


def reduced_kx(kx: float) -> float:
    """Argument of ``exp(i kx)`` in ``(-pi, pi]``."""
    a = math.remainder(kx, TWO_PI)
    if a == -math.pi:
        a = math.pi
    return a


def nearest_threshold_distance(kappa_real: float, kx: float) -> float:
    """Smallest ``|kappa_real - k_m**2|`` over all orders ``m``."""
    best = abs(kappa_real - kx**2)
    if kappa_real > 0:
        r = math.sqrt(kappa_real)
        for sgn in (1.0, -1.0):
            c = (sgn * r - kx) / TWO_PI
            for m in (math.floor(c), math.ceil(c)):
                best = min(best, abs(kappa_real - (kx + TWO_PI * m) ** 2))
    return best


def threshold_ladder(kx: float, count: int) -> ChannelTable:
    """Ordered threshold ladder ``kappa*_0 <= kappa*_-1 <= kappa*_1 <= ...``.

    Returns ``count`` thresholds and the intervals ``I_0 .. I_{count-1}``;
    ``I_0`` is unbounded below and fused thresholds give empty intervals
    (``lo == hi``).
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    a = reduced_kx(kx)
    n = round((kx - a) / TWO_PI)
    absa = abs(a)
    labels = [0]
    m = 1
    while len(labels) < count:
        labels.append(-m)
        if len(labels) < count:
            labels.append(m)
        m += 1
    thresholds = []
    for lab in labels:
        mm = abs(lab)
        value = (TWO_PI * mm + absa) ** 2 if lab > 0 else (TWO_PI * mm - absa) ** 2
        if lab == 0:
            ch = -n
        elif (lab > 0) == (a >= 0):
            ch = mm - n
        else:
            ch = -mm - n
        thresholds.append(Threshold(value, lab, ch))
    intervals = [(-math.inf, thresholds[0].value)]
    for l in range(1, count):
        intervals.append((thresholds[l - 1].value, thresholds[l].value))
    return ChannelTable(kx=kx, thresholds=tuple(thresholds), intervals=tuple(intervals))


def classify_channels(p: SpectralPoint, M: int):
    """Split ``-M..M`` into open (``Re kappa >= k_m**2``) and closed orders."""
    open_set, closed_set = [], []
    for m, thr in diffraction_thresholds(p.kx, M):
        (open_set if p.kappa.real >= thr else closed_set).append(m)
    return tuple(open_set), tuple(closed_set)


def channel_table(p: SpectralPoint, M: int, count: int = 5) -> ChannelTable:
    ladder = threshold_ladder(p.kx, count)
    o, c = classify_channels(p, M)
    return ChannelTable(kx=p.kx, thresholds=ladder.thresholds, intervals=ladder.intervals,
                        open_set=o, closed_set=c, M=M)


def in_cut_plane(p: SpectralPoint, M: int, margin: float) -> bool:
    """True when ``Im kappa > 0`` or ``kappa`` is further than ``margin``
    (horizontally) from every cut with ``|m| <= M``."""
    if margin < 0:
        raise ValueError("margin must be nonnegative")
    if p.kappa.imag > 0:
        return True
    return all(abs(p.kappa.real - thr) > margin for _, thr in diffraction_thresholds(p.kx, M))


def default_truncation(p: SpectralPoint, distance: float, budget: float = 35.0, m_max: int = 4000) -> int:
    """Smallest ``M`` such that every excluded order decays by ``e**-budget``
    over ``distance``."""
    if distance <= 0:
        raise ValueError("distance must be positive")
    M = 0
    while M < m_max:
        q = channel_sqrt(p.kappa, p.kx, [-(M + 1), M + 1])
        if np.min(q.imag) * distance >= budget:
            return M
        M += 1
    return m_max
