"""Discretized privacy loss distributions on a uniform grid."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .errors import DomainError

MASS_TOLERANCE = 1e-9
# Below this size direct convolution is faster and exact up to rounding.
_DIRECT_CONV_CELLS = 512


@dataclass(frozen=True, eq=False)
class PldGrid:
    """Probability masses of a privacy loss variable at ``origin + i * step``.

    ``tail_mass`` is mass that fell outside the grid. It is treated as
    infinite loss when computing a privacy profile, so it is always charged
    to delta in full.
    """

    origin: float
    step: float
    mass: np.ndarray
    tail_mass: float = 0.0
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        mass = np.asarray(self.mass, dtype=float)
        object.__setattr__(self, "mass", mass)
        if not self.validate:
            return
        if not self.step > 0:
            raise DomainError(f"step must be positive, got {self.step}")
        if mass.ndim != 1 or mass.size == 0:
            raise DomainError("mass must be a nonempty vector")
        if np.any(mass < 0):
            raise DomainError("mass entries must be nonnegative")
        if self.tail_mass < 0:
            raise DomainError("tail_mass must be nonnegative")
        total = float(mass.sum()) + self.tail_mass
        if abs(total - 1.0) > MASS_TOLERANCE:
            raise DomainError(f"grid mass sums to {total!r}, expected 1")

    @property
    def cells(self) -> int:
        return self.mass.size

    @property
    def losses(self) -> np.ndarray:
        return self.origin + self.step * np.arange(self.mass.size)

    @property
    def total_mass(self) -> float:
        return float(self.mass.sum()) + self.tail_mass

    @functools.cached_property
    def _suffix_sums(self) -> tuple[np.ndarray, np.ndarray]:
        # S[i] = sum_{j>=i} m_j and R[i] = sum_{j>=i} m_j exp(-(z_j - z_i)),
        # the latter via the stable recurrence R[i] = m_i + exp(-step) R[i+1].
        rev = self.mass[::-1]
        s = np.cumsum(rev)[::-1]
        r = signal.lfilter([1.0], [1.0, -math.exp(-self.step)], rev)[::-1]
        return s, r

    def delta(self, epsilon):
        """Hockey-stick value E[max(0, 1 - exp(epsilon - Z))] plus tail mass.

        Accepts a scalar or an array of epsilons.
        """
        eps = np.asarray(epsilon, dtype=float)
        z = self.losses
        s, r = self._suffix_sums
        idx = np.searchsorted(z, eps, side="right")
        inside = idx < z.size
        safe = np.where(inside, idx, 0)
        with np.errstate(over="ignore", invalid="ignore"):
            val = s[safe] - np.exp(np.minimum(eps - z[safe], 0.0)) * r[safe]
        out = np.where(inside, np.maximum(val, 0.0), 0.0) + self.tail_mass
        out = np.minimum(out, 1.0)
        return float(out) if out.ndim == 0 else out

    def mean(self) -> float:
        inside = float(self.mass.sum())
        return float(np.dot(self.mass, self.losses)) / inside

    def convolve(self, other: PldGrid) -> PldGrid:
        """Distribution of the sum of two independent losses."""
        if not math.isclose(self.step, other.step, rel_tol=1e-12):
            raise DomainError("grids must share the same step to be convolved")
        if self.cells * other.cells <= _DIRECT_CONV_CELLS**2 or min(self.cells, other.cells) < 16:
            mass = np.convolve(self.mass, other.mass)
        else:
            mass = signal.fftconvolve(self.mass, other.mass)
            np.clip(mass, 0.0, None, out=mass)
        tail = 1.0 - (1.0 - self.tail_mass) * (1.0 - other.tail_mass)
        # FFT round-off can leave a few ulps of excess mass.
        excess = float(mass.sum()) + tail - 1.0
        if excess > 0:
            mass *= (1.0 - tail) / (1.0 - tail + excess)
        return PldGrid(self.origin + other.origin, self.step, mass, tail)

    def truncate(self, threshold: float = 1e-18) -> PldGrid:
        """Drop negligible outer cells.

        Low-loss mass is folded into the lowest kept cell and high-loss mass
        moves to ``tail_mass``; both moves can only increase delta.
        """
        mass = self.mass
        csum = np.cumsum(mass)
        lo = int(np.searchsorted(csum, threshold, side="right"))
        rsum = np.cumsum(mass[::-1])
        hi = mass.size - int(np.searchsorted(rsum, threshold, side="right"))
        if lo == 0 and hi == mass.size:
            return self
        if hi <= lo:
            return self
        new = mass[lo:hi].copy()
        new[0] += float(mass[:lo].sum())
        tail = self.tail_mass + float(mass[hi:].sum())
        return PldGrid(self.origin + lo * self.step, self.step, new, tail)

    def compose(self, times: int, threshold: float = 1e-18) -> PldGrid:
        """``times``-fold self-convolution by repeated squaring."""
        if times < 1:
            raise DomainError("composition count must be >= 1")
        result = None
        base = self
        n = int(times)
        while n:
            if n & 1:
                result = base if result is None else result.convolve(base).truncate(threshold)
            n >>= 1
            if n:
                base = base.convolve(base).truncate(threshold)
        return result


def dirac_mixture(step: float, weights: dict[float, float]) -> PldGrid:
    """Grid for a finite mixture of point masses ``{location: weight}``.

    Off-grid locations are split linearly between the two neighbouring grid
    points so the mean is preserved. Infinite locations go to ``tail_mass``.
    """
    finite = {loc: w for loc, w in weights.items() if math.isfinite(loc) and w > 0}
    tail = float(sum(w for loc, w in weights.items() if not math.isfinite(loc)))
    if not finite:
        return PldGrid(0.0, step, np.array([0.0]), tail)
    lo_cell = min(math.floor(loc / step) for loc in finite)
    hi_cell = max(math.floor(loc / step) + 1 for loc in finite)
    mass = np.zeros(hi_cell - lo_cell + 1)
    for loc, w in finite.items():
        pos = loc / step
        k = math.floor(pos)
        frac = pos - k
        if frac < 1e-12:
            mass[k - lo_cell] += w
        else:
            mass[k - lo_cell] += w * (1.0 - frac)
            mass[k + 1 - lo_cell] += w * frac
    nz = np.flatnonzero(mass)
    mass = mass[nz[0] : nz[-1] + 1]
    return PldGrid((lo_cell + int(nz[0])) * step, step, mass, tail)
