"""Gaussian and Laplace noise kernels: calibration, sampling and privacy profiles.

The worst-case neighbouring pair for a symmetric location-shift kernel is a
shift of the output by exactly the sensitivity. With the true answer at 0 the
privacy loss at output ``t`` is ``log f(t) - log f(t - sensitivity)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .errors import AccuracyError, CalibrationError, DomainError, ResolutionError
from .pld import PldGrid

# Quadrature settings for the hockey-stick integral.
QUAD_EPSABS = 1e-15
QUAD_EPSREL = 1e-11
QUAD_LIMIT = 200
TRUNCATION_SCALES = 12.0

DEFAULT_PLD_STEP = 1e-3
GAUSSIAN_PLD_WIDTH = 20.0  # standard deviations of the loss on each side
MIN_INSIDE_MASS = 1.0 - 1e-6


@dataclass(frozen=True)
class BudgetPair:
    """A privacy budget ``(epsilon, delta)``."""

    epsilon: float
    delta: float = 0.0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise DomainError(f"epsilon must be positive, got {self.epsilon}")
        if not 0.0 <= self.delta <= 1.0:
            raise DomainError(f"delta must lie in [0, 1], got {self.delta}")


class KernelKind(str, enum.Enum):
    GAUSSIAN = "gaussian"
    LAPLACE = "laplace"

    @classmethod
    def parse(cls, value) -> KernelKind:
        if isinstance(value, cls):
            return value
        name = str(value).strip().lower()
        if name in ("laplacian", "lap"):
            name = "laplace"
        if name in ("gauss", "gau", "normal"):
            name = "gaussian"
        try:
            return cls(name)
        except ValueError:
            raise DomainError(f"unknown kernel kind {value!r}") from None


@dataclass(frozen=True)
class CalibratedKernel:
    """Zero-mean symmetric noise law bound to a query sensitivity.

    ``scale`` is the standard deviation for the Gaussian kernel and the
    Laplace scale ``b`` for the Laplace kernel.
    """

    kind: KernelKind
    scale: float
    sensitivity: float

    def __post_init__(self):
        object.__setattr__(self, "kind", KernelKind.parse(self.kind))
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise DomainError(f"scale must be positive and finite, got {self.scale}")
        if not (self.sensitivity > 0 and math.isfinite(self.sensitivity)):
            raise DomainError(f"sensitivity must be positive, got {self.sensitivity}")

    @property
    def max_loss(self) -> float:
        """Largest privacy loss (infinite for the Gaussian kernel)."""
        if self.kind is KernelKind.LAPLACE:
            return self.sensitivity / self.scale
        return math.inf

    @property
    def gaussian_mu(self) -> float:
        """Mean of the (normal) privacy loss of a Gaussian kernel."""
        return self.sensitivity**2 / (2.0 * self.scale**2)


# -- densities -------------------------------------------------------------


def pdf(kernel: CalibratedKernel, x):
    x = np.asarray(x, dtype=float)
    s = kernel.scale
    if kernel.kind is KernelKind.GAUSSIAN:
        out = np.exp(-0.5 * (x / s) ** 2) / (s * math.sqrt(2.0 * math.pi))
    else:
        out = np.exp(-np.abs(x) / s) / (2.0 * s)
    return float(out) if out.ndim == 0 else out


def cdf(kernel: CalibratedKernel, x):
    """Pr(N <= x) for the kernel noise ``N``."""
    x = np.asarray(x, dtype=float)
    s = kernel.scale
    if kernel.kind is KernelKind.GAUSSIAN:
        out = special.ndtr(x / s)
    else:
        half_tail = 0.5 * np.exp(-np.abs(x) / s)
        out = np.where(x < 0, half_tail, 1.0 - half_tail)
    return float(out) if out.ndim == 0 else out


def sample_noise(kernel: CalibratedKernel, rng: np.random.Generator, size=None):
    """Draw kernel noise from a caller-owned generator."""
    if kernel.kind is KernelKind.GAUSSIAN:
        return rng.normal(0.0, kernel.scale, size)
    return rng.laplace(0.0, kernel.scale, size)


# -- calibration -----------------------------------------------------------


def calibrate_laplace(epsilon: float, sensitivity: float) -> CalibratedKernel:
    if not epsilon > 0:
        raise DomainError(f"epsilon must be positive, got {epsilon}")
    return CalibratedKernel(KernelKind.LAPLACE, sensitivity / epsilon, sensitivity)


def calibrate_gaussian(
    budget: BudgetPair,
    sensitivity: float,
    max_iter: int = 200,
    rel_tol: float = 1e-9,
) -> CalibratedKernel:
    """Smallest sigma whose tight privacy profile at ``budget.epsilon`` is <= delta.

    Bracketed bisection on ``log(sigma)``; the profile is decreasing in sigma.
    """
    eps, delta = budget.epsilon, budget.delta
    if not 0.0 < delta < 1.0:
        raise DomainError(f"Gaussian calibration needs delta in (0, 1), got {delta}")
    if not sensitivity > 0:
        raise DomainError(f"sensitivity must be positive, got {sensitivity}")

    def profile(log_sigma):
        mu = sensitivity**2 / (2.0 * math.exp(2.0 * log_sigma))
        return gaussian_loss_profile(mu, eps)

    # Classical bound as the starting guess, then widen until bracketed.
    guess = sensitivity * math.sqrt(2.0 * math.log(1.25 / delta)) / eps
    lo = hi = math.log(guess)
    for _ in range(2000):
        if profile(hi) <= delta:
            break
        hi += 1.0
    else:
        raise CalibrationError("could not find a feasible sigma")
    lo = hi
    for _ in range(2000):
        if profile(lo) > delta:
            break
        lo -= 1.0
    else:
        raise CalibrationError("could not find an infeasible sigma below the root")

    for _ in range(max_iter):
        if hi - lo <= rel_tol:
            return CalibratedKernel(KernelKind.GAUSSIAN, math.exp(hi), sensitivity)
        mid = 0.5 * (lo + hi)
        if profile(mid) <= delta:
            hi = mid
        else:
            lo = mid
    raise CalibrationError(
        f"sigma bisection did not reach relative tolerance {rel_tol} in {max_iter} steps"
    )


def calibrate(kind, budget: BudgetPair, sensitivity: float) -> CalibratedKernel:
    """Calibrate a kernel of the given kind to a budget.

    The Laplace kernel is pure-epsilon; its delta share is not used.
    """
    kind = KernelKind.parse(kind)
    if kind is KernelKind.GAUSSIAN:
        return calibrate_gaussian(budget, sensitivity)
    return calibrate_laplace(budget.epsilon, sensitivity)


# -- privacy profiles ------------------------------------------------------


def gaussian_loss_profile(mu, epsilon):
    """Hockey-stick delta of a privacy loss distributed as N(mu, 2 mu).

    Both arguments broadcast. Computed in log space so that tiny deltas keep
    their relative accuracy.
    """
    mu = np.asarray(mu, dtype=float)
    eps = np.asarray(epsilon, dtype=float)
    mu, eps = np.broadcast_arrays(mu, eps)
    out = np.empty(mu.shape)
    degenerate = mu <= 0
    # mu == 0 means identical distributions.
    out[degenerate] = np.where(eps[degenerate] < 0, -np.expm1(np.minimum(eps[degenerate], 0.0)), 0.0)
    m = mu[~degenerate]
    e = eps[~degenerate]
    with np.errstate(invalid="ignore", over="ignore"):
        s = np.sqrt(2.0 * m)
        la = special.log_ndtr((m - e) / s)
        lb = special.log_ndtr((-m - e) / s)
        val = np.exp(la) * -np.expm1(np.minimum(e + lb - la, 0.0))
    val = np.where(e == np.inf, 0.0, val)
    val = np.where(e == -np.inf, 1.0, val)
    out[~degenerate] = np.clip(np.nan_to_num(val, nan=0.0), 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def laplace_loss_profile(max_loss: float, epsilon):
    """Hockey-stick delta of the Laplace kernel with ``max_loss = sensitivity / b``."""
    eps = np.asarray(epsilon, dtype=float)
    a = max_loss
    with np.errstate(over="ignore"):
        out = np.where(
            eps >= a,
            0.0,
            np.where(eps <= -a, -np.expm1(np.minimum(eps, 0.0)), -np.expm1((eps - a) / 2.0)),
        )
    return float(out) if out.ndim == 0 else out


def _loss_threshold(kernel: CalibratedKernel, epsilon: float) -> float:
    """Output value below which the privacy loss exceeds ``epsilon``."""
    d, s = kernel.sensitivity, kernel.scale
    if kernel.kind is KernelKind.GAUSSIAN:
        return d / 2.0 - epsilon * s * s / d
    if epsilon >= d / s:
        return -math.inf
    if epsilon < -d / s:
        return math.inf
    return (d - epsilon * s) / 2.0


def _hockey_stick_integrand(kernel: CalibratedKernel, epsilon: float):
    d, s = kernel.sensitivity, kernel.scale
    if kernel.kind is KernelKind.GAUSSIAN:
        norm = 1.0 / (s * math.sqrt(2.0 * math.pi))

        def integrand(t):
            z = (d * d - 2.0 * t * d) / (2.0 * s * s)
            if z <= epsilon:
                return 0.0
            return norm * math.exp(-0.5 * (t / s) ** 2) * -math.expm1(epsilon - z)

    else:
        norm = 1.0 / (2.0 * s)

        def integrand(t):
            z = (abs(t - d) - abs(t)) / s
            if z <= epsilon:
                return 0.0
            return norm * math.exp(-abs(t) / s) * -math.expm1(epsilon - z)

    return integrand


def hockey_stick_quad(kernel: CalibratedKernel, epsilon: float) -> float:
    """Integral of max(0, f(t) - e^eps f(t - sensitivity)) by adaptive quadrature."""
    if epsilon == math.inf:
        return 0.0
    if epsilon == -math.inf:
        return 1.0
    integrand = _hockey_stick_integrand(kernel, epsilon)
    d, s = kernel.sensitivity, kernel.scale
    span = TRUNCATION_SCALES * s
    points = {-span, 0.0, d, d + span}
    t_star = _loss_threshold(kernel, epsilon)
    if math.isfinite(t_star):
        points.add(t_star)
        points.add(t_star - span)
    pts = sorted(points)
    edges = [-math.inf, *pts, math.inf]
    total = 0.0
    err = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        if math.isfinite(t_star) and a >= t_star:
            break  # integrand vanishes beyond the threshold
        val, abserr = integrate.quad(
            integrand, a, b, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=QUAD_LIMIT
        )
        total += val
        err += abserr
    if err > max(1e-12, 1e-8 * total):
        raise AccuracyError(f"hockey-stick quadrature error {err:.3g} exceeds tolerance")
    return min(max(total, 0.0), 1.0)


def privacy_profile(kernel: CalibratedKernel, epsilon, method: str = "auto"):
    """Tight single-use delta(epsilon) of the kernel.

    ``method="quad"`` always integrates the hockey-stick divergence;
    ``"closed"``/``"auto"`` use the closed forms, which the test-suite checks
    against quadrature.
    """
    if method == "quad":
        eps = np.asarray(epsilon, dtype=float)
        out = np.vectorize(lambda e: hockey_stick_quad(kernel, float(e)), otypes=[float])(eps)
        return float(out) if out.ndim == 0 else out
    if method not in ("auto", "closed"):
        raise DomainError(f"unknown profile method {method!r}")
    if kernel.kind is KernelKind.GAUSSIAN:
        return gaussian_loss_profile(kernel.gaussian_mu, epsilon)
    return laplace_loss_profile(kernel.max_loss, epsilon)


# -- privacy loss distribution --------------------------------------------


def loss_cdf(kernel: CalibratedKernel, z):
    """Pr(Z <= z) for the kernel privacy loss under the worst-case shift."""
    z = np.asarray(z, dtype=float)
    if kernel.kind is KernelKind.GAUSSIAN:
        mu = kernel.gaussian_mu
        out = special.ndtr((z - mu) / math.sqrt(2.0 * mu))
    else:
        a = kernel.max_loss
        with np.errstate(over="ignore"):
            out = np.where(z < -a, 0.0, np.where(z >= a, 1.0, 0.5 * np.exp((np.minimum(z, a) - a) / 2.0)))
    return float(out) if out.ndim == 0 else out


def loss_sf(kernel: CalibratedKernel, z):
    """Pr(Z > z); accurate in the upper tail."""
    z = np.asarray(z, dtype=float)
    if kernel.kind is KernelKind.GAUSSIAN:
        mu = kernel.gaussian_mu
        out = special.ndtr(-(z - mu) / math.sqrt(2.0 * mu))
    else:
        a = kernel.max_loss
        with np.errstate(over="ignore"):
            out = np.where(
                z < -a, 1.0, np.where(z >= a, 0.0, -np.expm1(np.log(0.5) + (np.minimum(z, a) - a) / 2.0))
            )
    return float(out) if out.ndim == 0 else out


def pld_grid(kernel: CalibratedKernel, origin: float, step: float, cells: int) -> PldGrid:
    """Discretize the kernel privacy loss onto ``origin + i * step``.

    Cell ``i`` receives the mass of ``(z_i - step/2, z_i + step/2]``. Mass
    outside the grid becomes ``tail_mass``.
    """
    if cells < 2:
        raise DomainError("a PLD grid needs at least 2 cells")
    if not step > 0:
        raise DomainError("step must be positive")
    z = origin + step * np.arange(cells)
    edges = np.concatenate([z - step / 2.0, [z[-1] + step / 2.0]])
    lower = np.asarray(loss_cdf(kernel, edges))
    upper = np.asarray(loss_sf(kernel, edges))
    median = 0.0 if kernel.kind is KernelKind.LAPLACE else kernel.gaussian_mu
    mass = np.where(z >= median, upper[:-1] - upper[1:], lower[1:] - lower[:-1])
    mass = np.clip(mass, 0.0, None)
    tail = float(lower[0] + upper[-1])
    if tail > 1.0 - MIN_INSIDE_MASS:
        raise ResolutionError(f"grid holds only {1.0 - tail:.9f} of the loss mass")
    mass_sum = float(mass.sum())
    # Round-off from the two-sided construction; restore exact normalization.
    mass *= (1.0 - tail) / mass_sum
    return PldGrid(origin, step, mass, tail)


def default_pld_grid(kernel: CalibratedKernel, step: float = DEFAULT_PLD_STEP) -> PldGrid:
    """Grid with the default resolution.

    Laplace: the bounded support ``[-max_loss, max_loss]`` with the step
    shrunk so both atoms sit on grid points. Gaussian: 20 loss standard
    deviations either side of the mean, step at most 1/20 of a deviation.
    """
    if kernel.kind is KernelKind.LAPLACE:
        a = kernel.max_loss
        n = max(1, math.ceil(a / step))
        h = a / n
        return pld_grid(kernel, -a, h, 2 * n + 1)
    mu = kernel.gaussian_mu
    sd = math.sqrt(2.0 * mu)
    h = min(step, sd / 20.0)
    lo = math.floor((mu - GAUSSIAN_PLD_WIDTH * sd) / h)
    hi = math.ceil((mu + GAUSSIAN_PLD_WIDTH * sd) / h)
    return pld_grid(kernel, lo * h, h, hi - lo + 1)
