"""The budget-recycling mechanism: density, sampler, acceptance and privacy profile.

A draw ``n`` from the kernel is released when ``|n| <= theta``. Otherwise it is
released with probability ``1 - q`` and regenerated with probability ``q``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from . import kernels
from .errors import AccuracyError, DomainError, NonTerminationError
from .kernels import CalibratedKernel

DEFAULT_MAX_ROUNDS = 10**6


@dataclass(frozen=True)
class ErrorBound:
    """Symmetric tolerated error ``[-theta, theta]`` around the true answer."""

    theta: float

    def __post_init__(self):
        if not self.theta >= 0 or math.isnan(self.theta):
            raise DomainError(f"theta must be nonnegative, got {self.theta}")

    @property
    def tau_l(self) -> float:
        return -self.theta

    @property
    def tau_u(self) -> float:
        return self.theta


def p_theta(kernel: CalibratedKernel, bound: ErrorBound) -> float:
    """Probability that one kernel draw lands within the error bound."""
    if bound.theta == math.inf:
        return 1.0
    return float(kernels.cdf(kernel, bound.tau_u) - kernels.cdf(kernel, bound.tau_l))


def bar_p_theta(kernel: CalibratedKernel, bound: ErrorBound) -> float:
    if bound.theta == math.inf:
        return 0.0
    return float(1.0 - kernels.cdf(kernel, bound.tau_u) + kernels.cdf(kernel, bound.tau_l))


@dataclass(frozen=True)
class BrdpMechanism:
    kernel: CalibratedKernel
    q: float
    bound: ErrorBound

    def __post_init__(self):
        if not 0.0 <= self.q <= 1.0:
            raise DomainError(f"recycling rate q must lie in [0, 1], got {self.q}")
        if self.q == 1.0 and p_theta(self.kernel, self.bound) == 0.0:
            raise DomainError("q = 1 with an empty acceptance region never releases")

    @property
    def normalizer(self) -> float:
        """``1 - bar_p_theta * q``: probability that a round ends the loop."""
        return 1.0 - bar_p_theta(self.kernel, self.bound) * self.q


@dataclass(frozen=True)
class ShiftWeight:
    """Recycling shifts the kernel privacy loss by ``L`` with probability ``W``."""

    W: float
    L: float


def _inside(mech: BrdpMechanism, noise):
    return np.abs(noise) <= mech.bound.theta


def brdp_pdf(mech: BrdpMechanism, y_n, y: float = 0.0):
    """Density of the released value given true answer ``y``."""
    noise = np.asarray(y_n, dtype=float) - y
    base = np.asarray(kernels.pdf(mech.kernel, noise))
    out = np.where(_inside(mech, noise), base, base * (1.0 - mech.q)) / mech.normalizer
    return float(out) if out.ndim == 0 else out


def brdp_cdf(mech: BrdpMechanism, x, y: float = 0.0):
    """Distribution function of the released value given true answer ``y``."""
    k, th, keep = mech.kernel, mech.bound.theta, 1.0 - mech.q
    n = np.asarray(x, dtype=float) - y
    phi = lambda v: np.asarray(kernels.cdf(k, v))  # noqa: E731
    if th == math.inf:
        out = phi(n)
    else:
        left = keep * phi(np.minimum(n, -th))
        mid = np.where(n > -th, phi(np.clip(n, -th, th)) - phi(-th), 0.0)
        right = np.where(n > th, keep * (phi(np.maximum(n, th)) - phi(th)), 0.0)
        out = (left + mid + right) / mech.normalizer
    out = np.clip(out, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def sample(
    mech: BrdpMechanism,
    y: float,
    rng: np.random.Generator,
    max_rounds: int = DEFAULT_MAX_ROUNDS,
) -> tuple[float, int]:
    """Run the release/recycle loop once. Returns ``(y_n, rounds)``."""
    theta, q = mech.bound.theta, mech.q
    for rounds in range(1, max_rounds + 1):
        n = float(kernels.sample_noise(mech.kernel, rng))
        if abs(n) <= theta:
            return y + n, rounds
        if rng.random() >= q:
            return y + n, rounds
    raise NonTerminationError(f"no release after {max_rounds} rounds (q={q})")


def sample_batch(
    mech: BrdpMechanism,
    y: float,
    size: int,
    rng: np.random.Generator,
    max_rounds: int = DEFAULT_MAX_ROUNDS,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ``sample``: ``size`` independent runs of the loop."""
    theta, q = mech.bound.theta, mech.q
    out = np.empty(size)
    rounds = np.zeros(size, dtype=np.int64)
    pending = np.arange(size)
    for r in range(1, max_rounds + 1):
        if pending.size == 0:
            break
        n = kernels.sample_noise(mech.kernel, rng, pending.size)
        release = (np.abs(n) <= theta) | (rng.random(pending.size) >= q)
        done = pending[release]
        out[done] = y + n[release]
        rounds[done] = r
        pending = pending[~release]
    if pending.size:
        raise NonTerminationError(f"{pending.size} runs unreleased after {max_rounds} rounds")
    return out, rounds


def acceptance_rate(mech: BrdpMechanism) -> float:
    """Pr(|released - y| <= theta) = p_theta / (1 - bar_p_theta * q)."""
    return p_theta(mech.kernel, mech.bound) / mech.normalizer


def expected_rounds(mech: BrdpMechanism) -> float:
    return 1.0 / mech.normalizer


def shift_params(kernel: CalibratedKernel, bound: ErrorBound, q: float) -> ShiftWeight:
    """Shift probability W and loss shift L of the recycler.

    W is the kernel mass of outputs that are acceptable for one neighbour but
    not for the other.
    """
    if not 0.0 <= q <= 1.0:
        raise DomainError(f"q must lie in [0, 1], got {q}")
    L = math.inf if q == 1.0 else -math.log1p(-q)
    if bound.theta == math.inf:
        return ShiftWeight(0.0, L)
    phi = lambda v: float(kernels.cdf(kernel, v))  # noqa: E731
    tl, tu, d = bound.tau_l, bound.tau_u, kernel.sensitivity
    W = max(phi(min(tl + d, tu)) - phi(tl), phi(tu + d) - phi(max(tu, tl + d)))
    return ShiftWeight(min(max(W, 0.0), 1.0), L)


def mixture_profile(kernel: CalibratedKernel, shift: ShiftWeight, epsilon):
    """``(1 - W) delta_Z(eps) + W delta_Z(eps - L)`` for the kernel profile ``delta_Z``."""
    base = np.asarray(kernels.privacy_profile(kernel, epsilon), dtype=float)
    if shift.W == 0.0 or shift.L == 0.0:
        out = base
    elif shift.L == math.inf:
        out = (1.0 - shift.W) * base + shift.W
    else:
        shifted = np.asarray(kernels.privacy_profile(kernel, np.asarray(epsilon) - shift.L))
        out = (1.0 - shift.W) * base + shift.W * shifted
    return float(out) if out.ndim == 0 else out


def brdp_privacy_profile(mech: BrdpMechanism, epsilon):
    """Delta of the mechanism at ``epsilon`` from the shifted-mixture loss law."""
    return mixture_profile(mech.kernel, shift_params(mech.kernel, mech.bound, mech.q), epsilon)


def _log_brdp_pdf(mech: BrdpMechanism, t: float, y: float) -> float:
    n = t - y
    k = mech.kernel
    if k.kind is kernels.KernelKind.GAUSSIAN:
        logf = -0.5 * (n / k.scale) ** 2 - math.log(k.scale * math.sqrt(2.0 * math.pi))
    else:
        logf = -abs(n) / k.scale - math.log(2.0 * k.scale)
    if abs(n) > mech.bound.theta:
        if mech.q == 1.0:
            return -math.inf
        logf += math.log1p(-mech.q)
    return logf - math.log(mech.normalizer)


def _direct_hockey_stick(mech: BrdpMechanism, epsilon: float, y: float, y_prime: float) -> float:
    def integrand(t):
        lp = _log_brdp_pdf(mech, t, y)
        if lp == -math.inf:
            return 0.0
        lq = _log_brdp_pdf(mech, t, y_prime)
        if lq == -math.inf:
            return math.exp(lp)
        gap = epsilon - (lp - lq)
        if gap >= 0:
            return 0.0
        return math.exp(lp) * -math.expm1(gap)

    th = mech.bound.theta
    span = kernels.TRUNCATION_SCALES * mech.kernel.scale
    pts = {y, y_prime, y - span, y_prime + span, y + span, y_prime - span}
    if math.isfinite(th):
        pts |= {y - th, y + th, y_prime - th, y_prime + th}
    edges = [-math.inf, *sorted(pts), math.inf]
    total = err = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        val, abserr = integrate.quad(integrand, a, b, epsabs=1e-14, epsrel=1e-10, limit=200)
        total += val
        err += abserr
    if err > max(1e-11, 1e-7 * total):
        raise AccuracyError(f"direct hockey-stick quadrature error {err:.3g}")
    return min(max(total, 0.0), 1.0)


def direct_privacy_profile(mech: BrdpMechanism, epsilon: float) -> float:
    """Hockey-stick divergence between the output laws of a worst-case pair.

    A tightness diagnostic for ``brdp_privacy_profile``; takes the larger of
    the two shift directions.
    """
    d = mech.kernel.sensitivity
    return max(
        _direct_hockey_stick(mech, epsilon, 0.0, d),
        _direct_hockey_stick(mech, epsilon, d, 0.0),
    )
