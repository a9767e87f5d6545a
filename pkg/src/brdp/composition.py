"""Sequential composition accounting.

The composed mechanism loss is the T-fold kernel loss plus ``(T - k) * L``
with binomial probability, so the composed delta is a binomial mixture of the
T-fold kernel profile evaluated at shifted epsilons.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from . import core, kernels
from .core import BrdpMechanism, ShiftWeight
from .errors import BracketError, DomainError
from .kernels import BudgetPair, CalibratedKernel, KernelKind
from .pld import PldGrid, dirac_mixture

BRUTE_FORCE_MAX_T = 8
EPSILON_TOL = 1e-4
# exp(-700) underflows to ~1e-304; such binomial terms cannot affect delta.
_LOG_WEIGHT_FLOOR = -700.0


@dataclass(frozen=True)
class CompositionQuery:
    mechanism: BrdpMechanism
    T: int
    target_epsilon: float

    def __post_init__(self):
        if int(self.T) != self.T or self.T < 1:
            raise DomainError(f"T must be a positive integer, got {self.T}")


@dataclass(frozen=True)
class RecyclerPld:
    """Point masses ``1 - W`` at loss 0 and ``W`` at loss ``L``."""

    W: float
    L: float

    @classmethod
    def from_shift(cls, shift: ShiftWeight) -> RecyclerPld:
        return cls(shift.W, shift.L)

    @property
    def weights(self) -> dict[float, float]:
        if self.L == 0.0:
            return {0.0: 1.0}
        return {0.0: 1.0 - self.W, self.L: self.W}

    def grid(self, step: float) -> PldGrid:
        return dirac_mixture(step, self.weights)


@functools.lru_cache(maxsize=64)
def composed_kernel_grid(kernel: CalibratedKernel, T: int, step: float = kernels.DEFAULT_PLD_STEP) -> PldGrid:
    return kernels.default_pld_grid(kernel, step).compose(T)


def kernel_profile_T(kernel: CalibratedKernel, T: int, epsilon, step: float = kernels.DEFAULT_PLD_STEP):
    """Tight delta(epsilon) of the kernel composed with itself ``T`` times.

    Gaussian: the composed loss is N(T mu, 2 T mu), evaluated in closed form.
    Laplace: T-fold convolution of the default loss grid; grid tail mass is
    charged to delta.
    """
    if int(T) != T or T < 1:
        raise DomainError(f"T must be a positive integer, got {T}")
    if kernel.kind is KernelKind.GAUSSIAN:
        return kernels.gaussian_loss_profile(T * kernel.gaussian_mu, epsilon)
    return composed_kernel_grid(kernel, int(T), step).delta(epsilon)


def binomial_log_weights(T: int, W: float) -> np.ndarray:
    """``log[C(T, k) (1 - W)^k W^(T - k)]`` for ``k = 0..T``."""
    k = np.arange(T + 1, dtype=float)
    log_binom = special.gammaln(T + 1) - special.gammaln(k + 1) - special.gammaln(T - k + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        lw = log_binom + special.xlog1py(k, -W) + special.xlogy(T - k, W)
    return np.nan_to_num(lw, nan=-np.inf)


def binomial_weights(T: int, W: float) -> np.ndarray:
    return np.exp(binomial_log_weights(T, W))


def brdp_profile_T(query: CompositionQuery, step: float = kernels.DEFAULT_PLD_STEP) -> float:
    """Composed delta of ``T`` independent runs of the mechanism at ``target_epsilon``.

    Sums ``k = 0..T``; the kernel profile is evaluated once per shifted
    epsilon, so the cost is linear in T.
    """
    mech, T, eps = query.mechanism, int(query.T), query.target_epsilon
    shift = core.shift_params(mech.kernel, mech.bound, mech.q)
    if shift.L == 0.0 or shift.W == 0.0:
        return float(kernel_profile_T(mech.kernel, T, eps, step))
    lw = binomial_log_weights(T, shift.W)
    k = np.arange(T + 1)
    keep = lw > _LOG_WEIGHT_FLOOR
    if shift.L == math.inf:
        # Every term with a shift is evaluated at -inf, where delta is 1.
        args_finite = keep & (k == T)
        total = float(np.exp(lw[keep & (k < T)]).sum())
        total += float(np.exp(lw[args_finite]).sum() * kernel_profile_T(mech.kernel, T, eps, step))
        return min(total, 1.0)
    args = eps - (T - k[keep]) * shift.L
    deltas = np.asarray(kernel_profile_T(mech.kernel, T, args, step), dtype=float)
    return float(min(np.dot(np.exp(lw[keep]), deltas), 1.0))


def brdp_grid(mech: BrdpMechanism, step: float = kernels.DEFAULT_PLD_STEP) -> PldGrid:
    """Single-use mechanism loss grid: kernel grid convolved with the recycler masses."""
    base = kernels.default_pld_grid(mech.kernel, step)
    recycler = RecyclerPld.from_shift(core.shift_params(mech.kernel, mech.bound, mech.q))
    return base.convolve(recycler.grid(base.step))


def brute_force_T(mech: BrdpMechanism, T: int, epsilon, step: float = kernels.DEFAULT_PLD_STEP):
    """Composed delta by explicit T-fold convolution of the mechanism loss grid.

    An independent oracle for ``brdp_profile_T``; limited to small T.
    """
    if int(T) != T or not 1 <= T <= BRUTE_FORCE_MAX_T:
        raise DomainError(f"brute force supports 1 <= T <= {BRUTE_FORCE_MAX_T}")
    grid = brdp_grid(mech, step)
    composed = grid if T == 1 else grid.compose(int(T))
    return composed.delta(epsilon)


def basic_composition(budget: BudgetPair, T: int) -> BudgetPair:
    return BudgetPair(T * budget.epsilon, min(1.0, T * budget.delta))


def advanced_composition(budget: BudgetPair, T: int) -> float:
    eps, delta = budget.epsilon, budget.delta
    if not 0.0 < delta < 1.0:
        raise DomainError("advanced composition needs delta in (0, 1)")
    return T * eps * math.expm1(eps) + math.sqrt(T) * eps * math.sqrt(2.0 * math.log(1.0 / delta))


def epsilon_at_delta(
    profile,
    target_delta: float,
    lo: float = 0.0,
    hi: float = 1.0,
    tol: float = EPSILON_TOL,
    max_hi: float = 1e4,
) -> float:
    """Smallest epsilon (within ``tol``) with ``profile(epsilon) <= target_delta``.

    ``profile`` must be nonincreasing. ``hi`` is doubled until feasible.
    """
    if not 0.0 < target_delta < 1.0:
        raise DomainError("target delta must lie in (0, 1)")
    if profile(lo) <= target_delta:
        return lo
    while profile(hi) > target_delta:
        lo = hi
        hi *= 2.0
        if hi > max_hi:
            raise BracketError(f"delta stays above {target_delta} up to epsilon {max_hi}")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if profile(mid) <= target_delta:
            hi = mid
        else:
            lo = mid
    return hi


def kernel_epsilon_T(kernel: CalibratedKernel, T: int, target_delta: float) -> float:
    return epsilon_at_delta(lambda e: kernel_profile_T(kernel, T, e), target_delta)


def brdp_epsilon_T(mech: BrdpMechanism, T: int, target_delta: float) -> float:
    return epsilon_at_delta(lambda e: brdp_profile_T(CompositionQuery(mech, T, e)), target_delta)
