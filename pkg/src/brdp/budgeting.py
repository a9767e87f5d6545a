"""Splitting a total budget between the kernel and the recycler.

``find_q`` bisects the recycling rate against the mechanism privacy profile;
``allocate`` runs a ternary search over the kernel epsilon with ``find_q`` in
the inner loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

from . import core, kernels
from .core import BrdpMechanism, ErrorBound
from .errors import DomainError, InfeasibleError
from .kernels import BudgetPair, CalibratedKernel, KernelKind

DEFAULT_TOL = 1e-4
TERNARY_MAX_ITER = 300

OBJECTIVE_MODES = ("acceptance", "literal")
ACCOUNTING_MODES = ("mixture", "direct")


@dataclass(frozen=True)
class AllocationResult:
    epsilon_y: float
    delta_y: float
    q: float
    objective_value: float
    kernel: CalibratedKernel
    bound: ErrorBound
    trace: tuple = field(default=(), repr=False, compare=False)

    @property
    def mechanism(self) -> BrdpMechanism:
        return BrdpMechanism(self.kernel, self.q, self.bound)

    @property
    def acceptance(self) -> float:
        return core.acceptance_rate(self.mechanism)


def baseline_q(epsilon_total: float, epsilon_y: float) -> float:
    """Recycling rate from the naive bound ``epsilon = epsilon_y - log(1 - q)``."""
    if not 0 < epsilon_y <= epsilon_total:
        raise DomainError(f"need 0 < epsilon_y <= epsilon, got {epsilon_y}, {epsilon_total}")
    return -math.expm1(-(epsilon_total - epsilon_y))


def _profile_fn(kernel: CalibratedKernel, bound: ErrorBound, accounting: str):
    if accounting == "mixture":
        return lambda q, eps: core.brdp_privacy_profile(BrdpMechanism(kernel, q, bound), eps)
    if accounting == "direct":

        def direct(q, eps):
            if q >= 1.0:
                return 1.0
            return core.direct_privacy_profile(BrdpMechanism(kernel, q, bound), eps)

        return direct
    raise DomainError(f"unknown accounting mode {accounting!r}")


def find_q_for_kernel(
    kernel: CalibratedKernel,
    bound: ErrorBound,
    total_budget: BudgetPair,
    tol: float = DEFAULT_TOL,
    accounting: str = "mixture",
) -> float:
    """Largest q (to within ``tol``) keeping delta at the total epsilon within budget."""
    if not tol > 0:
        raise DomainError("tol must be positive")
    profile = _profile_fn(kernel, bound, accounting)
    eps, delta = total_budget.epsilon, total_budget.delta
    if profile(0.0, eps) > delta:
        raise InfeasibleError(
            f"kernel alone leaks delta {profile(0.0, eps):.3g} > {delta:.3g} at epsilon {eps}"
        )
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if profile(mid, eps) <= delta:
            lo = mid
        else:
            hi = mid
    return lo


def find_q(
    kernel_budget: BudgetPair,
    total_budget: BudgetPair,
    sensitivity: float,
    theta: float,
    tol: float = DEFAULT_TOL,
    kind=KernelKind.GAUSSIAN,
    accounting: str = "mixture",
) -> float:
    if kernel_budget.epsilon > total_budget.epsilon:
        raise DomainError("kernel epsilon exceeds the total epsilon")
    kernel = kernels.calibrate(kind, kernel_budget, sensitivity)
    return find_q_for_kernel(kernel, ErrorBound(theta), total_budget, tol, accounting)


def objective_from_p(p: float, q: float, mode: str = "acceptance") -> float:
    """Quantity minimized by the allocation search, as a function of p_theta and q.

    ``"acceptance"`` is the reciprocal of the acceptance rate,
    ``(1 - q) / p + q``. ``"literal"`` is ``1 - q + q / p``, kept for
    comparison; it is minimized by q = 0 whenever p < 1.
    """
    if p <= 0.0:
        return math.inf
    if mode == "acceptance":
        return (1.0 - q) / p + q
    if mode == "literal":
        return 1.0 - q + q / p
    raise DomainError(f"unknown objective mode {mode!r}")


def objective(
    epsilon_y: float,
    q: float,
    kind=KernelKind.GAUSSIAN,
    delta: float = 1e-5,
    sensitivity: float = 1.0,
    theta: float = 1.0,
    mode: str = "acceptance",
) -> float:
    kernel = kernels.calibrate(kind, BudgetPair(epsilon_y, delta), sensitivity)
    return objective_from_p(core.p_theta(kernel, ErrorBound(theta)), q, mode)


ObjectiveFn = Callable[[CalibratedKernel, float], float]


def allocate(
    total_budget: BudgetPair,
    sensitivity: float,
    theta: float,
    tol: float = DEFAULT_TOL,
    kind=KernelKind.GAUSSIAN,
    delta_y: float | None = None,
    mode: str = "acceptance",
    objective_fn: ObjectiveFn | None = None,
    accounting: str = "mixture",
) -> AllocationResult:
    """Ternary search for the kernel epsilon minimizing the objective.

    The bracket is ``[tol, epsilon]``. The all-kernel point ``epsilon_y =
    epsilon`` is always evaluated too, so the result is never worse than the
    plain kernel mechanism. Ties go to the larger ``epsilon_y``.

    ``objective_fn(kernel, q)`` overrides the default objective; the
    subsampling search uses it to plug in the combined-noise acceptance.
    """
    kind = KernelKind.parse(kind)
    bound = ErrorBound(theta)
    d_y = total_budget.delta if delta_y is None else delta_y
    if objective_fn is None:
        objective_fn = lambda k, q: objective_from_p(core.p_theta(k, bound), q, mode)  # noqa: E731

    cache: dict[float, tuple[float, float, CalibratedKernel]] = {}
    trace = []

    def probe(eps_y: float):
        if eps_y not in cache:
            kernel = kernels.calibrate(kind, BudgetPair(eps_y, d_y), sensitivity)
            try:
                q = find_q_for_kernel(kernel, bound, total_budget, tol, accounting)
            except InfeasibleError:
                cache[eps_y] = (math.inf, math.nan, kernel)
            else:
                cache[eps_y] = (objective_fn(kernel, q), q, kernel)
            trace.append((eps_y, cache[eps_y][1], cache[eps_y][0]))
        return cache[eps_y]

    lo, hi = min(tol, total_budget.epsilon), total_budget.epsilon
    for _ in range(TERNARY_MAX_ITER):
        if hi - lo <= tol:
            break
        e1 = lo + (hi - lo) / 3.0
        e2 = hi - (hi - lo) / 3.0
        if probe(e1)[0] > probe(e2)[0]:
            lo = e1
        else:
            hi = e2

    candidates = [0.5 * (lo + hi), total_budget.epsilon]
    best_eps, best = None, None
    for eps_y in candidates:
        val = probe(eps_y)
        if best is None or val[0] < best[0] or (val[0] == best[0] and eps_y > best_eps):
            best_eps, best = eps_y, val
    if not math.isfinite(best[0]) and math.isnan(best[1]):
        raise InfeasibleError("no kernel allocation satisfies the total budget")
    value, q, kernel = best
    return AllocationResult(best_eps, d_y, q, value, kernel, bound, tuple(trace))


def kernel_only(
    total_budget: BudgetPair, sensitivity: float, theta: float, kind=KernelKind.GAUSSIAN
) -> BrdpMechanism:
    """The plain kernel mechanism at the full budget (q = 0)."""
    kernel = kernels.calibrate(kind, total_budget, sensitivity)
    return BrdpMechanism(kernel, 0.0, ErrorBound(theta))
