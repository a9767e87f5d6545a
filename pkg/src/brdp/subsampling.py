"""Subsampling: amplification, sampling-error models and the sampling-rate search.

The mechanism runs on a Bernoulli subsample ``X_s`` drawn at rate ``p``. The
release is ``Y + E + N``: ``E`` is the estimator's sampling error and ``N`` the
recycled kernel noise. The aggregate estimators rescale by ``|X| / |X_s|``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, special, stats

from . import budgeting, composition, core, kernels
from .budgeting import AllocationResult
from .core import BrdpMechanism, ErrorBound
from .errors import DomainError, InfeasibleError, UnsupportedKernelError
from .kernels import BudgetPair, CalibratedKernel, KernelKind

DEFAULT_P_TOL = 1e-3
MC_DRAWS = 10_000
MC_SEED = 20240601
COUNT_NORMAL_MIN = 10.0
SENSITIVITY_SCALINGS = ("none", "inverse_p")
# "analytic" substitutes the combined Gaussian CDF into the acceptance formula;
# "end_to_end" integrates the recycled density against the sampling error.
OBJECTIVE_METHODS = ("analytic", "monte_carlo", "end_to_end")


class QueryKind(str, enum.Enum):
    SUM = "sum"
    AVERAGE = "average"
    COUNT = "count"

    @classmethod
    def parse(cls, value) -> QueryKind:
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        aliases = {"avg": "average", "mean": "average", "cnt": "count", "summation": "sum"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise DomainError(f"unknown query kind {value!r}") from None


@dataclass(frozen=True)
class PopulationModel:
    """Records drawn i.i.d. from N(mu, sigma_x^2); a fraction ``p_c`` satisfies the count predicate."""

    size: int
    mu: float = 0.0
    sigma_x: float = 1.0
    p_c: float = 0.5

    def __post_init__(self):
        if int(self.size) != self.size or self.size < 1:
            raise DomainError(f"population size must be a positive integer, got {self.size}")
        if not self.sigma_x > 0:
            raise DomainError("sigma_x must be positive")
        if not 0.0 <= self.p_c <= 1.0:
            raise DomainError("p_c must lie in [0, 1]")

    @property
    def count_threshold(self) -> float:
        """Records above this value satisfy the count predicate with probability ``p_c``."""
        if self.p_c == 0.0:
            return math.inf
        if self.p_c == 1.0:
            return -math.inf
        return self.mu + self.sigma_x * float(stats.norm.isf(self.p_c))

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        return rng.normal(self.mu, self.sigma_x, int(self.size))


@dataclass(frozen=True)
class SubsampledPlan:
    p: float
    inner_budget: BudgetPair
    sigma_E: float
    sensitivity: float
    warning: str | None = None


def _check_p(p: float) -> None:
    if not 0.0 < p <= 1.0:
        raise DomainError(f"sampling rate must lie in (0, 1], got {p}")


def amplified_epsilon(epsilon: float, p: float) -> float:
    """``log(1 + p (e^epsilon - 1))`` without overflow for large epsilon."""
    if epsilon > 30.0:
        return epsilon + math.log(p + (1.0 - p) * math.exp(-epsilon))
    return math.log1p(p * math.expm1(epsilon))


def amplify(inner_budget: BudgetPair, p: float) -> BudgetPair:
    """External budget of a mechanism with ``inner_budget`` run on a rate-``p`` subsample."""
    _check_p(p)
    if p == 1.0:
        return inner_budget
    return BudgetPair(amplified_epsilon(inner_budget.epsilon, p), p * inner_budget.delta)


def deamplify(total_budget: BudgetPair, p: float) -> BudgetPair:
    """Inner budget whose amplification at rate ``p`` equals ``total_budget``."""
    _check_p(p)
    if p == 1.0:
        return total_budget
    delta = total_budget.delta / p
    if delta > 1.0:
        raise InfeasibleError(f"delta / p = {delta:.3g} exceeds 1")
    eps = math.log1p(math.expm1(total_budget.epsilon) / p)
    return BudgetPair(eps, delta)


def sampling_sigma(kind, pop: PopulationModel, p: float) -> float:
    """Standard deviation of the estimator's sampling error at rate ``p``."""
    _check_p(p)
    kind = QueryKind.parse(kind)
    n, keep = pop.size, (1.0 - p) / p
    if kind is QueryKind.SUM:
        return pop.sigma_x * math.sqrt(n * keep)
    if kind is QueryKind.AVERAGE:
        return pop.sigma_x * math.sqrt(keep / n)
    return math.sqrt(n * keep * pop.p_c * (1.0 - pop.p_c))


def inner_sensitivity(sensitivity: float, p: float, scaling: str = "none") -> float:
    """Sensitivity the kernel is calibrated against on the subsample.

    ``"none"`` keeps the full-data sensitivity; ``"inverse_p"`` multiplies by
    ``1 / p`` to cover the rescaled estimator.
    """
    if scaling == "none":
        return sensitivity
    if scaling == "inverse_p":
        return sensitivity / p
    raise DomainError(f"unknown sensitivity scaling {scaling!r}")


def combined_p_theta(kernel: CalibratedKernel, bound: ErrorBound, sigma_E: float) -> float:
    """Pr(|N + E| <= theta) for a Gaussian kernel and Gaussian sampling error."""
    if kernel.kind is not KernelKind.GAUSSIAN:
        raise UnsupportedKernelError("the analytic combined objective needs a Gaussian kernel")
    if bound.theta == math.inf:
        return 1.0
    sigma = math.hypot(kernel.scale, sigma_E)
    return float(special.erf(bound.theta / (sigma * math.sqrt(2.0))))


def mc_p_theta(
    kernel: CalibratedKernel,
    bound: ErrorBound,
    sigma_E: float,
    draws: int = MC_DRAWS,
    seed: int = MC_SEED,
) -> float:
    """Monte-Carlo Pr(|N + E| <= theta) for any kernel.

    The standard draws are fixed by ``seed`` and rescaled, so probes at
    different scales share common random numbers.
    """
    rng = np.random.default_rng(seed)
    if kernel.kind is KernelKind.GAUSSIAN:
        unit = rng.standard_normal(draws)
    else:
        unit = rng.laplace(0.0, 1.0, draws)
    e = rng.standard_normal(draws)
    total = kernel.scale * unit + sigma_E * e
    return float(np.mean(np.abs(total) <= bound.theta))


def combined_objective_for_kernel(
    kernel: CalibratedKernel,
    q: float,
    bound: ErrorBound,
    sigma_E: float,
    mode: str = "acceptance",
    method: str = "analytic",
) -> float:
    if method == "analytic":
        p = combined_p_theta(kernel, bound, sigma_E)
    elif method == "monte_carlo":
        p = mc_p_theta(kernel, bound, sigma_E)
    elif method == "end_to_end":
        acc = end_to_end_acceptance(BrdpMechanism(kernel, q, bound), sigma_E)
        return math.inf if acc <= 0.0 else 1.0 / acc
    else:
        raise DomainError(f"unknown objective method {method!r}")
    return budgeting.objective_from_p(p, q, mode)


def combined_objective(
    epsilon_y: float,
    q: float,
    p: float,
    query,
    pop: PopulationModel,
    kind=KernelKind.GAUSSIAN,
    delta: float = 1e-5,
    sensitivity: float = 1.0,
    theta: float = 1.0,
    mode: str = "acceptance",
    method: str = "analytic",
) -> float:
    kernel = kernels.calibrate(kind, BudgetPair(epsilon_y, delta), sensitivity)
    sigma_E = sampling_sigma(query, pop, p)
    return combined_objective_for_kernel(kernel, q, ErrorBound(theta), sigma_E, mode, method)


def combined_acceptance(mech: BrdpMechanism, sigma_E: float) -> float:
    """Acceptance with the combined-noise CDF substituted for the kernel CDF."""
    p = combined_p_theta(mech.kernel, mech.bound, sigma_E)
    return p / (1.0 - (1.0 - p) * mech.q)


def end_to_end_acceptance(mech: BrdpMechanism, sigma_E: float) -> float:
    """Exact Pr(|N + E| <= theta) with N from the recycled density and E ~ N(0, sigma_E^2).

    The recycler tests only the kernel noise, so this differs from
    ``combined_acceptance`` whenever ``q > 0`` and ``sigma_E > 0``. With
    ``w(n) = Pr(|n + E| <= theta)`` the value is
    ``(q * I_in + (1 - q) * I_all) / (1 - bar_p q)`` where ``I_in`` integrates
    ``f_N w`` over the window and ``I_all`` over the real line.
    """
    th = mech.bound.theta
    if sigma_E == 0.0:
        return core.acceptance_rate(mech)
    if th == math.inf:
        return 1.0
    kernel = mech.kernel

    def window(n):
        return stats.norm.cdf((th - n) / sigma_E) - stats.norm.cdf((-th - n) / sigma_E)

    def integrand(n):
        return float(kernels.pdf(kernel, n)) * window(n)

    i_in = 2.0 * integrate.quad(integrand, 0.0, th, limit=200, epsabs=1e-13)[0]
    if kernel.kind is KernelKind.GAUSSIAN:
        i_all = combined_p_theta(kernel, mech.bound, sigma_E)
    else:
        span = kernels.TRUNCATION_SCALES * max(kernel.scale, sigma_E)
        edges = [0.0, th, th + span, math.inf]
        i_all = 2.0 * sum(
            integrate.quad(integrand, a, b, limit=200, epsabs=1e-13)[0] for a, b in zip(edges[:-1], edges[1:])
        )
    out = (mech.q * i_in + (1.0 - mech.q) * i_all) / mech.normalizer
    return min(max(out, 0.0), 1.0)


def find_p(
    total_budget: BudgetPair,
    sensitivity: float,
    theta: float,
    query,
    pop: PopulationModel,
    tol: float = budgeting.DEFAULT_TOL,
    kind=KernelKind.GAUSSIAN,
    p_tol: float = DEFAULT_P_TOL,
    mode: str = "acceptance",
    method: str = "analytic",
    sensitivity_scaling: str = "none",
    recalibrate: Callable[[BudgetPair, float], BudgetPair] | None = None,
) -> tuple[SubsampledPlan, AllocationResult]:
    """Ternary search over the sampling rate with an allocation search per probe.

    ``recalibrate(inner_budget, p)`` may adjust the inner budget after
    inversion; by default it is left unchanged. ``p = 1`` is always evaluated,
    so the plan is never worse than running on the full data.
    """
    kind = KernelKind.parse(kind)
    query = QueryKind.parse(query)
    if kind is not KernelKind.GAUSSIAN and method in ("analytic", "end_to_end"):
        raise UnsupportedKernelError("analytic sampling-rate search needs a Gaussian kernel")
    if not p_tol > 0:
        raise DomainError("p_tol must be positive")
    bound = ErrorBound(theta)
    cache: dict[float, tuple[float, SubsampledPlan | None, AllocationResult | None]] = {}

    def probe(p: float):
        if p not in cache:
            try:
                inner = deamplify(total_budget, p)
                if recalibrate is not None:
                    inner = recalibrate(inner, p)
                sens = inner_sensitivity(sensitivity, p, sensitivity_scaling)
                sigma_E = sampling_sigma(query, pop, p)

                def obj(k, q):
                    return combined_objective_for_kernel(k, q, bound, sigma_E, mode, method)

                alloc = budgeting.allocate(inner, sens, theta, tol, kind, objective_fn=obj)
            except InfeasibleError:
                cache[p] = (math.inf, None, None)
            else:
                plan = SubsampledPlan(p, inner, sigma_E, sens, _count_warning(query, pop, p))
                cache[p] = (alloc.objective_value, plan, alloc)
        return cache[p]

    lo = min(1.0, max(total_budget.delta, p_tol))
    hi = 1.0
    while hi - lo > p_tol:
        p1 = lo + (hi - lo) / 3.0
        p2 = hi - (hi - lo) / 3.0
        if probe(p1)[0] > probe(p2)[0]:
            lo = p1
        else:
            hi = p2
    best = None
    for p in (0.5 * (lo + hi), 1.0):
        val = probe(p)
        if val[1] is not None and (best is None or val[0] < best[0] or (val[0] == best[0] and p > best[1].p)):
            best = val
    if best is None:
        raise InfeasibleError("no sampling rate admits a feasible allocation")
    return best[1], best[2]


def _count_warning(query: QueryKind, pop: PopulationModel, p: float) -> str | None:
    if query is not QueryKind.COUNT:
        return None
    spread = p * pop.size * pop.p_c * (1.0 - pop.p_c)
    if spread < COUNT_NORMAL_MIN:
        return f"normal approximation for the count is rough (p|X|p_c(1-p_c) = {spread:.3g})"
    return None


def plan_acceptance(plan: SubsampledPlan, alloc: AllocationResult) -> float:
    return combined_acceptance(alloc.mechanism, plan.sigma_E)


def estimate(values: np.ndarray, mask: np.ndarray, query, threshold: float = math.inf) -> np.ndarray:
    """Rescaled estimators on subsamples.

    ``mask`` has shape ``(resamples, n)``. Sum and Count are scaled by
    ``|X| / |X_s|``; Average is the subsample mean. Empty subsamples give nan.
    """
    query = QueryKind.parse(query)
    n = values.size
    m = mask.sum(axis=1).astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        if query is QueryKind.COUNT:
            hits = mask @ (values > threshold).astype(float)
            return np.where(m > 0, n * hits / m, np.nan)
        total = mask @ values
        if query is QueryKind.SUM:
            return np.where(m > 0, n * total / m, np.nan)
        return np.where(m > 0, total / m, np.nan)


def exact_answer(values: np.ndarray, query, threshold: float = math.inf) -> float:
    query = QueryKind.parse(query)
    if query is QueryKind.SUM:
        return float(values.sum())
    if query is QueryKind.AVERAGE:
        return float(values.mean())
    return float(np.count_nonzero(values > threshold))


def simulate_sampling_error(
    query,
    pop: PopulationModel,
    p: float,
    resamples: int,
    rng: np.random.Generator,
    values: np.ndarray | None = None,
    chunk: int = 256,
) -> np.ndarray:
    """Draws of ``E = estimate - exact`` over Bernoulli subsamples of one fixed dataset."""
    _check_p(p)
    if values is None:
        values = pop.draw(rng)
    thr = pop.count_threshold
    truth = exact_answer(values, query, thr)
    out = np.empty(resamples)
    for start in range(0, resamples, chunk):
        k = min(chunk, resamples - start)
        mask = (rng.random((k, values.size)) < p).astype(float)
        out[start : start + k] = estimate(values, mask, query, thr) - truth
    return out


def simulate_release_acceptance(
    mech: BrdpMechanism,
    query,
    pop: PopulationModel,
    p: float,
    trials: int,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """Empirical Pr(|Y_n - Y| <= theta) over full subsample-then-release trials.

    Returns ``(rate, standard_error)``.
    """
    err = simulate_sampling_error(query, pop, p, trials, rng)
    err = err[np.isfinite(err)]
    noise, _ = core.sample_batch(mech, 0.0, err.size, rng)
    hit = np.abs(err + noise) <= mech.bound.theta
    rate = float(hit.mean())
    return rate, math.sqrt(rate * (1.0 - rate) / hit.size)


def subsampled_epsilon_T(mech: BrdpMechanism, p: float, T: int, target_delta: float) -> float:
    """Composed epsilon of ``T`` releases on one rate-``p`` subsample.

    The T-fold inner mechanism is accounted at ``target_delta / p`` and then
    amplified once.
    """
    _check_p(p)
    inner_delta = target_delta / p
    if inner_delta >= 1.0:
        raise InfeasibleError("target delta / p must stay below 1")
    if mech.q == 0.0:
        eps_inner = composition.kernel_epsilon_T(mech.kernel, T, inner_delta)
    else:
        eps_inner = composition.brdp_epsilon_T(mech, T, inner_delta)
    return amplified_epsilon(eps_inner, p)
