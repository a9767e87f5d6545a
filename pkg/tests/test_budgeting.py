import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from brdp import budgeting, core, kernels
from brdp.core import ErrorBound
from brdp.errors import DomainError, InfeasibleError
from brdp.kernels import BudgetPair, CalibratedKernel, KernelKind


def test_baseline_q_examples():
    assert budgeting.baseline_q(3, 2) == pytest.approx(1 - math.exp(-1), abs=1e-12)
    assert budgeting.baseline_q(1, 1) == 0.0
    assert budgeting.baseline_q(1, 0.5) == pytest.approx(0.393469, abs=1e-6)
    with pytest.raises(DomainError):
        budgeting.baseline_q(1, 2)


def test_find_q_is_tight():
    total = BudgetPair(3.0, 1e-5)
    tol = 1e-4
    for eps_y in (0.5, 1.5, 2.5):
        k = kernels.calibrate("gaussian", BudgetPair(eps_y, 1e-5), 1.0)
        q = budgeting.find_q_for_kernel(k, ErrorBound(1.0), total, tol)
        m = core.BrdpMechanism(k, q, ErrorBound(1.0))
        assert core.brdp_privacy_profile(m, 3.0) <= 1e-5
        over = core.BrdpMechanism(k, min(1.0, q + 2 * tol), ErrorBound(1.0))
        assert core.brdp_privacy_profile(over, 3.0) > 1e-5
        assert q >= budgeting.baseline_q(3.0, eps_y)


def test_find_q_near_one_when_shift_weight_vanishes():
    k = CalibratedKernel(KernelKind.GAUSSIAN, 1.0, 1e-9)
    q = budgeting.find_q_for_kernel(k, ErrorBound(1.0), BudgetPair(1.0, 1e-5), 1e-4)
    assert q >= 1 - 2e-4


def test_find_q_infeasible_kernel():
    k = CalibratedKernel(KernelKind.GAUSSIAN, 0.1, 1.0)
    with pytest.raises(InfeasibleError):
        budgeting.find_q_for_kernel(k, ErrorBound(1.0), BudgetPair(1.0, 1e-5))


def test_find_q_monotone_in_kernel_budget():
    qs = [
        budgeting.find_q(BudgetPair(e, 1e-5), BudgetPair(2.0, 1e-5), 1.0, 1.0)
        for e in (0.25, 0.5, 1.0, 1.5, 1.9)
    ]
    assert all(a >= b - 1e-4 for a, b in zip(qs, qs[1:]))


def test_objective_modes():
    assert budgeting.objective_from_p(0.4, 1.0) == pytest.approx(1.0)
    assert budgeting.objective_from_p(0.4, 0.0) == pytest.approx(2.5)
    assert budgeting.objective_from_p(0.4, 0.3, "literal") == pytest.approx(1 - 0.3 + 0.3 / 0.4)
    assert budgeting.objective_from_p(0.0, 0.3) == math.inf


@given(st.floats(0.05, 5), st.floats(0, 1), st.floats(0.2, 3))
def test_objective_is_reciprocal_acceptance(eps_y, q, theta):
    k = kernels.calibrate("gaussian", BudgetPair(eps_y, 1e-5), 1.0)
    m = core.BrdpMechanism(k, q, ErrorBound(theta))
    val = budgeting.objective(eps_y, q, theta=theta)
    assert 1.0 / val == pytest.approx(core.acceptance_rate(m), abs=1e-12)


@pytest.mark.parametrize("kind", ["gaussian", "laplace"])
@pytest.mark.parametrize("eps", [0.5, 2.0, 5.0])
def test_allocation_feasible_and_dominant(kind, eps):
    total = BudgetPair(eps, 1e-5)
    res = budgeting.allocate(total, 1.0, 1.0, kind=kind)
    assert 0 < res.epsilon_y <= eps
    assert core.brdp_privacy_profile(res.mechanism, eps) <= 1e-5
    dp = budgeting.kernel_only(total, 1.0, 1.0, kind)
    assert res.acceptance >= core.acceptance_rate(dp) - 1e-9


def test_allocation_trace_is_unimodal():
    res = budgeting.allocate(BudgetPair(2.0, 1e-5), 1.0, 1.0)
    pts = sorted((e, v) for e, _, v in res.trace if math.isfinite(v))
    vals = [v for _, v in pts]
    i = vals.index(min(vals))
    slack = 1e-3 * min(vals)
    assert all(a >= b - slack for a, b in zip(vals[:i], vals[1 : i + 1]))
    assert all(a <= b + slack for a, b in zip(vals[i:], vals[i + 1 :]))


def test_allocation_returns_kernel_only_when_recycling_does_not_help():
    res = budgeting.allocate(BudgetPair(1.0, 1e-5), 1.0, 1.0, mode="literal")
    assert res.epsilon_y == 1.0


def test_custom_objective_hook():
    seen = []

    def obj(kernel, q):
        seen.append(q)
        return 1.0 / core.acceptance_rate(core.BrdpMechanism(kernel, q, ErrorBound(1.0)))

    a = budgeting.allocate(BudgetPair(2.0, 1e-5), 1.0, 1.0, objective_fn=obj)
    b = budgeting.allocate(BudgetPair(2.0, 1e-5), 1.0, 1.0)
    assert seen and a.epsilon_y == pytest.approx(b.epsilon_y)


def test_direct_accounting_is_feasible_under_direct_profile():
    res = budgeting.allocate(BudgetPair(2.0, 1e-5), 1.0, 1.0, tol=1e-3, accounting="direct")
    assert core.direct_privacy_profile(res.mechanism, 2.0) <= 1e-5
