import math

import numpy as np
import pytest

from brdp import budgeting, composition, core, kernels
from brdp.composition import CompositionQuery, RecyclerPld
from brdp.core import BrdpMechanism, ErrorBound
from brdp.errors import BracketError, DomainError
from brdp.kernels import BudgetPair, CalibratedKernel, KernelKind

G = CalibratedKernel(KernelKind.GAUSSIAN, 2.0, 1.0)
LAP = CalibratedKernel(KernelKind.LAPLACE, 2.0, 1.0)


@pytest.mark.parametrize("k", [G, LAP])
def test_single_use_matches_profile(k):
    for eps in (0.0, 0.2, 0.4, 1.0):
        assert composition.kernel_profile_T(k, 1, eps) == pytest.approx(kernels.privacy_profile(k, eps), abs=1e-6)


def test_gaussian_closed_form_matches_grid_convolution():
    g = kernels.default_pld_grid(G).compose(4)
    for eps in (0.0, 0.5, 1.0, 2.0):
        assert composition.kernel_profile_T(G, 4, eps) == pytest.approx(g.delta(eps), abs=1e-5)


def test_profile_nondecreasing_in_T():
    vals = [composition.kernel_profile_T(LAP, T, 1.0) for T in (1, 2, 5, 10)]
    assert vals == sorted(vals)


def test_binomial_weights_sum_to_one():
    for T, W in [(10, 0.3), (1000, 0.01), (1000, 0.999), (5, 0.0), (5, 1.0)]:
        w = composition.binomial_weights(T, W)
        assert w.sum() == pytest.approx(1.0, abs=1e-12)


def test_q0_and_w0_reduce_to_kernel():
    m0 = BrdpMechanism(G, 0.0, ErrorBound(1.0))
    assert composition.brdp_profile_T(CompositionQuery(m0, 7, 1.0)) == composition.kernel_profile_T(G, 7, 1.0)
    inf = BrdpMechanism(G, 0.5, ErrorBound(math.inf))
    assert composition.brdp_profile_T(CompositionQuery(inf, 7, 1.0)) == composition.kernel_profile_T(G, 7, 1.0)


def test_explicit_sum_matches():
    m = BrdpMechanism(G, 0.4, ErrorBound(1.0))
    s = core.shift_params(G, m.bound, m.q)
    T, eps = 6, 1.5
    expected = sum(
        math.comb(T, k) * (1 - s.W) ** k * s.W ** (T - k) * composition.kernel_profile_T(G, T, eps - (T - k) * s.L)
        for k in range(T + 1)
    )
    assert composition.brdp_profile_T(CompositionQuery(m, T, eps)) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("k", [G, LAP])
def test_brute_force_single_use_matches_mixture(k):
    m = BrdpMechanism(k, 0.5, ErrorBound(1.0))
    for eps in (0.0, 0.5, 1.0):
        assert composition.brute_force_T(m, 1, eps) == pytest.approx(core.brdp_privacy_profile(m, eps), abs=1e-5)


def test_recycler_identity_at_q0():
    g = kernels.default_pld_grid(LAP)
    r = RecyclerPld.from_shift(core.shift_params(LAP, ErrorBound(1.0), 0.0)).grid(g.step)
    c = g.convolve(r)
    np.testing.assert_array_equal(c.mass, g.mass)
    assert c.origin == g.origin


def test_brute_force_bounds():
    m = BrdpMechanism(G, 0.5, ErrorBound(1.0))
    with pytest.raises(DomainError):
        composition.brute_force_T(m, 9, 1.0)


def test_basic_and_advanced():
    assert composition.basic_composition(BudgetPair(0.1, 1e-5), 1) == BudgetPair(0.1, 1e-5)
    b = composition.basic_composition(BudgetPair(0.1, 1e-5), 10)
    assert b.epsilon == pytest.approx(1.0) and b.delta == pytest.approx(1e-4)
    adv = composition.advanced_composition(BudgetPair(0.1, 1e-5), 100)
    assert adv == pytest.approx(100 * 0.1 * math.expm1(0.1) + 10 * 0.1 * math.sqrt(2 * math.log(1e5)))
    assert adv == pytest.approx(5.850, abs=1e-3)
    assert composition.advanced_composition(BudgetPair(0.5, 1e-5), 1) >= 0.5
    with pytest.raises(DomainError):
        composition.advanced_composition(BudgetPair(0.1, 0.0), 10)


def test_basic_dominates_tight_profile():
    alloc = budgeting.allocate(BudgetPair(0.5, 1e-5), 1.0, 1.0)
    for T in (2, 10, 50):
        d = composition.brdp_profile_T(CompositionQuery(alloc.mechanism, T, T * 0.5))
        assert d <= T * 1e-5


def test_epsilon_at_delta():
    assert composition.epsilon_at_delta(lambda e: 0.0, 1e-5) == 0.0
    prof = lambda e: composition.kernel_profile_T(G, 10, e)  # noqa: E731
    eps = composition.epsilon_at_delta(prof, 1e-6)
    assert prof(eps) <= 1e-6 and prof(eps - 2e-4) > 1e-6
    with pytest.raises(BracketError):
        composition.epsilon_at_delta(lambda e: 0.5, 1e-5, max_hi=10)


def test_query_validation():
    m = BrdpMechanism(G, 0.5, ErrorBound(1.0))
    with pytest.raises(DomainError):
        CompositionQuery(m, 0, 1.0)
