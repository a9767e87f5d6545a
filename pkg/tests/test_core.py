import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from brdp import core, kernels
from brdp.core import BrdpMechanism, ErrorBound
from brdp.errors import DomainError, NonTerminationError
from brdp.kernels import CalibratedKernel, KernelKind

G1 = CalibratedKernel(KernelKind.GAUSSIAN, 1.0, 1.0)
L1 = CalibratedKernel(KernelKind.LAPLACE, 1.0, 1.0)


def test_error_bound_fields():
    b = ErrorBound(2.0)
    assert (b.tau_l, b.tau_u) == (-2.0, 2.0)
    with pytest.raises(DomainError):
        ErrorBound(-1.0)


def test_p_theta_examples():
    assert core.p_theta(G1, ErrorBound(math.inf)) == 1.0
    assert core.p_theta(G1, ErrorBound(0.0)) == 0.0
    assert core.p_theta(L1, ErrorBound(1.0)) == pytest.approx(1 - math.exp(-1), abs=1e-12)
    assert core.p_theta(G1, ErrorBound(1.0)) + core.bar_p_theta(G1, ErrorBound(1.0)) == pytest.approx(1.0)


def test_mechanism_validation():
    with pytest.raises(DomainError):
        BrdpMechanism(G1, 1.5, ErrorBound(1.0))
    with pytest.raises(DomainError):
        BrdpMechanism(G1, 1.0, ErrorBound(0.0))


def test_pdf_reduces_to_kernel_at_q0():
    m = BrdpMechanism(G1, 0.0, ErrorBound(1.0))
    xs = np.linspace(-5, 5, 101)
    np.testing.assert_allclose(core.brdp_pdf(m, xs), kernels.pdf(G1, xs), rtol=1e-15)


def test_pdf_zero_outside_at_q1():
    m = BrdpMechanism(G1, 1.0, ErrorBound(1.0))
    assert core.brdp_pdf(m, 1.5) == 0.0
    assert core.brdp_pdf(m, 0.5, y=0.0) > 0


def _integral(m):
    th = m.bound.theta
    pts = [-th, th]
    return sum(
        integrate.quad(lambda t: core.brdp_pdf(m, t), a, b, limit=200)[0]
        for a, b in zip([-math.inf, *pts], [*pts, math.inf])
    )


def test_pdf_normalizes_example():
    assert _integral(BrdpMechanism(G1, 0.7, ErrorBound(1.0))) == pytest.approx(1.0, abs=1e-6)


@given(st.sampled_from(list(KernelKind)), st.floats(0.2, 5), st.floats(0.1, 5), st.floats(0, 0.99))
def test_cdf_is_integral_of_pdf(kind, scale, theta, q):
    m = BrdpMechanism(CalibratedKernel(kind, scale, 1.0), q, ErrorBound(theta))
    for x in (-theta - 0.3, -theta / 2, theta / 3, theta + 0.7):
        pts = sorted({p for p in (-theta, theta) if p < x})
        edges = [-math.inf, *pts, x]
        num = sum(integrate.quad(lambda t: core.brdp_pdf(m, t), a, b)[0] for a, b in zip(edges[:-1], edges[1:]))
        assert core.brdp_cdf(m, x) == pytest.approx(num, abs=1e-7)


def test_acceptance_examples():
    m = BrdpMechanism(G1, 0.5, ErrorBound(1.0))
    p = stats.norm.cdf(1) - stats.norm.cdf(-1)
    assert core.acceptance_rate(m) == pytest.approx(p / (1 - (1 - p) * 0.5), abs=1e-12)
    assert core.acceptance_rate(m) == pytest.approx(0.8114, abs=1e-4)
    assert core.acceptance_rate(BrdpMechanism(G1, 0.0, ErrorBound(1.0))) == pytest.approx(p)
    assert core.acceptance_rate(BrdpMechanism(G1, 1.0, ErrorBound(1.0))) == pytest.approx(1.0)


@given(st.floats(0.2, 5), st.floats(0.1, 3), st.floats(0, 1), st.floats(0, 1))
def test_acceptance_monotone(scale, theta, q1, q2):
    lo, hi = sorted((q1, q2))
    k = CalibratedKernel(KernelKind.GAUSSIAN, scale, 1.0)
    wide = CalibratedKernel(KernelKind.GAUSSIAN, scale * 1.5, 1.0)
    b = ErrorBound(theta)
    assert core.acceptance_rate(BrdpMechanism(k, lo, b)) <= core.acceptance_rate(BrdpMechanism(k, hi, b)) + 1e-12
    assert core.acceptance_rate(BrdpMechanism(k, lo, ErrorBound(theta * 1.2))) >= core.acceptance_rate(
        BrdpMechanism(k, lo, b)
    ) - 1e-12
    assert core.acceptance_rate(BrdpMechanism(wide, lo, b)) <= core.acceptance_rate(BrdpMechanism(k, lo, b)) + 1e-12


def test_sampler_bounded_and_single_round(rng):
    m1 = BrdpMechanism(G1, 1.0, ErrorBound(1.0))
    out, _ = core.sample_batch(m1, 3.0, 20000, rng)
    assert np.all(np.abs(out - 3.0) <= 1.0)
    m0 = BrdpMechanism(G1, 0.0, ErrorBound(1.0))
    _, rounds = core.sample_batch(m0, 0.0, 1000, rng)
    assert np.all(rounds == 1)


def test_scalar_sampler_matches_formula(rng):
    m = BrdpMechanism(L1, 0.6, ErrorBound(0.5))
    draws = [core.sample(m, 0.0, rng)[0] for _ in range(20000)]
    rate = np.mean(np.abs(draws) <= 0.5)
    p = core.acceptance_rate(m)
    assert abs(rate - p) < 3 * math.sqrt(p * (1 - p) / 20000)


@pytest.mark.parametrize("kind, scale, theta, q", [("gaussian", 1.0, 1.0, 0.7), ("laplace", 2.0, 0.5, 0.9)])
def test_sampler_law_ks(kind, scale, theta, q, rng):
    m = BrdpMechanism(CalibratedKernel(kind, scale, 1.0), q, ErrorBound(theta))
    out, _ = core.sample_batch(m, 0.0, 100000, rng)
    res = stats.kstest(out, lambda x: core.brdp_cdf(m, x))
    assert res.pvalue > 0.001


def test_nontermination_cap(rng):
    k = CalibratedKernel(KernelKind.GAUSSIAN, 100.0, 1.0)
    m = BrdpMechanism(k, 1.0, ErrorBound(1e-6))
    with pytest.raises(NonTerminationError):
        core.sample(m, 0.0, rng, max_rounds=50)
    with pytest.raises(NonTerminationError):
        core.sample_batch(m, 0.0, 10, rng, max_rounds=50)


def test_shift_params_example():
    s = core.shift_params(G1, ErrorBound(1.0), 0.5)
    expected = max(stats.norm.cdf(0) - stats.norm.cdf(-1), stats.norm.cdf(2) - stats.norm.cdf(1))
    assert s.W == pytest.approx(expected, abs=1e-12)
    assert s.W == pytest.approx(0.34134, abs=1e-5)
    assert s.L == pytest.approx(math.log(2), abs=1e-12)
    assert core.shift_params(G1, ErrorBound(1.0), 0.0).L == 0.0
    assert core.shift_params(G1, ErrorBound(1.0), 1.0).L == math.inf


def test_shift_weight_collapses_to_p_theta_for_large_sensitivity():
    k = CalibratedKernel(KernelKind.GAUSSIAN, 1.0, 3.0)
    b = ErrorBound(1.0)
    assert core.shift_params(k, b, 0.3).W == pytest.approx(core.p_theta(k, b), abs=1e-12)


def test_shift_params_independent_of_data():
    m = BrdpMechanism(G1, 0.4, ErrorBound(1.0))
    a = [core.acceptance_rate(m) for _ in (0, 10, -10)]
    assert len(set(a)) == 1
    s = [core.shift_params(m.kernel, m.bound, m.q) for _ in (0, 10, -10)]
    assert len(set(s)) == 1


def test_profile_reductions():
    b = ErrorBound(1.0)
    for eps in (0.0, 0.5, 2.0):
        base = kernels.privacy_profile(G1, eps)
        assert core.brdp_privacy_profile(BrdpMechanism(G1, 0.0, b), eps) == base
        assert core.mixture_profile(G1, core.ShiftWeight(0.0, 1.0), eps) == base


def test_profile_matches_mixture_formula():
    m = BrdpMechanism(G1, 0.3, ErrorBound(1.0))
    s = core.shift_params(m.kernel, m.bound, m.q)
    eps = 1.2
    expected = (1 - s.W) * kernels.privacy_profile(G1, eps) + s.W * kernels.privacy_profile(G1, eps - s.L)
    assert core.brdp_privacy_profile(m, eps) == pytest.approx(expected, rel=1e-14)


def test_direct_profile_equals_kernel_at_q0():
    m = BrdpMechanism(L1, 0.0, ErrorBound(0.5))
    for eps in (0.0, 0.5):
        assert core.direct_privacy_profile(m, eps) == pytest.approx(kernels.privacy_profile(L1, eps), abs=1e-8)
