import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hermite_flow.basis import HermiteExpansion, apply_monomial_derivative, multiindices_upto
from hermite_flow.sobolev import (DecaySampler, equivalence_sweep, equivalence_sweep_batch, hs_norm_sq, new_inner,
                                  new_norm, old_norm)
from strategies import expansions

h0 = HermiteExpansion.basis((0,))
h1 = HermiteExpansion.basis((1,))
h2 = HermiteExpansion.basis((2,))


def term_by_term(phi, psi, p):
    """Direct sum over |a| + |b| <= 2p of <x^a d^b phi, x^a d^b psi>_0."""
    d = phi.dim
    total = 0.0
    for k in range(2 * p + 1):
        for a in multiindices_upto(d, k):
            for b in multiindices_upto(d, 2 * p - k):
                if sum(a) != k:
                    continue
                total += apply_monomial_derivative(a, b, phi).inner0(apply_monomial_derivative(a, b, psi))
    return total


def test_old_norm_examples():
    assert old_norm(h0, 1) == pytest.approx(1.0)
    assert old_norm(h2, 1) == pytest.approx(5.0)
    assert old_norm(HermiteExpansion.zeros(1, 3), 2) == 0.0


def test_new_inner_examples():
    assert new_inner(h0, h0, 0) == pytest.approx(1.0)
    # 1 + 1/2 + 1/2 + 3/4 + 3/4 + 3/4
    assert new_inner(h0, h0, 1) == pytest.approx(17 / 4, rel=1e-14)
    assert new_norm(h0, 1) == pytest.approx(np.sqrt(17) / 2, rel=1e-14)
    for p in (0, 1, 2):
        assert new_inner(h0, h1, p) == pytest.approx(0.0, abs=1e-14)
    assert new_norm(HermiteExpansion.zeros(1, 2), 2) == 0.0
    assert new_norm(h0, 0) == 1.0


@pytest.mark.parametrize("dim, p", [(1, 1), (1, 2), (2, 1), (2, 2)])
def test_gram_matches_term_by_term(rng, dim, p):
    N = 5
    phi = HermiteExpansion(rng.standard_normal((N + 1,) * dim))
    psi = HermiteExpansion(rng.standard_normal((N + 1,) * dim))
    assert new_inner(phi, psi, p) == pytest.approx(term_by_term(phi, psi, p), rel=1e-12)


def test_hs_norm_sq_examples():
    assert hs_norm_sq([HermiteExpansion.zeros(1, 2)], 1) == 0.0
    assert hs_norm_sq([h0], 0) == pytest.approx(1.0)
    assert hs_norm_sq([HermiteExpansion.basis((0, 0)), HermiteExpansion.basis((1, 0))], 0) == pytest.approx(2.0)


def test_p_out_of_range():
    with pytest.raises(ValueError):
        new_norm(h0, -1)
    with pytest.raises(ValueError):
        old_norm(h0, 5)


@given(expansions(dim=2, max_N=6), st.integers(0, 2))
def test_norms_monotone_in_p(phi, p):
    assert new_norm(phi, p) <= new_norm(phi, p + 1) * (1 + 1e-12)
    assert old_norm(phi, p) <= old_norm(phi, p + 1) * (1 + 1e-12)


@given(expansions(max_N=10, N=8), expansions(max_N=10, N=8), st.integers(0, 3))
def test_cauchy_schwarz(phi, psi, p):
    assert abs(new_inner(phi, psi, p)) <= new_norm(phi, p) * new_norm(psi, p) * (1 + 1e-12)


@given(expansions(dim=2, max_N=8))
def test_parseval_at_p0(phi):
    assert new_norm(phi, 0) ** 2 == pytest.approx(np.sum(phi.coeffs ** 2), rel=1e-12)


@given(expansions(max_N=8, N=6), expansions(max_N=8, N=6), st.floats(-3, 3))
def test_new_inner_bilinear_symmetric(phi, psi, a):
    assert new_inner(phi, psi, 2) == pytest.approx(new_inner(psi, phi, 2), rel=1e-12, abs=1e-12)
    lhs = new_inner(phi * a + psi, psi, 1)
    assert lhs == pytest.approx(a * new_inner(phi, psi, 1) + new_inner(psi, psi, 1), rel=1e-10, abs=1e-10)


def test_sweep_on_h0():
    rep = equivalence_sweep(lambda i: h0, 1, 3)
    assert rep.ratio_min == pytest.approx(np.sqrt(17) / 2)
    assert rep.sample_count == 3


def test_sweep_p0_ratios_are_one():
    rep = equivalence_sweep(DecaySampler(2, 6, seed=3), 0, 20)
    np.testing.assert_allclose(rep.ratios, 1.0, rtol=1e-13)


def test_sweep_rejects_zero_sample():
    with pytest.raises(ValueError):
        equivalence_sweep(lambda i: HermiteExpansion.zeros(1, 3), 1, 2)


def test_batch_sweep_matches_loop():
    sampler = DecaySampler(1, 12, seed=5)
    a = equivalence_sweep(sampler, 2, 15).ratios
    b = equivalence_sweep_batch(sampler, 2, 15).ratios
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_sampler_is_nested_and_reproducible():
    small, big = DecaySampler(2, 8, seed=1), DecaySampler(2, 16, seed=1)
    np.testing.assert_array_equal(small.coeffs(4), big.coeffs(4)[:9, :9])
    np.testing.assert_array_equal(small.coeffs(4), DecaySampler(2, 8, seed=1).coeffs(4))
    assert not np.array_equal(small.coeffs(4), small.coeffs(5))


@pytest.mark.parametrize("dim", [1, 2])
def test_equivalence_interval_stable_in_N(dim):
    for p in (1, 2):
        ends = [equivalence_sweep_batch(DecaySampler(dim, N, seed=0), p, 200) for N in (8, 16, 32)]
        assert all(0 < r.ratio_min <= r.ratio_max < np.inf for r in ends)
        lo, hi = ends[1], ends[2]
        assert abs(hi.ratio_min - lo.ratio_min) / lo.ratio_min < 0.2
        assert abs(hi.ratio_max - lo.ratio_max) / lo.ratio_max < 0.2
