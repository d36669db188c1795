import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hermite_flow.basis import AliasingError, HermiteExpansion, apply_derivative, apply_position
from hermite_flow.coefficients import coefficient
from hermite_flow.operators import (ConversionError, OperatorSpec, adjoint_direct, adjoint_equivalence_check,
                                    adjoint_to_standard, apply_A, apply_L, assemble, checked_standard_form,
                                    multiply_field)
from hermite_flow.sobolev import DecaySampler, new_norm
from strategies import expansions

h0 = HermiteExpansion.basis((0,))
R2 = np.sqrt(0.5)

SUITE_1D = OperatorSpec.standard("(add 1 (mul 0.5 (sin x1)))", ["x1"], "(cos x1)", ["(tanh x1)"])
SUITE_2D = OperatorSpec.standard(
    [["(add 1 (mul 0.5 (sin x1)))", "(mul 0.3 (cos x2))"], ["(mul 0.2 (tanh x1))", "(add 1 (mul 0.5 (cos x2)))"]],
    ["x1", "(add x2 (mul 0.5 (sin x1)))"], "(mul (cos x1) (cos x2))", ["(tanh x1)", "(tanh x2)"])
ADJOINT_SUITE = [
    ("(add 1 (mul 0.5 (sin x1)))", ["(neg x1)"]),
    ("(sin x1)", [0]),
    ("(add 1 (mul 0.25 (tanh x1)))", ["(add (neg x1) (sin x1))"]),
    ([["(add 1 (mul 0.5 (sin x1)))", "(mul 0.3 (tanh x2))"], ["(mul 0.2 (cos x1))", "(add 1 (mul 0.25 (tanh x2)))"]],
     ["(add (neg x1) (sin x2))", "(sub (mul 0.5 (tanh x1)) x2)"]),
]


def close(a, b, tol=1e-12):
    return np.max(np.abs((a - b).coeffs)) < tol


def test_multiply_field_examples():
    phi = HermiteExpansion(np.array([0.2, -1.0, 0.7]))
    assert close(multiply_field(coefficient(1, 1), phi, 2), phi)
    assert close(multiply_field(coefficient("x1", 1), h0, 1), HermiteExpansion(np.array([0.0, R2])))
    s = multiply_field(coefficient("(sin x1)", 1), h0, 12)
    assert abs(s.coeffs[0]) < 1e-15 and np.max(np.abs(s.coeffs[::2])) < 1e-15


def test_multiply_field_matches_closed_form():
    # sin(x) h_0 has <sin(x) h_0, h_1> = sqrt(2) pi^{-1/2} int x sin(x) e^{-x^2} dx = e^{-1/4}/sqrt(2)
    s = multiply_field(coefficient("(sin x1)", 1), h0, 6)
    assert s.coeffs[1] == pytest.approx(np.exp(-0.25) * R2, rel=1e-13)


def test_multiply_field_aliasing_guard():
    with pytest.raises(AliasingError, match="aliasing guard"):
        multiply_field(coefficient("(sin x1)", 1), HermiteExpansion.basis((6,)), 6, m=8)


def test_apply_A_examples():
    assert close(apply_A(OperatorSpec.standard(1), 0, h0), HermiteExpansion(np.array([0.0, -R2])))
    assert close(apply_A(OperatorSpec.standard(0, h=[1]), 0, h0), h0)
    assert not np.any(apply_A(OperatorSpec.standard(1), 0, HermiteExpansion.zeros(1, 4)).coeffs)


def test_apply_L_examples():
    heat = OperatorSpec.standard(1)
    assert apply_L(heat, h0).inner0(h0) == pytest.approx(-0.25)
    phi = HermiteExpansion(np.array([0.3, 0.1, -0.4]))
    assert close(apply_L(OperatorSpec.standard(0, g=2.5), phi), phi * 2.5)
    expected = -apply_position(0, apply_position(0, h0))
    assert close(apply_L(OperatorSpec.standard(0, f=["x1"]), h0), expected)


@given(expansions(dim=2, N=5), expansions(dim=2, N=5), st.floats(-2, 2))
def test_operators_linear(phi, psi, a):
    for op in (lambda u: apply_L(SUITE_2D, u, 8), lambda u: apply_A(SUITE_2D, 1, u, 8)):
        lhs = op(phi * a + psi)
        rhs = op(phi) * a + op(psi)
        assert np.max(np.abs((lhs - rhs).coeffs)) < 1e-12 * max(1.0, np.max(np.abs(lhs.coeffs)))


@given(expansions(dim=2, max_N=5))
def test_zero_padding_changes_only_quadrature_error(phi):
    # padding the input changes the default collocation size, nothing else
    a = apply_L(SUITE_2D, phi, 8)
    b = apply_L(SUITE_2D, phi.padded(6), 8)
    assert np.max(np.abs((a - b).coeffs)) < 1e-10 * max(1.0, phi.norm0())


def test_adjoint_affine_conversion():
    s, b0, b1 = 1.7, 0.4, -0.8
    std = adjoint_to_standard(s, [f"(add {b0} (mul {b1} x1))"])
    assert std.sigma[0][0].value == pytest.approx(-s)
    assert std.h[0].is_zero
    assert std.f[0].equals(coefficient(f"(add {-b0} (mul {-b1} x1))", 1))
    assert std.g.value == pytest.approx(-b1)


def test_adjoint_pure_heat():
    std = adjoint_to_standard(2.0, [0])
    phi = HermiteExpansion(np.array([1.0, 0.5, -0.25, 0.1]))
    expected_L = apply_derivative(0, apply_derivative(0, phi)) * 2.0
    assert close(apply_L(std, phi), expected_L)
    assert close(apply_A(std, 0, phi), apply_derivative(0, phi) * -2.0)


def test_adjoint_sin_sigma():
    std = adjoint_to_standard("(sin x1)", [0])
    # with the original sigma = sin x, h = -d/dx sin = -cos (the replaced matrix is -sin)
    assert std.h[0].equals(coefficient("(neg (cos x1))", 1))
    assert std.g.equals(coefficient("(cos (mul 2 x1))", 1))
    assert std.f[0].equals(coefficient("(sin (mul 2 x1))", 1))


def test_literal_plus_cos_sign_fails_equivalence():
    std = adjoint_to_standard("(sin x1)", [0])
    wrong = OperatorSpec(1, std.sigma, std.form, std.f, std.g, (coefficient("(cos x1)", 1),))
    samples = [DecaySampler(1, 8, seed=2)(i) for i in range(3)]
    assert adjoint_equivalence_check("(sin x1)", [0], samples) < 1e-8
    assert adjoint_equivalence_check("(sin x1)", [0], samples, standard=wrong) > 1e-2


def test_adjoint_equivalence_examples():
    samples = [DecaySampler(1, 10, seed=4)(i) for i in range(5)]
    assert adjoint_equivalence_check(1.3, ["(add 0.5 (mul -2 x1))"], samples) < 1e-10
    assert adjoint_equivalence_check("(sin x1)", [0], samples) < 1e-8
    zero = OperatorSpec.adjoint(0, [0])
    L, A = adjoint_direct(zero, samples[0], 12)
    assert not np.any(L.coeffs) and not np.any(A[0].coeffs)
    assert adjoint_equivalence_check(0, [0], samples) == 0.0


@pytest.mark.parametrize("sigma, b", ADJOINT_SUITE)
def test_adjoint_suite_equivalence(sigma, b):
    spec = OperatorSpec.adjoint(sigma, b)
    samples = [DecaySampler(spec.dim, 10, seed=7)(i) for i in range(4)]
    assert adjoint_equivalence_check(sigma, b, samples) < 1e-8


def test_checked_standard_form_rejects_bad_conversion(monkeypatch):
    import hermite_flow.operators as ops

    spec = OperatorSpec.adjoint("(sin x1)", [0])
    monkeypatch.setattr(ops, "adjoint_equivalence_check", lambda *a, **k: 1.0)
    with pytest.raises(ConversionError):
        checked_standard_form(spec)


def test_assemble_heat_is_pentadiagonal_symmetric():
    L, (A,) = assemble(OperatorSpec.standard(1), 10)
    S = L.square()
    assert np.allclose(S, S.T, atol=1e-14)
    i, j = np.nonzero(np.abs(S) > 1e-14)
    assert set(np.abs(i - j)) <= {0, 2}


def test_assemble_zero_spec():
    L, A = assemble(OperatorSpec.standard(0), 6)
    assert not np.any(L.matrix) and not np.any(A[0].matrix)


@pytest.mark.parametrize("spec", [SUITE_1D, SUITE_2D], ids=["d1", "d2"])
def test_assemble_matches_apply(spec):
    N = 6
    L, A = assemble(spec, N)
    sampler = DecaySampler(spec.dim, N, seed=3)
    for i in range(3):
        phi = sampler(i)
        ref = apply_L(spec, phi, N + 2).coeffs
        got = L.apply(phi.coeffs)
        assert np.linalg.norm(got - ref) / np.linalg.norm(ref) < 1e-10
        refA = apply_A(spec, 0, phi, N + 2).coeffs
        assert np.linalg.norm(A[0].apply(phi.coeffs) - refA) / np.linalg.norm(refA) < 1e-10


@pytest.mark.parametrize("p", [1, 2])
def test_boundedness_proxy_stable_in_N(p):
    sups = {}
    for N in (8, 16, 32):
        sampler = DecaySampler(1, N, seed=0)
        rl, ra = [], []
        for i in range(60):
            phi = sampler(i)
            n = new_norm(phi, p)
            rl.append(new_norm(apply_L(SUITE_1D, phi, N + 14), p - 1) / n)
            ra.append(new_norm(apply_A(SUITE_1D, 0, phi, N + 14), p - 1) / n)
        sups[N] = (max(rl), max(ra))
    for a, b in ((8, 16), (16, 32)):
        assert all(abs(y - x) / x < 0.2 for x, y in zip(sups[a], sups[b]))


def test_validate_growth_diagnostics():
    bad = OperatorSpec.standard({"expr": "x1", "growth": "bounded"})
    diags = bad.validate()
    assert len(diags) == 1 and "declared bounded" in diags[0]
    assert len(OperatorSpec.standard(1, g="x1").validate()) == 1
    assert SUITE_1D.validate() == [] and SUITE_2D.validate() == []


def test_spec_digest_stable():
    again = OperatorSpec.standard("(add 1 (mul 0.5 (sin x1)))", ["x1"], "(cos x1)", ["(tanh x1)"])
    assert again.digest() == SUITE_1D.digest()
    assert OperatorSpec.standard(1).digest() != SUITE_1D.digest()
