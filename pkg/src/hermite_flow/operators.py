"""Second-order operators ``L`` and first-order ``A_i`` on Hermite expansions.

Standard form::

    A_i phi = sum_j sigma_ji d_j phi + h_i phi
    L phi   = 1/2 sum_ij (sigma sigma^T)_ij d_ij phi + sum_j f_j d_j phi + g phi

Adjoint (Fokker-Planck) form::

    A*_i phi = - sum_j d_j (sigma_ji phi)
    L* phi   = 1/2 sum_ij d_ij ((sigma sigma^T)_ij phi) - sum_j d_j (b_j phi)

Adjoint specs are converted to standard form (sigma -> -sigma plus lower-order
fields) before they are applied.  Constant-coefficient terms are applied in
exact ladder arithmetic; variable fields are multiplied by collocation on a
Gauss-Hermite grid and projected back.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np

from .basis import (
    AliasingError,
    HermiteExpansion,
    analyze_grid,
    derivative_coeffs,
    grid_points,
    pad_coeffs,
    synthesize_grid,
)
from .coefficients import BOUNDED, LINEAR, CoefficientFunction, FamilyError, coefficient

STANDARD = "standard"
ADJOINT = "adjoint"


class ConversionError(RuntimeError):
    """Adjoint-to-standard conversion failed its equivalence check."""


def _cf_tuple(values, dim, default=0):
    if values is None:
        values = [default] * dim
    values = list(values)
    if len(values) != dim:
        raise ValueError(f"expected {dim} components, got {len(values)}")
    return tuple(coefficient(v, dim) for v in values)


@dataclass(frozen=True, eq=False)
class OperatorSpec:
    dim: int
    sigma: tuple[tuple[CoefficientFunction, ...], ...]
    form: str = STANDARD
    f: tuple[CoefficientFunction, ...] = ()
    g: CoefficientFunction | None = None
    h: tuple[CoefficientFunction, ...] = ()
    b: tuple[CoefficientFunction, ...] = ()

    @classmethod
    def standard(cls, sigma, f=None, g=0, h=None, dim: int | None = None) -> "OperatorSpec":
        sigma = _sigma_matrix(sigma, dim)
        d = len(sigma)
        return cls(d, sigma, STANDARD, _cf_tuple(f, d), coefficient(g, d), _cf_tuple(h, d))

    @classmethod
    def adjoint(cls, sigma, b=None, dim: int | None = None) -> "OperatorSpec":
        sigma = _sigma_matrix(sigma, dim)
        d = len(sigma)
        return cls(d, sigma, ADJOINT, b=_cf_tuple(b, d))

    # -- derived data ---------------------------------------------------

    @cached_property
    def diffusion(self) -> tuple[tuple[CoefficientFunction, ...], ...]:
        """``a = sigma sigma^T`` as a symmetric matrix of family members."""
        d = self.dim
        rows = []
        for i in range(d):
            rows.append(tuple(sum((self.sigma[i][k] * self.sigma[j][k] for k in range(d)), coefficient(0, d))
                              for j in range(d)))
        return tuple(rows)

    @cached_property
    def standard_form(self) -> "OperatorSpec":
        return self if self.form == STANDARD else adjoint_to_standard(self.sigma, self.b)

    def to_dict(self) -> dict:
        out = {"dim": self.dim, "form": self.form,
               "sigma": [[c.prefix() for c in row] for row in self.sigma]}
        if self.form == STANDARD:
            out.update(f=[c.prefix() for c in self.f], g=self.g.prefix(), h=[c.prefix() for c in self.h])
        else:
            out.update(b=[c.prefix() for c in self.b])
        return out

    def digest(self) -> str:
        import json

        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def validate(self) -> list[str]:
        """Growth-class diagnostics; empty when every field lies in its admissible growth class."""
        diags = []

        def need(name, cf, allowed):
            if cf.declared == BOUNDED and cf.growth != BOUNDED:
                diags.append(f"{name}: declared bounded but grows {cf.growth}ly ({cf.prefix()})")
            elif cf.growth not in allowed:
                diags.append(f"{name}: must be {' or '.join(allowed)}, got {cf.growth} ({cf.prefix()})")

        for i, row in enumerate(self.sigma):
            for j, c in enumerate(row):
                need(f"sigma[{i}][{j}]", c, (BOUNDED,))
        if self.form == STANDARD:
            for j, c in enumerate(self.f):
                need(f"f[{j}]", c, (BOUNDED, LINEAR))
            need("g", self.g, (BOUNDED,))
            for j, c in enumerate(self.h):
                need(f"h[{j}]", c, (BOUNDED,))
        else:
            for j, c in enumerate(self.b):
                need(f"b[{j}]", c, (BOUNDED, LINEAR))
        return diags


def _sigma_matrix(sigma, dim):
    if isinstance(sigma, (int, float, str, dict, CoefficientFunction)):
        dim = dim or 1
        return tuple(tuple(coefficient(sigma if i == j else 0, dim) for j in range(dim)) for i in range(dim))
    rows = [list(r) for r in sigma]
    d = len(rows)
    if dim is not None and dim != d:
        raise ValueError(f"sigma has {d} rows, expected dim {dim}")
    if any(len(r) != d for r in rows):
        raise ValueError("sigma must be square")
    return tuple(tuple(coefficient(v, d) for v in r) for r in rows)


def adjoint_to_standard(sigma, b) -> OperatorSpec:
    """Rewrite ``(L*, A*)`` in standard form.

    With ``s = -sigma`` and ``a = sigma sigma^T``::

        h_j = sum_i d_i s_ij
        f_j = 1/2 sum_i (d_i a_ij + d_i a_ji) - b_j
        g   = 1/2 sum_ij d_ij a_ij - sum_j d_j b_j
    """
    adj = OperatorSpec.adjoint(sigma, b)
    d = adj.dim
    zero = coefficient(0, d)
    a = adj.diffusion
    e = lambda *js: tuple(sum(1 for j in js if j == k) for k in range(d))  # noqa: E731
    s = tuple(tuple(-c for c in row) for row in adj.sigma)
    h = tuple(sum((s[i][j].derivative(e(i)) for i in range(d)), zero) for j in range(d))
    f = tuple(
        sum(((a[i][j].derivative(e(i)) + a[j][i].derivative(e(i))) * 0.5 for i in range(d)), zero) - adj.b[j]
        for j in range(d)
    )
    g = sum((a[i][j].derivative(e(i, j)) * 0.5 for i in range(d) for j in range(d)), zero) - sum(
        (adj.b[j].derivative(e(j)) for j in range(d)), zero
    )
    return OperatorSpec(d, s, STANDARD, f, g, h)


# ---------------------------------------------------------------------------
# application


@lru_cache(maxsize=512)
def _field_on_grid(cf: CoefficientFunction, m: int) -> np.ndarray:
    vals = np.array(cf(*grid_points(cf.dim, m)), dtype=float)
    vals.setflags(write=False)
    return vals


def field_nodes(N_in: int, N_out: int) -> int:
    """Default collocation size for variable-field products of degree N_in -> N_out.

    Twice the bare aliasing bound: fields with complex singularities (tanh)
    have slowly decaying Hermite tails and need the extra nodes.
    """
    return 2 * (N_in + N_out + 16)


def apply_terms(terms, C: np.ndarray, dim: int, N_out: int, m: int | None = None) -> np.ndarray:
    """``sum_k field_k * d^{beta_k} phi`` projected to degree ``N_out``.

    ``terms`` is a sequence of ``(CoefficientFunction, beta)``; ``C`` may carry
    leading batch axes.
    """
    N_in = C.shape[-1] - 1
    if m is None:
        m = field_nodes(N_in + max((sum(beta) for _, beta in terms), default=0), N_out)
    batch = C.shape[: C.ndim - dim]
    out = np.zeros(batch + (N_out + 1,) * dim)
    grid_vals = None
    cache = {}
    for cf, beta in terms:
        if cf.is_zero:
            continue
        beta = tuple(beta)
        if beta not in cache:
            cache[beta] = derivative_coeffs(C, dim, beta)
        D = cache[beta]
        if cf.is_constant:
            out += cf.value * pad_coeffs(D, dim, N_out)
            continue
        if m < N_in + sum(beta) + N_out + 1:
            raise AliasingError(
                f"aliasing guard: {m} nodes too few for field products of degree "
                f"{N_in + sum(beta)} -> {N_out} (need >= {N_in + sum(beta) + N_out + 1})"
            )
        term = _field_on_grid(cf, m) * synthesize_grid(D, dim, m)
        grid_vals = term if grid_vals is None else grid_vals + term
    if grid_vals is not None:
        out += analyze_grid(grid_vals, dim, N_out, m)
    return out


def _unit(d, *js):
    return tuple(sum(1 for j in js if j == k) for k in range(d))


def L_terms(spec: OperatorSpec):
    std = spec.standard_form
    d = std.dim
    a = std.diffusion
    terms = []
    for i in range(d):
        terms.append((a[i][i] * 0.5, _unit(d, i, i)))
        for j in range(i + 1, d):
            # a is symmetric, so the (i,j) and (j,i) halves combine
            terms.append((a[i][j], _unit(d, i, j)))
    for j in range(d):
        terms.append((std.f[j], _unit(d, j)))
    terms.append((std.g, _unit(d)))
    return terms


def A_terms(spec: OperatorSpec, i: int):
    std = spec.standard_form
    d = std.dim
    return [(std.sigma[j][i], _unit(d, j)) for j in range(d)] + [(std.h[i], _unit(d))]


def multiply_field(c, phi: HermiteExpansion, N_out: int | None = None, m: int | None = None) -> HermiteExpansion:
    """Projection of ``c * phi`` onto degrees ``<= N_out`` (collocation)."""
    cf = coefficient(c, phi.dim)
    N_out = phi.N if N_out is None else N_out
    return HermiteExpansion(apply_terms([(cf, (0,) * phi.dim)], phi.coeffs, phi.dim, N_out, m))


def apply_A(spec: OperatorSpec, i: int, phi: HermiteExpansion, N_out: int | None = None, m=None) -> HermiteExpansion:
    _check_dim(spec, phi)
    N_out = phi.N + 2 if N_out is None else N_out
    return HermiteExpansion(apply_terms(A_terms(spec, i), phi.coeffs, phi.dim, N_out, m))


def apply_L(spec: OperatorSpec, phi: HermiteExpansion, N_out: int | None = None, m=None) -> HermiteExpansion:
    _check_dim(spec, phi)
    N_out = phi.N + 2 if N_out is None else N_out
    return HermiteExpansion(apply_terms(L_terms(spec), phi.coeffs, phi.dim, N_out, m))


def _check_dim(spec, phi):
    if spec.dim != phi.dim:
        raise ValueError(f"operator has dim {spec.dim}, expansion has dim {phi.dim}")


# ---------------------------------------------------------------------------
# matrices


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    """Dense Galerkin matrix from degree ``N_in`` to ``N_out`` (row-major flattening)."""

    matrix: np.ndarray = field(repr=False)
    dim: int
    N_in: int
    N_out: int
    digest: str = ""
    m: int = 0

    def __post_init__(self):
        self.matrix.setflags(write=False)

    def apply(self, C: np.ndarray) -> np.ndarray:
        flat = self.matrix @ np.asarray(C).reshape(-1)
        return flat.reshape((self.N_out + 1,) * self.dim)

    def __matmul__(self, other):
        if isinstance(other, HermiteExpansion):
            return HermiteExpansion(self.apply(other.padded(self.N_in).coeffs))
        return self.matrix @ other

    @cached_property
    def kept_rows(self) -> np.ndarray:
        """Flat output indices of multi-indices with all entries <= N_in."""
        idx = np.arange((self.N_out + 1) ** self.dim).reshape((self.N_out + 1,) * self.dim)
        return idx[(slice(0, self.N_in + 1),) * self.dim].reshape(-1)

    @cached_property
    def tail_rows(self) -> np.ndarray:
        mask = np.ones((self.N_out + 1) ** self.dim, dtype=bool)
        mask[self.kept_rows] = False
        return np.flatnonzero(mask)

    def square(self) -> np.ndarray:
        """Re-projection onto the input truncation."""
        return self.matrix[self.kept_rows]

    def tail(self) -> np.ndarray:
        return self.matrix[self.tail_rows]


def _matrix_from_terms(terms, dim, N, N_out, m, digest):
    n = (N + 1) ** dim
    basis = np.eye(n).reshape((n,) + (N + 1,) * dim)
    cols = apply_terms(terms, basis, dim, N_out, m).reshape(n, -1)
    return OperatorMatrix(np.ascontiguousarray(cols.T), dim, N, N_out, digest, m or field_nodes(N + 2, N_out))


def assemble(spec: OperatorSpec, N: int, m: int | None = None, N_out: int | None = None):
    """Galerkin matrices ``(L, (A_1..A_d))`` from degree ``N`` to ``N + 2``."""
    N_out = N + 2 if N_out is None else N_out
    dg = spec.digest()
    L = _matrix_from_terms(L_terms(spec), spec.dim, N, N_out, m, dg)
    A = tuple(_matrix_from_terms(A_terms(spec, i), spec.dim, N, N_out, m, dg) for i in range(spec.dim))
    return L, A


# ---------------------------------------------------------------------------
# adjoint equivalence


def adjoint_direct(spec: OperatorSpec, phi: HermiteExpansion, N_out: int, m=None):
    """``L* phi`` and ``A*_i phi`` by expanding the divergence form directly.

    Fields multiply ``phi`` first (projected to ``N_out + 2``), the outer
    derivatives are then applied exactly, so degrees ``<= N_out`` are exact up to
    quadrature.
    """
    if spec.form != ADJOINT:
        raise ValueError("adjoint_direct needs an adjoint-form spec")
    d, C = spec.dim, phi.coeffs
    big = N_out + 2
    zero = (0,) * d
    a = spec.diffusion
    L = np.zeros((N_out + 1,) * d)
    for i in range(d):
        for j in range(d):
            prod = apply_terms([(a[i][j], zero)], C, d, big, m)
            L += 0.5 * pad_coeffs(derivative_coeffs(prod, d, _unit(d, i, j)), d, N_out)
    for j in range(d):
        prod = apply_terms([(spec.b[j], zero)], C, d, big, m)
        L -= pad_coeffs(derivative_coeffs(prod, d, _unit(d, j)), d, N_out)
    A = []
    for i in range(d):
        Ai = np.zeros((N_out + 1,) * d)
        for j in range(d):
            prod = apply_terms([(spec.sigma[j][i], zero)], C, d, big, m)
            Ai -= pad_coeffs(derivative_coeffs(prod, d, _unit(d, j)), d, N_out)
        A.append(HermiteExpansion(Ai))
    return HermiteExpansion(L), tuple(A)


def _rel(diff, ref):
    num, den = diff.norm0(), ref.norm0()
    if den == 0.0:
        return 0.0 if num == 0.0 else np.inf
    return num / den


def adjoint_equivalence_check(sigma, b, samples, N_out: int | None = None, m=None, standard=None) -> float:
    """Max relative L2 mismatch between the direct adjoint expansion and its standard form.

    ``samples`` is an iterable of expansions.  ``standard`` overrides the
    converted spec (used to test alternative conversion formulas).
    """
    adj = OperatorSpec.adjoint(sigma, b)
    std = adjoint_to_standard(adj.sigma, adj.b) if standard is None else standard
    worst = 0.0
    for phi in samples:
        n_out = phi.N + 2 if N_out is None else N_out
        L_direct, A_direct = adjoint_direct(adj, phi, n_out, m)
        worst = max(worst, _rel(apply_L(std, phi, n_out, m) - L_direct, L_direct))
        for i in range(adj.dim):
            worst = max(worst, _rel(apply_A(std, i, phi, n_out, m) - A_direct[i], A_direct[i]))
    return worst


def checked_standard_form(spec: OperatorSpec, N: int = 8, tol: float = 1e-8, seed: int = 0) -> OperatorSpec:
    """Standard form of ``spec``; for adjoint specs the conversion is verified first."""
    if spec.form == STANDARD:
        return spec
    if "_checked_standard" in spec.__dict__:
        return spec.__dict__["_checked_standard"]
    from .sobolev import DecaySampler

    sampler = DecaySampler(spec.dim, N, seed=seed)
    err = adjoint_equivalence_check(spec.sigma, spec.b, [sampler(i) for i in range(3)])
    if not err < tol:
        raise ConversionError(f"adjoint conversion mismatch {err:.3e} exceeds {tol:g}")
    spec.__dict__["_checked_standard"] = spec.standard_form
    return spec.standard_form


__all__ = [
    "ADJOINT",
    "STANDARD",
    "ConversionError",
    "FamilyError",
    "OperatorMatrix",
    "OperatorSpec",
    "adjoint_direct",
    "adjoint_equivalence_check",
    "adjoint_to_standard",
    "apply_A",
    "apply_L",
    "apply_terms",
    "assemble",
    "checked_standard_form",
    "multiply_field",
]
