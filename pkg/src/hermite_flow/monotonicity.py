"""Empirical checks of the monotonicity inequality and the order-reduction identity.

For a spec ``(L, A)`` and test function ``phi`` the monotonicity ratio is

    (2 <phi, L phi>_p + sum_i ||A_i phi||_p^2) / ||phi||_p^2

and a uniform bound on it over all Schwartz ``phi`` is the inequality.  We
sample decay-damped random expansions at several truncations and watch the
supremum; a supremum that keeps growing with ``N`` is evidence of a violation.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .basis import HermiteExpansion, MultiIndex, as_multiindex, derivative_coeffs, pad_coeffs
from .coefficients import CoefficientFunction, coefficient
from .operators import OperatorSpec, apply_terms, A_terms, L_terms, checked_standard_form
from .sobolev import DecaySampler, _check_p, sobolev_bilinear

# extra degrees carried for A_i phi beyond the exact budget; variable fields
# leave a tail that the Sobolev weights amplify
TAIL_MARGIN = 12
GROWTH_TOL = 1.2
ABS_TOL = 1e-9


def working_degree(N: int, p: int) -> int:
    """Truncation for ``L phi`` / ``A_i phi`` inside the p-inner products."""
    return N + 2 + 4 * p + TAIL_MARGIN


def monotonicity_terms(spec: OperatorSpec, C: np.ndarray, p: int, m: int | None = None):
    """``(2<phi,L phi>_p + ||A phi||^2_HS(p), ||phi||_p^2)`` for coefficient arrays.

    ``C`` may carry a leading batch axis.
    """
    p = _check_p(p)
    std = checked_standard_form(spec)
    d = spec.dim
    N = C.shape[-1] - 1
    N_w = working_degree(N, p)
    LC = apply_terms(L_terms(std), C, d, N_w, m)
    Cw = pad_coeffs(C, d, N_w)
    lhs = 2.0 * sobolev_bilinear(Cw, LC, d, p)
    for i in range(d):
        AC = apply_terms(A_terms(std, i), C, d, N_w, m)
        lhs = lhs + sobolev_bilinear(AC, AC, d, p)
    return lhs, sobolev_bilinear(C, C, d, p)


def monotonicity_lhs(spec: OperatorSpec, phi: HermiteExpansion, p: int, m: int | None = None) -> float:
    """``2<phi, L phi>_p + ||A phi||_HS(p)^2``."""
    if spec.dim != phi.dim:
        raise ValueError(f"operator has dim {spec.dim}, expansion has dim {phi.dim}")
    lhs, _ = monotonicity_terms(spec, phi.coeffs, p, m)
    return float(lhs)


def monotonicity_ratio(spec: OperatorSpec, phi: HermiteExpansion, p: int) -> float:
    lhs, norm = monotonicity_terms(spec, phi.coeffs, p)
    if norm <= 0.0:
        raise ValueError("ratio undefined for the zero function")
    return float(lhs / norm)


@dataclass(frozen=True)
class BasisSampler:
    """Unit coefficient vectors ``e_n`` in row-major order of ``n``.

    Decay-damped random samples concentrate on low modes, so a ratio that
    grows only through high modes stays hidden from them; single basis
    functions probe every mode up to ``N`` with equal weight.  Index ``i``
    past the last mode repeats the last one.
    """

    dim: int
    N: int

    def coeffs(self, i: int) -> np.ndarray:
        size = (self.N + 1) ** self.dim
        c = np.zeros(size)
        c[min(int(i), size - 1)] = 1.0
        return c.reshape((self.N + 1,) * self.dim)

    def batch(self, count: int, start: int = 0) -> np.ndarray:
        return np.stack([self.coeffs(i) for i in range(start, start + count)])

    def __call__(self, i: int) -> HermiteExpansion:
        return HermiteExpansion(self.coeffs(i))


@dataclass
class MonotonicityReport:
    p: int
    truncations: tuple[int, ...]
    ratios: dict[int, np.ndarray] = field(repr=False)
    seed: int = 0
    growth_tol: float = GROWTH_TOL

    @property
    def sup_ratio(self) -> dict[int, float]:
        return {N: float(np.max(r)) for N, r in self.ratios.items()}

    def growth_ok(self) -> bool:
        """No consecutive supremum exceeds the previous one by more than ``growth_tol``.

        The comparison ``s_next <= s_prev + (tol - 1) |s_prev| + ABS_TOL`` reduces
        to ``s_next <= tol * s_prev`` for positive suprema and stays meaningful
        when the supremum is zero or negative.
        """
        sups = [self.sup_ratio[N] for N in sorted(self.truncations)]
        return all(b <= a + (self.growth_tol - 1.0) * abs(a) + ABS_TOL for a, b in zip(sups, sups[1:]))

    @property
    def verdict(self) -> str:
        return "PASS" if self.growth_ok() else "FAIL"

    def rows(self):
        for N in self.truncations:
            for i, r in enumerate(self.ratios[N]):
                yield {"sample_id": i, "N": N, "p": self.p, "ratio": float(r)}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["sample_id", "N", "p", "ratio"])
            w.writeheader()
            for row in self.rows():
                w.writerow({**row, "ratio": f"{row['ratio']:.17g}"})


def estimate_constant(
    spec: OperatorSpec,
    p: int,
    trials: int = 200,
    truncations=(16, 32),
    seed: int = 0,
    s: float = 4.0,
    chunk: int = 25,
    sampler_factory=None,
) -> MonotonicityReport:
    """Suprema of the monotonicity ratio over random samples at each truncation.

    ``sampler_factory(N)`` must return an object with ``batch(count, start)``;
    defaults to :class:`DecaySampler`.
    """
    p = _check_p(p)
    if trials < 1:
        raise ValueError("trials must be >= 1")
    ratios = {}
    for N in truncations:
        sampler = sampler_factory(N) if sampler_factory else DecaySampler(spec.dim, N, seed=seed, s=s)
        out = np.empty(trials)
        # fixed chunking keeps the floating-point path independent of scheduling
        for start in range(0, trials, chunk):
            C = sampler.batch(min(chunk, trials - start), start)
            lhs, norm = monotonicity_terms(spec, C, p)
            if np.any(norm <= 0.0):
                raise ValueError("degenerate sampler: produced an all-zero sample")
            out[start:start + len(C)] = lhs / norm
        ratios[N] = out
    return MonotonicityReport(p, tuple(truncations), ratios, seed)


# ---------------------------------------------------------------------------
# order reduction


def _pair(cf: CoefficientFunction, U: np.ndarray, V: np.ndarray, dim: int, m=None) -> float:
    """``<cf * u, v>_0`` with ``cf * u`` projected onto v's degree (exact for that pairing)."""
    N_v = V.shape[-1] - 1
    prod = apply_terms([(cf, (0,) * dim)], U, dim, N_v, m)
    return float(np.sum(prod * V))


def multiindex_order_reduction_check(f, k, j: int, beta, phi: HermiteExpansion, m=None):
    """Both sides of ``<f d^b phi, d^{b+g} phi>_0 = -1/2 sum_{0<r<=g} C(g,r) <d^r f d^{b+g-r} phi, d^b phi>_0``.

    Here ``g = k - e_j`` with ``k_j >= 1`` and ``|g|`` odd; ``j`` is 0-based.
    Returns ``(lhs, rhs, |lhs - rhs|)``.
    """
    d = phi.dim
    f = coefficient(f, d)
    k = as_multiindex(k, d)
    beta = as_multiindex(beta, d)
    if not 0 <= j < d or k[j] < 1:
        raise ValueError(f"need k_j >= 1 for j={j}, got k={k.entries}")
    gam = k - MultiIndex.unit(d, j)
    if gam.order % 2 != 1:
        raise ValueError(f"|k - e_j| must be odd, got {gam.order}")
    C = phi.coeffs
    Ub = derivative_coeffs(C, d, beta.entries)
    lhs = _pair(f, Ub, derivative_coeffs(C, d, (beta + gam).entries), d, m)
    rhs = 0.0
    for r in gam.below():
        if r.order == 0:
            continue
        dr_f = f.derivative(r.entries)
        if dr_f.is_zero:
            continue
        U = derivative_coeffs(C, d, (beta + gam - r).entries)
        rhs += gam.binomial(r) * _pair(dr_f, U, Ub, d, m)
    rhs *= -0.5
    return lhs, rhs, abs(lhs - rhs)


def order_reduction_check(f, beta: int, k: int, phi: HermiteExpansion, m=None):
    """1-d form: ``<f d^b phi, d^{b+2k-1} phi>_0`` against its order-reduced sum."""
    if phi.dim != 1:
        raise ValueError("order_reduction_check is one-dimensional; use multiindex_order_reduction_check")
    if k < 1:
        raise ValueError("k must be a positive integer")
    # gamma = 2k - 1 corresponds to the multi-index k' = gamma + e_1 = 2k
    return multiindex_order_reduction_check(f, (2 * k,), 0, (beta,), phi, m)
