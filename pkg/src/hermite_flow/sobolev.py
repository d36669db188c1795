"""Hermite-Sobolev inner products on truncated expansions.

Two families of norms are provided:

* ``old_norm``: coefficient weights ``(2|n| + d)^(2p)``;
* ``new_inner`` / ``new_norm``: ``sum_{|a|+|b| <= 2p} <x^a d^b phi, x^a d^b psi>_0``.

The derivative-moment form is evaluated exactly in ladder arithmetic.  Its Gram
operator is a sum of Kronecker products of 1-d matrices, grouped by the total
order spent on each axis, so batches of samples are cheap to evaluate.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .basis import HermiteExpansion, _apply_axis, monomial_derivative_matrix, pad_coeffs

MAX_P = 4
NESTED_DEGREE = 64


def _check_p(p: int, max_p: int = MAX_P) -> int:
    if int(p) != p or p < 0:
        raise ValueError(f"Sobolev order p must be a non-negative integer, got {p}")
    if p > max_p:
        raise ValueError(f"p={p} exceeds the configured limit {max_p}")
    return int(p)


@lru_cache(maxsize=512)
def _shell_gram(s: int, N: int) -> np.ndarray:
    """sum_{a+b=s} (x^a d^b)^T (x^a d^b) on degree <= N (1-d)."""
    G = np.zeros((N + 1, N + 1))
    for a in range(s + 1):
        P = monomial_derivative_matrix(a, s - a, N)
        G += P.T @ P
    G.setflags(write=False)
    return G


@lru_cache(maxsize=512)
def _cumulative_gram(total: int, N: int) -> np.ndarray:
    G = sum(_shell_gram(s, N) for s in range(total + 1))
    G.setflags(write=False)
    return G


@lru_cache(maxsize=256)
def sobolev_factors(dim: int, p: int, N: int) -> tuple[tuple[np.ndarray, ...], ...]:
    """Kronecker factors whose sum is the Gram matrix of ``<.,.>_p`` on degree ``N``."""

    def build(d: int, budget: int):
        if d == 1:
            return [(_cumulative_gram(budget, N),)]
        return [(_shell_gram(s, N),) + rest for s in range(budget + 1) for rest in build(d - 1, budget - s)]

    return tuple(build(dim, 2 * p))


def sobolev_bilinear(C1: np.ndarray, C2: np.ndarray, dim: int, p: int) -> np.ndarray:
    """``<phi, psi>_p`` for coefficient arrays with matching shapes (leading batch axes allowed)."""
    if C1.shape != C2.shape:
        raise ValueError(f"shape mismatch {C1.shape} vs {C2.shape}")
    N = C1.shape[-1] - 1
    axes = tuple(range(C1.ndim - dim, C1.ndim))
    total = 0.0
    for factors in sobolev_factors(dim, p, N):
        T = C2
        for ax, G in enumerate(factors):
            T = _apply_axis(G, T, C1.ndim - dim + ax)
        total = total + np.sum(C1 * T, axis=axes)
    return total


def old_weights(dim: int, N: int, p: float) -> np.ndarray:
    grids = np.meshgrid(*([np.arange(N + 1)] * dim), indexing="ij")
    order = sum(grids)
    return (2.0 * order + dim) ** (2 * p)


def old_norm(phi: HermiteExpansion, p: int) -> float:
    p = _check_p(p)
    return float(np.sqrt(np.sum(old_weights(phi.dim, phi.N, p) * phi.coeffs ** 2)))


def new_inner(phi: HermiteExpansion, psi: HermiteExpansion, p: int) -> float:
    p = _check_p(p)
    if phi.dim != psi.dim:
        raise ValueError(f"cannot pair expansions of dim {phi.dim} and {psi.dim}")
    N = max(phi.N, psi.N)
    C1 = pad_coeffs(phi.coeffs, phi.dim, N)
    C2 = pad_coeffs(psi.coeffs, psi.dim, N)
    return float(sobolev_bilinear(C1, C2, phi.dim, p))


def new_norm(phi: HermiteExpansion, p: int) -> float:
    return float(np.sqrt(max(new_inner(phi, phi, p), 0.0)))


def hs_norm_sq(components, p: int) -> float:
    """``sum_i ||A_i phi||_p^2`` for the components ``A_i phi``."""
    return float(sum(new_inner(c, c, p) for c in components))


# ---------------------------------------------------------------------------
# random Schwartz-like samples


@dataclass(frozen=True)
class DecaySampler:
    """Random expansions with i.i.d. normal coefficients damped by ``(1+|n|)^(-s)``.

    Sample ``i`` is drawn from its own stream keyed on ``(seed, i)`` so sweeps
    are order independent.  Coefficients are read off a fixed master tensor of
    degree ``max(N, NESTED_DEGREE)``, so for ``N <= NESTED_DEGREE`` the sample at
    a larger truncation extends the one at a smaller truncation.
    """

    dim: int
    N: int
    seed: int = 0
    s: float = 4.0

    def damping(self) -> np.ndarray:
        grids = np.meshgrid(*([np.arange(self.N + 1)] * self.dim), indexing="ij")
        return (1.0 + sum(grids)) ** (-self.s)

    def coeffs(self, i: int) -> np.ndarray:
        top = max(self.N, NESTED_DEGREE)
        rng = np.random.default_rng([int(self.seed), self.dim, top, int(i)])
        master = rng.standard_normal((top + 1,) * self.dim)
        return master[(slice(0, self.N + 1),) * self.dim] * self.damping()

    def batch(self, count: int, start: int = 0) -> np.ndarray:
        return np.stack([self.coeffs(i) for i in range(start, start + count)])

    def __call__(self, i: int) -> HermiteExpansion:
        return HermiteExpansion(self.coeffs(i))


@dataclass
class EquivalenceReport:
    p: int
    ratios: np.ndarray = field(repr=False)

    @property
    def sample_count(self) -> int:
        return len(self.ratios)

    @property
    def ratio_min(self) -> float:
        return float(np.min(self.ratios))

    @property
    def ratio_max(self) -> float:
        return float(np.max(self.ratios))


def equivalence_sweep(sampler, p: int, trials: int) -> EquivalenceReport:
    """Ratios ``new_norm / old_norm`` over ``trials`` samples drawn as ``sampler(i)``."""
    p = _check_p(p)
    if trials < 1:
        raise ValueError("trials must be >= 1")
    ratios = np.empty(trials)
    for i in range(trials):
        phi = sampler(i)
        old = old_norm(phi, p)
        if old == 0.0:
            raise ValueError(f"sample {i} is identically zero; ratio undefined")
        ratios[i] = new_norm(phi, p) / old
    return EquivalenceReport(p, ratios)


def equivalence_sweep_batch(sampler: DecaySampler, p: int, trials: int) -> EquivalenceReport:
    """Vectorized :func:`equivalence_sweep` for a :class:`DecaySampler`."""
    p = _check_p(p)
    if trials < 1:
        raise ValueError("trials must be >= 1")
    C = sampler.batch(trials)
    axes = tuple(range(1, C.ndim))
    old = np.sqrt(np.sum(old_weights(sampler.dim, sampler.N, p) * C ** 2, axis=axes))
    if np.any(old == 0.0):
        raise ValueError("sampler produced an identically zero sample")
    new = np.sqrt(sobolev_bilinear(C, C, sampler.dim, p))
    return EquivalenceReport(p, new / old)
