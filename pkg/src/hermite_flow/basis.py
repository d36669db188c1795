"""Normalized Hermite functions, Gauss-Hermite quadrature and ladder algebra.

A :class:`HermiteExpansion` stores the coefficients ``c_n = <phi, h_n>_0`` of a
function on ``R^d`` in a dense ``(N+1,)*d`` tensor.  Multiplication by ``x_j``
and differentiation ``d/dx_j`` act exactly on these tensors through the
three-term ladder relations

    x h_n  = sqrt((n+1)/2) h_{n+1} + sqrt(n/2) h_{n-1}
    h_n'   = sqrt(n/2) h_{n-1} - sqrt((n+1)/2) h_{n+1}

and raise the truncation by one.  Most array-level helpers accept coefficient
arrays with arbitrary leading batch axes; the basis axes are always the last
``dim`` axes.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np

PI_QUARTER = np.pi ** -0.25


class AliasingError(ValueError):
    """Raised when a quadrature rule has too few nodes for the requested degree."""


# ---------------------------------------------------------------------------
# multi-indices


@dataclass(frozen=True, order=True)
class MultiIndex:
    entries: tuple[int, ...]

    def __post_init__(self):
        ent = tuple(int(e) for e in self.entries)
        if any(e < 0 for e in ent):
            raise ValueError(f"multi-index entries must be >= 0, got {ent}")
        object.__setattr__(self, "entries", ent)

    @classmethod
    def of(cls, *entries: int) -> "MultiIndex":
        return cls(tuple(entries))

    @classmethod
    def zero(cls, dim: int) -> "MultiIndex":
        return cls((0,) * dim)

    @classmethod
    def unit(cls, dim: int, j: int) -> "MultiIndex":
        e = [0] * dim
        e[j] = 1
        return cls(tuple(e))

    @property
    def dim(self) -> int:
        return len(self.entries)

    @property
    def order(self) -> int:
        return sum(self.entries)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    def __add__(self, other: "MultiIndex") -> "MultiIndex":
        return MultiIndex(tuple(a + b for a, b in zip(self.entries, _entries(other))))

    def __sub__(self, other: "MultiIndex") -> "MultiIndex":
        return MultiIndex(tuple(a - b for a, b in zip(self.entries, _entries(other))))

    def leq(self, other: "MultiIndex") -> bool:
        """Componentwise partial order."""
        return all(a <= b for a, b in zip(self.entries, _entries(other)))

    def binomial(self, r: "MultiIndex") -> int:
        from math import comb

        out = 1
        for a, b in zip(self.entries, _entries(r)):
            out *= comb(a, b)
        return out

    def below(self) -> list["MultiIndex"]:
        """All r with 0 <= r <= self."""
        return [MultiIndex(t) for t in itertools.product(*(range(a + 1) for a in self.entries))]


def _entries(idx) -> tuple[int, ...]:
    if isinstance(idx, MultiIndex):
        return idx.entries
    if np.isscalar(idx):
        return (int(idx),)
    return tuple(int(i) for i in idx)


def as_multiindex(idx, dim: int | None = None) -> MultiIndex:
    mi = idx if isinstance(idx, MultiIndex) else MultiIndex(_entries(idx))
    if dim is not None and mi.dim != dim:
        raise ValueError(f"multi-index {mi.entries} has dim {mi.dim}, expected {dim}")
    return mi


def multiindices_upto(dim: int, total: int) -> list[tuple[int, ...]]:
    """All multi-indices in Z_+^dim with |a| <= total."""
    return [t for t in itertools.product(range(total + 1), repeat=dim) if sum(t) <= total]


# ---------------------------------------------------------------------------
# 1-d Hermite functions and quadrature


def hermite_functions(nmax: int, x) -> np.ndarray:
    """Values ``h_0..h_nmax`` at ``x``; shape ``(nmax+1,) + shape(x)``.

    Uses the normalized recurrence
    ``h_{n+1} = sqrt(2/(n+1)) x h_n - sqrt(n/(n+1)) h_{n-1}``.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty((nmax + 1,) + x.shape)
    out[0] = PI_QUARTER * np.exp(-0.5 * x * x)
    if nmax >= 1:
        out[1] = np.sqrt(2.0) * x * out[0]
    for n in range(1, nmax):
        out[n + 1] = np.sqrt(2.0 / (n + 1)) * x * out[n] - np.sqrt(n / (n + 1)) * out[n - 1]
    return out


def eval_hermite(n, x) -> float | np.ndarray:
    """``h_n(x) = prod_i h_{n_i}(x_i)`` for a multi-index ``n`` and point ``x``.

    ``x`` may carry trailing sample axes: shape ``(d, ...)``.  In one
    dimension any array is read as a set of sample points.
    """
    n = as_multiindex(n)
    x = np.asarray(x, dtype=float)
    if n.dim == 1:
        x = x[None]
    if x.shape[0] != n.dim:
        raise ValueError(f"point has {x.shape[0]} coordinates, multi-index has {n.dim}")
    val = 1.0
    for ni, xi in zip(n.entries, x):
        val = val * hermite_functions(ni, xi)[ni]
    return val[()] if isinstance(val, np.ndarray) else val


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Hermite rule for the weight ``exp(-x^2)`` on one axis.

    ``fweights`` are the weights for plain integrals ``int F(x) dx``, i.e.
    ``weights * exp(nodes**2)``; they are computed through the Christoffel
    function ``1 / sum_{n<m} h_n(x_k)^2`` so large nodes do not overflow.
    """

    nodes: np.ndarray
    weights: np.ndarray
    fweights: np.ndarray

    @property
    def m(self) -> int:
        return len(self.nodes)


@lru_cache(maxsize=64)
def gauss_hermite(m: int) -> QuadratureRule:
    if m < 1:
        raise ValueError("quadrature needs at least one node")
    nodes, weights = np.polynomial.hermite.hermgauss(m)
    fweights = 1.0 / np.sum(hermite_functions(m - 1, nodes) ** 2, axis=0)
    for arr in (nodes, weights, fweights):
        arr.setflags(write=False)
    return QuadratureRule(nodes, weights, fweights)


def default_nodes(N: int) -> int:
    return 2 * (N + 8)


@lru_cache(maxsize=256)
def _vandermonde(N: int, m: int) -> np.ndarray:
    """``h_n(x_k)`` as an ``(m, N+1)`` matrix on the ``m``-node rule."""
    V = hermite_functions(N, gauss_hermite(m).nodes).T.copy()
    V.setflags(write=False)
    return V


@lru_cache(maxsize=256)
def _projector(N: int, m: int) -> np.ndarray:
    """``(N+1, m)`` matrix mapping nodal values to coefficients."""
    P = (_vandermonde(N, m) * gauss_hermite(m).fweights[:, None]).T.copy()
    P.setflags(write=False)
    return P


def _apply_axis(mat: np.ndarray, C: np.ndarray, axis: int) -> np.ndarray:
    """Contract ``mat`` (out, in) with ``C`` along ``axis``, keeping axis order."""
    out = np.tensordot(mat, C, axes=([1], [axis]))
    return np.moveaxis(out, 0, axis)


def synthesize_grid(C: np.ndarray, dim: int, m: int) -> np.ndarray:
    """Values of the expansion(s) on the tensor ``m``-node grid."""
    N = C.shape[-1] - 1
    V = _vandermonde(N, m)
    for ax in range(dim):
        C = _apply_axis(V, C, C.ndim - dim + ax)
    return C


def analyze_grid(values: np.ndarray, dim: int, N: int, m: int) -> np.ndarray:
    """Coefficients up to ``N`` from nodal values on the ``m``-node grid."""
    if m < N + 1:
        raise AliasingError(f"aliasing guard: {m} quadrature nodes cannot resolve degree {N} (need >= {N + 1})")
    P = _projector(N, m)
    for ax in range(dim):
        values = _apply_axis(P, values, values.ndim - dim + ax)
    return values


def grid_points(dim: int, m: int) -> list[np.ndarray]:
    """Meshgrid (``ij`` indexing) of the tensor Gauss-Hermite grid."""
    nodes = gauss_hermite(m).nodes
    return list(np.meshgrid(*([nodes] * dim), indexing="ij"))


# ---------------------------------------------------------------------------
# expansions


@dataclass(frozen=True, eq=False)
class HermiteExpansion:
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.ndim < 1 or len(set(c.shape)) != 1:
            raise ValueError(f"coefficient tensor must be cubic, got shape {c.shape}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def dim(self) -> int:
        return self.coeffs.ndim

    @property
    def N(self) -> int:
        return self.coeffs.shape[0] - 1

    @classmethod
    def zeros(cls, dim: int, N: int) -> "HermiteExpansion":
        return cls(np.zeros((N + 1,) * dim))

    @classmethod
    def basis(cls, n, N: int | None = None) -> "HermiteExpansion":
        n = as_multiindex(n)
        N = max(n.entries) if N is None else N
        c = np.zeros((N + 1,) * n.dim)
        c[n.entries] = 1.0
        return cls(c)

    def padded(self, N: int) -> "HermiteExpansion":
        return HermiteExpansion(pad_coeffs(self.coeffs, self.dim, N))

    def truncated(self, N: int) -> "HermiteExpansion":
        return HermiteExpansion(self.coeffs[(slice(0, N + 1),) * self.dim])

    def _aligned(self, other: "HermiteExpansion"):
        if not isinstance(other, HermiteExpansion):
            return NotImplemented
        if other.dim != self.dim:
            raise ValueError(f"cannot combine expansions of dim {self.dim} and {other.dim}")
        N = max(self.N, other.N)
        return self.padded(N).coeffs, other.padded(N).coeffs

    def __add__(self, other):
        a, b = self._aligned(other)
        return HermiteExpansion(a + b)

    def __sub__(self, other):
        a, b = self._aligned(other)
        return HermiteExpansion(a - b)

    def __neg__(self):
        return HermiteExpansion(-self.coeffs)

    def __mul__(self, scalar):
        return HermiteExpansion(self.coeffs * float(scalar))

    __rmul__ = __mul__

    def inner0(self, other: "HermiteExpansion") -> float:
        a, b = self._aligned(other)
        return float(np.sum(a * b))

    def norm0(self) -> float:
        return float(np.sqrt(np.sum(self.coeffs ** 2)))

    def __call__(self, *x):
        """``phi(x1, ..., xd)`` with broadcastable coordinate arrays, or ``phi(X)`` with ``X`` of shape ``(d, ...)``."""
        if len(x) == 1:
            x0 = np.asarray(x[0], dtype=float)
            return synthesize(self, x0[None] if self.dim == 1 else x0)
        return synthesize(self, np.stack(np.broadcast_arrays(*x)))

    def __repr__(self):
        return f"HermiteExpansion(dim={self.dim}, N={self.N}, norm0={self.norm0():.6g})"


def pad_coeffs(C: np.ndarray, dim: int, N: int) -> np.ndarray:
    """Zero-pad or clip the last ``dim`` axes of ``C`` to length ``N+1``."""
    cur = C.shape[-1] - 1
    if cur == N:
        return C
    if cur > N:
        return C[(Ellipsis,) + (slice(0, N + 1),) * dim]
    width = [(0, 0)] * (C.ndim - dim) + [(0, N - cur)] * dim
    return np.pad(C, width)


def analyze(f: Callable, N: int, dim: int = 1, m: int | None = None) -> HermiteExpansion:
    """Project a pointwise-evaluable ``f(x1, ..., xd)`` onto ``span{h_n : max n_i <= N}``.

    ``f`` receives one broadcastable array per coordinate.
    """
    m = default_nodes(N) if m is None else int(m)
    if m < N + 1:
        raise AliasingError(f"aliasing guard: {m} quadrature nodes cannot resolve degree {N} (need >= {N + 1})")
    xs = grid_points(dim, m)
    vals = np.broadcast_to(np.asarray(f(*xs), dtype=float), xs[0].shape)
    return HermiteExpansion(analyze_grid(vals, dim, N, m))


def synthesize(phi: HermiteExpansion, x) -> float | np.ndarray:
    """Evaluate ``sum_n c_n h_n(x)``; ``x`` is a point or a ``(d, ...)`` array of points."""
    x = np.asarray(x, dtype=float)
    if phi.dim == 1 and x.ndim == 0:
        x = x[None]
    if x.shape[0] != phi.dim:
        raise ValueError(f"point has {x.shape[0]} coordinates, expansion has dim {phi.dim}")
    letters = "abcdefgh"[: phi.dim]
    Hs = [hermite_functions(phi.N, xi) for xi in x]
    spec = letters + "," + ",".join(f"{l}..." for l in letters) + "->..."
    val = np.einsum(spec, phi.coeffs, *Hs)
    return float(val) if np.ndim(val) == 0 else val


# ---------------------------------------------------------------------------
# ladder algebra


@lru_cache(maxsize=256)
def position_matrix(N: int) -> np.ndarray:
    """Matrix of ``x*`` from degree ``N`` to degree ``N+1``; shape ``(N+2, N+1)``."""
    M = np.zeros((N + 2, N + 1))
    n = np.arange(N + 1)
    M[n + 1, n] = np.sqrt((n + 1) / 2.0)
    M[n[1:] - 1, n[1:]] = np.sqrt(n[1:] / 2.0)
    M.setflags(write=False)
    return M


@lru_cache(maxsize=256)
def derivative_matrix(N: int) -> np.ndarray:
    """Matrix of ``d/dx`` from degree ``N`` to degree ``N+1``; shape ``(N+2, N+1)``."""
    M = np.zeros((N + 2, N + 1))
    n = np.arange(N + 1)
    M[n + 1, n] = -np.sqrt((n + 1) / 2.0)
    M[n[1:] - 1, n[1:]] = np.sqrt(n[1:] / 2.0)
    M.setflags(write=False)
    return M


@lru_cache(maxsize=512)
def monomial_derivative_matrix(a: int, b: int, N: int) -> np.ndarray:
    """1-d matrix of ``x^a d^b`` from degree ``N`` to ``N+a+b``."""
    M = np.eye(N + 1)
    deg = N
    for _ in range(b):
        M = derivative_matrix(deg) @ M
        deg += 1
    for _ in range(a):
        M = position_matrix(deg) @ M
        deg += 1
    M.setflags(write=False)
    return M


def ladder_coeffs(C: np.ndarray, dim: int, axis: int, kind: str) -> np.ndarray:
    """Apply ``x_axis`` (kind='x') or ``d/dx_axis`` (kind='d') to coefficient arrays.

    All basis axes grow by one so the tensor stays cubic.
    """
    N = C.shape[-1] - 1
    mat = position_matrix(N) if kind == "x" else derivative_matrix(N)
    out = _apply_axis(mat, C, C.ndim - dim + axis)
    return pad_coeffs_axiswise(out, dim, N + 1)


def pad_coeffs_axiswise(C: np.ndarray, dim: int, N: int) -> np.ndarray:
    width = [(0, 0)] * (C.ndim - dim) + [(0, N + 1 - s) for s in C.shape[C.ndim - dim:]]
    return np.pad(C, width) if any(w[1] for w in width) else C


def _check_axis(phi: HermiteExpansion, j: int):
    if not 0 <= j < phi.dim:
        raise ValueError(f"axis {j} out of range for dim {phi.dim}")


def apply_position(j: int, phi: HermiteExpansion) -> HermiteExpansion:
    """Exact ``x_j * phi`` with truncation ``N+1``."""
    _check_axis(phi, j)
    return HermiteExpansion(ladder_coeffs(phi.coeffs, phi.dim, j, "x"))


def apply_derivative(j: int, phi: HermiteExpansion) -> HermiteExpansion:
    """Exact ``d phi / d x_j`` with truncation ``N+1``."""
    _check_axis(phi, j)
    return HermiteExpansion(ladder_coeffs(phi.coeffs, phi.dim, j, "d"))


def apply_monomial_derivative(alpha, beta, phi: HermiteExpansion) -> HermiteExpansion:
    """``x^alpha d^beta phi``: derivatives first, then positions."""
    alpha = as_multiindex(alpha, phi.dim)
    beta = as_multiindex(beta, phi.dim)
    out = phi
    for j, b in enumerate(beta):
        for _ in range(b):
            out = apply_derivative(j, out)
    for j, a in enumerate(alpha):
        for _ in range(a):
            out = apply_position(j, out)
    return out


def derivative_coeffs(C: np.ndarray, dim: int, beta: Sequence[int]) -> np.ndarray:
    """``d^beta`` on coefficient arrays; grows truncation by ``|beta|``."""
    for j, b in enumerate(beta):
        for _ in range(b):
            C = ladder_coeffs(C, dim, j, "d")
    return C


def iter_basis(dim: int, N: int) -> Iterable[tuple[int, ...]]:
    return itertools.product(range(N + 1), repeat=dim)
