"""Finite-dimensional flow ``dX = sigma(X) dB + b(X) dt`` and the pairing

    <Y_t, psi> = int phi(x) psi(X_t^x) dx

which represents the SPDE solution in adjoint form.  One Brownian path drives
every start point (a flow); independence only enters across realizations.
"""
from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .basis import HermiteExpansion, default_nodes, gauss_hermite, grid_points
from .coefficients import coefficient
from .evolution import BrownianPath, _steps, default_threads
from .operators import _sigma_matrix

PAIRING_CHUNK = 256


def _fields(sigma, b, dim: int | None = None):
    sig = _sigma_matrix(sigma, dim)
    d = len(sig)
    b = [0] * d if b is None else list(b)
    if len(b) != d:
        raise ValueError(f"drift has {len(b)} components, expected {d}")
    return sig, tuple(coefficient(v, d) for v in b)


def _evaluate(cf, X):
    """Field values at points ``X`` of shape ``(..., d)``."""
    if cf.is_constant:
        return np.full(X.shape[:-1], cf.value)
    return cf(*np.moveaxis(X, -1, 0))


def _em_run(sig, b, X: np.ndarray, dB: np.ndarray, dt: float, record=None) -> np.ndarray:
    """Euler-Maruyama over all steps of ``dB`` (shape ``(K, ..., d)``, broadcast against ``X``)."""
    d = X.shape[-1]
    for k in range(len(dB)):
        inc = dB[k]
        step = np.empty(np.broadcast_shapes(X.shape, inc.shape))
        for i in range(d):
            s = 0.0 if b[i].is_zero else _evaluate(b[i], X) * dt
            for j in range(d):
                if not sig[i][j].is_zero:
                    s = s + _evaluate(sig[i][j], X) * inc[..., j]
            step[..., i] = s
        X = X + step
        if record is not None:
            record(k + 1, X)
    return X


@dataclass
class SdeTrajectory:
    x0: np.ndarray
    times: np.ndarray
    states: np.ndarray = field(repr=False)  # (K+1, ..., d)
    seed: int = 0

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def euler_maruyama(sigma, b, x0, path: BrownianPath) -> SdeTrajectory:
    """``X_{k+1} = X_k + sigma(X_k) dB_k + b(X_k) dt``; ``x0`` is ``(d,)`` or ``(P, d)``."""
    sig, bf = _fields(sigma, b, path.dim if b is None else len(b))
    d = len(sig)
    if path.dim != d:
        raise ValueError(f"path has dim {path.dim}, coefficients have dim {d}")
    x0 = np.asarray(x0, dtype=float)
    single = x0.ndim <= 1
    x0 = x0.reshape(-1, d)
    states = [x0]
    _em_run(sig, bf, x0, path.increments[:, None, :], path.dt, lambda k, X: states.append(X))
    st = np.stack(states)
    if single:
        st = st[:, 0]
    return SdeTrajectory(st[0], np.arange(path.steps + 1) * path.dt, st, path.seed)


# ---------------------------------------------------------------------------
# pairing


def _pairing_grid(phi: HermiteExpansion, m: int | None):
    """Start points, quadrature weights times ``phi``; shapes ``(P, d)`` and ``(P,)``."""
    m = default_nodes(phi.N) if m is None else int(m)
    if m < phi.N + 1:
        from .basis import AliasingError

        raise AliasingError(f"aliasing guard: {m} nodes cannot resolve degree {phi.N}")
    d = phi.dim
    pts = np.stack([g.reshape(-1) for g in grid_points(d, m)], axis=-1)
    w1 = gauss_hermite(m).fweights
    W = w1
    for _ in range(d - 1):
        W = np.multiply.outer(W, w1)
    W = W.reshape(-1) * phi(*pts.T)
    return pts, W, m


def flow_pairing(phi: HermiteExpansion, psi: HermiteExpansion, sigma, b, t: float, path: BrownianPath,
                 m: int | None = None) -> float:
    """``int phi(x) psi(X_t^x) dx`` with every start point driven by the same path."""
    sig, bf = _fields(sigma, b, phi.dim)
    K = _steps(t, path.dt)
    if K > path.steps:
        raise ValueError(f"path covers {path.T}, requested t={t}")
    pts, W, _ = _pairing_grid(phi, m)
    X = _em_run(sig, bf, pts, path.increments[:K, None, :], path.dt)
    return float(np.sum(W * psi(*X.T)))


@dataclass
class PairingResult:
    value: float
    stderr: float
    M: int
    seed: int
    t: float
    m: int
    values: np.ndarray = field(repr=False, default=None)

    def row(self) -> dict:
        return {"t": self.t, "estimate": self.value, "stderr": self.stderr, "M": self.M, "seed": self.seed}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["t", "estimate", "stderr", "M", "seed"])
            w.writeheader()
            r = self.row()
            w.writerow({**r, "t": f"{r['t']:.17g}", "estimate": f"{r['estimate']:.17g}",
                        "stderr": f"{r['stderr']:.17g}"})


def mc_pairing(phi: HermiteExpansion, psi: HermiteExpansion, sigma, b, t: float, M: int, seed: int = 0,
               dt: float = 1e-2, m: int | None = None, threads: int | None = None) -> PairingResult:
    """Mean and standard error of :func:`flow_pairing` over ``M`` independent paths.

    Path ``i`` uses the counter-based stream ``(seed, i)``; paths run in fixed
    chunks so results are bit-identical for any ``threads``.
    """
    if M < 2:
        raise ValueError("M must be >= 2 for a standard error")
    sig, bf = _fields(sigma, b, phi.dim)
    d = phi.dim
    K = _steps(t, dt) if t > 0 else 0
    pts, W, m = _pairing_grid(phi, m)

    def run(start):
        idx = range(start, min(M, start + PAIRING_CHUNK))
        if K == 0:
            return np.full(len(idx), float(np.sum(W * psi(*pts.T))))
        dB = np.stack([BrownianPath.sample(seed, d, dt, K, i).increments for i in idx], axis=1)  # (K, M, d)
        X = _em_run(sig, bf, pts[None], dB[:, :, None, :], dt)  # (M, P, d)
        return np.sum(W * psi(*np.moveaxis(X, -1, 0)), axis=-1)

    starts = range(0, M, PAIRING_CHUNK)
    threads = default_threads() if threads is None else threads
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            vals = np.concatenate(list(ex.map(run, starts)))
    else:
        vals = np.concatenate([run(s) for s in starts])
    if np.all(vals == vals[0]):
        return PairingResult(float(vals[0]), 0.0, M, seed, t, m, vals)
    return PairingResult(float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(M)), M, seed, t, m, vals)
