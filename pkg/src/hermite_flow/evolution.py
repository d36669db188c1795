"""Time stepping of ``du = L u dt`` and ``dY = L Y dt + A Y . dB`` in coefficient space.

The drift is treated with a theta-scheme (Crank-Nicolson by default) because
Hermite-Galerkin ``L`` is stiff; the noise is explicit (Euler-Maruyama).
Operators map degree ``N`` to ``N + 2``; after each step the solution is
re-projected onto degree ``N`` and the discarded part is accumulated as a
truncation estimate.
"""
from __future__ import annotations

import csv
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .basis import HermiteExpansion, analyze, iter_basis
from .operators import OperatorMatrix, OperatorSpec, assemble, checked_standard_form

SCHEMES = {"explicit-euler": 0.0, "implicit-euler": 1.0, "crank-nicolson": 0.5}
PATH_CHUNK = 64


class SolverError(RuntimeError):
    pass


def theta_of(scheme) -> float:
    if isinstance(scheme, (int, float)):
        return float(scheme)
    try:
        return SCHEMES[scheme]
    except KeyError:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {sorted(SCHEMES)}") from None


def default_threads() -> int:
    return max(1, int(os.environ.get("HERMITE_FLOW_THREADS", "1")))


# ---------------------------------------------------------------------------
# Brownian paths


def path_generator(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream for path ``index``: Philox keyed on ``(seed, index)``."""
    key = (int(seed) % 2 ** 64) << 64 | (int(index) % 2 ** 64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True, eq=False)
class BrownianPath:
    dim: int
    dt: float
    increments: np.ndarray = field(repr=False)  # (K, dim)
    seed: int = 0
    index: int = 0

    def __post_init__(self):
        self.increments.setflags(write=False)

    @classmethod
    def sample(cls, seed: int, dim: int, dt: float, steps: int, index: int = 0) -> "BrownianPath":
        if dt <= 0:
            raise ValueError("dt must be positive")
        inc = path_generator(seed, index).standard_normal((steps, dim)) * np.sqrt(dt)
        return cls(dim, float(dt), inc, int(seed), int(index))

    @classmethod
    def zero(cls, dim: int, dt: float, steps: int) -> "BrownianPath":
        return cls(dim, float(dt), np.zeros((steps, dim)))

    @property
    def steps(self) -> int:
        return len(self.increments)

    @property
    def T(self) -> float:
        return self.steps * self.dt

    def values(self) -> np.ndarray:
        """``B`` at ``0, dt, ..., K dt``; shape ``(K+1, dim)``."""
        return np.vstack([np.zeros((1, self.dim)), np.cumsum(self.increments, axis=0)])

    def at_step(self, k: int) -> np.ndarray:
        return self.increments[:k].sum(axis=0)

    def coarsen(self, factor: int) -> "BrownianPath":
        """Same path sampled with step ``factor * dt``."""
        if self.steps % factor:
            raise ValueError(f"{self.steps} steps not divisible by {factor}")
        inc = self.increments.reshape(-1, factor, self.dim).sum(axis=1)
        return BrownianPath(self.dim, self.dt * factor, inc, self.seed, self.index)


# ---------------------------------------------------------------------------
# deterministic


def _square(L) -> np.ndarray:
    return L.square() if isinstance(L, OperatorMatrix) else np.asarray(L)


def _factor(Lsq: np.ndarray, dt: float, theta: float):
    M = np.eye(len(Lsq)) - theta * dt * Lsq
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu = sla.lu_factor(M, check_finite=True)
    if np.any(np.diag(lu[0]) == 0.0):
        raise SolverError(f"singular step matrix (cond={np.linalg.cond(M):.3e})")
    return lu


def step_deterministic(L, u: np.ndarray, dt: float, scheme="crank-nicolson") -> np.ndarray:
    """One theta-step ``(I - theta dt L) u+ = (I + (1-theta) dt L) u``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    Lsq = _square(L)
    theta = theta_of(scheme)
    shape = np.shape(u)
    u = np.asarray(u, dtype=float).reshape(len(Lsq), -1)
    rhs = u + (1.0 - theta) * dt * (Lsq @ u)
    if theta == 0.0:
        return rhs.reshape(shape)
    return sla.lu_solve(_factor(Lsq, dt, theta), rhs).reshape(shape)


@dataclass
class Trajectory:
    times: np.ndarray
    snapshots: list[HermiteExpansion] = field(repr=False)
    scheme: str
    dt: float
    N: int
    tail_norm: float = 0.0
    seed: int | None = None

    @property
    def final(self) -> HermiteExpansion:
        return self.snapshots[-1]

    def rows(self):
        for t, snap in zip(self.times, self.snapshots):
            for n in iter_basis(snap.dim, snap.N):
                yield {"time": float(t), "n": ",".join(map(str, n)), "coeff": float(snap.coeffs[n])}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["time", "n", "coeff"])
            w.writeheader()
            for row in self.rows():
                w.writerow({"time": f"{row['time']:.17g}", "n": row["n"], "coeff": f"{row['coeff']:.17g}"})


PdeTrajectory = Trajectory
SpdeTrajectory = Trajectory


def _steps(T: float, dt: float) -> int:
    K = int(round(T / dt))
    if K < 0 or abs(K * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"T={T} is not a multiple of dt={dt}")
    return K


def _snapshot_steps(times, dt, K):
    if times is None:
        return {K}
    return {min(K, int(round(t / dt))) for t in times} | {K}


def solve_pde(spec: OperatorSpec, phi0: HermiteExpansion, T: float, dt: float,
              scheme="crank-nicolson", N: int | None = None, snapshot_times=None) -> Trajectory:
    """Galerkin solution of ``du = L u dt`` on degree ``N`` (default ``phi0.N``)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    N = phi0.N if N is None else N
    d = phi0.dim
    checked_standard_form(spec)
    L, _ = assemble(spec, N)
    Lsq, Ltail = L.square(), L.tail()
    theta = theta_of(scheme)
    lu = _factor(Lsq, dt, theta) if theta > 0 else None
    K = _steps(T, dt)
    keep = _snapshot_steps(snapshot_times, dt, K)
    u = phi0.padded(N).coeffs.reshape(-1).copy()
    times, snaps, tail = [], [], 0.0
    if 0 in keep:
        times.append(0.0)
        snaps.append(HermiteExpansion(u.reshape((N + 1,) * d)))
    for k in range(1, K + 1):
        rhs = u + (1.0 - theta) * dt * (Lsq @ u)
        new = rhs if lu is None else sla.lu_solve(lu, rhs)
        tail += dt * np.linalg.norm(Ltail @ (theta * new + (1.0 - theta) * u))
        u = new
        if k in keep:
            times.append(k * dt)
            snaps.append(HermiteExpansion(u.reshape((N + 1,) * d)))
    return Trajectory(np.array(times), snaps, str(scheme), dt, N, tail)


# ---------------------------------------------------------------------------
# stochastic


def step_stochastic(L, A, Y: np.ndarray, dt: float, dB, theta: float = 0.5, lu=None) -> np.ndarray:
    """``(I - theta dt L) Y+ = Y + (1-theta) dt L Y + sum_i A_i Y dB_i``.

    ``Y`` is ``(n,)`` with ``dB`` of shape ``(d,)``, or ``(n, M)`` with ``dB``
    of shape ``(d, M)`` for ``M`` paths at once.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    Lsq = _square(L)
    dB = np.asarray(dB, dtype=float)
    if not np.all(np.isfinite(dB)):
        raise ValueError("Brownian increment must be finite")
    rhs = Y + (1.0 - theta) * dt * (Lsq @ Y)
    for i, Ai in enumerate(A):
        rhs = rhs + (_square(Ai) @ Y) * dB[i]
    if theta == 0.0:
        return rhs
    if lu is None:
        lu = _factor(Lsq, dt, theta)
    return sla.lu_solve(lu, rhs)


@dataclass
class _System:
    """Square and tail blocks plus the one-step propagators.

    With ``S = I - theta dt L`` a step is ``Y+ = R Y + sum_i Q_i Y dB_i`` where
    ``R = S^-1 (I + (1-theta) dt L)`` and ``Q_i = S^-1 A_i``.  Forming these once
    leaves only matrix products inside the path loop, which (unlike the bundled
    LAPACK solves) are safe to call from several threads.
    """
    R: np.ndarray
    Q: tuple
    Ltail: np.ndarray
    Atail: tuple
    theta: float
    dt: float
    N: int
    dim: int


def _system(spec, N, dt, theta) -> _System:
    checked_standard_form(spec)
    L, A = assemble(spec, N)
    Lsq = L.square()
    n = len(Lsq)
    R = np.eye(n) + (1.0 - theta) * dt * Lsq
    Q = [a.square() for a in A]
    if theta > 0:
        lu = _factor(Lsq, dt, theta)
        R = sla.lu_solve(lu, R)
        Q = [sla.lu_solve(lu, q) for q in Q]
    return _System(R, tuple(Q), L.tail(), tuple(a.tail() for a in A), theta, dt, N, spec.dim)


def _advance(sys: _System, Y: np.ndarray, dB: np.ndarray, record=None):
    """Run all steps; ``dB`` is ``(K, d)`` or ``(K, d, M)``."""
    tail = 0.0
    for k in range(len(dB)):
        new = sys.R @ Y
        noise_tail = 0.0
        for i in range(sys.dim):
            new = new + (sys.Q[i] @ Y) * dB[k, i]
            noise_tail = noise_tail + (sys.Atail[i] @ Y) * dB[k, i]
        drift_tail = sys.dt * (sys.Ltail @ (sys.theta * new + (1.0 - sys.theta) * Y))
        tail += float(np.linalg.norm(drift_tail + noise_tail))
        Y = new
        if record is not None:
            record(k + 1, Y)
    return Y, tail


def solve_spde(spec: OperatorSpec, phi0: HermiteExpansion, path: BrownianPath, theta: float = 0.5,
               N: int | None = None, snapshot_times=None) -> Trajectory:
    """Euler-Maruyama (drift theta-implicit) along a fixed Brownian path."""
    if path.dim != spec.dim:
        raise ValueError(f"path has dim {path.dim}, operator has dim {spec.dim}")
    N = phi0.N if N is None else N
    d = phi0.dim
    sys = _system(spec, N, path.dt, theta)
    K = path.steps
    keep = _snapshot_steps(snapshot_times, path.dt, K)
    times, snaps = [], []
    Y0 = phi0.padded(N).coeffs.reshape(-1).copy()

    def record(k, Y):
        if k in keep:
            times.append(k * path.dt)
            snaps.append(HermiteExpansion(Y.reshape((N + 1,) * d)))

    record(0, Y0)
    _, tail = _advance(sys, Y0, path.increments, record)
    return Trajectory(np.array(times), snaps, f"theta={theta}", path.dt, N, tail, path.seed)


def translation_oracle(phi0: HermiteExpansion, shift, N: int | None = None) -> HermiteExpansion:
    """Projection of ``x -> phi0(x - shift)`` (exact SPDE solution for unit constant sigma, b = 0)."""
    shift = np.atleast_1d(np.asarray(shift, dtype=float))
    N = phi0.N if N is None else N
    return analyze(lambda *x: phi0(*[xi - si for xi, si in zip(x, shift)]), N, phi0.dim)


@dataclass
class EnsembleResult:
    mean: HermiteExpansion
    stderr: np.ndarray = field(repr=False)
    M: int
    seed: int
    finals: np.ndarray = field(repr=False)

    @property
    def pooled_stderr(self) -> float:
        """Standard error of the L2 distance: ``sqrt(sum_n se_n^2)``."""
        return float(np.sqrt(np.sum(self.stderr ** 2)))

    def rows(self):
        for n in iter_basis(self.mean.dim, self.mean.N):
            yield {"n": ",".join(map(str, n)), "mean": float(self.mean.coeffs[n]), "stderr": float(self.stderr[n])}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["n", "mean", "stderr"])
            w.writeheader()
            for row in self.rows():
                w.writerow({"n": row["n"], "mean": f"{row['mean']:.17g}", "stderr": f"{row['stderr']:.17g}"})


def ensemble_finals(spec: OperatorSpec, phi0: HermiteExpansion, M: int, T: float, dt: float, seed: int,
                    theta: float = 0.5, N: int | None = None, threads: int | None = None) -> np.ndarray:
    """Final coefficient vectors of ``M`` SPDE solves; row ``i`` uses path ``i``.

    Paths are processed in fixed chunks of ``PATH_CHUNK`` so the arithmetic, and
    hence every bit of the result, does not depend on ``threads``.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    N = phi0.N if N is None else N
    sys = _system(spec, N, dt, theta)
    K = _steps(T, dt)
    Y0 = phi0.padded(N).coeffs.reshape(-1)

    def run(start):
        idx = range(start, min(M, start + PATH_CHUNK))
        dB = np.stack([BrownianPath.sample(seed, spec.dim, dt, K, i).increments for i in idx], axis=-1)
        Y = np.repeat(Y0[:, None], len(idx), axis=1)
        Y, _ = _advance(sys, Y, dB)
        return Y.T

    starts = range(0, M, PATH_CHUNK)
    threads = default_threads() if threads is None else threads
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(run, starts))
    else:
        parts = [run(s) for s in starts]
    return np.concatenate(parts, axis=0)


def ensemble_mean(spec: OperatorSpec, phi0: HermiteExpansion, M: int, T: float, dt: float, seed: int = 0,
                  theta: float = 0.5, N: int | None = None, threads: int | None = None) -> EnsembleResult:
    """Coefficientwise mean and standard error of ``M`` independent SPDE solves."""
    N = phi0.N if N is None else N
    finals = ensemble_finals(spec, phi0, M, T, dt, seed, theta, N, threads)
    shape = (N + 1,) * phi0.dim
    mean = finals.mean(axis=0)
    se = finals.std(axis=0, ddof=1) / np.sqrt(M) if M > 1 else np.zeros_like(mean)
    return EnsembleResult(HermiteExpansion(mean.reshape(shape)), se.reshape(shape), M, seed, finals)
