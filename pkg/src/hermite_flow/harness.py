"""Experiment configs, orchestration, report files and replay.

A config is a TOML file::

    kind = "mono-check"
    seed = 7

    [operator]
    form = "standard"            # or "adjoint" (then give b instead of f, g, h)
    sigma = "(add 1 (mul 0.5 (sin x1)))"
    f = ["x1"]
    g = "(cos x1)"
    h = ["(tanh x1)"]

    [params]
    p = [0, 1, 2]
    trials = 200
    truncations = [16, 32]

Coefficients are prefix expressions, numbers, or ``{expr = "...", growth =
"bounded"}`` tables declaring a growth class.  ``run`` writes ``config.json``,
``report.csv``, ``summary.txt`` and experiment CSVs; ``replay`` re-runs a report
directory and compares every metric bit for bit.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .basis import AliasingError, HermiteExpansion
from .coefficients import FamilyError, coefficient
from .evolution import (BrownianPath, SCHEMES, _steps, ensemble_mean, solve_pde, solve_spde,
                        translation_oracle)
from .monotonicity import BasisSampler, estimate_constant, multiindex_order_reduction_check
from .operators import ADJOINT, STANDARD, OperatorSpec, adjoint_equivalence_check
from .sde_flow import mc_pairing
from .sobolev import MAX_P, DecaySampler, equivalence_sweep_batch

KINDS = ("mono-check", "norm-equiv", "order-reduction", "pde-solve", "spde-simulate", "represent", "adjoint-check")

H0 = {"basis": [0]}

DEFAULTS = {
    "mono-check": {"p": [0, 1, 2], "trials": 200, "truncations": [16, 32], "s": 4.0, "growth_tol": 1.2,
                   "sampler": "decay", "enforce_growth": True},
    "norm-equiv": {"dim": 1, "p": [1, 2], "trials": 200, "truncations": [16, 32], "s": 4.0, "drift_tol": 0.2},
    "order-reduction": {"N": 12, "trials": 5, "m": None},
    "pde-solve": {"T": 1.0, "dt": 1e-3, "scheme": "crank-nicolson", "N": 32, "phi0": H0, "snapshots": [],
                  "oracle": "none", "tol": 1e-4, "radius": 4.0},
    "spde-simulate": {"T": 0.5, "dt": 1e-3, "N": 32, "theta": 0.5, "phi0": H0, "path_index": 0, "M": 0,
                      "oracle": "none", "order_paths": 0, "order_factor": 4, "order_band": [1.2, 3.0], "z": 3.0},
    "represent": {"t": 2.0, "M": 10000, "dt": 1e-2, "m": None, "N": 32, "pde_dt": 1e-3, "phi": H0, "psi": H0,
                  "oracle": "none", "z": 3.0, "pde_tol": 1e-3},
    "adjoint-check": {"trials": 20, "N": 12, "s": 4.0, "tol": 1e-8},
}
NEEDS_OPERATOR = {"mono-check", "pde-solve", "spde-simulate", "represent", "adjoint-check"}
CASE_KEYS = {"f", "beta", "k", "j", "tol", "phi", "expected", "dim"}
MAX_N = 64
MAX_TRIALS = 10_000
MAX_PATHS = 1_000_000


class ConfigError(ValueError):
    """Config failed validation; ``diagnostics`` lists field-level messages."""

    def __init__(self, diagnostics):
        super().__init__("; ".join(diagnostics))
        self.diagnostics = list(diagnostics)


class ReplayError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# config


@dataclass
class ExperimentConfig:
    kind: str
    seed: int | None
    operator: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    cases: list = field(default_factory=list)
    out: str | None = None
    threads: int | None = None

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        known = {"kind", "seed", "operator", "params", "cases", "out", "threads"}
        extra = set(data) - known
        if extra:
            raise ConfigError([f"{k}: unknown top-level key" for k in sorted(extra)])
        return cls(
            kind=data.get("kind", ""),
            seed=data.get("seed"),
            operator=dict(data.get("operator", {})),
            params=dict(data.get("params", {})),
            cases=[dict(c) for c in data.get("cases", [])],
            out=data.get("out"),
            threads=data.get("threads"),
        )

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib

        with open(path, "rb") as fh:
            return cls.from_dict(tomllib.load(fh))

    def to_dict(self) -> dict:
        """Everything that determines the metrics (not the output dir or thread count)."""
        return {"kind": self.kind, "seed": self.seed, "operator": self.operator, "params": self.params,
                "cases": self.cases}

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_overrides(self, seed=None, out=None, threads=None) -> "ExperimentConfig":
        changes = {k: v for k, v in (("seed", seed), ("out", out), ("threads", threads)) if v is not None}
        return dataclasses.replace(self, **changes)

    def param(self, name):
        return self.params.get(name, DEFAULTS[self.kind][name])


def build_operator(table: dict) -> OperatorSpec:
    table = dict(table)
    form = table.pop("form", STANDARD)
    dim = table.pop("dim", None)
    sigma = table.pop("sigma", 1)
    if form == STANDARD:
        spec = OperatorSpec.standard(sigma, table.pop("f", None), table.pop("g", 0), table.pop("h", None), dim)
    elif form == ADJOINT:
        spec = OperatorSpec.adjoint(sigma, table.pop("b", None), dim)
    else:
        raise ValueError(f"form must be {STANDARD!r} or {ADJOINT!r}, got {form!r}")
    if table:
        raise ValueError(f"unknown keys for {form} form: {sorted(table)}")
    return spec


def build_expansion(table: dict, dim: int, seed: int = 0) -> HermiteExpansion:
    """``{basis = [...], N = ..}``, ``{coeffs = [...]}`` or ``{random = i, N = .., s = ..}``."""
    table = dict(table)
    if "basis" in table:
        n = list(table["basis"])
        if len(n) != dim:
            raise ValueError(f"basis index {n} has length {len(n)}, expected {dim}")
        return HermiteExpansion.basis(n, table.get("N"))
    if "coeffs" in table:
        phi = HermiteExpansion(np.asarray(table["coeffs"], dtype=float))
        if phi.dim != dim:
            raise ValueError(f"coefficient tensor has dim {phi.dim}, expected {dim}")
        return phi
    if "random" in table:
        return DecaySampler(dim, int(table.get("N", 8)), seed=seed, s=float(table.get("s", 4.0)))(int(table["random"]))
    raise ValueError("expansion needs one of basis, coeffs, random")


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


def _is_h0(table, dim):
    return dict(table).keys() <= {"basis", "N"} and list(table.get("basis", [])) == [0] * dim


def _is_unit_translation(spec: OperatorSpec) -> bool:
    d = spec.dim
    return (spec.form == ADJOINT and all(c.is_zero for c in spec.b)
            and all(spec.sigma[i][j].is_constant and spec.sigma[i][j].value == (1.0 if i == j else 0.0)
                    for i in range(d) for j in range(d)))


def validate(config: ExperimentConfig) -> list[str]:
    """Field-level diagnostics; empty iff ``run`` can execute the config."""
    diags: list[str] = []
    if config.kind not in KINDS:
        return [f"kind: must be one of {', '.join(KINDS)}, got {config.kind!r}"]
    seed = config.seed
    if seed is None:
        diags.append("seed: required")
    elif not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2 ** 64:
        diags.append(f"seed: must be an integer in [0, 2^64), got {seed!r}")
    if config.threads is not None and (not isinstance(config.threads, int) or config.threads < 1):
        diags.append(f"threads: must be a positive integer, got {config.threads!r}")

    defaults = DEFAULTS[config.kind]
    for k in sorted(set(config.params) - set(defaults)):
        diags.append(f"params.{k}: unknown parameter for {config.kind}")
    P = {k: config.params.get(k, v) for k, v in defaults.items()}

    def num(name, lo=None, hi=None, integer=False, strict_lo=False):
        v = P[name]
        if isinstance(v, bool) or not isinstance(v, (int, float)) or (integer and not isinstance(v, int)):
            diags.append(f"params.{name}: must be {'an integer' if integer else 'a number'}, got {v!r}")
            return False
        if not math.isfinite(v):
            diags.append(f"params.{name}: must be finite")
            return False
        if lo is not None and (v <= lo if strict_lo else v < lo):
            diags.append(f"params.{name}: must be {'>' if strict_lo else '>='} {lo}, got {v}")
            return False
        if hi is not None and v > hi:
            diags.append(f"params.{name}: must be <= {hi}, got {v}")
            return False
        return True

    def nums(name, lo, hi):
        vals = _as_list(P[name])
        if not vals or any(isinstance(v, bool) or not isinstance(v, int) or not lo <= v <= hi for v in vals):
            diags.append(f"params.{name}: entries must be integers in [{lo}, {hi}], got {P[name]!r}")
            return False
        return True

    spec = None
    if config.kind in NEEDS_OPERATOR:
        if not config.operator:
            diags.append("operator: required")
        else:
            try:
                spec = build_operator(config.operator)
            except (FamilyError, ValueError, TypeError, KeyError) as exc:
                diags.append(f"operator: {exc}")
        # mono-check may opt out to run negative controls outside the family
        if spec is not None and config.params.get("enforce_growth", True) is not False:
            diags.extend(f"operator.{msg}" for msg in spec.validate())
    dim = spec.dim if spec is not None else None

    def expansion(name):
        if dim is None:
            return None
        try:
            return build_expansion(P[name], dim, seed or 0)
        except (ValueError, TypeError) as exc:
            diags.append(f"params.{name}: {exc}")
            return None

    def time_grid(T, dt):
        if num(dt, 0, strict_lo=True) and num(T, 0):
            try:
                _steps(P[T], P[dt])
            except ValueError as exc:
                diags.append(f"params.{T}: {exc}")

    def aliasing(N):
        m = P.get("m")
        if m is not None and num("m", 1, integer=True) and m < N + 1:
            diags.append(f"params.m: aliasing guard: m={m} quadrature nodes cannot resolve degree {N} (need >= {N + 1})")

    kind = config.kind
    if kind in ("mono-check", "norm-equiv"):
        nums("p", 0, MAX_P)
        num("trials", 1, MAX_TRIALS, integer=True)
        nums("truncations", 1, MAX_N)
        num("s", 0, strict_lo=True)
        if kind == "mono-check":
            num("growth_tol", 1.0)
            if P["sampler"] not in ("decay", "basis"):
                diags.append(f"params.sampler: must be 'decay' or 'basis', got {P['sampler']!r}")
        else:
            nums("dim", 1, 3)
            num("drift_tol", 0, strict_lo=True)
    elif kind == "order-reduction":
        N_ok = num("N", 0, MAX_N, integer=True)
        num("trials", 1, MAX_TRIALS, integer=True)
        if N_ok:
            aliasing(P["N"])
        if not config.cases:
            diags.append("cases: at least one [[cases]] entry required")
        for i, case in enumerate(config.cases):
            diags.extend(_case_diagnostics(i, case))
    elif kind == "pde-solve":
        time_grid("T", "dt")
        num("N", 0, MAX_N, integer=True)
        if P["scheme"] not in SCHEMES:
            diags.append(f"params.scheme: must be one of {sorted(SCHEMES)}, got {P['scheme']!r}")
        num("tol", 0, strict_lo=True)
        num("radius", 0, strict_lo=True)
        expansion("phi0")
        if P["oracle"] not in ("none", "heat"):
            diags.append(f"params.oracle: must be 'none' or 'heat', got {P['oracle']!r}")
        elif P["oracle"] == "heat" and dim is not None and not (_is_h0(P["phi0"], dim) and _is_unit_translation(spec)):
            diags.append("params.oracle: heat closed form needs phi0 = h_0 and the adjoint sigma = I, b = 0 operator")
    elif kind == "spde-simulate":
        time_grid("T", "dt")
        num("N", 0, MAX_N, integer=True)
        num("theta", 0, 1)
        num("path_index", 0, integer=True)
        num("M", 0, MAX_PATHS, integer=True)
        num("order_paths", 0, MAX_TRIALS, integer=True)
        num("order_factor", 2, integer=True)
        num("z", 0, strict_lo=True)
        expansion("phi0")
        if P["oracle"] not in ("none", "translation"):
            diags.append(f"params.oracle: must be 'none' or 'translation', got {P['oracle']!r}")
        elif P["oracle"] == "translation" and spec is not None and not _is_unit_translation(spec):
            diags.append("params.oracle: translation solution needs the adjoint sigma = I, b = 0 operator")
        if P["order_paths"] and P["oracle"] != "translation":
            diags.append("params.order_paths: strong-order check needs oracle = 'translation'")
        if P["M"] == 1:
            diags.append("params.M: ensemble needs M >= 2 (or 0 to skip)")
    elif kind == "represent":
        if spec is not None and spec.form != ADJOINT:
            diags.append("operator.form: represent needs the adjoint form (sigma, b)")
        time_grid("t", "dt")
        num("M", 2, MAX_PATHS, integer=True)
        num("N", 0, MAX_N, integer=True)
        num("pde_dt", 0, strict_lo=True)
        num("z", 0, strict_lo=True)
        num("pde_tol", 0)
        phi = expansion("phi")
        expansion("psi")
        if phi is not None:
            aliasing(phi.N)
        if P["oracle"] not in ("none", "heat"):
            diags.append(f"params.oracle: must be 'none' or 'heat', got {P['oracle']!r}")
        elif P["oracle"] == "heat" and dim is not None and not (
                _is_h0(P["phi"], dim) and _is_h0(P["psi"], dim) and _is_unit_translation(spec)):
            diags.append("params.oracle: heat pairing needs phi = psi = h_0 and sigma = I, b = 0")
    elif kind == "adjoint-check":
        if spec is not None and spec.form != ADJOINT:
            diags.append("operator.form: adjoint-check needs the adjoint form (sigma, b)")
        num("trials", 1, MAX_TRIALS, integer=True)
        num("N", 0, MAX_N, integer=True)
        num("s", 0, strict_lo=True)
        num("tol", 0, strict_lo=True)
    return diags


def _case_indices(case: dict):
    """``(dim, k, j, beta)`` as multi-indices.

    A one-dimensional case may give ``k`` as an integer, meaning the odd order
    ``2k - 1`` of the one-dimensional identity (multi-index ``2k``).
    """
    d = int(case.get("dim", 1))
    k = case["k"]
    if d == 1 and isinstance(k, int):
        if k < 1:
            raise ValueError(f"k must be a positive integer, got {k}")
        k = [2 * k]
    k = _as_list(k)
    beta = _as_list(case.get("beta", [0] * d))
    j = int(case.get("j", 0))
    if len(k) != d or len(beta) != d:
        raise ValueError(f"k and beta need {d} entries")
    if not 0 <= j < d or k[j] < 1:
        raise ValueError(f"need k[j] >= 1 at j={j}, got k={k}")
    if (sum(k) - 1) % 2 != 1:
        raise ValueError(f"|k - e_j| must be odd, got {sum(k) - 1}")
    return d, k, j, beta


def _case_diagnostics(i: int, case: dict) -> list[str]:
    out = [f"cases[{i}].{k}: unknown key" for k in sorted(set(case) - CASE_KEYS)]
    if "f" not in case or "k" not in case:
        out.append(f"cases[{i}]: needs f and k")
        return out
    try:
        d = _case_indices(case)[0]
        coefficient(case["f"], d)
        if "phi" in case:
            build_expansion(case["phi"], d)
    except (FamilyError, ValueError, TypeError) as exc:
        out.append(f"cases[{i}]: {exc}")
    return out


# ---------------------------------------------------------------------------
# report


def _fmt(v) -> str:
    return f"{v:.17g}" if isinstance(v, float) else str(v)


def _verdict(ok: bool) -> str:
    return "PASS" if ok else "FAIL"


@dataclass
class ExperimentReport:
    kind: str
    config_digest: str
    seed: int | None
    metrics: dict[str, float] = field(default_factory=dict)
    verdicts: dict[str, str] = field(default_factory=dict)
    wall_clock: float = 0.0
    out_dir: str | None = None
    diagnostics: list[str] = field(default_factory=list)
    mismatches: list[str] = field(default_factory=list)

    @property
    def status(self) -> str:
        if self.diagnostics:
            return "ERROR"
        if self.mismatches or any(v != "PASS" for v in self.verdicts.values()):
            return "FAIL"
        return "PASS"

    @property
    def exit_code(self) -> int:
        return {"PASS": 0, "FAIL": 2, "ERROR": 1}[self.status]

    def summary_lines(self) -> list[str]:
        lines = [f"status={self.status}", f"kind={self.kind}", f"config_digest={self.config_digest}",
                 f"seed={self.seed}", f"wall_clock_s={self.wall_clock:.3f}"]
        lines += [f"verdict.{k}={v}" for k, v in self.verdicts.items()]
        lines += [f"metric.{k}={_fmt(v)}" for k, v in self.metrics.items()]
        lines += [f"diagnostic={d}" for d in self.diagnostics]
        lines += [f"mismatch={m}" for m in self.mismatches]
        return lines

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "report.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["key", "value"])
            for k, v in self.metrics.items():
                w.writerow([f"metric.{k}", _fmt(v)])
            for k, v in self.verdicts.items():
                w.writerow([f"verdict.{k}", v])
        (out / "summary.txt").write_text("\n".join(self.summary_lines()) + "\n")


def read_summary(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out.setdefault(k, v)
    return out


def read_metrics(report_csv) -> dict[str, str]:
    with open(report_csv, newline="") as fh:
        return {row["key"]: row["value"] for row in csv.DictReader(fh)}


# ---------------------------------------------------------------------------
# experiments; each returns (metrics, verdicts) and writes its own CSVs


def _mono_check(cfg, spec, out):
    metrics, verdicts = {}, {}
    rows = []
    factory = (lambda N: BasisSampler(spec.dim, N)) if cfg.param("sampler") == "basis" else None
    for p in _as_list(cfg.param("p")):
        rep = estimate_constant(spec, p, trials=cfg.param("trials"), truncations=tuple(cfg.param("truncations")),
                                seed=cfg.seed, s=float(cfg.param("s")), sampler_factory=factory)
        rep.growth_tol = float(cfg.param("growth_tol"))
        for N, s in rep.sup_ratio.items():
            metrics[f"sup_ratio.p{p}.N{N}"] = s
        verdicts[f"growth.p{p}"] = rep.verdict
        rows.extend(rep.rows())
    _write_rows(out / "monotonicity.csv", ["sample_id", "N", "p", "ratio"], rows)
    return metrics, verdicts


def _norm_equiv(cfg, spec, out):
    metrics, verdicts = {}, {}
    rows = []
    truncs = list(cfg.param("truncations"))
    tol = float(cfg.param("drift_tol"))
    for d in _as_list(cfg.param("dim")):
        for p in _as_list(cfg.param("p")):
            ends = {}
            for N in truncs:
                rep = equivalence_sweep_batch(DecaySampler(d, N, seed=cfg.seed, s=float(cfg.param("s"))), p,
                                              cfg.param("trials"))
                ends[N] = (rep.ratio_min, rep.ratio_max)
                metrics[f"ratio_min.d{d}.p{p}.N{N}"] = rep.ratio_min
                metrics[f"ratio_max.d{d}.p{p}.N{N}"] = rep.ratio_max
                rows.extend({"sample_id": i, "dim": d, "N": N, "p": p, "ratio": float(r)}
                            for i, r in enumerate(rep.ratios))
            lo, hi = ends[truncs[0]], ends[truncs[-1]]
            drift = max(abs(hi[0] - lo[0]) / lo[0], abs(hi[1] - lo[1]) / lo[1])
            metrics[f"drift.d{d}.p{p}"] = drift
            verdicts[f"drift.d{d}.p{p}"] = _verdict(drift < tol)
    _write_rows(out / "norm_equivalence.csv", ["sample_id", "dim", "N", "p", "ratio"], rows)
    return metrics, verdicts


def _order_reduction(cfg, spec, out):
    metrics, verdicts = {}, {}
    rows = []
    N, m = cfg.param("N"), cfg.param("m")
    for ci, case in enumerate(cfg.cases):
        d, k, j, beta = _case_indices(case)
        tol = float(case.get("tol", 1e-8))
        if "phi" in case:
            samples = [build_expansion(case["phi"], d, cfg.seed)]
        else:
            sampler = DecaySampler(d, N, seed=cfg.seed)
            samples = [sampler(i) for i in range(cfg.param("trials"))]
        worst = 0.0
        for si, phi in enumerate(samples):
            lhs, rhs, err = multiindex_order_reduction_check(case["f"], k, j, beta, phi, m)
            worst = max(worst, err)
            rows.append({"case": ci, "sample_id": si, "f": str(case["f"]), "lhs": lhs, "rhs": rhs, "err": err})
            if "expected" in case and si == 0:
                metrics[f"lhs.case{ci}"] = lhs
                gap = abs(lhs - float(case["expected"]))
                verdicts[f"expected.case{ci}"] = _verdict(gap < tol)
        metrics[f"residual.case{ci}"] = worst
        verdicts[f"residual.case{ci}"] = _verdict(worst < tol)
    _write_rows(out / "order_reduction.csv", ["case", "sample_id", "f", "lhs", "rhs", "err"], rows)
    return metrics, verdicts


def heat_closed_form(t: float, *x) -> np.ndarray:
    """Solution from ``h_0`` of ``du = 1/2 Laplace u dt`` in ``len(x)`` dimensions."""
    r2 = sum(np.asarray(xi) ** 2 for xi in x)
    d = len(x)
    return np.pi ** (-d / 4) * (1.0 + t) ** (-d / 2) * np.exp(-r2 / (2.0 * (1.0 + t)))


def _pde_solve(cfg, spec, out):
    phi0 = build_expansion(cfg.param("phi0"), spec.dim, cfg.seed)
    T = float(cfg.param("T"))
    traj = solve_pde(spec, phi0, T, float(cfg.param("dt")), cfg.param("scheme"), cfg.param("N"),
                     cfg.param("snapshots") or None)
    traj.write_csv(out / "trajectory.csv")
    u = traj.final
    metrics = {"norm0": u.norm0(), "tail_norm": float(traj.tail_norm)}
    verdicts = {"finite": _verdict(bool(np.all(np.isfinite(u.coeffs))))}
    if cfg.param("oracle") == "heat":
        R = float(cfg.param("radius"))
        pts = 801 if spec.dim == 1 else 161
        axes = np.meshgrid(*([np.linspace(-R, R, pts)] * spec.dim), indexing="ij")
        err = float(np.max(np.abs(u(*axes) - heat_closed_form(T, *axes))))
        metrics["max_error"] = err
        verdicts["heat_oracle"] = _verdict(err < float(cfg.param("tol")))
    return metrics, verdicts


def _spde_simulate(cfg, spec, out):
    d = spec.dim
    phi0 = build_expansion(cfg.param("phi0"), d, cfg.seed)
    T, dt, N = float(cfg.param("T")), float(cfg.param("dt")), cfg.param("N")
    theta = float(cfg.param("theta"))
    K = _steps(T, dt)
    path = BrownianPath.sample(cfg.seed, d, dt, K, cfg.param("path_index"))
    traj = solve_spde(spec, phi0, path, theta, N)
    traj.write_csv(out / "trajectory.csv")
    metrics = {"norm0": traj.final.norm0(), "tail_norm": float(traj.tail_norm)}
    verdicts = {"finite": _verdict(bool(np.all(np.isfinite(traj.final.coeffs))))}
    oracle = cfg.param("oracle") == "translation"
    if oracle:
        metrics["oracle_error"] = (traj.final - translation_oracle(phi0, path.at_step(K), N)).norm0()
    paths = cfg.param("order_paths")
    if paths:
        factor = cfg.param("order_factor")
        fine_sq = coarse_sq = 0.0
        for i in range(paths):
            fine = BrownianPath.sample(cfg.seed, d, dt, K, i)
            exact = translation_oracle(phi0, fine.at_step(K), N)
            fine_sq += (solve_spde(spec, phi0, fine, theta, N).final - exact).norm0() ** 2
            coarse_sq += (solve_spde(spec, phi0, fine.coarsen(factor), theta, N).final - exact).norm0() ** 2
        ratio = math.sqrt(coarse_sq / fine_sq)
        lo, hi = cfg.param("order_band")
        metrics["rms_error_fine"] = math.sqrt(fine_sq / paths)
        metrics["rms_error_coarse"] = math.sqrt(coarse_sq / paths)
        metrics["strong_ratio"] = ratio
        verdicts["strong_order"] = _verdict(lo <= ratio <= hi)
    M = cfg.param("M")
    if M:
        ens = ensemble_mean(spec, phi0, M, T, dt, cfg.seed, theta, N, cfg.threads)
        ens.write_csv(out / "ensemble.csv")
        pde = solve_pde(spec, phi0, T, dt, theta, N).final
        gap = (ens.mean - pde).norm0()
        metrics["ensemble_gap"] = gap
        metrics["pooled_stderr"] = ens.pooled_stderr
        verdicts["ensemble_mean"] = _verdict(gap <= float(cfg.param("z")) * ens.pooled_stderr)
    return metrics, verdicts


def _represent(cfg, spec, out):
    d = spec.dim
    phi = build_expansion(cfg.param("phi"), d, cfg.seed)
    psi = build_expansion(cfg.param("psi"), d, cfg.seed)
    t = float(cfg.param("t"))
    res = mc_pairing(phi, psi, spec.sigma, spec.b, t, cfg.param("M"), cfg.seed, float(cfg.param("dt")),
                     cfg.param("m"), cfg.threads)
    res.write_csv(out / "pairing.csv")
    z = float(cfg.param("z"))
    galerkin = solve_pde(spec, phi, t, float(cfg.param("pde_dt")), N=cfg.param("N")).final.inner0(psi)
    metrics = {"estimate": res.value, "stderr": res.stderr, "galerkin": galerkin,
               "galerkin_gap": abs(res.value - galerkin)}
    verdicts = {"galerkin": _verdict(metrics["galerkin_gap"] <= z * res.stderr + float(cfg.param("pde_tol")))}
    if cfg.param("oracle") == "heat":
        exact = (2.0 / (2.0 + t)) ** (d / 2)
        metrics["oracle"] = exact
        metrics["oracle_gap"] = abs(res.value - exact)
        verdicts["oracle"] = _verdict(metrics["oracle_gap"] <= z * res.stderr)
    return metrics, verdicts


def _adjoint_check(cfg, spec, out):
    sampler = DecaySampler(spec.dim, cfg.param("N"), seed=cfg.seed, s=float(cfg.param("s")))
    rows = []
    for i in range(cfg.param("trials")):
        rows.append({"sample_id": i, "rel_err": adjoint_equivalence_check(spec.sigma, spec.b, [sampler(i)])})
    _write_rows(out / "adjoint_check.csv", ["sample_id", "rel_err"], rows)
    worst = max(r["rel_err"] for r in rows)
    return {"max_rel_err": worst}, {"adjoint_equivalence": _verdict(worst < float(cfg.param("tol")))}


RUNNERS = {
    "mono-check": _mono_check,
    "norm-equiv": _norm_equiv,
    "order-reduction": _order_reduction,
    "pde-solve": _pde_solve,
    "spde-simulate": _spde_simulate,
    "represent": _represent,
    "adjoint-check": _adjoint_check,
}


def _write_rows(path, fields, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(v) for k, v in row.items()})


def default_out(config: ExperimentConfig) -> str:
    return os.path.join("runs", f"{config.kind}-{config.digest()[:8]}")


def run(config: ExperimentConfig) -> ExperimentReport:
    """Validate, execute and persist one experiment.

    Invalid configs and runtime failures produce an ``ERROR`` report (exit code
    1) rather than an exception; the summary file is written in every case.
    """
    out = Path(config.out or default_out(config))
    report = ExperimentReport(config.kind, config.digest(), config.seed, out_dir=str(out))
    start = time.perf_counter()
    report.diagnostics = validate(config)
    if not report.diagnostics:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "config.json", "w") as fh:
            json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        spec = build_operator(config.operator) if config.kind in NEEDS_OPERATOR else None
        try:
            report.metrics, report.verdicts = RUNNERS[config.kind](config, spec, out)
        except (AliasingError, FamilyError, ValueError, ArithmeticError, RuntimeError) as exc:
            report.diagnostics = [f"{type(exc).__name__}: {exc}"]
    report.wall_clock = time.perf_counter() - start
    report.write(out)
    return report


def replay(report_dir, threads: int | None = None) -> ExperimentReport:
    """Re-run the config stored in ``report_dir`` and compare every metric bitwise.

    The re-run writes into a temporary directory.  Differences (including a
    config digest that no longer matches the summary) are listed in
    ``mismatches``; missing files raise :class:`FileNotFoundError`.
    """
    src = Path(report_dir)
    for name in ("config.json", "report.csv", "summary.txt"):
        if not (src / name).is_file():
            raise FileNotFoundError(f"{src / name} is missing")
    with open(src / "config.json") as fh:
        config = ExperimentConfig.from_dict(json.load(fh))
    stored = read_metrics(src / "report.csv")
    summary = read_summary(src / "summary.txt")
    with tempfile.TemporaryDirectory() as tmp:
        report = run(config.with_overrides(out=tmp, threads=threads))
        fresh = read_metrics(Path(tmp) / "report.csv")
    report.out_dir = str(src)
    if summary.get("config_digest") != report.config_digest:
        report.mismatches.append(
            f"config_digest: summary has {summary.get('config_digest')}, config.json hashes to {report.config_digest}")
    for key in sorted(set(stored) | set(fresh)):
        if stored.get(key) != fresh.get(key):
            report.mismatches.append(f"{key}: stored {stored.get(key)} vs replay {fresh.get(key)}")
    return report


# ---------------------------------------------------------------------------
# command line


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hermite-flow", description="Hermite-Galerkin SPDE experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("run", "validate") + KINDS:
        p = sub.add_parser(name, help="run the experiment in --config" if name == "run" else None)
        p.add_argument("--config", required=True, help="TOML experiment file")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--threads", type=int, help="worker threads (default: $HERMITE_FLOW_THREADS or 1)")
    p = sub.add_parser("replay", help="re-run a report directory and compare metrics bitwise")
    p.add_argument("report_dir")
    p.add_argument("--threads", type=int)
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "replay":
            report = replay(args.report_dir, args.threads)
            print("\n".join(report.summary_lines()))
            return report.exit_code
        config = ExperimentConfig.load(args.config)
        if args.command in KINDS:
            if config.kind and config.kind != args.command:
                print(f"error: config kind {config.kind!r} does not match subcommand {args.command!r}",
                      file=sys.stderr)
                return 1
            config.kind = args.command
        config = config.with_overrides(args.seed, args.out, args.threads)
        if args.command == "validate":
            diags = validate(config)
            print("\n".join(diags) if diags else "ok")
            return 1 if diags else 0
        report = run(config)
    except (OSError, ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print("\n".join(report.summary_lines()))
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
