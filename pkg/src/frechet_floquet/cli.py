"""Problem files, the full pipeline, reports and the command line.

A problem file is a JSON document::

    {
      "depth": 2,
      "period": 1.0,
      "entries": [
        {"row": 1, "col": 1, "constant": [1, 0]},
        {"row": 2, "col": 1, "cos": [[1, 1, 0]]},
        {"row": 2, "col": 2, "constant": [1, 0], "sin": [[1, 0.5, 0]]}
      ],
      "solver": {"steps": 2000, "tol": 1e-8},
      "branch": {"windings": [[2, 1]]}
    }

Complex numbers are ``[re, im]``; harmonic terms are ``[k, re, im]``.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FloquetError, ValidationError, VerificationError
from .floquet import FD_TOL, Check, floquet_reduce, monodromy
from .linalg import LogBranch, compatible_log_detailed
from .ode import (
    CoefficientTower,
    TrigPolynomial,
    check_coefficient_periodicity,
    check_projective_consistency,
    solve_fundamental,
)

TOL_ENV = "FLOQUET_TOL"
DEFAULT_STEPS = 2000
DEFAULT_TOL = 1e-8


def default_tol() -> float:
    raw = os.environ.get(TOL_ENV)
    if raw is None:
        return DEFAULT_TOL
    try:
        tol = float(raw)
    except ValueError:
        raise ValidationError(f"{TOL_ENV}={raw!r} is not a number") from None
    if not tol > 0:
        raise ValidationError(f"{TOL_ENV} must be positive, got {tol}")
    return tol


def _complex(value, where: str) -> complex:
    if (not isinstance(value, (list, tuple)) or len(value) != 2
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)):
        raise ValidationError(f"{where}: expected [re, im], got {value!r}")
    return complex(value[0], value[1])


def _pair(z: complex) -> list:
    return [float(z.real), float(z.imag)]


def _harmonics(terms, where: str) -> tuple:
    if not isinstance(terms, list):
        raise ValidationError(f"{where}: expected a list of [k, re, im]")
    out = []
    for i, term in enumerate(terms):
        if not isinstance(term, (list, tuple)) or len(term) != 3:
            raise ValidationError(f"{where}[{i}]: expected [k, re, im], got {term!r}")
        k = term[0]
        if isinstance(k, bool) or not isinstance(k, int) or k < 1:
            raise ValidationError(f"{where}[{i}]: harmonic must be a positive integer, got {k!r}")
        out.append((k, _complex(list(term[1:]), f"{where}[{i}]")))
    ks = [k for k, _ in out]
    if len(set(ks)) != len(ks):
        raise ValidationError(f"{where}: duplicate harmonic in {ks}")
    return tuple(out)


@dataclass(frozen=True)
class EntrySpec:
    row: int
    col: int
    constant: complex = 0j
    cos: tuple = ()
    sin: tuple = ()

    def to_dict(self) -> dict:
        return {
            "row": self.row,
            "col": self.col,
            "constant": _pair(self.constant),
            "cos": [[k, *_pair(a)] for k, a in self.cos],
            "sin": [[k, *_pair(a)] for k, a in self.sin],
        }


@dataclass(frozen=True)
class ProblemSpec:
    depth: int
    period: float = 1.0
    entries: tuple = ()
    steps: int = DEFAULT_STEPS
    tol: float = DEFAULT_TOL
    fd_tol: float = FD_TOL
    windings: tuple = ()

    def __post_init__(self):
        if isinstance(self.depth, bool) or not isinstance(self.depth, int) or self.depth < 1:
            raise ValidationError(f"depth must be a positive integer, got {self.depth!r}")
        if not self.period > 0:
            raise ValidationError(f"period must be > 0, got {self.period}")
        if isinstance(self.steps, bool) or not isinstance(self.steps, int) or self.steps < 8:
            raise ValidationError(f"solver.steps must be an integer >= 8, got {self.steps!r}")
        if not self.tol > 0:
            raise ValidationError(f"solver.tol must be > 0, got {self.tol}")
        if not self.fd_tol > 0:
            raise ValidationError(f"solver.fd_tol must be > 0, got {self.fd_tol}")
        seen = set()
        for e in self.entries:
            if e.col > e.row:
                raise ValidationError(f"upper-triangular entry ({e.row},{e.col})")
            if e.col < 1 or e.row > self.depth:
                raise ValidationError(f"entry ({e.row},{e.col}) outside depth {self.depth}")
            if (e.row, e.col) in seen:
                raise ValidationError(f"duplicate entry ({e.row},{e.col})")
            seen.add((e.row, e.col))
        for level, _ in self.windings:
            if not 1 <= level <= self.depth:
                raise ValidationError(f"branch winding at level {level} outside 1..{self.depth}")

    def coefficient(self) -> CoefficientTower:
        return CoefficientTower(
            self.depth,
            {(e.row, e.col): TrigPolynomial(e.constant, e.cos, e.sin, self.period) for e in self.entries},
            self.period,
        )

    def branch(self) -> LogBranch:
        return LogBranch(dict(self.windings))

    def to_dict(self) -> dict:
        return {
            "depth": self.depth,
            "period": self.period,
            "entries": [e.to_dict() for e in self.entries],
            "solver": {"steps": self.steps, "tol": self.tol, "fd_tol": self.fd_tol},
            "branch": {"windings": [[k, m] for k, m in self.windings]},
        }

    @classmethod
    def from_dict(cls, doc) -> "ProblemSpec":
        if not isinstance(doc, dict):
            raise ValidationError("problem must be a JSON object")
        unknown = set(doc) - {"depth", "period", "entries", "solver", "branch"}
        if unknown:
            raise ValidationError(f"unknown top-level field(s): {sorted(unknown)}")
        if "depth" not in doc:
            raise ValidationError("missing field 'depth'")
        entries = []
        raw_entries = doc.get("entries", [])
        if not isinstance(raw_entries, list):
            raise ValidationError("'entries' must be a list")
        for i, e in enumerate(raw_entries):
            where = f"entries[{i}]"
            if not isinstance(e, dict):
                raise ValidationError(f"{where}: expected an object")
            for key in ("row", "col"):
                v = e.get(key)
                if isinstance(v, bool) or not isinstance(v, int):
                    raise ValidationError(f"{where}.{key}: expected an integer, got {v!r}")
            extra = set(e) - {"row", "col", "constant", "cos", "sin"}
            if extra:
                raise ValidationError(f"{where}: unknown field(s) {sorted(extra)}")
            entries.append(EntrySpec(
                e["row"], e["col"],
                _complex(e.get("constant", [0, 0]), f"{where}.constant"),
                _harmonics(e.get("cos", []), f"{where}.cos"),
                _harmonics(e.get("sin", []), f"{where}.sin"),
            ))
        solver = doc.get("solver", {})
        if not isinstance(solver, dict):
            raise ValidationError("'solver' must be an object")
        branch = doc.get("branch", {})
        if not isinstance(branch, dict):
            raise ValidationError("'branch' must be an object")
        windings = []
        for i, w in enumerate(branch.get("windings", [])):
            if (not isinstance(w, (list, tuple)) or len(w) != 2
                    or not all(isinstance(v, int) and not isinstance(v, bool) for v in w)):
                raise ValidationError(f"branch.windings[{i}]: expected [level, integer], got {w!r}")
            windings.append((w[0], w[1]))
        period = doc.get("period", 1.0)
        if isinstance(period, bool) or not isinstance(period, (int, float)):
            raise ValidationError(f"period must be a number, got {period!r}")
        for key in ("tol", "fd_tol"):
            v = solver.get(key)
            if v is not None and (isinstance(v, bool) or not isinstance(v, (int, float))):
                raise ValidationError(f"solver.{key} must be a number, got {v!r}")
        return cls(
            depth=doc["depth"],
            period=float(period),
            entries=tuple(entries),
            steps=solver.get("steps", DEFAULT_STEPS),
            tol=float(solver.get("tol", default_tol())),
            fd_tol=float(solver.get("fd_tol", FD_TOL)),
            windings=tuple(windings),
        )


def load_problem(path) -> ProblemSpec:
    """Read and validate a problem file."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    try:
        return ProblemSpec.from_dict(doc)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def dump_problem(spec: ProblemSpec, path) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2) + "\n")


def _matrix(m) -> list:
    return [[_pair(z) for z in row] for row in np.asarray(m)]


def _check_dict(c: Check) -> dict:
    out = {"residual": c.residual, "tol": c.tol, "passed": c.passed, "per_level": list(c.per_level)}
    if c.extra:
        out["extra"] = dict(c.extra)
    return out


@dataclass
class Report:
    """Everything the pipeline computed.  ``data`` is what gets written as JSON."""

    data: dict
    grid: np.ndarray | None = None
    phi: np.ndarray | None = None
    q: np.ndarray | None = None
    timings: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.data.get("status") == "pass"

    def to_dict(self) -> dict:
        return {**self.data, "timings": dict(self.timings)}


def run_pipeline(spec: ProblemSpec, stage: str = "verify") -> Report:
    """Solve, take the monodromy, its logarithm, reduce and verify.

    ``stage`` stops early: ``solve``, ``monodromy``, ``logtower``, ``floquet``
    or ``verify`` (everything, including the independent-level integration).
    """
    stages = ("solve", "monodromy", "logtower", "floquet", "verify")
    if stage not in stages:
        raise ValidationError(f"unknown stage {stage!r}")
    upto = stages.index(stage)
    timings = {}
    a = spec.coefficient()
    data = {
        "spec": spec.to_dict(),
        "stage": stage,
        "period_rescaled": spec.period != 1.0,
    }

    t0 = time.perf_counter()
    sol = solve_fundamental(a, spec.steps, spec.tol, independent_levels=upto >= 4)
    timings["solve"] = time.perf_counter() - t0
    data["integrator"] = {"method": "rk4", "order": sol.order, "steps": sol.steps,
                          "error_estimate": sol.error_estimate}
    report = Report(data, grid=sol.grid, phi=sol.samples, timings=timings)

    mono = monodromy(sol)
    data["monodromy"] = _matrix(mono.M.matrix)
    data["eigenvalues"] = [_pair(z) for z in mono.M.diagonal]
    if upto < 2:
        data["status"] = "pass"
        return report

    t0 = time.perf_counter()
    branch = spec.branch()
    if upto == 2:
        log = compatible_log_detailed(mono.M, branch, spec.tol)
        result = None
    else:
        result = floquet_reduce(sol, branch, spec.tol, coefficient=a if upto >= 4 else None,
                                fd_tol=spec.fd_tol)
        log = result.log
    timings["log_and_reduce"] = time.perf_counter() - t0
    data["windings"] = [[k, m] for k, m in branch.windings]
    data["logs"] = [_pair(z) for z in log.logs]
    data["gammas"] = [[_pair(g) for g in step.gammas] for step in log.steps]
    data["Bbar"] = _matrix(log.bbar.matrix)

    checks = {}
    if result is None:
        checks["exp_log"] = Check("exp_log", float(log.residuals[-1]), spec.tol, tuple(log.residuals.tolist()))
    else:
        data["B"] = _matrix(result.B)
        report.q = result.Q_samples
        checks.update(result.checks)
    if upto >= 4:
        t0 = time.perf_counter()
        cons = check_projective_consistency(sol, spec.tol)
        checks["projective_consistency"] = Check(
            "projective_consistency", cons.residual, spec.tol, cons.per_level, {"independent": cons.independent}
        )
        per = check_coefficient_periodicity(a, 64, spec.tol)
        checks["coefficient_periodicity"] = Check(
            "coefficient_periodicity", per.residual, spec.tol, per.per_level,
            {"levels_periodic": per.levels_periodic, "tower_periodic": per.tower_periodic},
        )
        timings["verify"] = time.perf_counter() - t0
    data["checks"] = {name: _check_dict(c) for name, c in checks.items()}
    data["status"] = "pass" if all(c.passed for c in checks.values()) else "fail"
    return report


def _truncate_matrix(m, level):
    return [row[:level] for row in m[:level]]


def restrict(report: Report, level: int) -> Report:
    """The same report with every matrix cut down to ``level``."""
    depth = report.data["spec"]["depth"]
    if not 1 <= level <= depth:
        raise ValidationError(f"--level {level} outside 1..{depth}")
    data = dict(report.data)
    for key in ("monodromy", "Bbar", "B"):
        if key in data:
            data[key] = _truncate_matrix(data[key], level)
    for key in ("eigenvalues", "logs"):
        if key in data:
            data[key] = data[key][:level]
    if "gammas" in data:
        data["gammas"] = data["gammas"][: level - 1]
    data["level"] = level
    return Report(
        data,
        grid=report.grid,
        phi=None if report.phi is None else report.phi[:, :level, :level],
        q=None if report.q is None else report.q[:, :level, :level],
        timings=report.timings,
    )


def csv_columns(prefix: str, n: int) -> list:
    cols = []
    for r in range(n):
        for c in range(r + 1):
            cols += [f"{prefix}_{r + 1}_{c + 1}_re", f"{prefix}_{r + 1}_{c + 1}_im"]
    return cols


def _lower_flat(m: np.ndarray) -> np.ndarray:
    """``(k, n, n)`` stack to ``(k, n(n+1))`` re/im pairs in row-major lower order."""
    r, c = np.tril_indices(m.shape[-1])
    z = m[:, r, c]
    out = np.empty((m.shape[0], 2 * z.shape[1]))
    out[:, 0::2] = z.real
    out[:, 1::2] = z.imag
    return out


def emit(report: Report, format: str = "json", out=None, series: str = "both") -> None:
    """Write ``report`` as JSON, or its sampled ``Phi``/``Q`` series as CSV.

    CSV has one row per grid sample: ``t`` (original time units), then re/im
    of every lower-triangular entry in row-major order, for ``Phi`` and/or
    ``Q`` according to ``series`` (``phi``, ``q`` or ``both``).
    """
    if format == "json":
        text = json.dumps(report.to_dict(), indent=2) + "\n"
        if out is None:
            sys.stdout.write(text)
        else:
            Path(out).write_text(text)
        return
    if format != "csv":
        raise ValidationError(f"unknown format {format!r}")
    if report.phi is None:
        raise ValidationError("report has no sampled series")
    if series not in ("phi", "q", "both"):
        raise ValidationError(f"unknown series {series!r}")
    n = report.phi.shape[-1]
    period = report.data["spec"]["period"]
    header = ["t"]
    blocks = [report.grid[:, None] * period]
    if series in ("phi", "both"):
        header += csv_columns("Phi", n)
        blocks.append(_lower_flat(report.phi))
    if series in ("q", "both"):
        if report.q is None:
            if series == "q":
                raise ValidationError("report has no Q series; run the floquet stage")
        else:
            header += csv_columns("Q", n)
            blocks.append(_lower_flat(report.q))
    rows = np.hstack(blocks)
    fh = sys.stdout if out is None else open(out, "w", newline="")
    try:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])
    finally:
        if out is not None:
            fh.close()


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="frechet-floquet",
        description="Floquet reduction of periodic lower-triangular linear ODEs on the C^N tower.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "solve": "integrate the fundamental solution",
        "monodromy": "monodromy tower Phi(period)",
        "logtower": "projective-compatible logarithm of the monodromy",
        "floquet": "constant coefficient B and periodic transform Q",
        "verify": "full pipeline with every residual check",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--spec", required=True, help="problem file (JSON)")
        p.add_argument("--steps", type=int, help="integration steps per period (overrides the file)")
        p.add_argument("--tol", type=float, help=f"tolerance (overrides the file and ${TOL_ENV})")
        p.add_argument("--out", help="output path (default stdout)")
        p.add_argument("--format", choices=("json", "csv"), default="json")
        p.add_argument("--level", type=int, help="report only levels 1..LEVEL")
        p.add_argument("--series", choices=("phi", "q", "both"), default="both",
                       help="which time series to write with --format csv")
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        spec = load_problem(args.spec)
        overrides = {}
        if args.steps is not None:
            overrides["steps"] = args.steps
        if args.tol is not None:
            overrides["tol"] = args.tol
        if overrides:
            spec = ProblemSpec(**{**spec.__dict__, **overrides})
        report = run_pipeline(spec, args.command)
        if args.level is not None:
            report = restrict(report, args.level)
        emit(report, args.format, args.out, args.series)
        if not report.passed:
            failed = [k for k, v in report.data["checks"].items() if not v["passed"]]
            raise VerificationError(f"checks failed: {', '.join(failed)}")
    except FloquetError as exc:
        record = {"error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}
        sys.stderr.write(json.dumps(record) + "\n")
        return exc.exit_code
    except OSError as exc:
        record = {"error": type(exc).__name__, "message": str(exc), "exit_code": 1}
        sys.stderr.write(json.dumps(record) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
