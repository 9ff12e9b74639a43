"""Monodromy, the constant-coefficient reduction and its a-posteriori checks.

Everything here works in rescaled time (period 1).  Given the sampled
fundamental solution ``Phi`` and the monodromy tower ``M = Phi(1)``:

* ``Bbar = compatible_log(M)`` gives ``Exp(Bbar) = M``,
* ``F(t) = Exp(t Bbar)`` extends ``n -> M^n`` from the integers to the reals,
* ``Q(t) = exp(t B) Phi(t)^-1`` is 1-periodic and turns ``x' = A x`` into
  ``y' = B y``.

Each of these statements has a residual check below.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError, ValidationError
from .linalg import LogBranch, TowerLog, compatible_log_detailed, matrix_exp
from .ode import CoefficientTower, SolutionTower
from .tower import InvertibleNestedMatrix, NestedMatrix, lower_inverse, per_level_max

#: Tolerance used for checks based on finite differences unless overridden.
FD_TOL = 1e-5


@dataclass(frozen=True, eq=False)
class MonodromyTower:
    M: InvertibleNestedMatrix
    period_normalized: bool = False

    @property
    def depth(self) -> int:
        return self.M.depth


@dataclass(frozen=True)
class Check:
    """Outcome of one residual check; ``float(check)`` is the residual."""

    name: str
    residual: float
    tol: float
    per_level: tuple = ()
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.residual <= self.tol)

    def __float__(self):
        return float(self.residual)


@dataclass(frozen=True, eq=False)
class FloquetResult:
    monodromy: MonodromyTower
    log: TowerLog
    grid: np.ndarray
    Q_samples: np.ndarray
    checks: dict

    @property
    def Bbar(self) -> NestedMatrix:
        return self.log.bbar

    @property
    def B(self) -> np.ndarray:
        # the constant coefficient is the top level of the tower logarithm
        return self.log.bbar.matrix

    def Q(self, n: int) -> np.ndarray:
        return self.Q_samples[:, :n, :n]

    def F(self, t: float) -> InvertibleNestedMatrix:
        """The real extension ``t -> Exp(t Bbar)`` of the monodromy homomorphism."""
        return InvertibleNestedMatrix(matrix_exp(t * self.B))

    @property
    def residuals(self) -> dict:
        return {name: c.residual for name, c in self.checks.items()}

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())


def monodromy(sol: SolutionTower) -> MonodromyTower:
    """The sample at the end of the period, ``alpha#(1) = Phi(1)``."""
    if len(sol.grid) < 2 or not np.isclose(sol.grid[-1], 1.0, rtol=0, atol=1e-12):
        raise UsageError("solution grid does not end at the period")
    return MonodromyTower(InvertibleNestedMatrix(sol.samples[-1]), sol.period != 1.0)


def _power(m: np.ndarray, n: int) -> np.ndarray:
    if n < 0:
        m = lower_inverse(m)
        n = -n
    return np.tril(np.linalg.matrix_power(m, n))


def monodromy_hom(m: MonodromyTower, n: int) -> InvertibleNestedMatrix:
    """``alpha#(n) = M^n``; negative powers go through a triangular inverse."""
    return InvertibleNestedMatrix(_power(m.M.matrix, int(n)))


def check_monodromy_hom(m: MonodromyTower, n_max: int = 3, tol: float = 1e-9) -> Check:
    """``|alpha#(a + b) - alpha#(a) alpha#(b)|`` over ``|a|, |b| <= n_max``."""
    powers = {n: _power(m.M.matrix, n) for n in range(-2 * n_max, 2 * n_max + 1)}
    worst = np.zeros(m.depth)
    for a in range(-n_max, n_max + 1):
        for b in range(-n_max, n_max + 1):
            worst = np.maximum(worst, per_level_max(powers[a + b] - powers[a] @ powers[b]))
    return Check("monodromy_hom", float(worst[-1]), tol, tuple(worst.tolist()))


def _fd_derivative(y: np.ndarray, h: float) -> np.ndarray:
    """Fourth-order finite differences along axis 0 (one-sided near the ends)."""
    n = y.shape[0]
    if n < 5:
        raise ValidationError("need at least 5 samples for fourth-order differences")
    d = np.empty_like(y)
    d[2:-2] = (y[:-4] - 8 * y[1:-3] + 8 * y[3:-1] - y[4:]) / (12 * h)
    d[0] = (-25 * y[0] + 48 * y[1] - 36 * y[2] + 16 * y[3] - 3 * y[4]) / (12 * h)
    d[1] = (-3 * y[0] - 10 * y[1] + 18 * y[2] - 6 * y[3] + y[4]) / (12 * h)
    d[-1] = (25 * y[-1] - 48 * y[-2] + 36 * y[-3] - 16 * y[-4] + 3 * y[-5]) / (12 * h)
    d[-2] = (3 * y[-1] + 10 * y[-2] - 18 * y[-3] + 6 * y[-4] - y[-5]) / (12 * h)
    return d


def floquet_reduce(sol: SolutionTower, branch: LogBranch | None = None, tol: float = 1e-8,
                   coefficient: CoefficientTower | None = None, fd_tol: float = FD_TOL,
                   n_max: int = 3) -> FloquetResult:
    """Reduce ``x' = A(t) x`` to ``y' = B y`` and run every residual check.

    ``tol`` applies to the exact-arithmetic identities (exp-log, periodicity
    of ``Q``, extension); ``fd_tol`` to the checks that differentiate grid
    samples.  Those two checks also need ``coefficient``; without it they
    are skipped.
    """
    mono = monodromy(sol)
    log = compatible_log_detailed(mono.M, branch, tol)
    b = log.bbar.matrix

    phi_inv = lower_inverse(sol.samples)
    exps = matrix_exp(sol.grid[:, None, None] * b)
    q = np.tril(exps @ phi_inv)
    q.setflags(write=False)

    result = FloquetResult(mono, log, sol.grid.copy(), q, {})
    checks = result.checks
    checks["exp_log"] = Check("exp_log", float(log.residuals[-1]), tol, tuple(log.residuals.tolist()))
    checks["periodicity"] = check_Q_periodicity(result, tol)
    checks["extension"] = check_extension(result, mono, n_max, tol)
    checks["monodromy_hom"] = check_monodromy_hom(mono, n_max, tol)
    if coefficient is not None:
        checks["constancy"] = check_constant_reduction(result, sol, coefficient, fd_tol)
        c = connection_residual(sol, coefficient)
        checks["connection"] = Check("connection", c, fd_tol)
    return result


def check_Q_periodicity(result: FloquetResult, tol: float = 1e-8) -> Check:
    """``|Q_n(1) - Q_n(0)|`` per level."""
    if not np.isclose(result.grid[-1], 1.0, rtol=0, atol=1e-12):
        raise UsageError("grid does not cover a full period")
    per_level = per_level_max(result.Q_samples[-1] - result.Q_samples[0])
    return Check("periodicity", float(per_level[-1]), tol, tuple(per_level.tolist()))


def check_constant_reduction(result: FloquetResult, sol: SolutionTower, a: CoefficientTower,
                             tol: float = FD_TOL) -> Check:
    """Max over samples of ``|(Q' + Q A) Q^-1 - B|``, ``Q'`` by finite differences.

    At ``t = 0`` with ``Q(0) = I`` this is ``|Q'(0) + A(0) - B|``; that value
    is reported separately as ``extra['at_zero']``.
    """
    grid = result.grid
    h = grid[1] - grid[0]
    q = result.Q_samples
    dq = _fd_derivative(q, h)
    a_s = a.normalized().evaluate(grid)
    recon = (dq + q @ a_s) @ lower_inverse(q)
    d = recon - result.B
    per_level = per_level_max(d)
    at_zero = float(np.max(np.abs(d[0])))
    return Check("constancy", float(per_level[-1]), tol, tuple(per_level.tolist()), {"at_zero": at_zero})


def check_extension(result, m: MonodromyTower, n_max: int = 3, tol: float = 1e-8) -> Check:
    """``F(n) = exp(n B)`` against ``M^n`` and the group law ``F(a + b) = F(a) F(b)``.

    ``result`` is a :class:`FloquetResult` or just the tower logarithm as a
    :class:`NestedMatrix`.  The residual is the larger of the two; both, and
    the half-period spot check ``F(1/2)^2 = F(1)``, are in ``extra``.
    """
    if n_max < 1:
        raise ValidationError("n_max must be >= 1")
    b = result.B if isinstance(result, FloquetResult) else result.matrix
    f = {n: matrix_exp(n * b) for n in range(-n_max, n_max + 1)}
    powers = {n: _power(m.M.matrix, n) for n in range(-n_max, n_max + 1)}
    ext = np.zeros(m.depth)
    for n in f:
        ext = np.maximum(ext, per_level_max(f[n] - powers[n]))
    hom = np.zeros(m.depth)
    for x in range(-n_max, n_max + 1):
        for y in range(-n_max, n_max + 1):
            if abs(x + y) <= n_max:
                hom = np.maximum(hom, per_level_max(f[x + y] - f[x] @ f[y]))
    half = matrix_exp(0.5 * b)
    half_sq = float(np.max(np.abs(half @ half - f[1])))
    per_level = np.maximum(ext, hom)
    return Check(
        "extension", float(per_level[-1]), tol, tuple(per_level.tolist()),
        {"power": float(ext[-1]), "homomorphism": float(hom[-1]), "half_period": half_sq},
    )


def connection_residual(sol: SolutionTower, a: CoefficientTower) -> float:
    """Max over samples of ``|Phi' Phi^-1 - A|`` at the top level."""
    h = sol.grid[1] - sol.grid[0]
    dphi = _fd_derivative(sol.samples, h)
    a_s = a.normalized().evaluate(sol.grid)
    return float(np.max(np.abs(dphi @ lower_inverse(sol.samples) - a_s)))
