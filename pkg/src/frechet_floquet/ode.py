"""Fundamental solutions of x' = A(t) x for periodic lower-triangular A.

Coefficients are trigonometric polynomials, so they are exactly periodic
and cheap to evaluate on a whole grid at once.  Problems with period ``T``
are rescaled to period 1 (``s = t/T``, ``A~(s) = T A(T s)``) before
integration; every grid in this module is in the rescaled time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AccuracyError, LevelRangeError, NumericError, UsageError, ValidationError
from .tower import SINGULAR_THRESHOLD, NestedMatrix, per_level_max

RK4_ORDER = 4


@dataclass(frozen=True)
class TrigPolynomial:
    """``c0 + sum a_k cos(2 pi k t / P) + sum b_k sin(2 pi k t / P)``."""

    constant: complex = 0j
    cos: tuple = ()
    sin: tuple = ()
    period: float = 1.0

    def __post_init__(self):
        if not self.period > 0:
            raise ValidationError(f"period must be positive, got {self.period}")
        for name in ("cos", "sin"):
            terms = tuple((int(k), complex(a)) for k, a in getattr(self, name))
            ks = [k for k, _ in terms]
            if any(k < 1 for k in ks):
                raise ValidationError(f"{name} harmonics must be positive integers, got {ks}")
            if len(set(ks)) != len(ks):
                raise ValidationError(f"duplicate {name} harmonic in {ks}")
            object.__setattr__(self, name, terms)
        object.__setattr__(self, "constant", complex(self.constant))
        object.__setattr__(self, "period", float(self.period))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.full(t.shape, self.constant, dtype=complex)
        # reduce the phase before scaling by 2 pi so t and t + period agree
        u = np.mod(t / self.period, 1.0)
        for k, a in self.cos:
            out = out + a * np.cos(2 * math.pi * np.mod(k * u, 1.0))
        for k, b in self.sin:
            out = out + b * np.sin(2 * math.pi * np.mod(k * u, 1.0))
        return out

    def scaled(self, factor: float, time_scale: float) -> "TrigPolynomial":
        """``factor * p(time_scale * s)`` as a polynomial in ``s``."""
        return TrigPolynomial(
            constant=factor * self.constant,
            cos=tuple((k, factor * a) for k, a in self.cos),
            sin=tuple((k, factor * b) for k, b in self.sin),
            period=self.period / time_scale,
        )

    @property
    def is_zero(self) -> bool:
        return self.constant == 0 and all(a == 0 for _, a in self.cos + self.sin)


@dataclass(frozen=True, eq=False)
class CoefficientTower:
    """Lower-triangular periodic coefficient ``A(t)`` on the depth-``N`` tower.

    ``entries`` maps 1-based ``(row, col)`` with ``col <= row`` to a
    :class:`TrigPolynomial`.  With ``strict`` (the default) every entry must
    have the tower's period; ``strict=False`` lets a mismatched tower be built
    so :func:`check_coefficient_periodicity` has something to catch.
    """

    depth: int
    entries: dict = field(default_factory=dict)
    period: float = 1.0
    strict: bool = True

    def __post_init__(self):
        if int(self.depth) != self.depth or self.depth < 1:
            raise ValidationError(f"depth must be a positive integer, got {self.depth!r}")
        if not self.period > 0:
            raise ValidationError(f"period must be positive, got {self.period}")
        for (r, c), p in self.entries.items():
            if c > r:
                raise ValidationError(f"upper-triangular entry ({r},{c})")
            if not (1 <= c and r <= self.depth):
                raise ValidationError(f"entry ({r},{c}) outside depth {self.depth}")
            if self.strict and not math.isclose(p.period, self.period, rel_tol=1e-14):
                raise ValidationError(
                    f"entry ({r},{c}) has period {p.period}, tower period is {self.period}"
                )
        object.__setattr__(self, "entries", dict(self.entries))

    @classmethod
    def constant_matrix(cls, c, period: float = 1.0):
        c = np.asarray(c, dtype=complex)
        n = c.shape[0]
        entries = {(r + 1, k + 1): TrigPolynomial(c[r, k], period=period)
                   for r in range(n) for k in range(r + 1) if c[r, k] != 0}
        NestedMatrix(c)  # rejects upper entries
        return cls(n, entries, period)

    def evaluate(self, t) -> np.ndarray:
        """Stack of top-level matrices ``A_N(t)``, shape ``t.shape + (N, N)``."""
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape + (self.depth, self.depth), dtype=complex)
        for (r, c), p in self.entries.items():
            out[..., r - 1, c - 1] = p(t)
        return out

    def normalized(self) -> "CoefficientTower":
        """The same equation in rescaled time ``s = t/T``, period 1."""
        if self.period == 1.0:
            return self
        T = self.period
        return CoefficientTower(
            self.depth,
            {rc: p.scaled(T, T) for rc, p in self.entries.items()},
            1.0,
            self.strict,
        )

    def truncated(self, level: int) -> "CoefficientTower":
        if not 1 <= level <= self.depth:
            raise LevelRangeError(f"level {level} outside 1..{self.depth}")
        return CoefficientTower(
            level, {rc: p for rc, p in self.entries.items() if rc[0] <= level}, self.period, self.strict
        )


def eval_coefficient(a: CoefficientTower, t: float) -> NestedMatrix:
    return NestedMatrix(a.evaluate(float(t)))


@dataclass(frozen=True)
class PeriodicityReport:
    residual: float
    per_level: tuple
    tol: float
    passed: bool
    # levelwise periodicity and tower periodicity are the same statement
    levels_periodic: bool
    tower_periodic: bool


def check_coefficient_periodicity(a: CoefficientTower, samples: int = 64, tol: float = 1e-12) -> PeriodicityReport:
    """Max over ``samples`` points in one period of ``|A_n(t + T) - A_n(t)|``."""
    if samples < 1:
        raise ValidationError("samples must be >= 1")
    t = np.arange(samples) * (a.period / samples)
    diff = a.evaluate(t + a.period) - a.evaluate(t)
    per_level = per_level_max(diff)
    residual = float(per_level[-1])
    ok = residual <= tol
    return PeriodicityReport(residual, tuple(float(x) for x in per_level), tol, ok, ok, ok)


@dataclass(frozen=True, eq=False)
class SolutionTower:
    """Samples ``Phi_n(s_k)`` of the fundamental solution on ``s_k = k/steps``.

    ``samples`` holds the top level; lower levels are leading blocks unless
    ``level_samples`` (verification mode) carries independently integrated
    levels.  Times are rescaled (period 1); ``period`` records the original.
    """

    grid: np.ndarray
    samples: np.ndarray
    period: float = 1.0
    order: int = RK4_ORDER
    error_estimate: float = 0.0
    level_samples: tuple | None = None

    @property
    def depth(self) -> int:
        return self.samples.shape[1]

    @property
    def steps(self) -> int:
        return len(self.grid) - 1

    @property
    def times(self) -> np.ndarray:
        """Grid in the original (unscaled) time."""
        return self.grid * self.period

    @property
    def independent(self) -> bool:
        return self.level_samples is not None

    def level(self, n: int) -> np.ndarray:
        if not 1 <= n <= self.depth:
            raise LevelRangeError(f"level {n} outside 1..{self.depth}")
        if self.level_samples is not None:
            return self.level_samples[n - 1]
        return self.samples[:, :n, :n]

    def at(self, k: int) -> NestedMatrix:
        return NestedMatrix(self.samples[k])


def _rk4(a_half: np.ndarray, h: float) -> np.ndarray:
    """Classical RK4 for ``Phi' = A Phi``, ``Phi(0) = I``.

    ``a_half`` holds ``A`` on a grid of spacing ``h/2`` (``2 S + 1`` points).
    """
    steps = (a_half.shape[0] - 1) // 2
    n = a_half.shape[1]
    out = np.empty((steps + 1, n, n), dtype=complex)
    phi = np.eye(n, dtype=complex)
    out[0] = phi
    for k in range(steps):
        a0, am, a1 = a_half[2 * k], a_half[2 * k + 1], a_half[2 * k + 2]
        k1 = a0 @ phi
        k2 = am @ (phi + 0.5 * h * k1)
        k3 = am @ (phi + 0.5 * h * k2)
        k4 = a1 @ (phi + h * k3)
        phi = phi + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[k + 1] = phi
    return out


def integrate(a: CoefficientTower, steps: int, span: float = 1.0) -> np.ndarray:
    """RK4 samples of the top-level fundamental solution on ``[0, span]`` (rescaled time)."""
    if steps < 1:
        raise ValidationError("steps must be positive")
    a = a.normalized()
    h = span / steps
    a_half = a.evaluate(np.linspace(0.0, span, 2 * steps + 1))
    out = _rk4(a_half, h)
    if not np.all(np.isfinite(out)):
        raise NumericError("fundamental solution became non-finite")
    return out


def solve_fundamental(a: CoefficientTower, steps: int = 2000, tol: float = 1e-8,
                      independent_levels: bool = False) -> SolutionTower:
    """Integrate ``Phi' = A Phi`` over one period with fixed-step RK4.

    The top level is integrated and lower levels are its leading blocks, so
    the result is exactly projective.  With ``independent_levels`` each level
    is also integrated on its own, for :func:`check_projective_consistency`.

    A second run with ``2 * steps`` gives the Richardson estimate
    ``|Phi_S(1) - Phi_2S(1)| * 16/15`` of the global error, taken relative to
    ``max(1, |Phi(1)|)``; above ``tol`` raises :class:`AccuracyError`.
    """
    if steps < 8:
        raise ValidationError(f"steps must be >= 8, got {steps}")
    if tol <= 0:
        raise ValidationError("tol must be positive")
    an = a.normalized()
    h = 1.0 / steps
    a_quarter = an.evaluate(np.linspace(0.0, 1.0, 4 * steps + 1))
    coarse = _rk4(a_quarter[::2], h)
    fine = _rk4(a_quarter, h / 2)
    if not (np.all(np.isfinite(coarse)) and np.all(np.isfinite(fine))):
        raise NumericError("fundamental solution became non-finite")
    diff = np.max(np.abs(coarse[-1] - fine[-1]))
    estimate = float(diff * 2**RK4_ORDER / (2**RK4_ORDER - 1) / max(1.0, np.max(np.abs(fine[-1]))))
    if estimate > tol:
        raise AccuracyError(
            f"integrator error estimate {estimate:.3e} exceeds tol {tol:.1e} at {steps} steps; "
            "increase steps"
        )
    diag = np.abs(np.diagonal(coarse, axis1=1, axis2=2))
    if np.min(diag) <= SINGULAR_THRESHOLD:
        raise NumericError("fundamental solution lost invertibility (diagonal underflow)")

    coarse = np.tril(coarse)
    coarse.setflags(write=False)
    level_samples = None
    if independent_levels:
        level_samples = tuple(
            np.tril(_rk4(a_quarter[::2, :n, :n], h)) for n in range(1, an.depth + 1)
        )
    return SolutionTower(
        grid=np.linspace(0.0, 1.0, steps + 1),
        samples=coarse,
        period=a.period,
        order=RK4_ORDER,
        error_estimate=estimate,
        level_samples=level_samples,
    )


@dataclass(frozen=True)
class ConsistencyReport:
    residual: float
    per_level: tuple
    tol: float
    passed: bool
    independent: bool


def check_projective_consistency(sol: SolutionTower, tol: float = 1e-9) -> ConsistencyReport:
    """Max over samples of ``|trunc(Phi_{n+1}) - Phi_n|`` for each level ``n``."""
    per_level = [0.0]
    for n in range(1, sol.depth):
        d = sol.level(n + 1)[:, :n, :n] - sol.level(n)
        per_level.append(float(np.max(np.abs(d))))
    residual = max(per_level)
    return ConsistencyReport(residual, tuple(per_level), tol, residual <= tol, sol.independent)


def extend_periodic(sol: SolutionTower, periods: int) -> np.ndarray:
    """Top-level samples on ``[0, periods]`` from the cocycle ``Phi(s + 1) = Phi(s) Phi(1)``."""
    if periods < 1:
        raise UsageError("periods must be >= 1")
    m = sol.samples[-1]
    chunks = [sol.samples]
    power = np.eye(sol.depth, dtype=complex)
    for _ in range(1, periods):
        power = power @ m
        chunks.append(sol.samples[1:] @ power)
    return np.concatenate(chunks)
