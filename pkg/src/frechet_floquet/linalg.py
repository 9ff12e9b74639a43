"""Matrix exponential, the divided-difference series and the tower logarithm.

The logarithm is built level by level.  Given ``B_n`` with
``exp(B_n) = M_n`` and the next block ``M_{n+1} = [[M_n, 0], [mu_n, lam]]``,
choose ``c = log lam`` and set ``B_{n+1} = [[B_n, 0], [y_n, c]]``.  The lower
left block of ``exp(B_{n+1})`` is ``y_n @ S`` with

    S = sum_{k>=1} 1/k! sum_{j=1}^{k} B_n^{k-j} c^{j-1},

i.e. ``(e^z - e^c)/(z - c)`` evaluated at ``B_n``, so ``y_n`` solves the
triangular system ``y_n @ S = mu_n``.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import ConditioningError, LevelRangeError, NumericError, ShapeError, ValidationError, VerificationError
from .tower import SINGULAR_THRESHOLD, InvertibleNestedMatrix, NestedMatrix, per_level_max

EPS = np.finfo(float).eps
#: Divided differences closer than this are validated with a Taylor form.
NEAR_EQUAL = 1e-3
#: Largest number of squarings ``matrix_exp`` will perform.
MAX_SQUARINGS = 64


def norm(a) -> float:
    """Max-row-sum norm."""
    a = np.asarray(a)
    if a.size == 0:
        return 0.0
    return float(np.max(np.sum(np.abs(a), axis=1)))


def _norms(a: np.ndarray) -> np.ndarray:
    """Max-row-sum norm of each matrix in a stack."""
    return np.max(np.sum(np.abs(a), axis=-1), axis=-1)


def _is_lower(a) -> bool:
    return not np.any(np.triu(a, 1))


def matrix_exp(b, tol: float = 1e-15) -> np.ndarray:
    """Scaling and squaring around a truncated Taylor series.

    ``b`` is scaled by ``2**-s`` so its norm is at most 1/2, the series is
    summed until a term drops below ``tol * 2**-s`` relative to the partial
    sum, and the result is squared ``s`` times.  Lower-triangular input gives
    an exactly lower-triangular result.

    ``b`` may also be a stack of shape ``(k, n, n)``; each matrix gets its
    own scaling.
    """
    b = np.asarray(b, dtype=complex)
    if b.ndim not in (2, 3) or b.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matrix_exp needs a square matrix, got shape {b.shape}")
    if tol <= 0:
        raise ValidationError("tol must be positive")
    if not np.all(np.isfinite(b)):
        raise NumericError("matrix_exp input has non-finite entries")
    single = b.ndim == 2
    stack = b[None] if single else b
    lower = _is_lower(stack)
    nb = _norms(stack)
    with np.errstate(divide="ignore"):
        s = np.where(nb <= 0.5, 0, np.ceil(np.log2(np.maximum(nb, 1e-300) / 0.5))).astype(int)
    if s.max(initial=0) > MAX_SQUARINGS:
        raise NumericError(f"matrix_exp: norm {nb.max():.3e} needs {s.max()} squarings (limit {MAX_SQUARINGS})")

    out = np.empty_like(stack)
    for sq in np.unique(s):
        idx = np.nonzero(s == sq)[0]
        out[idx] = _exp_scaled(stack[idx], int(sq), tol)
    if not np.all(np.isfinite(out)):
        raise NumericError("matrix_exp overflowed")
    if lower:
        out = np.tril(out)
    return out[0] if single else out


def _exp_scaled(b: np.ndarray, s: int, tol: float) -> np.ndarray:
    x = b / 2.0**s
    stop = max(tol * 2.0**-s, EPS / 4)
    n = b.shape[-1]
    result = np.broadcast_to(np.eye(n, dtype=complex), b.shape).copy()
    term = result.copy()
    for k in range(1, 60):
        term = term @ x / k
        result = result + term
        if np.all(_norms(term) <= stop * _norms(result)):
            break
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(s):
            result = result @ result
    return result


def exp_tower(bbar: NestedMatrix, tol: float = 1e-15) -> InvertibleNestedMatrix:
    """Levelwise exponential of a nested matrix.

    The top level is exponentiated once; lower levels are its leading blocks,
    which is what ``exp`` of the truncation gives in exact arithmetic.
    """
    return InvertibleNestedMatrix(matrix_exp(bbar.matrix, tol))


@dataclass(frozen=True)
class LogBranch:
    """Which logarithm of each diagonal entry to use.

    ``log lam_k = Log lam_k + 2 pi i m_k`` with ``Log`` the principal branch
    (imaginary part in ``(-pi, pi]``) and ``m_k`` taken from ``windings``
    (default 0).  Levels are 1-based.
    """

    windings: tuple = field(default_factory=tuple)

    def __post_init__(self):
        w = dict(self.windings) if not isinstance(self.windings, dict) else self.windings
        for level, m in w.items():
            if int(level) != level or level < 1:
                raise LevelRangeError(f"winding override at invalid level {level!r}")
            if int(m) != m:
                raise ValidationError(f"winding at level {level} must be an integer, got {m!r}")
        object.__setattr__(self, "windings", tuple(sorted((int(k), int(m)) for k, m in w.items())))

    @classmethod
    def principal(cls):
        return cls()

    def winding(self, level: int) -> int:
        return dict(self.windings).get(level, 0)

    def log(self, lam: complex, level: int) -> complex:
        return principal_log(lam) + 2j * math.pi * self.winding(level)

    def check_depth(self, depth: int):
        for level, _ in self.windings:
            if level > depth:
                raise LevelRangeError(f"winding override at level {level} exceeds depth {depth}")


def principal_log(z: complex) -> complex:
    """Principal logarithm with imaginary part in ``(-pi, pi]``."""
    z = complex(z)
    w = cmath.log(z)
    # cmath gives -pi for z on the negative real axis with imag == -0.0
    if w.imag == -math.pi:
        w = complex(w.real, math.pi)
    return w


def divided_difference_exp(b: complex, c: complex) -> complex:
    """``(e^b - e^c)/(b - c)``, and ``e^c`` when ``b == c``."""
    if b == c:
        return cmath.exp(c)
    return (cmath.exp(b) - cmath.exp(c)) / (b - c)


def divided_difference_taylor(b: complex, c: complex) -> complex:
    d = b - c
    return cmath.exp(c) * (1 + d / 2 + d * d / 6)


@dataclass(frozen=True, eq=False)
class PhiMatrix:
    S: np.ndarray
    center: complex
    source: np.ndarray
    terms: int

    @property
    def gammas(self) -> np.ndarray:
        return np.diag(self.S).copy()


def phi_series(b, c: complex, tol: float = 1e-13, max_terms: int = 1000) -> PhiMatrix:
    """Sum ``S = sum_{k>=1} 1/k! sum_{j=1}^k B^{k-j} c^{j-1}`` for triangular ``B``.

    With ``U_k`` the ``k``-th term, ``U_1 = I`` and
    ``U_{k+1} = (B U_k + c^k/k! I)/(k+1)``.  Summation stops once both the last
    term and an a-priori bound on the remaining tail are at most ``tol``
    times the partial sum.
    The diagonal is then checked against the closed forms.
    """
    b = np.asarray(b, dtype=complex)
    if b.ndim != 2 or b.shape[0] != b.shape[1]:
        raise ShapeError(f"phi_series needs a square matrix, got shape {b.shape}")
    if not _is_lower(b):
        raise ValidationError("phi_series needs a lower-triangular matrix")
    if tol <= 0:
        raise ValidationError("tol must be positive")
    c = complex(c)
    n = b.shape[0]
    eye = np.eye(n, dtype=complex)
    # a-priori bound on term k+1: sum_j |B|^(k-j) |c|^(j-1) / (k+1)! <= r^k / k!
    # with r = max(|B|, |c|); individual terms can cancel to zero early
    r = max(norm(b), abs(c))

    term = eye.copy()
    total = eye.copy()
    c_pow = 1.0 + 0j  # c^k / k!
    bound = 1.0  # r^k / k!
    converged = False
    for k in range(1, max_terms):
        c_pow = c_pow * c / k
        term = (b @ term + c_pow * eye) / (k + 1)
        total = total + term
        if not np.all(np.isfinite(total)):
            raise NumericError("phi_series overflowed")
        bound = bound * r / k
        if k + 1 > 2 * r:
            # geometric tail with ratio <= r/(k+2) <= 1/2
            tail = 2 * bound * r / (k + 1)
            if norm(term) <= tol * norm(total) and tail <= tol * norm(total):
                converged = True
                break
    if not converged:
        raise NumericError(f"phi_series did not converge in {max_terms} terms")
    total = np.tril(total)

    for i, bi in enumerate(np.diag(b)):
        got = total[i, i]
        d = abs(bi - c)
        # roundoff in the summed series: sum of |terms| <= e^max(|b|,|c|)
        allow = 16 * EPS * math.exp(max(abs(bi), abs(c)))
        if d < NEAR_EQUAL:
            want = divided_difference_taylor(bi, c)
            # the three-term Taylor form is only good to ~|e^c| |d|^3/24
            allow += abs(cmath.exp(c)) * d**3 / 24 * math.exp(d)
        else:
            want = divided_difference_exp(bi, c)
            # cancellation in e^b - e^c
            allow += 4 * EPS * (abs(cmath.exp(bi)) + abs(cmath.exp(c))) / d
        allow += 10 * tol * abs(want)
        if abs(got - want) > allow:
            raise NumericError(
                f"phi_series diagonal {i + 1}: series {got} disagrees with closed form {want}"
            )
    return PhiMatrix(S=total, center=c, source=b.copy(), terms=k + 1)


@dataclass(frozen=True, eq=False)
class LogStep:
    """Diagnostics from one inductive step of :func:`compatible_log`."""

    level: int
    log_lambda: complex
    gammas: np.ndarray
    y: np.ndarray


@dataclass(frozen=True, eq=False)
class TowerLog:
    bbar: NestedMatrix
    logs: np.ndarray
    steps: tuple
    residuals: np.ndarray  # per-level max-entry |exp(B_n) - M_n|


def compatible_log_detailed(m: InvertibleNestedMatrix, branch: LogBranch | None = None,
                            tol: float = 1e-8, series_tol: float = 1e-13) -> TowerLog:
    """:func:`compatible_log` plus the per-step data (gammas, y_n, residuals)."""
    if not isinstance(m, InvertibleNestedMatrix):
        m = InvertibleNestedMatrix(m.matrix if isinstance(m, NestedMatrix) else m)
    branch = branch or LogBranch()
    branch.check_depth(m.depth)
    n_top = m.depth
    lam = m.diagonal
    logs = np.array([branch.log(lam[k], k + 1) for k in range(n_top)], dtype=complex)

    out = np.zeros((n_top, n_top), dtype=complex)
    out[0, 0] = logs[0]
    steps = []
    for n in range(1, n_top):
        _, mu, _ = m.block(n)
        c = logs[n]
        phi = phi_series(out[:n, :n], c, tol=series_tol)
        gammas = phi.gammas
        if np.any(np.abs(gammas) < SINGULAR_THRESHOLD):
            i = int(np.argmin(np.abs(gammas)))
            raise ConditioningError(
                f"level {n + 1}: |gamma_{i + 1}| = {abs(gammas[i]):.3e} below threshold"
            )
        # y S = mu  <=>  S^T y^T = mu^T with S^T upper triangular
        y = solve_triangular(phi.S.T, mu, lower=False)
        if not np.all(np.isfinite(y)):
            raise ConditioningError(f"level {n + 1}: triangular solve produced non-finite values")
        out[n, :n] = y
        out[n, n] = c
        steps.append(LogStep(level=n + 1, log_lambda=c, gammas=gammas, y=y))

    bbar = NestedMatrix(out)
    back = matrix_exp(bbar.matrix)
    residuals = per_level_max(back - m.matrix)
    scale = per_level_max(m.matrix)
    rel = residuals / np.maximum(1.0, scale)
    if np.max(rel) > tol:
        k = int(np.argmax(rel > tol)) + 1
        raise VerificationError(
            f"exp(log M) differs from M by {residuals[k - 1]:.3e} at level {k} (tol {tol:.1e})"
        )
    return TowerLog(bbar=bbar, logs=logs, steps=tuple(steps), residuals=residuals)


def compatible_log(m: InvertibleNestedMatrix, branch: LogBranch | None = None,
                   tol: float = 1e-8) -> NestedMatrix:
    """A nested ``Bbar`` with ``exp_tower(Bbar) == m``, built level by level.

    The diagonal of ``Bbar`` is ``branch.log`` of the diagonal of ``m``; the
    off-diagonal rows come from the triangular solves described in the
    module docstring.  Raises :class:`ConditioningError` if a series matrix
    is numerically singular and :class:`VerificationError` if the round trip
    misses ``m`` by more than ``tol`` (relative to ``max(1, |M_n|)``).
    """
    return compatible_log_detailed(m, branch, tol).bbar
