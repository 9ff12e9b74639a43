"""Finite truncations of the projective tower C^1 <- C^2 <- ... <- C^N.

Level ``n`` of the tower is C^n and the connecting map from level ``j`` to
level ``i <= j`` drops coordinates ``i+1..j``.  A family of linear maps that
commutes with every connecting map is a lower-triangular matrix whose
leading ``n x n`` blocks are the levelwise maps; :class:`NestedMatrix`
stores such a family as the single top-level matrix.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import ConditioningError, LevelRangeError, ShapeError, ValidationError

#: Diagonal moduli below this are treated as zero.
SINGULAR_THRESHOLD = 1e-12
#: Default absolute tolerance for entries that must vanish structurally.
PATTERN_TOL = 1e-12


def _as_square(f, name="matrix") -> np.ndarray:
    f = np.asarray(f, dtype=complex)
    if f.ndim != 2 or f.shape[0] != f.shape[1]:
        raise ShapeError(f"{name} must be square, got shape {f.shape}")
    return f


@dataclass(frozen=True)
class Tower:
    """The spaces C^1, ..., C^depth with coordinate-truncation projections."""

    depth: int

    def __post_init__(self):
        if int(self.depth) != self.depth or self.depth < 1:
            raise ValidationError(f"depth must be a positive integer, got {self.depth!r}")

    def dimension(self, level: int) -> int:
        self._check_level(level)
        return level

    def project(self, x, source: int, target: int) -> np.ndarray:
        """Connecting map from level ``source`` down to level ``target``."""
        self._check_level(source)
        self._check_level(target)
        if target > source:
            raise LevelRangeError(f"cannot project level {source} up to level {target}")
        x = np.asarray(x)
        if x.shape[0] != source:
            raise ShapeError(f"vector of length {x.shape[0]} does not live at level {source}")
        return x[:target].copy()

    def _check_level(self, level):
        if not 1 <= level <= self.depth:
            raise LevelRangeError(f"level {level} outside 1..{self.depth}")


def seminorm(x, i: int) -> float:
    """Max-modulus seminorm ``p_i(x) = max_{k <= i} |x_k|``."""
    x = np.asarray(x)
    if x.ndim != 1:
        raise ShapeError("seminorm expects a vector")
    if not 1 <= i <= x.shape[0]:
        raise LevelRangeError(f"seminorm index {i} outside 1..{x.shape[0]}")
    return float(np.max(np.abs(x[:i])))


def upper_pattern_violation(f) -> float:
    """Largest modulus among the strictly upper-triangular entries."""
    f = _as_square(f)
    upper = np.triu(f, k=1)
    return float(np.max(np.abs(upper))) if f.shape[0] > 1 else 0.0


def is_projective_map(f, tol: float = PATTERN_TOL) -> bool:
    """True when ``f`` commutes with every truncation, up to ``tol``.

    ``rho_i o f = f_i o rho_i`` for all ``i`` forces ``f[:i, i:] = 0``; taken
    over all ``i`` that is exactly the strictly upper triangle.
    """
    if tol <= 0:
        raise ValidationError("tol must be positive")
    return upper_pattern_violation(f) <= tol


def level_bounds(f) -> np.ndarray:
    """Constants ``M_i`` with ``p_i(f u) <= M_i p_i(u)`` for a projective ``f``.

    ``M_i`` is the max row sum of moduli of the leading ``i x i`` block.
    """
    f = _as_square(f)
    a = np.abs(np.tril(f))
    rows = np.cumsum(a, axis=1)  # rows[r, c] = sum_{k <= c} |f[r, k]|
    n = f.shape[0]
    # for a lower-triangular block, the row sums of the leading block i use columns < i
    per_row = np.array([rows[r, r] for r in range(n)])
    return np.maximum.accumulate(per_row)


def per_level_max(d) -> np.ndarray:
    """Max entry modulus of every leading block of ``d`` (or of a stack of them).

    Entry ``n-1`` of the result is the max over the level-``n`` block.
    """
    a = np.abs(np.asarray(d))
    if a.ndim == 3:
        a = a.max(axis=0)
    n = a.shape[0]
    # the level-n block adds row n-1 and column n-1 to the level-(n-1) block
    frontier = np.array([max(a[k, : k + 1].max(), a[: k + 1, k].max()) for k in range(n)])
    return np.maximum.accumulate(frontier)


@dataclass(frozen=True, eq=False)
class NestedMatrix:
    """A projective system of linear maps ``M_1, ..., M_N`` on the tower.

    The system is stored as its top level ``M_N``; ``M_n`` is the leading
    ``n x n`` block.  Construction checks that the strictly upper triangle is
    within ``tol`` of zero and then zeroes it, so the nesting holds exactly.
    """

    matrix: np.ndarray

    def __init__(self, matrix, tol: float = PATTERN_TOL):
        m = _as_square(matrix, "nested matrix")
        if m.shape[0] < 1:
            raise ShapeError("nested matrix needs depth >= 1")
        violation = upper_pattern_violation(m)
        if violation > tol:
            r, c = np.unravel_index(np.argmax(np.abs(np.triu(m, 1))), m.shape)
            raise ValidationError(
                f"entry ({r + 1},{c + 1}) = {m[r, c]} breaks the nested pattern "
                f"(|.| = {violation:.3e} > {tol:.1e})"
            )
        m = np.tril(m)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        self._validate()

    def _validate(self):
        pass

    @classmethod
    def identity(cls, depth: int):
        return cls(np.eye(depth, dtype=complex))

    @classmethod
    def zeros(cls, depth: int):
        return cls(np.zeros((depth, depth), dtype=complex))

    @property
    def depth(self) -> int:
        return self.matrix.shape[0]

    @property
    def diagonal(self) -> np.ndarray:
        return np.diag(self.matrix).copy()

    def level(self, n: int) -> np.ndarray:
        """The level-``n`` map ``M_n`` as an ``n x n`` array (read-only view)."""
        if not 1 <= n <= self.depth:
            raise LevelRangeError(f"level {n} outside 1..{self.depth}")
        return self.matrix[:n, :n]

    def levels(self) -> Iterator[np.ndarray]:
        for n in range(1, self.depth + 1):
            yield self.level(n)

    def block(self, n: int):
        """Split ``M_{n+1}`` into ``(M_n, mu_n, lambda_{n+1})``."""
        m = self.level(n + 1)
        return m[:n, :n], m[n, :n].copy(), complex(m[n, n])

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=complex)
        if x.shape[0] != self.depth:
            raise ShapeError(f"vector of length {x.shape[0]} at depth {self.depth}")
        return self.matrix @ x

    def __eq__(self, other):
        if not isinstance(other, NestedMatrix):
            return NotImplemented
        return self.depth == other.depth and np.array_equal(self.matrix, other.matrix)

    __hash__ = None

    def __repr__(self):
        return f"{type(self).__name__}(depth={self.depth})"


class InvertibleNestedMatrix(NestedMatrix):
    """A nested matrix whose every level is invertible."""

    def _validate(self):
        small = np.abs(self.diagonal) <= SINGULAR_THRESHOLD
        if small.any():
            k = int(np.argmax(small)) + 1
            raise ConditioningError(
                f"diagonal entry {k} has modulus {abs(self.diagonal[k - 1]):.3e}; "
                "level is not invertible"
            )

    def inverse(self) -> "InvertibleNestedMatrix":
        return InvertibleNestedMatrix(lower_inverse(self.matrix))


def truncate(m: NestedMatrix, to_level: int) -> NestedMatrix:
    """Leading principal sub-tower of depth ``to_level``."""
    if not 1 <= to_level <= m.depth:
        raise LevelRangeError(f"cannot truncate depth {m.depth} tower to level {to_level}")
    if to_level == m.depth:
        return m
    return type(m)(m.matrix[:to_level, :to_level])


def lower_inverse(stack) -> np.ndarray:
    """Inverse of each lower-triangular matrix in ``stack`` by forward substitution.

    Works on a single matrix or a stack of shape ``(..., n, n)``; the result
    has exact zeros above the diagonal.
    """
    a = np.asarray(stack, dtype=complex)
    diag = np.abs(np.diagonal(a, axis1=-2, axis2=-1))
    if np.any(diag <= SINGULAR_THRESHOLD):
        raise ConditioningError(f"lower-triangular inverse: diagonal modulus {diag.min():.3e}")
    n = a.shape[-1]
    x = np.zeros_like(a)
    for i in range(n):
        rhs = np.zeros(a.shape[:-2] + (n,), dtype=complex)
        rhs[..., i] = 1.0
        if i:
            rhs = rhs - np.einsum("...k,...kj->...j", a[..., i, :i], x[..., :i, :])
        x[..., i, :] = rhs / a[..., i, i][..., None]
    return x
