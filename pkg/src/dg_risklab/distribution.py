"""Finite joint distributions over (X, Y, M, D).

A :class:`FactoredDistribution` stores ``P_D``, ``P_{M|D}`` and
``P_{XY|D}``. The only way to obtain a verified :class:`JointTable` is
:func:`build_joint`, so ``(X, Y)`` is conditionally independent of ``M``
given ``D`` for every table produced here. Arbitrary tables may be wrapped
with :meth:`JointTable.from_array` for the independence checker; those are
flagged ``verified=False``.

Axis order is always ``(x, y, m, d)``. Class ``k`` is stored at index
``k - 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple

import numpy as np

from .errors import UnsupportedEventError, ValidationError

STRUCTURAL_TOL = 1e-12
AXES = ("X", "Y", "M", "D")
_FORBIDDEN_SYMBOL_CHARS = set(",:#[]=\n\r")


def _readonly(a, dtype=np.float64):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def _check_symbols(name, values):
    if len(values) == 0:
        raise ValidationError(f"support.{name} must be nonempty")
    if len(set(values)) != len(values):
        raise ValidationError(f"support.{name} contains duplicate entries")
    for v in values:
        if not v or v != v.strip() or _FORBIDDEN_SYMBOL_CHARS & set(v):
            raise ValidationError(f"support.{name}: invalid symbol {v!r}")


@dataclass(frozen=True)
class Support:
    x_values: tuple[float, ...]
    y_count: int
    m_values: tuple[str, ...]
    d_values: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "x_values", tuple(float(x) for x in self.x_values))
        object.__setattr__(self, "m_values", tuple(str(m) for m in self.m_values))
        object.__setattr__(self, "d_values", tuple(str(d) for d in self.d_values))
        if len(self.x_values) == 0:
            raise ValidationError("support.x_values must be nonempty")
        if len(set(self.x_values)) != len(self.x_values):
            raise ValidationError("support.x_values contains duplicate entries")
        if not all(math.isfinite(x) for x in self.x_values):
            raise ValidationError("support.x_values must be finite")
        if int(self.y_count) != self.y_count or self.y_count < 2:
            raise ValidationError("support.y_count must be an integer >= 2")
        object.__setattr__(self, "y_count", int(self.y_count))
        _check_symbols("m_values", self.m_values)
        _check_symbols("d_values", self.d_values)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (len(self.x_values), self.y_count, len(self.m_values), len(self.d_values))

    @property
    def x_array(self) -> np.ndarray:
        return np.asarray(self.x_values, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class FactoredDistribution:
    """``P_D``, ``P_{M|D}`` (rows indexed by d) and ``P_{XY|D}`` (shape d, x, y)."""

    support: Support
    p_d: np.ndarray
    p_m_given_d: np.ndarray
    p_xy_given_d: np.ndarray
    name: str = field(default="unnamed")

    def __post_init__(self):
        nx, k, nm, nd = self.support.shape
        p_d = _readonly(self.p_d)
        p_md = _readonly(self.p_m_given_d)
        p_xy = _readonly(self.p_xy_given_d)
        if p_d.shape != (nd,):
            raise ValidationError(f"p_d: expected shape ({nd},), got {p_d.shape}")
        if p_md.shape != (nd, nm):
            raise ValidationError(f"p_m_given_d: expected shape ({nd}, {nm}), got {p_md.shape}")
        if p_xy.shape != (nd, nx, k):
            raise ValidationError(
                f"p_xy_given_d: expected shape ({nd}, {nx}, {k}), got {p_xy.shape}"
            )
        for label, arr in (("p_d", p_d), ("p_m_given_d", p_md), ("p_xy_given_d", p_xy)):
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{label}: non-finite entry")
            bad = np.argwhere(arr < 0)
            if bad.size:
                raise ValidationError(f"{label}: negative entry at index {tuple(bad[0])}")
        if abs(p_d.sum() - 1.0) > STRUCTURAL_TOL:
            raise ValidationError(f"p_d: sums to {p_d.sum()!r}, not 1")
        for i, row in enumerate(p_md):
            if abs(row.sum() - 1.0) > STRUCTURAL_TOL:
                raise ValidationError(
                    f"p_m_given_d: row {i} (d={self.support.d_values[i]}) sums to {row.sum()!r}"
                )
        for i, table in enumerate(p_xy):
            if abs(table.sum() - 1.0) > STRUCTURAL_TOL:
                raise ValidationError(
                    f"p_xy_given_d: block {i} (d={self.support.d_values[i]}) sums to {table.sum()!r}"
                )
        object.__setattr__(self, "p_d", p_d)
        object.__setattr__(self, "p_m_given_d", p_md)
        object.__setattr__(self, "p_xy_given_d", p_xy)

    def same_as(self, other: "FactoredDistribution") -> bool:
        """Bit-identical comparison of supports and factors (name ignored)."""
        return (
            self.support == other.support
            and np.array_equal(self.p_d, other.p_d)
            and np.array_equal(self.p_m_given_d, other.p_m_given_d)
            and np.array_equal(self.p_xy_given_d, other.p_xy_given_d)
        )


@dataclass(frozen=True, eq=False)
class JointTable:
    support: Support
    p: np.ndarray
    verified: bool = True

    def __post_init__(self):
        p = _readonly(self.p)
        if p.shape != self.support.shape:
            raise ValidationError(f"joint: expected shape {self.support.shape}, got {p.shape}")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise ValidationError("joint: entries must be finite and nonnegative")
        if abs(p.sum() - 1.0) > STRUCTURAL_TOL:
            raise ValidationError(f"joint: total mass {p.sum()!r}, not 1")
        object.__setattr__(self, "p", p)

    @classmethod
    def from_array(cls, support: Support, p) -> "JointTable":
        """Wrap an arbitrary table; not guaranteed to satisfy P_{XY|D,M} = P_{XY|D}."""
        return cls(support, p, verified=False)


def build_joint(f: FactoredDistribution) -> JointTable:
    # p[x, y, m, d] = p_d[d] * p_m_given_d[d, m] * p_xy_given_d[d, x, y]
    p = (
        f.p_xy_given_d.transpose(1, 2, 0)[:, :, None, :]
        * f.p_m_given_d.T[None, None, :, :]
        * f.p_d[None, None, None, :]
    )
    return JointTable(f.support, p, verified=True)


class IndependenceCheck(NamedTuple):
    holds: bool
    max_violation: float


def check_conditional_independence(j: JointTable, tol: float = 1e-10) -> IndependenceCheck:
    """Check ``|P(x,y|m,d) - P(x,y|d)| <= tol`` on every (m, d) of positive mass."""
    p = j.p
    p_md = p.sum(axis=(0, 1))
    p_xyd = p.sum(axis=2)
    p_dd = p_xyd.sum(axis=(0, 1))
    worst = 0.0
    for m, d in zip(*np.nonzero(p_md > 0)):
        cond_md = p[:, :, m, d] / p_md[m, d]
        cond_d = p_xyd[:, :, d] / p_dd[d]
        worst = max(worst, float(np.max(np.abs(cond_md - cond_d))))
    return IndependenceCheck(worst <= tol, worst)


def _axes(keep: Iterable[str] | str) -> tuple[int, ...]:
    letters = [c.upper() for c in keep]
    if not letters:
        raise ValidationError("marginal: keep set must be nonempty")
    unknown = [c for c in letters if c not in AXES]
    if unknown:
        raise ValidationError(f"marginal: unknown axis {unknown[0]!r}; use X, Y, M, D")
    return tuple(sorted({AXES.index(c) for c in letters}))


def marginal(j: JointTable, keep: Iterable[str] | str) -> np.ndarray:
    """Probability table over the kept axes, in canonical (X, Y, M, D) order."""
    kept = _axes(keep)
    dropped = tuple(a for a in range(4) if a not in kept)
    return j.p.sum(axis=dropped) if dropped else j.p.copy()


def posterior(j: JointTable, condition: Mapping[str, int]) -> np.ndarray:
    """``P(Y = k | condition)`` for k = 1..K, conditioning on axis indices.

    ``condition`` maps any subset of ``{"X", "M", "D"}`` to an index into the
    corresponding support list, e.g. ``{"X": 0, "M": 1}``.
    """
    by_y = np.moveaxis(j.p, 1, 0)  # (y, x, m, d)
    index: list = [slice(None)] * 4
    for axis, value in condition.items():
        axis = axis.upper()
        if axis not in ("X", "M", "D"):
            raise ValidationError(f"posterior: cannot condition on axis {axis!r}")
        a = AXES.index(axis)
        if not 0 <= int(value) < j.p.shape[a]:
            raise ValidationError(f"posterior: {axis} index {value} out of range")
        index[{"X": 1, "M": 2, "D": 3}[axis]] = int(value)
    sub = by_y[tuple(index)]
    y_mass = sub.reshape(sub.shape[0], -1).sum(axis=1)
    total = y_mass.sum()
    if not total > 0:
        raise UnsupportedEventError(
            f"posterior: conditioning event {dict(condition)} has zero probability"
        )
    return y_mass / total
