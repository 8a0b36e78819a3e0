"""Dense discrete factor tables.

A table lives over a scope of integer variable ids kept in ascending order,
so two tables over the same variables always share a layout (row-major,
last variable fastest). The represented function is
``values * exp(log_scale)``; the scale soaks up magnitudes that would
under- or overflow a double when many CPDs are multiplied together.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import CapacityError, ContractError, NumericalError

MAX_ENTRIES = 2 ** 31
# rescale when the largest entry leaves this window
_LOW, _HIGH = 1e-150, 1e150


@dataclass(frozen=True)
class Variable:
    id: int
    card: int

    def __post_init__(self):
        if self.card < 1:
            raise ContractError(f"variable {self.id}: cardinality must be >= 1")


def clique_size(cards: Iterable[int]) -> float:
    """Effective number of binary variables: sum of log2 cardinalities."""
    return float(sum(math.log2(c) for c in cards))


def _check_capacity(cards):
    n = 1
    for c in cards:
        n *= int(c)
    if n > MAX_ENTRIES:
        raise CapacityError(f"table with {n} entries exceeds limit of {MAX_ENTRIES}")
    return n


class FactorTable:
    """Immutable nonnegative table over a sorted scope."""

    __slots__ = ("scope", "cards", "values", "log_scale")

    def __init__(self, scope: Sequence[int], cards: Sequence[int], values, log_scale: float = 0.0,
                 check: bool = True):
        scope = tuple(int(v) for v in scope)
        cards = tuple(int(c) for c in cards)
        values = np.asarray(values, dtype=float)
        if check:
            if len(scope) != len(cards):
                raise ContractError("scope and cards differ in length")
            if any(scope[i] >= scope[i + 1] for i in range(len(scope) - 1)):
                raise ContractError(f"scope must be strictly increasing, got {scope}")
            _check_capacity(cards)
            if values.size != int(np.prod(cards, dtype=np.int64)):
                raise ContractError(
                    f"values length {values.size} != product of cardinalities {cards}")
            if values.size and (not np.all(np.isfinite(values)) or values.min() < 0):
                raise ContractError("values must be finite and nonnegative")
        self.scope = scope
        self.cards = cards
        self.values = values.reshape(cards)
        self.values.flags.writeable = False
        self.log_scale = float(log_scale)

    # construction helpers
    @classmethod
    def from_ordered(cls, scope: Sequence[int], cards: Sequence[int], values) -> "FactorTable":
        """Build from a table laid out in an arbitrary scope order."""
        scope = list(scope)
        if len(set(scope)) != len(scope):
            raise ContractError(f"duplicate variable in scope {scope}")
        arr = np.asarray(values, dtype=float).reshape(tuple(cards))
        perm = sorted(range(len(scope)), key=lambda i: scope[i])
        arr = np.transpose(arr, perm)
        return cls([scope[i] for i in perm], [cards[i] for i in perm], np.ascontiguousarray(arr))

    @classmethod
    def ones(cls, scope: Sequence[int], cards: Sequence[int]) -> "FactorTable":
        _check_capacity(cards)
        return cls(scope, cards, np.ones(tuple(cards)))

    @classmethod
    def scalar(cls, value: float = 1.0, log_scale: float = 0.0) -> "FactorTable":
        return cls((), (), np.asarray(value, dtype=float), log_scale)

    @classmethod
    def indicator(cls, var: int, card: int, state: int) -> "FactorTable":
        v = np.zeros(card)
        v[state] = 1.0
        return cls((var,), (card,), v)

    # basic properties
    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    @property
    def size(self) -> float:
        return clique_size(self.cards)

    def card_map(self) -> dict:
        return dict(zip(self.scope, self.cards))

    def axis(self, var: int) -> int:
        try:
            return self.scope.index(var)
        except ValueError:
            raise ContractError(f"variable {var} not in scope {self.scope}") from None

    def dense(self) -> np.ndarray:
        """Values with the scale applied (may under/overflow for big scales)."""
        return self.values * math.exp(self.log_scale)

    def log_total(self) -> float:
        s = float(self.values.sum())
        if s <= 0.0:
            return -math.inf
        return math.log(s) + self.log_scale

    def total(self) -> float:
        return math.exp(self.log_total())

    def normalized(self) -> tuple["FactorTable", float]:
        """Return (table summing to 1 with zero scale, natural-log total)."""
        s = float(self.values.sum())
        if s <= 0.0:
            return FactorTable(self.scope, self.cards, self.values, 0.0, check=False), -math.inf
        return (FactorTable(self.scope, self.cards, self.values / s, 0.0, check=False),
                math.log(s) + self.log_scale)

    def rescaled(self) -> "FactorTable":
        """Same function with the largest stored entry moved to 1."""
        m = float(self.values.max()) if self.values.size else 0.0
        if m <= 0.0 or m == 1.0:
            return self
        return FactorTable(self.scope, self.cards, self.values / m, self.log_scale + math.log(m),
                           check=False)

    def with_scale(self, log_scale: float) -> "FactorTable":
        return FactorTable(self.scope, self.cards, self.values, log_scale, check=False)

    def expand_to(self, scope: Sequence[int]) -> np.ndarray:
        """Stored values reshaped for broadcasting against a sorted superset scope."""
        mine = set(self.scope)
        if not mine.issubset(scope):
            raise ContractError(f"scope {self.scope} not contained in {tuple(scope)}")
        cm = self.card_map()
        return self.values.reshape([cm[v] if v in mine else 1 for v in scope])

    def allclose(self, other: "FactorTable", rtol=1e-12, atol=0.0) -> bool:
        if self.scope != other.scope:
            return False
        return bool(np.allclose(self.dense(), other.dense(), rtol=rtol, atol=atol))

    def __repr__(self):
        return f"FactorTable(scope={self.scope}, cards={self.cards}, log_scale={self.log_scale:.4g})"


def _auto_rescale(values: np.ndarray, log_scale: float):
    if values.size:
        m = float(values.max())
        if m > 0.0 and (m < _LOW or m > _HIGH):
            return values / m, log_scale + math.log(m)
    return values, log_scale


def _merge_cards(a: FactorTable, b: FactorTable):
    cm = a.card_map()
    for v, c in zip(b.scope, b.cards):
        if cm.setdefault(v, c) != c:
            raise ContractError(f"variable {v} has cardinality {cm[v]} and {c}")
    scope = tuple(sorted(cm))
    return scope, tuple(cm[v] for v in scope)


def product(a: FactorTable, b: FactorTable) -> FactorTable:
    scope, cards = _merge_cards(a, b)
    _check_capacity(cards)
    vals = a.expand_to(scope) * b.expand_to(scope)
    vals = np.broadcast_to(vals, cards) if vals.shape != cards else vals
    vals, ls = _auto_rescale(np.ascontiguousarray(vals), a.log_scale + b.log_scale)
    return FactorTable(scope, cards, vals, ls, check=False)


def product_all(tables: Iterable[FactorTable], scope=None, cards=None) -> FactorTable:
    """Product of many tables; optionally seeded with an all-ones table over scope."""
    out = FactorTable.ones(scope, cards) if scope is not None else FactorTable.scalar()
    for t in tables:
        out = product(out, t)
    return out


def marginalize(f: FactorTable, keep: Iterable[int]) -> FactorTable:
    keep = set(keep)
    if not keep.issubset(f.scope):
        raise ContractError(f"keep set {sorted(keep)} not a subset of scope {f.scope}")
    axes = tuple(i for i, v in enumerate(f.scope) if v not in keep)
    if not axes:
        return f
    vals = f.values.sum(axis=axes)
    scope = tuple(v for v in f.scope if v in keep)
    cards = tuple(c for v, c in zip(f.scope, f.cards) if v in keep)
    vals, ls = _auto_rescale(np.asarray(vals, dtype=float), f.log_scale)
    return FactorTable(scope, cards, vals, ls, check=False)


def sum_out(f: FactorTable, drop: Iterable[int]) -> FactorTable:
    drop = set(drop)
    return marginalize(f, [v for v in f.scope if v not in drop])


def divide(num: FactorTable, den: FactorTable, clamp: float | None = None) -> FactorTable:
    """Pointwise num/den with 0/0 -> 0.

    ``clamp`` floors the stored denominator entries instead of raising on x/0.
    """
    if not set(den.scope).issubset(num.scope):
        raise ContractError(f"denominator scope {den.scope} not within {num.scope}")
    d = den.expand_to(num.scope)
    n = num.values
    if clamp is not None:
        d = np.maximum(d, clamp)
        out = n / d
    else:
        zero = d == 0.0
        if np.any(zero):
            if np.any((n > 0.0) & zero):
                raise NumericalError("division of a positive entry by zero")
            out = np.divide(n, np.where(zero, 1.0, d))
            out = np.where(np.broadcast_to(zero, out.shape), 0.0, out)
        else:
            out = n / d
    out, ls = _auto_rescale(np.ascontiguousarray(out), num.log_scale - den.log_scale)
    return FactorTable(num.scope, num.cards, out, ls, check=False)


def reduce_evidence(f: FactorTable, var: int, state: int) -> FactorTable:
    """Slice at an observed state and drop the variable (un-normalized)."""
    ax = f.axis(var)
    if not 0 <= state < f.cards[ax]:
        raise ContractError(f"state {state} out of range for variable {var}")
    vals = np.take(f.values, state, axis=ax)
    scope = f.scope[:ax] + f.scope[ax + 1:]
    cards = f.cards[:ax] + f.cards[ax + 1:]
    return FactorTable(scope, cards, np.ascontiguousarray(vals), f.log_scale, check=False)


def reduce_many(f: FactorTable, assignment: Mapping[int, int]) -> FactorTable:
    for v, s in assignment.items():
        if v in f.scope:
            f = reduce_evidence(f, v, s)
    return f


def restrict(f: FactorTable, var: int, state: int) -> FactorTable:
    """Zero every entry where ``var`` differs from ``state`` (scope kept)."""
    ax = f.axis(var)
    mask = np.zeros(f.cards[ax])
    mask[state] = 1.0
    shape = [1] * len(f.scope)
    shape[ax] = f.cards[ax]
    return FactorTable(f.scope, f.cards, f.values * mask.reshape(shape), f.log_scale, check=False)


def marginal_vector(f: FactorTable, var: int) -> np.ndarray:
    """Normalized singleton marginal of one variable in the table."""
    m = marginalize(f, [var]).values
    s = m.sum()
    if s <= 0:
        return np.full(m.shape, 1.0 / m.size)
    return m / s
