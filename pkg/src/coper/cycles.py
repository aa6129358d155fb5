"""Fundamental periodic cycles and the group actions that move them.

A cycle is the length-P list of values whose infinite repetition defines a
periodic sequence.  Two cyclic groups act on these objects: a shift group
moving positions, and a modulo group incrementing values.  Their direct
product acts on (position, value) pairs componentwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


class InvalidCycle(ValueError):
    """Cycle is empty or carries values outside its base."""


class InvalidPeriod(ValueError):
    """A period, length, or modulus that must be positive is not."""


class InvalidValue(ValueError):
    """A value lies outside the modulus range it is reduced in."""


@dataclass(frozen=True)
class PeriodicCycle:
    """One fundamental cycle: integer values in [0, base)."""

    values: tuple[int, ...]
    base: int = 10

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(int(v) for v in self.values))
        if len(self.values) == 0:
            raise InvalidCycle("cycle must contain at least one value")
        if self.base < 2:
            raise InvalidCycle(f"base must be >= 2, got {self.base}")
        for v in self.values:
            if not 0 <= v < self.base:
                raise InvalidCycle(f"value {v} outside [0, {self.base})")

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class ShiftPower:
    """Integer power of the position-shift generator (negative = inverse)."""

    k: int


@dataclass(frozen=True)
class ModuloPower:
    """Integer power of the value-increment generator, modulo p."""

    j: int
    p: int

    def __post_init__(self):
        if self.p < 2:
            raise InvalidPeriod(f"modulus must be >= 2, got {self.p}")


@dataclass(frozen=True)
class CompositeAction:
    """Element of the direct product shift-group x modulo-group."""

    shift: ShiftPower
    modulo: ModuloPower


def minimal_period(cycle: PeriodicCycle) -> int:
    """Smallest d dividing len(cycle) with values[i] == values[i mod d]."""
    values = cycle.values
    n = len(values)
    for d in range(1, n + 1):
        if n % d != 0:
            continue
        if all(values[i] == values[i % d] for i in range(n)):
            return d
    return n  # unreachable: d == n always matches


def lcm(a: int, b: int) -> int:
    """Least common multiple of two positive integers."""
    if a < 1 or b < 1:
        raise InvalidPeriod(f"periods must be >= 1, got ({a}, {b})")
    return a * b // math.gcd(a, b)


def extend(cycle: PeriodicCycle, length: int) -> tuple[int, ...]:
    """Repeat the cycle out to `length` values: out[t] = values[t mod P]."""
    if length < 1:
        raise InvalidPeriod(f"length must be >= 1, got {length}")
    values = cycle.values
    n = len(values)
    reps, rem = divmod(length, n)
    return values * reps + values[:rem]


def shift_apply(seq, power: ShiftPower | int) -> tuple[int, ...]:
    """Act on a finite sequence (read cyclically) by a shift power.

    out[t] = seq[(t - k) mod len(seq)], so k = 1 moves content one step
    later; composing powers adds exponents and k = 0 is the identity.
    """
    k = power.k if isinstance(power, ShiftPower) else int(power)
    seq = tuple(seq)
    if len(seq) == 0:
        raise InvalidCycle("cannot shift an empty sequence")
    n = len(seq)
    return tuple(seq[(t - k) % n] for t in range(n))


def composite_act(action: CompositeAction, position: int, value: int) -> tuple[int, int]:
    """Apply a direct-product element to a (position, value) pair.

    Shift power i moves the position index to position - i; modulo power j
    increments the value by j modulo p.  Acting twice composes additively
    in both exponents.
    """
    p = action.modulo.p
    if not 0 <= value < p:
        raise InvalidValue(f"value {value} outside [0, {p})")
    return position - action.shift.k, (value + action.modulo.j) % p
