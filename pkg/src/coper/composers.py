"""Generators for every periodic task family in the benchmark.

Two-input composers combine a pair of cycles position-wise (modular
addition, alternating add/subtract, circular convolution); single-input
generators produce continuation prompts, geometrically scaled sequences,
and fixed-width sine pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .cycles import InvalidPeriod, InvalidValue, PeriodicCycle, lcm


class InvalidSpec(ValueError):
    """Task parameters that cannot produce a well-formed sample."""


class FormatOverflow(ValueError):
    """A real value does not fit the fixed-width decimal format."""


class ComposeRule(str, Enum):
    MOD_ADD = "mod_add"
    ADD_SUB_ALT = "add_sub_alt"
    CIRC_CONV = "circ_conv"
    SCALED_SINGLE = "scaled_single"
    SINGLE_PERIOD = "single_period"
    SINE = "sine"


TWO_CYCLE_RULES = frozenset({ComposeRule.MOD_ADD, ComposeRule.ADD_SUB_ALT, ComposeRule.CIRC_CONV})
SINGLE_CYCLE_RULES = frozenset({ComposeRule.SCALED_SINGLE, ComposeRule.SINGLE_PERIOD})


@dataclass(frozen=True)
class AnswerLenPolicy:
    """How long a composed answer is: the full combined period, or capped."""

    max_len: int | None = None  # None = always the full lcm

    @classmethod
    def full_lcm(cls) -> "AnswerLenPolicy":
        return cls(None)

    @classmethod
    def capped(cls, max_len: int) -> "AnswerLenPolicy":
        if max_len < 1:
            raise InvalidSpec(f"answer cap must be >= 1, got {max_len}")
        return cls(max_len)

    def answer_len(self, full_len: int) -> int:
        return full_len if self.max_len is None else min(full_len, self.max_len)

    @property
    def kind(self) -> str:
        return "full_lcm" if self.max_len is None else "capped"


@dataclass(frozen=True)
class ComposeSpec:
    """A composite rule plus the periods and modulus it runs with."""

    rule: ComposeRule
    p1: int
    p2: int = 1  # ignored by single-sequence rules
    modulus: int = 10
    answer_len_policy: AnswerLenPolicy = AnswerLenPolicy(None)

    def __post_init__(self):
        if self.p1 < 1 or self.p2 < 1:
            raise InvalidPeriod(f"periods must be >= 1, got ({self.p1}, {self.p2})")
        if self.modulus < 2:
            raise InvalidPeriod(f"modulus must be >= 2, got {self.modulus}")
        cap = self.answer_len_policy.max_len
        if cap is not None and (cap < self.p1 or cap < self.p2):
            raise InvalidSpec(f"answer cap {cap} shorter than a period ({self.p1}, {self.p2})")


def _check_values(cycle: PeriodicCycle, modulus: int) -> None:
    if any(v >= modulus for v in cycle.values):
        raise InvalidValue(f"cycle values must be < modulus {modulus}: {cycle.values}")


def _extended(cycle: PeriodicCycle, length: int) -> np.ndarray:
    return np.resize(np.asarray(cycle.values, dtype=np.int64), length)


def compose_modadd(c1: PeriodicCycle, c2: PeriodicCycle, modulus: int, out_len: int) -> tuple[int, ...]:
    """out[t] = (c1[t mod P1] + c2[t mod P2]) mod modulus."""
    if modulus < 2:
        raise InvalidPeriod(f"modulus must be >= 2, got {modulus}")
    if out_len < 1:
        raise InvalidPeriod(f"output length must be >= 1, got {out_len}")
    _check_values(c1, modulus)
    _check_values(c2, modulus)
    out = (_extended(c1, out_len) + _extended(c2, out_len)) % modulus
    return tuple(int(v) for v in out)


def compose_addsub(c1: PeriodicCycle, c2: PeriodicCycle, modulus: int, out_len: int) -> tuple[int, ...]:
    """out[t] = (c1[t mod P1] + (-1)^t * c2[t mod P2]) mod modulus.

    The mod is the mathematical one, mapping into [0, modulus).
    """
    if modulus < 2:
        raise InvalidPeriod(f"modulus must be >= 2, got {modulus}")
    if out_len < 1:
        raise InvalidPeriod(f"output length must be >= 1, got {out_len}")
    _check_values(c1, modulus)
    _check_values(c2, modulus)
    signs = np.where(np.arange(out_len) % 2 == 0, 1, -1)
    out = (_extended(c1, out_len) + signs * _extended(c2, out_len)) % modulus
    return tuple(int(v) for v in out)


def compose_circconv_raw(c1: PeriodicCycle, c2: PeriodicCycle) -> tuple[int, ...]:
    """Circular convolution over N = lcm(P1, P2), without value reduction.

    raw[t] = sum_{n=0}^{N-1} c1[n mod P1] * c2[(t - n) mod P2].
    """
    n_total = lcm(len(c1), len(c2))
    f1 = _extended(c1, n_total)
    f2 = _extended(c2, n_total)
    t = np.arange(n_total)
    idx = (t[:, None] - t[None, :]) % n_total  # idx[t, n] = (t - n) mod N
    raw = (f2[idx] * f1[None, :]).sum(axis=1)
    return tuple(int(v) for v in raw)


def compose_circconv(c1: PeriodicCycle, c2: PeriodicCycle, modulus: int) -> tuple[int, ...]:
    """Circular convolution reduced into [0, modulus) so it fits the digit vocabulary."""
    if modulus < 2:
        raise InvalidPeriod(f"modulus must be >= 2, got {modulus}")
    return tuple(v % modulus for v in compose_circconv_raw(c1, c2))


def gen_scaled_single(c: PeriodicCycle, repeats: int, factor: int = 2) -> tuple[int, ...]:
    """Geometric block repetition: block r equals factor^r * cycle, unreduced.

    Values grow across blocks, deliberately breaking the shift invariance
    that plain periodic repetition has.
    """
    if repeats < 2:
        raise InvalidSpec(f"repeats must be >= 2, got {repeats}")
    if any(v < 1 for v in c.values):
        raise InvalidSpec(f"scaled cycles need values >= 1, got {c.values}")
    out: list[int] = []
    for r in range(repeats):
        out.extend(v * factor**r for v in c.values)
    return tuple(out)


def gen_single_continuation(c: PeriodicCycle, prompt_len: int, answer_len: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Periodic continuation task: prompt of >= two cycles, then the next tokens."""
    if prompt_len < 2 * len(c):
        raise InvalidSpec(f"prompt_len {prompt_len} shorter than two cycles of length {len(c)}")
    if answer_len < 1:
        raise InvalidSpec(f"answer_len must be >= 1, got {answer_len}")
    n = len(c)
    prompt = tuple(c.values[t % n] for t in range(prompt_len))
    answer = tuple(c.values[t % n] for t in range(prompt_len, prompt_len + answer_len))
    return prompt, answer


def format_fixed10(v: float) -> str:
    """Render a real as exactly 10 chars: sign, integer digits, '.', fraction.

    |v| < 10 gets 7 fractional digits, 10 <= |v| < 100 gets 6; the width
    stays 10 either way so token positions align across samples.
    """
    if not math.isfinite(v) or abs(v) >= 100:
        raise FormatOverflow(f"value {v!r} does not fit the 10-char format")
    s = f"{v:+.7f}"
    if len(s) == 10:
        return s
    s = f"{v:+.6f}"
    if len(s) == 10:
        return s
    raise FormatOverflow(f"value {v!r} rounds outside the 10-char format")


def parse_fixed10(text: str) -> float:
    """Inverse of format_fixed10 (plain float parse of the fixed-width text)."""
    if len(text) != 10:
        raise FormatOverflow(f"expected 10 chars, got {len(text)}: {text!r}")
    return float(text)


def gen_sine_pair(x: float) -> tuple[str, str]:
    """Fixed-width (x, sin x) text pair, e.g. ('+3.1415926', '+0.0000000').

    The sine is taken of the value the text actually encodes (x quantized
    to its serialized precision), so any reader of the pair can reproduce
    the target exactly from the input text alone.
    """
    x_text = format_fixed10(x)
    return x_text, format_fixed10(math.sin(parse_fixed10(x_text)))
