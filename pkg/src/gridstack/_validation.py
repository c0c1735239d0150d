"""Input validation helpers shared by the solvers."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from numbers import Real

import numpy as np

STOCHASTIC_ATOL = 1e-12


@dataclass(frozen=True)
class Violation:
    """One failed invariant, e.g. ``Violation("CapViolation", "users[2]", ...)``."""

    kind: str
    where: str
    message: str

    def __str__(self) -> str:
        return f"{self.kind} at {self.where}: {self.message}"


class InvalidGameError(ValueError):
    """Raised when a game description breaks one or more invariants.

    All violations found are collected in ``violations`` rather than
    stopping at the first one.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        lines = "\n  ".join(str(v) for v in self.violations)
        super().__init__(f"{len(self.violations)} invalid field(s):\n  {lines}")

    @property
    def kinds(self) -> set[str]:
        return {v.kind for v in self.violations}


class StateSpaceTooLarge(RuntimeError):
    """The joint state space exceeds the configured cap."""


def parse_number(value) -> float:
    """Accept floats, ints and rational strings such as ``"5/11"``."""
    if isinstance(value, str):
        return float(Fraction(value.strip()))
    if isinstance(value, (Real, np.floating, np.integer)):
        return float(value)
    raise TypeError(f"expected a number or rational string, got {value!r}")


def as_float_array(values, ndim=None, name="array") -> np.ndarray:
    raw = np.asarray(values, dtype=object)
    arr = np.vectorize(parse_number, otypes=[np.float64])(raw) if raw.size else raw.astype(float)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    return arr


def frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


def check_probability_vector(p, atol=STOCHASTIC_ATOL) -> bool:
    p = np.asarray(p, dtype=float)
    return bool(np.all(p >= 0.0) and np.all(p <= 1.0) and abs(p.sum() - 1.0) <= atol)


def nonstochastic_rows(matrix, atol=STOCHASTIC_ATOL) -> list[int]:
    """Indices of rows that are not probability vectors."""
    matrix = np.asarray(matrix, dtype=float)
    return [r for r, row in enumerate(matrix) if not check_probability_vector(row, atol)]


def check_random_state(seed) -> np.random.Generator:
    """Turn ``None``, an int or a Generator into a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def check_positive_int(value, name) -> int:
    if isinstance(value, bool) or int(value) != value or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)
