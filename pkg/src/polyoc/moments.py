"""Monomial bases and closed-form moments of known measures.

The moment basis over ``n`` variables truncated at degree ``d`` enumerates
exponent tuples in graded lexicographic order (lower total degree first,
higher powers on earlier variables first) and has ``C(n + d, d)`` elements.

Known boundary measures are products of independent factors over disjoint
variable groups: weighted Dirac mixtures and uniform distributions on boxes.
Their moments come from closed forms, so they enter the relaxation as
constants rather than unknowns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations_with_replacement
from typing import Iterable, Sequence

import numpy as np

from .poly import PolyError


def basis_size(nvars: int, degree: int) -> int:
    return math.comb(nvars + degree, degree)


def enumerate_exponents(nvars: int, degree: int) -> list[tuple[int, ...]]:
    """All exponent tuples with total degree <= ``degree``, graded lex order."""
    out: list[tuple[int, ...]] = []
    for d in range(degree + 1):
        for combo in combinations_with_replacement(range(nvars), d):
            exps = [0] * nvars
            for idx in combo:
                exps[idx] += 1
            out.append(tuple(exps))
    return out


class MomentBasis:
    """Truncated monomial basis with O(1) exponent-to-index lookup."""

    def __init__(self, names: Sequence[str], degree: int):
        if degree < 0:
            raise PolyError(f"basis degree must be nonnegative, got {degree}")
        self.names = tuple(names)
        self.degree = int(degree)
        self.exponents = enumerate_exponents(len(self.names), self.degree)
        self._index = {e: i for i, e in enumerate(self.exponents)}

    def __len__(self) -> int:
        return len(self.exponents)

    @property
    def nvars(self) -> int:
        return len(self.names)

    def index(self, exps: Sequence[int]) -> int:
        key = tuple(int(e) for e in exps)
        try:
            return self._index[key]
        except KeyError:
            raise PolyError(
                f"monomial {key} outside basis over {self.names} at degree {self.degree}"
            ) from None

    def __contains__(self, exps) -> bool:
        return tuple(int(e) for e in exps) in self._index

    def exponent_matrix(self) -> np.ndarray:
        return np.array(self.exponents, dtype=np.int64).reshape(len(self.exponents), self.nvars)


# ---------------------------------------------------------------------------
# known measure factors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiracFactor:
    """Weighted mixture of point masses over a variable group."""

    variables: tuple[str, ...]
    points: np.ndarray  # (npoints, nvars)
    weights: np.ndarray  # (npoints,)

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        w = np.asarray(self.weights, dtype=float).ravel()
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)
        if pts.shape[1] != len(self.variables):
            raise PolyError(
                f"Dirac points have {pts.shape[1]} columns for {len(self.variables)} variables"
            )
        if pts.shape[0] != w.shape[0]:
            raise PolyError("one weight per Dirac point is required")
        if w.size == 0 or np.any(w <= 0):
            raise PolyError("Dirac weights must be positive")
        if abs(w.sum() - 1.0) > 1e-9:
            raise PolyError(f"Dirac weights must sum to 1, got {w.sum()!r}")

    def moment(self, exps: Sequence[int]) -> float:
        vals = np.prod(self.points ** np.asarray(exps, dtype=float), axis=1)
        return float(self.weights @ vals)


@dataclass(frozen=True)
class UniformFactor:
    """Uniform distribution on an axis-aligned box over a variable group."""

    variables: tuple[str, ...]
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).ravel()
        hi = np.asarray(self.upper, dtype=float).ravel()
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if lo.shape[0] != len(self.variables) or hi.shape[0] != len(self.variables):
            raise PolyError("one interval per uniform variable is required")
        if np.any(hi <= lo):
            raise PolyError("uniform intervals must have positive length")

    def moment(self, exps: Sequence[int]) -> float:
        out = 1.0
        for a, b, e in zip(self.lower, self.upper, exps):
            k = int(e) + 1
            out *= (b**k - a**k) / (k * (b - a))
        return float(out)


KnownFactor = DiracFactor | UniformFactor


def known_moments(
    factors: Iterable[KnownFactor], names: Sequence[str], exponents: Iterable[Sequence[int]]
) -> np.ndarray:
    """Moments of a product of known factors for each monomial over ``names``.

    The factor variable groups must partition ``names``; each monomial's
    moment is the product of its per-factor moments.
    """
    names = tuple(names)
    factors = list(factors)
    covered: list[str] = [v for f in factors for v in f.variables]
    if sorted(covered) != sorted(names):
        raise PolyError(
            f"known factors cover {sorted(covered)} but moments over {sorted(names)} requested"
        )
    slices = [[names.index(v) for v in f.variables] for f in factors]
    out = []
    for exps in exponents:
        exps = tuple(int(e) for e in exps)
        value = 1.0
        for f, idx in zip(factors, slices):
            value *= f.moment([exps[i] for i in idx])
        out.append(value)
    return np.array(out)
