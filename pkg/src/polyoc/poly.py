"""Sparse multivariate polynomials over a fixed variable set.

A :class:`VarSet` fixes the canonical variable order (time first when
present, then states, then inputs).  :class:`Polynomial` stores terms as a
mapping from exponent tuples over that order to float coefficients;
canonicalization drops coefficients below ``COEFF_TOL`` in absolute value so
equality of term dictionaries is meaningful after arithmetic.

``parse_poly`` implements the expression grammar

    expr   := ('+' | '-')? term (('+' | '-') term)*
    term   := factor ('*' factor)*
    factor := base ('^' uint)?
    base   := number | ident | '(' expr ')'

with no implicit multiplication; syntax errors carry the character position
they were detected at.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

COEFF_TOL = 1e-14


class PolyError(ValueError):
    """Raised for malformed polynomial input or variable mismatches."""


class PolyParseError(PolyError):
    """Syntax error in a polynomial expression, with character position."""

    def __init__(self, message: str, pos: int):
        super().__init__(f"{message} (at position {pos})")
        self.pos = pos


@dataclass(frozen=True)
class VarSet:
    """Ordered variable universe: optional time, then states, then inputs."""

    states: tuple[str, ...]
    inputs: tuple[str, ...] = ()
    time: str | None = None

    def __post_init__(self):
        names = self.names
        if len(set(names)) != len(names):
            raise PolyError(f"duplicate variable names in {names}")
        for name in names:
            if not name or not (name[0].isalpha() or name[0] == "_"):
                raise PolyError(f"invalid variable name {name!r}")

    @property
    def names(self) -> tuple[str, ...]:
        head = (self.time,) if self.time is not None else ()
        return head + tuple(self.states) + tuple(self.inputs)

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise PolyError(f"unknown variable {name!r}; declared: {self.names}") from None

    def __contains__(self, name: str) -> bool:
        return name in self.names


def _order_key(exps: tuple[int, ...]):
    # Graded lexicographic: lower total degree first, then higher powers on
    # earlier variables first.  Matches the moment-basis enumeration.
    return (sum(exps), tuple(-e for e in exps))


class Polynomial:
    """Immutable sparse polynomial over a :class:`VarSet`."""

    __slots__ = ("varset", "_terms")

    def __init__(self, varset: VarSet, terms: Mapping[tuple[int, ...], float] | None = None):
        self.varset = varset
        clean: dict[tuple[int, ...], float] = {}
        if terms:
            nv = len(varset)
            for exps, coeff in terms.items():
                exps = tuple(int(e) for e in exps)
                if len(exps) != nv:
                    raise PolyError(f"exponent tuple {exps} does not match {nv} variables")
                if any(e < 0 for e in exps):
                    raise PolyError(f"negative exponent in {exps}")
                c = clean.get(exps, 0.0) + float(coeff)
                if abs(c) >= COEFF_TOL:
                    clean[exps] = c
                elif exps in clean:
                    del clean[exps]
        self._terms = clean

    # -- construction helpers -------------------------------------------------

    @classmethod
    def zero(cls, varset: VarSet) -> "Polynomial":
        return cls(varset)

    @classmethod
    def constant(cls, varset: VarSet, value: float) -> "Polynomial":
        return cls(varset, {(0,) * len(varset): value})

    @classmethod
    def variable(cls, varset: VarSet, name: str) -> "Polynomial":
        exps = [0] * len(varset)
        exps[varset.index(name)] = 1
        return cls(varset, {tuple(exps): 1.0})

    # -- inspection -----------------------------------------------------------

    @property
    def terms(self) -> dict[tuple[int, ...], float]:
        return dict(self._terms)

    def sorted_terms(self) -> list[tuple[tuple[int, ...], float]]:
        return sorted(self._terms.items(), key=lambda kv: _order_key(kv[0]))

    def is_zero(self) -> bool:
        return not self._terms

    @property
    def degree(self) -> int:
        """Total degree; 0 for the zero polynomial."""
        if not self._terms:
            return 0
        return max(sum(e) for e in self._terms)

    def degree_in(self, name: str) -> int:
        idx = self.varset.index(name)
        if not self._terms:
            return 0
        return max(e[idx] for e in self._terms)

    def uses(self, name: str) -> bool:
        return self.degree_in(name) > 0

    def coefficient(self, exps: Sequence[int]) -> float:
        return self._terms.get(tuple(int(e) for e in exps), 0.0)

    def constant_value(self) -> float:
        """Value of a constant polynomial (error otherwise)."""
        if self.degree > 0:
            raise PolyError(f"polynomial {self} is not constant")
        return self._terms.get((0,) * len(self.varset), 0.0)

    # -- arithmetic -----------------------------------------------------------

    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            if other.varset != self.varset:
                raise PolyError("polynomials over different variable sets")
            return other
        if isinstance(other, (int, float)):
            return Polynomial.constant(self.varset, float(other))
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return NotImplemented
        terms = dict(self._terms)
        for exps, coeff in other._terms.items():
            terms[exps] = terms.get(exps, 0.0) + coeff
        return Polynomial(self.varset, terms)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.varset, {e: -c for e, c in self._terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return NotImplemented
        terms: dict[tuple[int, ...], float] = {}
        for e1, c1 in self._terms.items():
            for e2, c2 in other._terms.items():
                key = tuple(a + b for a, b in zip(e1, e2))
                terms[key] = terms.get(key, 0.0) + c1 * c2
        return Polynomial(self.varset, terms)

    __rmul__ = __mul__

    def __pow__(self, n: int):
        if not isinstance(n, int) or n < 0:
            raise PolyError(f"exponent must be a nonnegative integer, got {n!r}")
        out = Polynomial.constant(self.varset, 1.0)
        for _ in range(n):
            out = out * self
        return out

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.varset == other.varset and self._terms == other._terms

    def __hash__(self):
        return hash((self.varset, tuple(sorted(self._terms.items()))))

    # -- calculus -------------------------------------------------------------

    def differentiate(self, name: str) -> "Polynomial":
        idx = self.varset.index(name)
        terms: dict[tuple[int, ...], float] = {}
        for exps, coeff in self._terms.items():
            e = exps[idx]
            if e == 0:
                continue
            key = exps[:idx] + (e - 1,) + exps[idx + 1 :]
            terms[key] = terms.get(key, 0.0) + coeff * e
        return Polynomial(self.varset, terms)

    def evaluate(self, point) -> float:
        """Evaluate at a point (mapping name -> value, or canonical-order sequence)."""
        if isinstance(point, Mapping):
            values = [float(point[name]) for name in self.varset.names]
        else:
            values = [float(v) for v in point]
            if len(values) != len(self.varset):
                raise PolyError(
                    f"point of length {len(values)} for {len(self.varset)} variables"
                )
        acc = 0.0
        for exps, coeff in self._terms.items():
            v = coeff
            for base, e in zip(values, exps):
                if e:
                    v *= base**e
            acc += v
        return acc

    # -- substitution ---------------------------------------------------------

    def substitute_value(self, name: str, value: float) -> "Polynomial":
        """Fix one variable to a number (its exponent folds into coefficients)."""
        idx = self.varset.index(name)
        terms: dict[tuple[int, ...], float] = {}
        for exps, coeff in self._terms.items():
            e = exps[idx]
            key = exps[:idx] + (0,) + exps[idx + 1 :]
            terms[key] = terms.get(key, 0.0) + coeff * float(value) ** e
        return Polynomial(self.varset, terms)

    def scale_var(self, name: str, factor: float) -> "Polynomial":
        """Substitute ``name -> factor * name``."""
        idx = self.varset.index(name)
        terms = {
            exps: coeff * float(factor) ** exps[idx] for exps, coeff in self._terms.items()
        }
        return Polynomial(self.varset, terms)

    def adapt(self, varset: VarSet) -> "Polynomial":
        """Re-express over another variable set containing every used variable."""
        positions = []
        for i, name in enumerate(self.varset.names):
            if name in varset:
                positions.append(varset.index(name))
            elif self.degree_in(name) > 0:
                raise PolyError(f"variable {name!r} not present in target variable set")
            else:
                positions.append(-1)
        nv = len(varset)
        terms: dict[tuple[int, ...], float] = {}
        for exps, coeff in self._terms.items():
            out = [0] * nv
            for src, dst in enumerate(positions):
                if dst >= 0:
                    out[dst] = exps[src]
            key = tuple(out)
            terms[key] = terms.get(key, 0.0) + coeff
        return Polynomial(varset, terms)

    # -- packing for kernels --------------------------------------------------

    def packed(self) -> tuple[np.ndarray, np.ndarray]:
        """Exponent matrix and coefficient vector in canonical term order."""
        items = self.sorted_terms()
        if not items:
            return np.zeros((0, len(self.varset)), dtype=np.int64), np.zeros(0)
        exps = np.array([e for e, _ in items], dtype=np.int64)
        coeffs = np.array([c for _, c in items])
        return exps, coeffs

    # -- printing -------------------------------------------------------------

    def __str__(self) -> str:
        if not self._terms:
            return "0"
        parts: list[str] = []
        for exps, coeff in self.sorted_terms():
            mono = "*".join(
                name if e == 1 else f"{name}^{e}"
                for name, e in zip(self.varset.names, exps)
                if e > 0
            )
            mag = abs(coeff)
            if mono and mag == 1.0:
                body = mono
            elif mono:
                body = f"{mag!r}*{mono}"
            else:
                body = repr(mag)
            if not parts:
                parts.append(body if coeff > 0 else f"-{body}")
            else:
                parts.append(f"+ {body}" if coeff > 0 else f"- {body}")
        return " ".join(parts)

    def __repr__(self) -> str:
        return f"Polynomial({self!s})"


def poly_from_packed(varset: VarSet, exps: np.ndarray, coeffs: np.ndarray) -> Polynomial:
    return Polynomial(varset, {tuple(int(x) for x in e): float(c) for e, c in zip(exps, coeffs)})


def pack_family(polys: Iterable[Polynomial], varset: VarSet):
    """Pack several polynomials over a shared layout for the kernels."""
    offsets = [0]
    all_exps: list[np.ndarray] = []
    all_coeffs: list[np.ndarray] = []
    for p in polys:
        e, c = p.adapt(varset).packed()
        all_exps.append(e)
        all_coeffs.append(c)
        offsets.append(offsets[-1] + len(c))
    nv = len(varset)
    if all_exps and sum(e.shape[0] for e in all_exps) > 0:
        exps = np.vstack([e for e in all_exps if e.shape[0] > 0])
    else:
        exps = np.zeros((0, nv), dtype=np.int64)
    coeffs = np.concatenate(all_coeffs) if all_coeffs else np.zeros(0)
    return np.array(offsets, dtype=np.int64), exps, coeffs


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


class _Parser:
    def __init__(self, text: str, varset: VarSet):
        self.text = text
        self.varset = varset
        self.pos = 0

    def error(self, message: str, pos: int | None = None):
        raise PolyParseError(message, self.pos if pos is None else pos)

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def parse(self) -> Polynomial:
        result = self.expr()
        self.skip_ws()
        if self.pos < len(self.text):
            self.error(f"unexpected character {self.text[self.pos]!r}")
        return result

    def expr(self) -> Polynomial:
        self.skip_ws()
        sign = 1.0
        if self.peek() in "+-":
            if self.peek() == "-":
                sign = -1.0
            self.pos += 1
        result = sign * self.term()
        while True:
            self.skip_ws()
            c = self.peek()
            if c == "+":
                self.pos += 1
                result = result + self.term()
            elif c == "-":
                self.pos += 1
                result = result - self.term()
            else:
                return result

    def term(self) -> Polynomial:
        result = self.factor()
        while True:
            self.skip_ws()
            if self.peek() == "*":
                self.pos += 1
                result = result * self.factor()
            else:
                return result

    def factor(self) -> Polynomial:
        base = self.base()
        self.skip_ws()
        if self.peek() == "^":
            self.pos += 1
            exponent = self.uint()
            return base**exponent
        return base

    def uint(self) -> int:
        self.skip_ws()
        start = self.pos
        if self.peek() in "+-":
            self.pos += 1
        while self.pos < len(self.text) and (
            self.text[self.pos].isdigit() or self.text[self.pos] in ".eE"
        ):
            self.pos += 1
        token = self.text[start : self.pos]
        if not token:
            self.error("expected an exponent after '^'", start)
        try:
            value = float(token)
        except ValueError:
            self.error(f"malformed exponent {token!r}", start)
        if value < 0 or value != int(value):
            self.error(f"exponent must be a nonnegative integer, got {token!r}", start)
        return int(value)

    def base(self) -> Polynomial:
        self.skip_ws()
        c = self.peek()
        if not c:
            self.error("unexpected end of expression")
        if c == "(":
            self.pos += 1
            inner = self.expr()
            self.skip_ws()
            if self.peek() != ")":
                self.error("expected ')'")
            self.pos += 1
            return inner
        if c.isdigit() or c == ".":
            return Polynomial.constant(self.varset, self.number())
        if c.isalpha() or c == "_":
            start = self.pos
            while self.pos < len(self.text) and (
                self.text[self.pos].isalnum() or self.text[self.pos] == "_"
            ):
                self.pos += 1
            name = self.text[start : self.pos]
            if name not in self.varset:
                self.error(f"unknown identifier {name!r}", start)
            return Polynomial.variable(self.varset, name)
        self.error(f"unexpected character {c!r}")

    def number(self) -> float:
        start = self.pos
        seen_e = False
        while self.pos < len(self.text):
            ch = self.text[self.pos]
            if ch.isdigit() or ch == ".":
                self.pos += 1
            elif ch in "eE" and not seen_e:
                seen_e = True
                self.pos += 1
                if self.peek() in "+-":
                    self.pos += 1
            else:
                break
        token = self.text[start : self.pos]
        try:
            return float(token)
        except ValueError:
            self.error(f"malformed number {token!r}", start)


def parse_poly(text: str, varset: VarSet) -> Polynomial:
    """Parse an expression into a :class:`Polynomial` over ``varset``."""
    return _Parser(text, varset).parse()


# ---------------------------------------------------------------------------
# Lie derivative
# ---------------------------------------------------------------------------


def lie_derivative(
    w: Polynomial,
    dynamics: Sequence[Polynomial],
    state_names: Sequence[str],
    include_time: bool = True,
    time_factor: float = 1.0,
) -> Polynomial:
    """Derivative of ``w`` along the flow ``x_i' = f_i``.

    Returns ``time_factor * dw/dt + sum_i dw/dx_i * f_i`` over the dynamics'
    variable set; the time term is included only when ``include_time`` and
    ``w`` has a time variable.
    """
    if len(dynamics) != len(state_names):
        raise PolyError("one dynamics polynomial per state is required")
    target = dynamics[0].varset if dynamics else w.varset
    out = Polynomial.zero(target)
    if include_time and w.varset.time is not None:
        out = out + time_factor * w.differentiate(w.varset.time).adapt(target)
    for name, f in zip(state_names, dynamics):
        out = out + w.differentiate(name).adapt(target) * f
    return out
