"""Optimal control problem description and validation.

An :class:`OcpProblem` collects polynomial dynamics, running/terminal costs,
a horizon (fixed length or free), boundary measure specifications, pointwise
trajectory constraints, and integral (moment) constraints.  Boundary
measures factor into an optional Dirac mixture, an optional uniform box, and
a free remainder restricted by support constraints; a state assigned by two
factors, or constrained while assigned, is rejected outright.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .moments import DiracFactor, KnownFactor, UniformFactor
from .poly import Polynomial, PolyError, VarSet


class ProblemError(ValueError):
    """Raised for ill-posed problem descriptions."""


@dataclass(frozen=True)
class SupportConstraint:
    """Pointwise constraint ``poly >= 0`` (or ``poly == 0``) on a support set."""

    poly: Polynomial
    equality: bool = False

    @classmethod
    def normalize(cls, lhs: Polynomial, op: str, rhs: Polynomial | float) -> "SupportConstraint":
        if not isinstance(rhs, Polynomial):
            rhs = Polynomial.constant(lhs.varset, float(rhs))
        if op in ("<=", "<"):
            return cls(rhs - lhs, False)
        if op in (">=", ">"):
            return cls(lhs - rhs, False)
        if op in ("=", "=="):
            return cls(lhs - rhs, True)
        raise ProblemError(f"unknown relation {op!r}")


@dataclass(frozen=True)
class MomentConstraint:
    """Constraint ``<integrand, occupation measure> relation bound``."""

    integrand: Polynomial
    relation: str  # '<=', '=' or '>='
    bound: float

    def __post_init__(self):
        if self.relation not in ("<=", "=", ">="):
            raise ProblemError(f"moment constraint relation must be <=, = or >=, got {self.relation!r}")


@dataclass(frozen=True)
class BoundarySpec:
    """Product-form boundary measure: Dirac mixture x uniform box x free rest."""

    dirac: DiracFactor | None = None
    uniform: UniformFactor | None = None
    constraints: tuple[SupportConstraint, ...] = ()

    def known_factors(self) -> list[KnownFactor]:
        out: list[KnownFactor] = []
        if self.dirac is not None:
            out.append(self.dirac)
        if self.uniform is not None:
            out.append(self.uniform)
        return out

    def assigned_vars(self) -> tuple[str, ...]:
        return tuple(v for f in self.known_factors() for v in f.variables)

    def free_vars(self, states: Sequence[str]) -> tuple[str, ...]:
        assigned = set(self.assigned_vars())
        return tuple(s for s in states if s not in assigned)

    def is_known(self, states: Sequence[str]) -> bool:
        return not self.free_vars(states)


@dataclass(frozen=True)
class OcpProblem:
    varset: VarSet
    dynamics: tuple[Polynomial, ...]
    scost: Polynomial
    fcost: Polynomial
    horizon: float | None  # None means free horizon
    initial: BoundarySpec
    final: BoundarySpec
    tconstraints: tuple[SupportConstraint, ...] = ()
    sconstraints: tuple[MomentConstraint, ...] = ()
    testtime: bool | None = None
    tmax: float | None = None

    @property
    def states(self) -> tuple[str, ...]:
        return self.varset.states

    @property
    def inputs(self) -> tuple[str, ...]:
        return self.varset.inputs

    @property
    def time(self) -> str | None:
        return self.varset.time

    @property
    def max_dynamics_degree(self) -> int:
        return max(f.degree for f in self.dynamics)


def _check_vars(poly: Polynomial, allowed: set[str], what: str):
    for name in poly.varset.names:
        if poly.uses(name) and name not in allowed:
            raise ProblemError(f"{what} must not involve variable {name!r}")


def _check_boundary(spec: BoundarySpec, states: Sequence[str], which: str):
    seen: dict[str, str] = {}
    for factor in spec.known_factors():
        kind = "dirac" if isinstance(factor, DiracFactor) else "uniform"
        for v in factor.variables:
            if v not in states:
                raise ProblemError(f"{which} boundary factor references non-state {v!r}")
            if v in seen:
                raise ProblemError(
                    f"{which} boundary assigns {v!r} by both a {seen[v]} and a {kind} factor"
                )
            seen[v] = kind
    free = set(spec.free_vars(states))
    for c in spec.constraints:
        _check_vars(c.poly, set(states), f"{which} boundary constraint")
        for name in c.poly.varset.names:
            if c.poly.uses(name) and name not in free:
                raise ProblemError(
                    f"{which} boundary constrains {name!r}, which is already assigned "
                    f"by a {seen.get(name, '?')} factor"
                )


def build_problem(
    varset: VarSet,
    dynamics: Sequence[Polynomial],
    scost: Polynomial | float = 0.0,
    fcost: Polynomial | float = 0.0,
    horizon: float | None = None,
    initial: BoundarySpec | None = None,
    final: BoundarySpec | None = None,
    tconstraints: Sequence[SupportConstraint] = (),
    sconstraints: Sequence[MomentConstraint] = (),
    testtime: bool | None = None,
    tmax: float | None = None,
) -> OcpProblem:
    """Validate the pieces and assemble an :class:`OcpProblem`."""
    if not varset.states:
        raise ProblemError("at least one state variable is required")
    if len(dynamics) != len(varset.states):
        raise ProblemError(
            f"{len(varset.states)} states but {len(dynamics)} dynamics polynomials"
        )
    dynamics = tuple(f.adapt(varset) for f in dynamics)
    if not isinstance(scost, Polynomial):
        scost = Polynomial.constant(varset, float(scost))
    if not isinstance(fcost, Polynomial):
        fcost = Polynomial.constant(varset, float(fcost))
    scost = scost.adapt(varset)
    fcost = fcost.adapt(varset)
    _check_vars(fcost, set(varset.states), "terminal cost")

    if horizon is not None and not horizon > 0:
        raise ProblemError(f"fixed horizon must be positive, got {horizon}")
    if tmax is not None and not tmax > 0:
        raise ProblemError(f"tmax must be positive, got {tmax}")

    initial = initial or BoundarySpec()
    final = final or BoundarySpec()
    _check_boundary(initial, varset.states, "initial")
    _check_boundary(final, varset.states, "final")

    allowed = set(varset.names)
    for c in tconstraints:
        _check_vars(c.poly, allowed, "trajectory constraint")
    for mc in sconstraints:
        _check_vars(mc.integrand, allowed, "integral constraint")

    return OcpProblem(
        varset=varset,
        dynamics=dynamics,
        scost=scost,
        fcost=fcost,
        horizon=horizon,
        initial=initial,
        final=final,
        tconstraints=tuple(
            SupportConstraint(c.poly.adapt(varset), c.equality) for c in tconstraints
        ),
        sconstraints=tuple(
            MomentConstraint(mc.integrand.adapt(varset), mc.relation, float(mc.bound))
            for mc in sconstraints
        ),
        testtime=testtime,
        tmax=tmax,
    )


def time_dependence(p: OcpProblem) -> bool:
    """Whether the relaxation's test functions depend on time.

    Defaults to time-independent exactly when the horizon is free and none of
    the dynamics, running cost, trajectory constraints or integral-constraint
    integrands reference the time variable; an explicit ``testtime`` wins.
    """
    if p.testtime is not None:
        return bool(p.testtime)
    if p.horizon is not None:
        return True
    t = p.time
    if t is None:
        return False
    data = (
        list(p.dynamics)
        + [p.scost]
        + [c.poly for c in p.tconstraints]
        + [mc.integrand for mc in p.sconstraints]
    )
    return any(q.uses(t) for q in data)


def apply_scaling(p: OcpProblem, factors: Mapping[str, float]) -> OcpProblem:
    """Rescale declared variables by positive factors.

    Substituting ``v -> factor * v`` state by state (and input by input, and
    time if declared) yields an equivalent problem whose optimal value equals
    the original one: the running cost absorbs the time-scaling Jacobian, so
    reported bounds are unchanged up to numerics.
    """
    for name, value in factors.items():
        if name not in p.varset:
            raise ProblemError(f"cannot scale undeclared variable {name!r}")
        if not value > 0:
            raise ProblemError(f"scale factor for {name!r} must be positive, got {value}")

    tau = float(factors.get(p.time, 1.0)) if p.time is not None else 1.0

    def scaled(q: Polynomial) -> Polynomial:
        for name, value in factors.items():
            q = q.scale_var(name, value)
        return q

    state_factors = {s: float(factors.get(s, 1.0)) for s in p.states}
    dynamics = tuple(
        scaled(f) * (tau / state_factors[s]) for s, f in zip(p.states, p.dynamics)
    )

    def scaled_boundary(spec: BoundarySpec) -> BoundarySpec:
        dirac = spec.dirac
        if dirac is not None:
            div = np.array([state_factors[v] for v in dirac.variables])
            dirac = DiracFactor(dirac.variables, dirac.points / div, dirac.weights.copy())
        uniform = spec.uniform
        if uniform is not None:
            div = np.array([state_factors[v] for v in uniform.variables])
            uniform = UniformFactor(
                uniform.variables, uniform.lower / div, uniform.upper / div
            )
        constraints = tuple(
            SupportConstraint(scaled(c.poly), c.equality) for c in spec.constraints
        )
        return BoundarySpec(dirac, uniform, constraints)

    return replace(
        p,
        dynamics=dynamics,
        scost=scaled(p.scost) * tau,
        fcost=scaled(p.fcost),
        horizon=None if p.horizon is None else p.horizon / tau,
        initial=scaled_boundary(p.initial),
        final=scaled_boundary(p.final),
        tconstraints=tuple(
            SupportConstraint(scaled(c.poly), c.equality) for c in p.tconstraints
        ),
        sconstraints=tuple(
            MomentConstraint(scaled(mc.integrand) * tau, mc.relation, mc.bound)
            for mc in p.sconstraints
        ),
        tmax=None if p.tmax is None else p.tmax / tau,
    )
