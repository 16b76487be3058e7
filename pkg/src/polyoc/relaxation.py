"""Moment relaxation assembly.

The occupation-measure formulation introduces one measure per problem piece:
the trajectory (occupation) measure over ``(t, x, u)`` and boundary measures
over ``x`` (the final one also over ``t`` when the horizon is free but test
functions depend on time).  Weak dynamics give one linear equality per test
monomial ``w``::

    <L_f w, mu_traj> - <w at final, mu_final> + <w at 0, mu_initial> = 0

where ``L_f w = dw/dt + sum_i dw/dx_i f_i``.  Fully known measures (Dirac
mixtures, uniform boxes and their products) contribute constants that move
to the right-hand side; unknown measures contribute truncated moment vectors
constrained by moment and localizing positive-semidefinite blocks.

Time is handled internally on the unit interval: with a fixed horizon ``T``
(or a user bound ``tmax`` when the horizon is free but data depends on
time), the time variable is scaled by ``1/T`` so its support constraint is
always ``t (1 - t) >= 0``; reported quantities are mapped back to original
time by the callers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .moments import KnownFactor, MomentBasis
from .ocp import (
    MomentConstraint,
    OcpProblem,
    ProblemError,
    SupportConstraint,
    time_dependence,
)
from .poly import Polynomial, VarSet, lie_derivative
from .solver import ConicProgram, MeasureView, PsdBlockSpec

TRAJECTORY = "trajectory"
INITIAL = "initial"
FINAL = "final"


def _ceil_even(d: int) -> int:
    return d + (d % 2)


@dataclass(frozen=True)
class DegreePlan:
    """Resolved truncation degrees for one relaxation of one problem."""

    mode: str  # 'mom' or 'tf'
    requested: int
    tf_degree: int
    traj_degree: int
    boundary_degree: int
    time_dependent: bool


def resolve_degrees(p: OcpProblem, mode: str, degree: int) -> DegreePlan:
    """Turn a requested moment degree or test-function degree into a plan.

    ``mode='tf'`` fixes the maximum test-monomial degree directly;
    ``mode='mom'`` targets a trajectory truncation degree ``d`` and derives
    ``tf_degree = max(1, d + 1 - max_i deg f_i)`` so the Liouville rows use
    it fully.
    """
    time_dep = time_dependence(p)
    maxdegf = p.max_dynamics_degree
    if mode == "mom":
        if degree < 2:
            raise ProblemError(f"moment degree must be at least 2, got {degree}")
        tf = max(1, degree + 1 - maxdegf)
    elif mode == "tf":
        if degree < 1:
            raise ProblemError(f"test-function degree must be at least 1, got {degree}")
        tf = degree
    else:
        raise ProblemError(f"degree mode must be 'mom' or 'tf', got {mode!r}")

    traj = tf - 1 + maxdegf
    if time_dep:
        traj = max(traj, tf)
    traj = max(traj, p.scost.degree, 2)
    for mc in p.sconstraints:
        traj = max(traj, mc.integrand.degree)
    traj = _ceil_even(traj)
    if mode == "mom" and traj > _ceil_even(degree):
        raise ProblemError(
            f"moment degree {degree} is too small for the running cost or "
            f"integral constraints (need {traj})"
        )
    boundary = _ceil_even(max(tf, p.fcost.degree))
    return DegreePlan(
        mode=mode,
        requested=int(degree),
        tf_degree=tf,
        traj_degree=traj,
        boundary_degree=boundary,
        time_dependent=time_dep,
    )


@dataclass
class MeasureInfo:
    """One measure of the relaxation with its unknown-part layout."""

    mid: str
    all_names: tuple[str, ...]
    known: list[KnownFactor]
    unknown_names: tuple[str, ...]
    degree: int
    basis: MomentBasis | None  # over unknown_names; None when fully known
    offset: int  # global variable offset of the unknown moment vector; -1 if none
    ineqs: tuple[Polynomial, ...] = ()  # g >= 0 over unknown variables
    eqs: tuple[Polynomial, ...] = ()  # g == 0 over unknown variables

    @property
    def is_known(self) -> bool:
        return self.basis is None

    def n_unknowns(self) -> int:
        return 0 if self.basis is None else len(self.basis)

    def split(self, exps: Sequence[int]) -> tuple[float, tuple[int, ...] | None]:
        """Factor a full-measure monomial into known value and unknown exponents.

        ``exps`` indexes ``all_names``; the return is ``(known_moment,
        unknown_exps)`` with ``unknown_exps`` over ``unknown_names`` (``None``
        when the measure is fully known).
        """
        known_value = 1.0
        pos = {name: i for i, name in enumerate(self.all_names)}
        for factor in self.known:
            known_value *= factor.moment([exps[pos[v]] for v in factor.variables])
        if self.basis is None:
            leftover = [exps[pos[v]] for v in self.unknown_names]
            assert not any(leftover)
            return known_value, None
        return known_value, tuple(exps[pos[v]] for v in self.unknown_names)


@dataclass(frozen=True)
class RowInfo:
    kind: str  # 'liouville', 'mass', 'integral', 'support_eq'
    measure: str | None = None
    monomial: tuple[int, ...] | None = None  # test monomial over (t?, states)
    detail: str = ""


class _RowBuilder:
    def __init__(self):
        self.rows: list[int] = []
        self.cols: list[int] = []
        self.vals: list[float] = []
        self.rhs: list[float] = []
        self.info: list[RowInfo] = []
        self.current = -1

    def new_row(self, info: RowInfo, rhs: float = 0.0) -> int:
        self.current += 1
        self.rhs.append(rhs)
        self.info.append(info)
        return self.current

    def add(self, col: int, val: float):
        if val != 0.0:
            self.rows.append(self.current)
            self.cols.append(col)
            self.vals.append(val)

    def add_rhs(self, val: float):
        self.rhs[self.current] += val

    def matrix(self, n: int) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.vals, (self.rows, self.cols)), shape=(self.current + 1, n)
        )


@dataclass
class MomentProblem:
    """Linear-in-moments formulation ahead of the conic lowering.

    Equality rows are ordered Liouville (one per test monomial, in test-basis
    order), then mass rows, then integral-constraint equalities; the conic
    assembly appends support-equality rows after these, so dual vectors index
    this layout as a prefix.
    """

    problem: OcpProblem
    plan: DegreePlan
    time_dependent: bool
    tname: str | None
    t_scale: float | None
    test_varset: VarSet
    test_basis: MomentBasis
    traj_varset: VarSet
    measures: dict[str, MeasureInfo]
    n_vars: int
    eq: sp.csr_matrix
    eq_rhs: np.ndarray
    eq_info: list[RowInfo]
    ineq: sp.csr_matrix  # rows a with a @ y <= ineq_rhs
    ineq_rhs: np.ndarray
    ineq_info: list[RowInfo]
    c: np.ndarray
    obj_offset: float
    objective_kind: str  # 'cost' or 'trace'

    def unknown_measures(self) -> list[MeasureInfo]:
        return [m for m in self.measures.values() if not m.is_known]


def build_moment_problem(p: OcpProblem, plan: DegreePlan) -> MomentProblem:
    time_dep = plan.time_dependent
    tname: str | None = None
    t_scale: float | None = None
    if time_dep:
        tname = p.time or "t"
        if p.time is None and "t" in p.varset.names:
            raise ProblemError(
                "the automatic time variable 't' clashes with a declared variable; "
                "declare the time variable explicitly"
            )
        if p.horizon is not None:
            t_scale = float(p.horizon)
        elif p.tmax is not None:
            t_scale = float(p.tmax)
        else:
            raise ProblemError(
                "free horizon with time-dependent data requires an explicit tmax"
            )

    traj_vs = VarSet(states=p.states, inputs=p.inputs, time=tname)
    test_vs = VarSet(states=p.states, time=tname)

    def rewrite(q: Polynomial) -> Polynomial:
        q = q.adapt(traj_vs)
        if tname is not None and p.time is not None:
            q = q.scale_var(tname, t_scale)
        return q

    dynamics = [rewrite(f) for f in p.dynamics]
    scost = rewrite(p.scost)

    # --- measures -----------------------------------------------------------
    unit_box = None
    if tname is not None:
        tvar = Polynomial.variable(traj_vs, tname)
        unit_box = tvar * (1.0 - tvar)

    traj_ineqs: list[Polynomial] = []
    traj_eqs: list[Polynomial] = []
    for c in p.tconstraints:
        (traj_eqs if c.equality else traj_ineqs).append(rewrite(c.poly))
    if unit_box is not None:
        traj_ineqs.append(unit_box)

    offset = 0
    traj_basis = MomentBasis(traj_vs.names, plan.traj_degree)
    measures: dict[str, MeasureInfo] = {}
    measures[TRAJECTORY] = MeasureInfo(
        mid=TRAJECTORY,
        all_names=traj_vs.names,
        known=[],
        unknown_names=traj_vs.names,
        degree=plan.traj_degree,
        basis=traj_basis,
        offset=offset,
        ineqs=tuple(traj_ineqs),
        eqs=tuple(traj_eqs),
    )
    offset += len(traj_basis)

    def boundary_measure(mid: str) -> MeasureInfo:
        nonlocal offset
        spec = p.initial if mid == INITIAL else p.final
        free = spec.free_vars(p.states)
        with_time = mid == FINAL and time_dep and p.horizon is None
        names = ((tname,) + free) if with_time else free
        all_names = ((tname,) if with_time else ()) + tuple(p.states)
        vs = VarSet(states=free, time=tname if with_time else None)
        ineqs: list[Polynomial] = []
        eqs: list[Polynomial] = []
        for c in spec.constraints:
            q = c.poly.adapt(vs)
            (eqs if c.equality else ineqs).append(q)
        if with_time:
            tv = Polynomial.variable(vs, tname)
            ineqs.append(tv * (1.0 - tv))
        if names:
            basis = MomentBasis(names, plan.boundary_degree)
            info = MeasureInfo(
                mid=mid,
                all_names=all_names,
                known=spec.known_factors(),
                unknown_names=names,
                degree=plan.boundary_degree,
                basis=basis,
                offset=offset,
                ineqs=tuple(ineqs),
                eqs=tuple(eqs),
            )
            offset += len(basis)
        else:
            info = MeasureInfo(
                mid=mid,
                all_names=all_names,
                known=spec.known_factors(),
                unknown_names=(),
                degree=plan.boundary_degree,
                basis=None,
                offset=-1,
            )
        return info

    measures[INITIAL] = boundary_measure(INITIAL)
    measures[FINAL] = boundary_measure(FINAL)
    n_vars = offset

    # --- equality and inequality rows ---------------------------------------
    rb = _RowBuilder()
    ib = _RowBuilder()
    test_basis = MomentBasis(test_vs.names, plan.tf_degree)

    def accumulate_boundary(q: Polynomial, minfo: MeasureInfo, sign: float):
        """Add ``sign * <q, measure>`` to the current row (knowns to the RHS)."""
        pos = {name: i for i, name in enumerate(minfo.all_names)}
        for exps, coeff in q.terms.items():
            full = [0] * len(minfo.all_names)
            for name, e in zip(q.varset.names, exps):
                if e:
                    if name not in pos:
                        raise ProblemError(
                            f"monomial variable {name!r} not supported by measure {minfo.mid}"
                        )
                    full[pos[name]] = e
            kval, unknown = minfo.split(full)
            if unknown is None:
                rb.add_rhs(-sign * coeff * kval)
            else:
                rb.add(minfo.offset + minfo.basis.index(unknown), sign * coeff * kval)

    tfi = measures[FINAL]
    tii = measures[INITIAL]
    for w_exps in test_basis.exponents:
        w = Polynomial(test_vs, {w_exps: 1.0})
        rb.new_row(RowInfo(kind="liouville", monomial=w_exps))
        lw = lie_derivative(w, dynamics, p.states, include_time=False)
        if tname is not None:
            lw = lw + (1.0 / t_scale) * w.differentiate(tname).adapt(traj_vs)
        for exps, coeff in lw.terms.items():
            rb.add(traj_basis.index(exps), coeff)
        if time_dep and p.horizon is not None:
            w_final = w.substitute_value(tname, 1.0)
        else:
            w_final = w
        accumulate_boundary(w_final, tfi, sign=-1.0)
        w_init = w.substitute_value(tname, 0.0) if tname is not None else w
        accumulate_boundary(w_init, tii, sign=1.0)

    for mid in (INITIAL, FINAL):
        minfo = measures[mid]
        if not minfo.is_known:
            rb.new_row(RowInfo(kind="mass", measure=mid), rhs=1.0)
            rb.add(minfo.offset, 1.0)
    if p.horizon is not None:
        rb.new_row(RowInfo(kind="mass", measure=TRAJECTORY), rhs=float(p.horizon))
        rb.add(measures[TRAJECTORY].offset, 1.0)
    elif time_dep:
        # free horizon bounded by tmax: the occupation mass is at most tmax
        ib.new_row(RowInfo(kind="mass", measure=TRAJECTORY), rhs=float(t_scale))
        ib.add(measures[TRAJECTORY].offset, 1.0)

    for k, mc in enumerate(p.sconstraints):
        integrand = rewrite(mc.integrand)
        coeffs = [(traj_basis.index(e), c) for e, c in integrand.terms.items()]
        if mc.relation == "=":
            rb.new_row(RowInfo(kind="integral", detail=f"sconstraint {k}"), rhs=mc.bound)
            for col, val in coeffs:
                rb.add(col, val)
        else:
            sign = 1.0 if mc.relation == "<=" else -1.0
            ib.new_row(
                RowInfo(kind="integral", detail=f"sconstraint {k}"), rhs=sign * mc.bound
            )
            for col, val in coeffs:
                ib.add(col, sign * val)

    # --- objective ----------------------------------------------------------
    c = np.zeros(n_vars)
    obj_offset = 0.0
    if p.scost.is_zero() and p.fcost.is_zero():
        objective_kind = "trace"
        order = plan.traj_degree // 2
        half = MomentBasis(traj_vs.names, order)
        for exps in half.exponents:
            c[traj_basis.index(tuple(2 * e for e in exps))] += 1.0
    else:
        objective_kind = "cost"
        for exps, coeff in scost.terms.items():
            c[traj_basis.index(exps)] += coeff
        fcost = p.fcost.adapt(VarSet(states=p.states))
        pos = {name: i for i, name in enumerate(tfi.all_names)}
        for exps, coeff in fcost.terms.items():
            full = [0] * len(tfi.all_names)
            for name, e in zip(p.states, exps):
                full[pos[name]] = e
            kval, unknown = tfi.split(full)
            if unknown is None:
                obj_offset += coeff * kval
            else:
                c[tfi.offset + tfi.basis.index(unknown)] += coeff * kval

    return MomentProblem(
        problem=p,
        plan=plan,
        time_dependent=time_dep,
        tname=tname,
        t_scale=t_scale,
        test_varset=test_vs,
        test_basis=test_basis,
        traj_varset=traj_vs,
        measures=measures,
        n_vars=n_vars,
        eq=rb.matrix(n_vars),
        eq_rhs=np.array(rb.rhs),
        eq_info=rb.info,
        ineq=ib.matrix(n_vars),
        ineq_rhs=np.array(ib.rhs),
        ineq_info=ib.info,
        c=c,
        obj_offset=obj_offset,
        objective_kind=objective_kind,
    )


# ---------------------------------------------------------------------------
# conic lowering
# ---------------------------------------------------------------------------


def _moment_block(minfo: MeasureInfo) -> PsdBlockSpec:
    r = minfo.degree // 2
    half = MomentBasis(minfo.unknown_names, r)
    nb = len(half)
    rows, cols, vars_, coefs = [], [], [], []
    for i, ei in enumerate(half.exponents):
        for j, ej in enumerate(half.exponents):
            var = minfo.offset + minfo.basis.index(tuple(a + b for a, b in zip(ei, ej)))
            rows.append(i)
            cols.append(j)
            vars_.append(var)
            coefs.append(1.0)
    return PsdBlockSpec(
        name=f"{minfo.mid}:moment",
        size=nb,
        rows=np.array(rows, dtype=np.int32),
        cols=np.array(cols, dtype=np.int32),
        vars=np.array(vars_, dtype=np.int64),
        coefs=np.array(coefs),
        const=np.zeros((nb, nb)),
    )


def _localizing_block(minfo: MeasureInfo, g: Polynomial, tag: str) -> PsdBlockSpec:
    r = minfo.degree // 2
    ell = r - math.ceil(g.degree / 2)
    if ell < 0:
        raise ProblemError(
            f"constraint {g} of degree {g.degree} needs a relaxation degree of at "
            f"least {2 * math.ceil(g.degree / 2)} on measure {minfo.mid}"
        )
    half = MomentBasis(minfo.unknown_names, ell)
    g = g.adapt(VarSet(states=minfo.unknown_names))
    nb = len(half)
    rows, cols, vars_, coefs = [], [], [], []
    for i, ei in enumerate(half.exponents):
        for j, ej in enumerate(half.exponents):
            base = tuple(a + b for a, b in zip(ei, ej))
            for gexps, gcoef in g.terms.items():
                var = minfo.offset + minfo.basis.index(
                    tuple(a + b for a, b in zip(base, gexps))
                )
                rows.append(i)
                cols.append(j)
                vars_.append(var)
                coefs.append(gcoef)
    return PsdBlockSpec(
        name=f"{minfo.mid}:loc:{tag}",
        size=nb,
        rows=np.array(rows, dtype=np.int32),
        cols=np.array(cols, dtype=np.int32),
        vars=np.array(vars_, dtype=np.int64),
        coefs=np.array(coefs),
        const=np.zeros((nb, nb)),
    )


def _measure_view(minfo: MeasureInfo) -> MeasureView:
    full = MomentBasis(minfo.all_names, minfo.degree)
    coefs = np.empty(len(full))
    vars_ = np.full(len(full), -1, dtype=np.int64)
    for i, exps in enumerate(full.exponents):
        kval, unknown = minfo.split(exps)
        coefs[i] = kval
        if unknown is not None:
            vars_[i] = minfo.offset + minfo.basis.index(unknown)
    half = MomentBasis(minfo.all_names, minfo.degree // 2)
    nb = len(half)
    pair = np.empty((nb, nb), dtype=np.int64)
    for i, ei in enumerate(half.exponents):
        for j, ej in enumerate(half.exponents):
            pair[i, j] = full.index(tuple(a + b for a, b in zip(ei, ej)))
    return MeasureView(
        name=minfo.mid,
        var_names=minfo.all_names,
        basis_exponents=full.exponents,
        pair_index=pair,
        coefs=coefs,
        vars=vars_,
    )


def assemble_conic(mp: MomentProblem) -> ConicProgram:
    """Lower a :class:`MomentProblem` to a block conic program."""
    blocks: list[PsdBlockSpec] = []
    extra = _RowBuilder()
    for minfo in mp.unknown_measures():
        blocks.append(_moment_block(minfo))
        for k, g in enumerate(minfo.ineqs):
            blocks.append(_localizing_block(minfo, g, str(k)))
        for k, g in enumerate(minfo.eqs):
            gi = g.adapt(VarSet(states=minfo.unknown_names))
            mult_degree = minfo.degree - gi.degree
            if mult_degree < 0:
                raise ProblemError(
                    f"equality constraint {g} exceeds the truncation degree of "
                    f"measure {minfo.mid}"
                )
            mult = MomentBasis(minfo.unknown_names, mult_degree)
            for m_exps in mult.exponents:
                extra.new_row(
                    RowInfo(kind="support_eq", measure=minfo.mid, monomial=m_exps,
                            detail=f"eq {k}")
                )
                for gexps, gcoef in gi.terms.items():
                    var = minfo.offset + minfo.basis.index(
                        tuple(a + b for a, b in zip(m_exps, gexps))
                    )
                    extra.add(var, gcoef)

    if extra.current >= 0:
        A = sp.vstack([mp.eq, extra.matrix(mp.n_vars)], format="csr")
        b = np.concatenate([mp.eq_rhs, np.array(extra.rhs)])
    else:
        A, b = mp.eq, mp.eq_rhs

    views = [_measure_view(mp.measures[mid]) for mid in (INITIAL, FINAL, TRAJECTORY)]
    return ConicProgram(
        n=mp.n_vars,
        c=mp.c.copy(),
        offset=mp.obj_offset,
        A=A,
        b=b.copy(),
        blocks=blocks,
        nonneg_A=mp.ineq,
        nonneg_b=mp.ineq_rhs.copy(),
        measure_views=views,
    )
