"""Tests for optimal-control problem assembly, validation, and rescaling."""

import math

import numpy as np
import pytest

from polyoc import (
    BoundarySpec,
    DiracFactor,
    MomentConstraint,
    Polynomial,
    ProblemError,
    SupportConstraint,
    UniformFactor,
    VarSet,
    apply_scaling,
    build_problem,
    parse_poly,
    time_dependence,
)

VS = VarSet(states=("x1", "x2"), inputs=("u",))


def _point(values):
    return DiracFactor(
        tuple(f"x{k+1}" for k in range(len(values))),
        np.array([values], dtype=float),
        np.array([1.0]),
    )


def _min_time_problem():
    """Double integrator steered to the origin in minimum time."""
    return build_problem(
        varset=VS,
        dynamics=[parse_poly("x2", VS), parse_poly("u", VS)],
        scost=parse_poly("1", VS),
        horizon=None,
        initial=BoundarySpec(dirac=_point([1.0, 1.0])),
        final=BoundarySpec(dirac=_point([0.0, 0.0])),
        tconstraints=[
            SupportConstraint.normalize(parse_poly("x2", VS), ">=", parse_poly("-1", VS)),
            SupportConstraint.normalize(parse_poly("u", VS), ">=", parse_poly("-1", VS)),
            SupportConstraint.normalize(parse_poly("u", VS), "<=", parse_poly("1", VS)),
        ],
    )


# ---------------------------------------------------------------------------
# constraint normalization
# ---------------------------------------------------------------------------


def test_normalize_orients_inequalities():
    x2 = parse_poly("x2", VS)
    one = parse_poly("1", VS)

    c = SupportConstraint.normalize(x2, ">=", -one)
    assert not c.equality
    assert c.poly == parse_poly("x2 + 1", VS)  # canonical g >= 0

    c = SupportConstraint.normalize(x2, "<=", one)
    assert c.poly == parse_poly("1 - x2", VS)

    # strict inequalities collapse to their closures
    assert SupportConstraint.normalize(x2, "<", one).poly == parse_poly("1 - x2", VS)
    assert SupportConstraint.normalize(x2, ">", -one).poly == parse_poly("x2 + 1", VS)

    for op in ("=", "=="):
        c = SupportConstraint.normalize(x2, op, one)
        assert c.equality
        assert c.poly == parse_poly("x2 - 1", VS)

    with pytest.raises(ProblemError):
        SupportConstraint.normalize(x2, "!=", one)


def test_normalize_is_idempotent_on_canonical_form():
    g = parse_poly("1 - x2^2", VS)
    c = SupportConstraint.normalize(g, ">=", Polynomial.zero(VS))
    c2 = SupportConstraint.normalize(c.poly, ">=", Polynomial.zero(VS))
    assert c2.poly == c.poly and c2.equality == c.equality


def test_moment_constraint_relations():
    g = parse_poly("u^2", VS)
    for rel in ("<=", "=", ">="):
        mc = MomentConstraint(g, rel, 1.0)
        assert mc.relation == rel
    with pytest.raises(ProblemError):
        MomentConstraint(g, "<", 1.0)


# ---------------------------------------------------------------------------
# boundary specifications
# ---------------------------------------------------------------------------


def test_boundary_factor_accounting():
    spec = BoundarySpec(
        dirac=DiracFactor(("x1",), np.array([[1.0]]), np.array([1.0])),
        uniform=UniformFactor(("x2",), np.array([-1.0]), np.array([1.0])),
    )
    assert sorted(spec.assigned_vars()) == ["x1", "x2"]
    assert spec.free_vars(("x1", "x2")) == ()
    assert spec.is_known(("x1", "x2"))

    partial = BoundarySpec(dirac=DiracFactor(("x1",), np.array([[0.0]]), np.array([1.0])))
    assert partial.free_vars(("x1", "x2")) == ("x2",)
    assert not partial.is_known(("x1", "x2"))


def test_problem_construction_valid():
    p = _min_time_problem()
    assert p.states == ("x1", "x2")
    assert p.inputs == ("u",)
    assert p.time is None
    assert p.horizon is None
    assert p.max_dynamics_degree == 1
    assert p.initial.is_known(p.states) and p.final.is_known(p.states)
    assert len(p.tconstraints) == 3
    assert p.scost.constant_value() == 1.0


def test_dynamics_dimension_mismatch():
    with pytest.raises(ProblemError):
        build_problem(varset=VS, dynamics=[parse_poly("x2", VS)])


def test_terminal_cost_cannot_use_inputs():
    with pytest.raises(ProblemError):
        build_problem(
            varset=VS,
            dynamics=[parse_poly("x2", VS), parse_poly("u", VS)],
            fcost=parse_poly("u^2", VS),
        )


def test_boundary_conflicts_rejected():
    overlap = BoundarySpec(
        dirac=DiracFactor(("x1",), np.array([[1.0]]), np.array([1.0])),
        uniform=UniformFactor(("x1",), np.array([-1.0]), np.array([1.0])),
    )
    with pytest.raises(ProblemError, match="both a dirac and a uniform"):
        build_problem(
            varset=VS,
            dynamics=[parse_poly("x2", VS), parse_poly("u", VS)],
            initial=overlap,
        )

    nonstate = BoundarySpec(dirac=DiracFactor(("u",), np.array([[0.0]]), np.array([1.0])))
    with pytest.raises(ProblemError, match="non-state"):
        build_problem(
            varset=VS,
            dynamics=[parse_poly("x2", VS), parse_poly("u", VS)],
            final=nonstate,
        )

    # a support constraint may not re-touch an assigned variable
    pinned = BoundarySpec(
        dirac=DiracFactor(("x1",), np.array([[1.0]]), np.array([1.0])),
        constraints=(
            SupportConstraint.normalize(
                parse_poly("x1", VS), ">=", Polynomial.zero(VS)
            ),
        ),
    )
    with pytest.raises(ProblemError, match="already assigned"):
        build_problem(
            varset=VS,
            dynamics=[parse_poly("x2", VS), parse_poly("u", VS)],
            initial=pinned,
        )


def test_horizon_validation():
    dyn = [parse_poly("x2", VS), parse_poly("u", VS)]
    with pytest.raises(ProblemError):
        build_problem(varset=VS, dynamics=dyn, horizon=0.0)
    with pytest.raises(ProblemError):
        build_problem(varset=VS, dynamics=dyn, horizon=-1.0)
    with pytest.raises(ProblemError):
        build_problem(varset=VS, dynamics=dyn, tmax=-2.0)
    assert build_problem(varset=VS, dynamics=dyn, horizon=1.5).horizon == 1.5


# ---------------------------------------------------------------------------
# time dependence
# ---------------------------------------------------------------------------


def test_time_dependence_cases():
    # free horizon, autonomous data: time-independent test functions
    assert not time_dependence(_min_time_problem())

    # a fixed horizon forces time dependence
    vs = VarSet(states=("x",), inputs=("u",), time="t")
    fixed = build_problem(
        varset=vs, dynamics=[parse_poly("u", vs)], horizon=1.0
    )
    assert time_dependence(fixed)

    # free horizon with time-varying data is time-dependent too
    varying = build_problem(
        varset=vs, dynamics=[parse_poly("t*u", vs)], tmax=2.0
    )
    assert time_dependence(varying)

    # an explicit override wins in both directions
    forced_on = build_problem(
        varset=vs, dynamics=[parse_poly("u", vs)], testtime=True, tmax=2.0
    )
    assert time_dependence(forced_on)
    forced_off = build_problem(
        varset=vs, dynamics=[parse_poly("t*u", vs)], testtime=False
    )
    assert not time_dependence(forced_off)


# ---------------------------------------------------------------------------
# variable rescaling
# ---------------------------------------------------------------------------


def test_scaling_identity():
    p = _min_time_problem()
    q = apply_scaling(p, {"x1": 1.0, "x2": 1.0, "u": 1.0})
    assert q.dynamics == p.dynamics
    assert q.scost == p.scost
    np.testing.assert_allclose(q.initial.dirac.points, p.initial.dirac.points)


def test_scaling_moves_dirac_points_and_dynamics():
    p = _min_time_problem()
    q = apply_scaling(p, {"x1": 2.0})
    # original start x1 = 1 sits at 0.5 in units of the doubled variable
    np.testing.assert_allclose(q.initial.dirac.points, [[0.5, 1.0]])
    # x1' = x2 becomes 2*x1' = x2, i.e. x1' = 0.5*x2
    assert q.dynamics[0] == parse_poly("0.5*x2", VS)
    assert q.dynamics[1] == p.dynamics[1]


def test_scaling_round_trip():
    p = _min_time_problem()
    factors = {"x1": 2.0, "x2": 0.5, "u": 1.25}
    inverse = {k: 1.0 / v for k, v in factors.items()}
    q = apply_scaling(apply_scaling(p, factors), inverse)
    for a, b in zip(q.dynamics, p.dynamics):
        diff = a - b
        assert all(abs(c) < 1e-12 for c in diff.terms.values())
    np.testing.assert_allclose(
        q.initial.dirac.points, p.initial.dirac.points, atol=1e-12
    )
    np.testing.assert_allclose(
        q.final.dirac.points, p.final.dirac.points, atol=1e-12
    )
    for ca, cb in zip(q.tconstraints, p.tconstraints):
        diff = ca.poly - cb.poly
        assert all(abs(c) < 1e-12 for c in diff.terms.values())


def test_scaling_rejects_bad_factors():
    p = _min_time_problem()
    with pytest.raises(ProblemError):
        apply_scaling(p, {"x1": 0.0})
    with pytest.raises(ProblemError):
        apply_scaling(p, {"x1": -1.0})
    with pytest.raises(ProblemError):
        apply_scaling(p, {"nope": 2.0})


def test_scaled_solve_matches_unscaled():
    """Rescaling a state must leave the relaxation's optimal value alone."""
    from polyoc import (
        SolverOptions,
        assemble_conic,
        build_moment_problem,
        resolve_degrees,
        solve_conic,
    )

    vs = VarSet(states=("x",), inputs=("u",))
    p = build_problem(
        varset=vs,
        dynamics=[parse_poly("u", vs)],
        scost=parse_poly("x^2 + u^2", vs),
        initial=BoundarySpec(dirac=DiracFactor(("x",), np.array([[1.0]]), np.array([1.0]))),
        final=BoundarySpec(dirac=DiracFactor(("x",), np.array([[0.0]]), np.array([1.0]))),
        tconstraints=[
            SupportConstraint.normalize(parse_poly("x^2", vs), "<=", parse_poly("2.25", vs)),
            SupportConstraint.normalize(parse_poly("u^2", vs), "<=", parse_poly("2.25", vs)),
        ],
    )
    values = []
    for factors in ({}, {"x": 2.0}):
        q = apply_scaling(p, factors) if factors else p
        plan = resolve_degrees(q, mode="tf", degree=4)
        sol = solve_conic(assemble_conic(build_moment_problem(q, plan)), SolverOptions())
        assert sol.status.value == "optimal"
        values.append(sol.objective)
    assert math.isclose(values[0], values[1], rel_tol=0, abs_tol=1e-5)
