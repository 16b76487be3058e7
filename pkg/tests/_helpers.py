"""Shared problem builders and reference trajectories for the test suite."""

import numpy as np

from polyoc import (
    BoundarySpec,
    DiracFactor,
    SupportConstraint,
    UniformFactor,
    VarSet,
    build_problem,
    parse_poly,
)

VS2 = VarSet(states=("x1", "x2"), inputs=("u",))


def point_mass(names, values):
    return DiracFactor(tuple(names), np.array([values], dtype=float), np.array([1.0]))


def min_time_problem():
    """Double integrator steered from (1, 1) to the origin in minimum time.

    The velocity floor x2 >= -1 blocks the unconstrained two-arc solution;
    the optimum brakes to the floor, slides along it, then accelerates into
    the origin, taking T = 3.5 in total.
    """
    return build_problem(
        varset=VS2,
        dynamics=[parse_poly("x2", VS2), parse_poly("u", VS2)],
        scost=parse_poly("1", VS2),
        initial=BoundarySpec(dirac=point_mass(("x1", "x2"), [1.0, 1.0])),
        final=BoundarySpec(dirac=point_mass(("x1", "x2"), [0.0, 0.0])),
        tconstraints=[
            SupportConstraint.normalize(parse_poly("x2", VS2), ">=", parse_poly("-1", VS2)),
            SupportConstraint.normalize(parse_poly("u", VS2), ">=", parse_poly("-1", VS2)),
            SupportConstraint.normalize(parse_poly("u", VS2), "<=", parse_poly("1", VS2)),
        ],
    )


def optimal_bang_bang(dt=1e-4):
    """Sampled phases of the true minimum-time trajectory.

    Returns ``[(t, x1, x2, u), ...]`` per phase: full braking on [0, 2],
    sliding along x2 = -1 on [2, 2.5], full acceleration on [2.5, 3.5].
    """
    phases = [
        (0.0, 2.0, -1.0, lambda s: (1.0 + s - 0.5 * s * s, 1.0 - s)),
        (2.0, 2.5, 0.0, lambda s: (1.0 - s, -1.0 + 0.0 * s)),
        (2.5, 3.5, 1.0, lambda s: (0.5 - s + 0.5 * s * s, -1.0 + s)),
    ]
    out = []
    for t0, t1, u, state in phases:
        n = int(round((t1 - t0) / dt)) + 1
        t = np.linspace(t0, t1, n)
        x1, x2 = state(t - t0)
        out.append((t, np.asarray(x1), np.asarray(x2), u))
    return out


def cubic_regulator_problem():
    """Cubic-drift system regulated from a uniform start to the origin.

    Dynamics (x2 + x1^2 - x1^3, u), quadratic running cost with a light
    input penalty (R = 1/100), initial state uniform on [-1, 1]^2, final
    state a point mass at the origin, free horizon.
    """
    return build_problem(
        varset=VS2,
        dynamics=[parse_poly("x2 + x1^2 - x1^3", VS2), parse_poly("u", VS2)],
        scost=parse_poly("x1^2 + x2^2 + 0.01*u^2", VS2),
        initial=BoundarySpec(
            uniform=UniformFactor(
                ("x1", "x2"), np.array([-1.0, -1.0]), np.array([1.0, 1.0])
            )
        ),
        final=BoundarySpec(dirac=point_mass(("x1", "x2"), [0.0, 0.0])),
    )


def quadratic_value_problem():
    """A problem whose value function is exactly v = x2^2 with bound 1."""
    box = []
    for name in ("x1", "x2"):
        box.append(
            SupportConstraint.normalize(
                parse_poly(name, VS2), ">=", parse_poly("-1.1", VS2)
            )
        )
        box.append(
            SupportConstraint.normalize(
                parse_poly(name, VS2), "<=", parse_poly("1.1", VS2)
            )
        )
    return build_problem(
        varset=VS2,
        dynamics=[parse_poly("-x1^3 + x1*u", VS2), parse_poly("u", VS2)],
        scost=parse_poly("x2^2 + u^2", VS2),
        initial=BoundarySpec(dirac=point_mass(("x1", "x2"), [1.0, 1.0])),
        final=BoundarySpec(dirac=point_mass(("x1", "x2"), [0.0, 0.0])),
        tconstraints=box,
    )


def scalar_lq_problem():
    """Scalar integrator with quadratic cost; optimal value 1, feedback -x."""
    vs = VarSet(states=("x",), inputs=("u",))
    return build_problem(
        varset=vs,
        dynamics=[parse_poly("u", vs)],
        scost=parse_poly("x^2 + u^2", vs),
        initial=BoundarySpec(dirac=DiracFactor(("x",), np.array([[1.0]]), np.array([1.0]))),
        final=BoundarySpec(dirac=DiracFactor(("x",), np.array([[0.0]]), np.array([1.0]))),
        tconstraints=[
            SupportConstraint.normalize(parse_poly("x", vs), ">=", parse_poly("-1.5", vs)),
            SupportConstraint.normalize(parse_poly("x", vs), "<=", parse_poly("1.5", vs)),
            SupportConstraint.normalize(parse_poly("u", vs), ">=", parse_poly("-1.5", vs)),
            SupportConstraint.normalize(parse_poly("u", vs), "<=", parse_poly("1.5", vs)),
        ],
    )
