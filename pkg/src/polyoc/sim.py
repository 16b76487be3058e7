"""Closed-loop simulation under a polynomial state feedback.

Integrates the polynomial dynamics with classical fourth-order Runge-Kutta,
evaluating the controller at every stage and clamping the inputs to any box
bounds found among the trajectory constraints.  The running cost accumulates
trapezoidally on the same grid, and the sampled path doubles as an empirical
occupation measure: :func:`empirical_moments` integrates monomials along it,
which lets tests substitute a genuine trajectory into the weak dynamics
equalities of the relaxation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .moments import DiracFactor, MomentBasis
from .ocp import OcpProblem, ProblemError
from .poly import Polynomial, VarSet, pack_family

from .hjb import detect_bounds


@dataclass
class Trajectory:
    """Sampled closed-loop path on a uniform grid.

    ``running_cost[k]`` is the trapezoidal integral of the running cost up to
    ``times[k]``; ``violations`` lists, per trajectory constraint, the largest
    positive violation of its normalized ``g >= 0`` form along the path.
    """

    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    running_cost: np.ndarray
    state_names: tuple[str, ...]
    input_names: tuple[str, ...]
    dt: float
    violations: list[float] = field(default_factory=list)
    blew_up: bool = False

    @property
    def total_cost(self) -> float:
        return float(self.running_cost[-1]) if self.running_cost.size else 0.0

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]


def _pick_time_name(p: OcpProblem, polys) -> str:
    """Time slot name for the kernel layout ``(t, x, u)``."""
    reserved = set(p.states) | set(p.inputs)
    used = set()
    for q in polys:
        for nm in q.varset.names:
            if q.uses(nm) and nm not in reserved:
                used.add(nm)
    if len(used) > 1:
        raise ProblemError(f"multiple non-state variables in use: {sorted(used)}")
    if used:
        return used.pop()
    if p.time is not None:
        return p.time
    for cand in ("t", "t_", "time_", "tvar_"):
        if cand not in reserved:
            return cand
    raise ProblemError("could not allocate a time variable name")


def _dirac_at_origin(p: OcpProblem) -> bool:
    spec = p.final
    if spec.uniform is not None or spec.free_vars(p.states):
        return False
    d = spec.dirac
    return (
        isinstance(d, DiracFactor)
        and d.points.shape[0] == 1
        and not np.any(d.points)
    )


def simulate(
    p: OcpProblem,
    controllers,
    x0,
    t_max: float,
    dt: float,
    stop_radius: float = 1e-3,
) -> Trajectory:
    """Integrate the closed loop from ``x0`` for up to ``t_max`` seconds.

    Inputs are clamped to box bounds detected among the trajectory
    constraints.  When the final measure is a Dirac at the origin the run
    stops early once ``|x| <= stop_radius``.  A non-finite state ends the
    trajectory at the last finite node with ``blew_up`` set.
    """
    if dt <= 0:
        raise ProblemError("dt must be positive")
    if t_max < dt:
        raise ProblemError("t_max must be at least dt")
    controllers = list(controllers)
    if len(controllers) != len(p.inputs):
        raise ProblemError(
            f"expected {len(p.inputs)} controller polynomials, got {len(controllers)}"
        )
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (len(p.states),):
        raise ProblemError(f"x0 must have {len(p.states)} components")

    tname = _pick_time_name(p, list(p.dynamics) + controllers)
    layout = VarSet(states=p.states, inputs=p.inputs, time=tname)
    dyn_packed = pack_family([f.adapt(layout) for f in p.dynamics], layout)
    for u in controllers:
        for nm in p.inputs:
            if nm in u.varset and u.uses(nm):
                raise ProblemError("controller polynomials must not reference inputs")
    ctl_packed = pack_family([u.adapt(layout) for u in controllers], layout)

    bounds = detect_bounds(p.tconstraints)
    m = len(p.inputs)
    ulo = np.full(m, -np.inf)
    uhi = np.full(m, np.inf)
    for j, nm in enumerate(p.inputs):
        lo, hi = bounds.get(nm, (None, None))
        if lo is not None:
            ulo[j] = lo
        if hi is not None:
            uhi[j] = hi

    nsteps = max(1, int(round(t_max / dt)))
    radius = stop_radius if _dirac_at_origin(p) else -1.0
    ts, xs, us = _kernels.rk4_closed_loop(
        dyn_packed, ctl_packed, x0, dt, nsteps, ulo, uhi, radius
    )

    blew_up = False
    finite = np.isfinite(xs).all(axis=1) & np.isfinite(us).all(axis=1)
    if not finite.all():
        last = int(np.argmin(finite))  # first bad node
        if last == 0:
            raise ProblemError("state is non-finite at the initial node")
        ts, xs, us = ts[:last], xs[:last], us[:last]
        blew_up = True

    pts = np.column_stack([ts, xs, us])
    exps, coeffs = p.scost.adapt(layout).packed()
    h = _kernels.eval_poly_many(exps, coeffs, pts)
    cost = np.zeros(ts.shape[0])
    if ts.shape[0] > 1:
        cost[1:] = np.cumsum(0.5 * dt * (h[1:] + h[:-1]))

    violations = []
    for c in p.tconstraints:
        gexps, gcoeffs = c.poly.adapt(layout).packed()
        vals = _kernels.eval_poly_many(gexps, gcoeffs, pts)
        if c.equality:
            violations.append(float(np.max(np.abs(vals))) if vals.size else 0.0)
        else:
            violations.append(float(max(0.0, -np.min(vals))) if vals.size else 0.0)

    return Trajectory(
        times=ts,
        states=xs,
        inputs=us,
        running_cost=cost,
        state_names=p.states,
        input_names=p.inputs,
        dt=float(dt),
        violations=violations,
        blew_up=blew_up,
    )


def empirical_moments(traj: Trajectory, basis: MomentBasis) -> np.ndarray:
    """Trapezoidal occupation moments of the trajectory, one per basis monomial.

    Basis variables must name the trajectory's states/inputs; any other
    single name is taken as time.
    """
    cols = []
    time_taken = False
    for nm in basis.names:
        if nm in traj.state_names:
            cols.append(traj.states[:, traj.state_names.index(nm)])
        elif nm in traj.input_names:
            cols.append(traj.inputs[:, traj.input_names.index(nm)])
        elif not time_taken:
            cols.append(traj.times)
            time_taken = True
        else:
            raise ProblemError(f"unknown trajectory variable {nm!r}")
    if traj.times.shape[0] < 2:
        return np.zeros(len(basis))
    pts = np.column_stack(cols)
    return _kernels.monomial_trapezoid(basis.exponent_matrix(), pts, traj.dt)


def export_csv(traj: Trajectory, path) -> None:
    """Write the trajectory as ``t,<states>,<inputs>,cost`` rows."""
    header = ",".join(["t", *traj.state_names, *traj.input_names, "cost"])
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for k in range(traj.times.shape[0]):
            row = [traj.times[k], *traj.states[k], *traj.inputs[k], traj.running_cost[k]]
            fh.write(",".join(f"{val:.12g}" for val in row) + "\n")
