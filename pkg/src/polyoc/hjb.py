"""Value-function recovery from dual solutions, and controller synthesis.

The equality duals of the Liouville rows assemble into a polynomial that is
(numerically) a subsolution of the Hamilton-Jacobi-Bellman equation.  The
sign and anchoring conventions are pinned by a testable contract rather than
by solver internals:

    (i)   L_f v + h >= -eps           on the trajectory constraint set,
    (ii)  v(T, .) <= H + eps          on the final set,
    (iii) <v(0, .), mu_I> = bound     within eps_b
          (min over the initial set when the initial measure is free).

Here ``h`` is the running cost, ``H`` the final cost and ``bound`` the
reported lower bound of the relaxation.  Verification is sampling-based:
quasi-random points are drawn inside each constraint set (plus box corners
and center, which catch boundary minimizers exactly) and the polynomial
inequalities are checked pointwise.

For input-affine dynamics with a constant positive definite quadratic input
cost, the pointwise minimizer of the HJB inequality is available in closed
form and :func:`synthesize_controller` returns it as a polynomial state
feedback.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from . import _kernels
from .moments import KnownFactor
from .ocp import OcpProblem, ProblemError, SupportConstraint
from .poly import Polynomial, VarSet, lie_derivative
from .relaxation import INITIAL, TRAJECTORY, MomentProblem
from .solver import ConicSolution


class SubsolutionError(RuntimeError):
    """Extraction produced a polynomial violating the subsolution contract."""

    def __init__(self, message: str, report: dict):
        super().__init__(message)
        self.report = report


@dataclass
class ValueFunction:
    """Polynomial lower approximation of the value function.

    ``v`` is expressed in original time units over ``(time?, states)``;
    ``horizon`` carries the fixed horizon (or the time bound of a free
    horizon with time-dependent data) used when checking the terminal
    inequality.
    """

    v: Polynomial
    tf_degree: int
    bound: float
    time_name: str | None = None
    horizon: float | None = None
    verification: dict | None = None

    def __call__(self, t: float, x) -> float:
        point = {nm: xi for nm, xi in zip(self.v.varset.states, x)}
        if self.time_name is not None:
            point[self.time_name] = t
        return self.v.evaluate(point)


# ---------------------------------------------------------------------------
# sampling helpers
# ---------------------------------------------------------------------------

_REJECT_TOL = 1e-9


def detect_bounds(
    constraints, names=None
) -> dict[str, tuple[float | None, float | None]]:
    """Box bounds implied by single-variable affine constraints.

    Scans inequality constraints of the form ``a*x + b >= 0`` and returns the
    tightest implied ``(lower, upper)`` per variable; anything non-affine or
    multivariate is ignored.
    """
    out: dict[str, tuple[float | None, float | None]] = {}
    for c in constraints:
        if c.equality:
            continue
        g = c.poly
        used = [nm for nm in g.varset.names if g.uses(nm)]
        if len(used) != 1 or g.degree > 1:
            continue
        name = used[0]
        nv = len(g.varset)
        idx = g.varset.index(name)
        lin = [0] * nv
        lin[idx] = 1
        a = g.coefficient(tuple(lin))
        b = g.coefficient((0,) * nv)
        if a == 0.0:
            continue
        lo, hi = out.get(name, (None, None))
        val = -b / a
        if a > 0:
            lo = val if lo is None else max(lo, val)
        else:
            hi = val if hi is None else min(hi, val)
        out[name] = (lo, hi)
    if names is not None:
        return {nm: out.get(nm, (None, None)) for nm in names}
    return out


def _sobol_unit(nvars: int, n: int, seed: int) -> np.ndarray:
    sampler = qmc.Sobol(d=nvars, scramble=True, seed=seed)
    m = max(1, int(math.ceil(math.log2(max(2, n)))))
    return sampler.random_base2(m)[:n]


def _eval_on(q: Polynomial, names, pts: np.ndarray) -> np.ndarray:
    """Evaluate ``q`` on points whose columns are ordered as ``names``."""
    sub = np.zeros((pts.shape[0], len(q.varset)))
    lookup = {nm: k for k, nm in enumerate(names)}
    for i, nm in enumerate(q.varset.names):
        if nm in lookup:
            sub[:, i] = pts[:, lookup[nm]]
        elif q.degree_in(nm) > 0:
            raise ProblemError(f"cannot evaluate {nm!r}: not among sample variables")
    exps, coeffs = q.packed()
    return _kernels.eval_poly_many(exps, coeffs, sub)


def _sample_set(names, box, constraints, n, seed) -> np.ndarray:
    """Quasi-random points in a box, rejected against polynomial inequalities.

    Box corners and the center are appended so that minimizers on the
    boundary of pure box sets are hit exactly.
    """
    names = tuple(names)
    if not names:
        return np.zeros((1, 0))
    lows = np.array([box[nm][0] for nm in names])
    highs = np.array([box[nm][1] for nm in names])
    unit = _sobol_unit(len(names), n, seed)
    pts = lows + unit * (highs - lows)
    extra = [0.5 * (lows + highs)]
    if len(names) <= 12:
        for corner in itertools.product(*zip(lows, highs)):
            extra.append(np.array(corner))
    pts = np.vstack([pts] + [e[None, :] for e in extra])
    keep = np.ones(pts.shape[0], dtype=bool)
    for c in constraints:
        if c.equality:
            continue  # zero-volume slices cannot be rejection-sampled
        keep &= _eval_on(c.poly, names, pts) >= -_REJECT_TOL
    pts = pts[keep]
    if pts.shape[0] == 0:
        raise ProblemError(
            "could not sample the constraint set: no box point satisfies the "
            "polynomial constraints"
        )
    return pts


def _resolve_box(names, detected, default=(-1.0, 1.0)) -> dict:
    out = {}
    for nm in names:
        lo, hi = detected.get(nm, (None, None))
        lo = default[0] if lo is None else lo
        hi = default[1] if hi is None else hi
        if hi < lo:
            raise ProblemError(f"empty bound interval for variable {nm!r}")
        out[nm] = (lo, hi)
    return out


def _integrate_known(q: Polynomial, factors: list[KnownFactor]) -> float:
    """Integral of ``q`` against a product of known factors covering its vars."""
    covered = {v for f in factors for v in f.variables}
    total = 0.0
    for exps, coeff in q.terms.items():
        by_name = dict(zip(q.varset.names, exps))
        val = coeff
        for nm, e in by_name.items():
            if e and nm not in covered:
                raise ProblemError(f"variable {nm!r} is not integrated by any factor")
        for f in factors:
            val *= f.moment([by_name.get(v, 0) for v in f.variables])
        total += val
    return total


def _partial_integrate(q: Polynomial, factors, free_names) -> Polynomial:
    """Integrate the known factors out of ``q``; polynomial in the free vars."""
    vsf = VarSet(states=tuple(free_names))
    covered = {v for f in factors for v in f.variables}
    terms: dict[tuple[int, ...], float] = {}
    for exps, coeff in q.terms.items():
        by_name = dict(zip(q.varset.names, exps))
        for nm, e in by_name.items():
            if e and nm not in covered and nm not in free_names:
                raise ProblemError(f"variable {nm!r} neither integrated nor free")
        val = coeff
        for f in factors:
            val *= f.moment([by_name.get(v, 0) for v in f.variables])
        key = tuple(by_name.get(nm, 0) for nm in free_names)
        terms[key] = terms.get(key, 0.0) + val
    return Polynomial(vsf, terms)


# ---------------------------------------------------------------------------
# extraction
# ---------------------------------------------------------------------------


def extract_subsolution(
    mp: MomentProblem,
    sol: ConicSolution,
    samples: int = 10_000,
    seed: int = 0,
) -> ValueFunction:
    """Assemble the dual polynomial and verify the subsolution contract.

    The Liouville-row duals weight the test monomials; the trajectory
    mass-row dual becomes a linear-in-time term; a constant is anchored so
    the initial-measure identity (iii) holds exactly.  Raises
    :class:`SubsolutionError` (carrying the verification report) when the
    sampled contract is violated beyond tolerance.
    """
    p = mp.problem
    nw = len(mp.test_basis)
    if sol.eq_duals.shape[0] < nw:
        raise ProblemError("dual vector does not cover the Liouville rows")

    terms: dict[tuple[int, ...], float] = {}
    for i, w_exps in enumerate(mp.test_basis.exponents):
        lam = sol.eq_duals[i]
        if lam != 0.0:
            terms[w_exps] = terms.get(w_exps, 0.0) - lam
    v = Polynomial(mp.test_varset, terms)

    gamma_T = 0.0
    gamma_I = 0.0
    for k, info in enumerate(mp.eq_info):
        if info.kind == "mass" and info.measure == TRAJECTORY:
            gamma_T = float(sol.eq_duals[k])
        elif info.kind == "mass" and info.measure == INITIAL:
            gamma_I = float(sol.eq_duals[k])
    for k, info in enumerate(mp.ineq_info):
        if info.kind == "mass" and info.measure == TRAJECTORY:
            gamma_T = -float(sol.nonneg_duals[k])

    bound = float(sol.objective)
    tname = mp.tname
    if tname is not None:
        # internal time lives on [0, 1]; return to original units
        v = v.scale_var(tname, 1.0 / mp.t_scale)
        v = v - gamma_T * Polynomial.variable(mp.test_varset, tname)

    v0 = v.substitute_value(tname, 0.0) if tname is not None else v
    init = mp.measures[INITIAL]
    if init.is_known:
        kappa = bound - _integrate_known(v0, init.known)
    else:
        kappa = bound - gamma_I
    v = v + kappa

    vf = ValueFunction(
        v=v,
        tf_degree=mp.plan.tf_degree,
        bound=bound,
        time_name=tname,
        horizon=float(mp.t_scale) if mp.t_scale is not None else None,
    )
    report = verify_subsolution(vf, p, samples=samples, seed=seed)
    vf.verification = report
    if not report["passed"]:
        raise SubsolutionError(
            "extracted polynomial violates the subsolution contract: "
            f"hjb_min_residual={report['hjb_min_residual']:.3e} "
            f"terminal_max_violation={report['terminal_max_violation']:.3e} "
            f"bound_error={report['bound_error']:.3e} "
            f"(eps={report['eps']:.3e}, eps_bound={report['eps_bound']:.3e})",
            report,
        )
    return vf


def verify_subsolution(
    vf: ValueFunction,
    p: OcpProblem,
    samples: int = 10_000,
    seed: int = 0,
) -> dict:
    """Sample-based check of the subsolution contract; returns the report.

    The report records the minimum HJB residual over the trajectory set, the
    maximum terminal-inequality violation over the final set, the initial
    identity error, the tolerances, and the sampling parameters.
    """
    tname = vf.time_name
    ext_vs = VarSet(states=p.states, inputs=p.inputs, time=tname)
    dyn = [f.adapt(ext_vs) for f in p.dynamics]
    residual = lie_derivative(vf.v.adapt(ext_vs), dyn, p.states, include_time=True)
    residual = residual + p.scost.adapt(ext_vs)

    scale = max([1.0, abs(vf.bound)] + [abs(c) for c in vf.v.terms.values()])
    eps = 1e-4 * (1.0 + scale)
    eps_b = 1e-5 * (1.0 + abs(vf.bound))

    # (i) running inequality on the trajectory set
    traj_names = ((tname,) if tname else ()) + p.states + p.inputs
    detected = detect_bounds(p.tconstraints)
    box = _resolve_box(traj_names, detected)
    if tname is not None:
        lo, hi = detected.get(tname, (None, None))
        box[tname] = (max(0.0, lo or 0.0), vf.horizon if hi is None else min(hi, vf.horizon))
    pts = _sample_set(traj_names, box, p.tconstraints, samples, seed)
    hjb_min = float(np.min(_eval_on(residual, traj_names, pts)))

    # (ii) terminal inequality on the final set
    fcost = p.fcost
    final = p.final
    fin_free = final.free_vars(p.states)
    timed_final = tname is not None and p.horizon is None
    term_max = -np.inf
    rng = np.random.default_rng(seed)
    n_fin = max(64, samples // 4)
    cols: dict[str, np.ndarray] = {}
    for f in final.known_factors():
        if hasattr(f, "points"):  # Dirac mixture: use the atoms themselves
            reps = f.points[rng.integers(0, f.points.shape[0], size=n_fin)]
            for k, vname in enumerate(f.variables):
                cols[vname] = reps[:, k]
        else:  # uniform box factor
            unit = _sobol_unit(len(f.variables), n_fin, seed + 1)
            for k, vname in enumerate(f.variables):
                lo, hi = f.lower[k], f.upper[k]
                cols[vname] = lo + unit[:, k] * (hi - lo)
    if fin_free:
        fbox = _resolve_box(fin_free, detect_bounds(final.constraints))
        fpts = _sample_set(fin_free, fbox, final.constraints, n_fin, seed + 2)
        reps = fpts[rng.integers(0, fpts.shape[0], size=n_fin)]
        for k, vname in enumerate(fin_free):
            cols[vname] = reps[:, k]
    if timed_final:
        cols[tname] = vf.horizon * _sobol_unit(1, n_fin, seed + 3)[:, 0]
    elif tname is not None:
        cols[tname] = np.full(n_fin, vf.horizon)
    fin_names = tuple(cols)
    fin_pts = np.column_stack([cols[nm] for nm in fin_names])
    vals = _eval_on(vf.v, fin_names, fin_pts) - _eval_on(fcost, fin_names, fin_pts)
    term_max = float(np.max(vals))

    # (iii) initial identity
    v0 = vf.v.substitute_value(tname, 0.0) if tname is not None else vf.v
    init = p.initial
    init_free = init.free_vars(p.states)
    if not init_free:
        bound_err = float(_integrate_known(v0, init.known_factors()) - vf.bound)
    else:
        phi = _partial_integrate(v0, init.known_factors(), init_free)
        ibox = _resolve_box(init_free, detect_bounds(init.constraints))
        ipts = _sample_set(init_free, ibox, init.constraints, samples, seed + 4)
        bound_err = float(np.min(_eval_on(phi, init_free, ipts)) - vf.bound)

    passed = hjb_min >= -eps and term_max <= eps and abs(bound_err) <= eps_b
    return {
        "passed": bool(passed),
        "hjb_min_residual": hjb_min,
        "terminal_max_violation": term_max,
        "bound_error": bound_err,
        "eps": eps,
        "eps_bound": eps_b,
        "samples": int(samples),
        "seed": int(seed),
    }


# ---------------------------------------------------------------------------
# controller synthesis
# ---------------------------------------------------------------------------


def _affine_input_split(p: OcpProblem):
    """Split dynamics as f = a(t, x) + B(x) u; error if not input-affine."""
    inputs = p.inputs
    upos = [p.varset.index(u) for u in inputs]
    drift: list[Polynomial] = []
    gain: list[list[Polynomial]] = []
    vs = p.varset
    for f in p.dynamics:
        a_terms: dict[tuple[int, ...], float] = {}
        b_terms: list[dict[tuple[int, ...], float]] = [{} for _ in inputs]
        for exps, coeff in f.terms.items():
            udeg = sum(exps[k] for k in upos)
            if udeg == 0:
                a_terms[exps] = a_terms.get(exps, 0.0) + coeff
            elif udeg == 1:
                j = next(i for i, k in enumerate(upos) if exps[k] == 1)
                stripped = list(exps)
                stripped[upos[j]] = 0
                key = tuple(stripped)
                b_terms[j][key] = b_terms[j].get(key, 0.0) + coeff
            else:
                raise ProblemError(
                    "controller synthesis requires dynamics affine in the input"
                )
        drift.append(Polynomial(vs, a_terms))
        gain.append([Polynomial(vs, bt) for bt in b_terms])
    return drift, gain


def _input_cost_matrix(p: OcpProblem) -> np.ndarray:
    """Constant positive definite R with scost = q(t, x) + u' R u."""
    inputs = p.inputs
    m = len(inputs)
    upos = [p.varset.index(u) for u in inputs]
    R = np.zeros((m, m))
    for exps, coeff in p.scost.terms.items():
        udeg = sum(exps[k] for k in upos)
        if udeg == 0:
            continue
        if udeg == 1:
            raise ProblemError(
                "controller synthesis requires a running cost without terms "
                "linear in the input"
            )
        if udeg > 2 or any(e for k, e in enumerate(exps) if k not in upos):
            raise ProblemError(
                "controller synthesis requires a constant quadratic input cost"
            )
        ks = [i for i, k in enumerate(upos) if exps[k] > 0]
        if len(ks) == 1:
            R[ks[0], ks[0]] += coeff
        else:
            R[ks[0], ks[1]] += 0.5 * coeff
            R[ks[1], ks[0]] += 0.5 * coeff
    if np.linalg.eigvalsh(R)[0] <= 0.0:
        raise ProblemError("input cost matrix is not positive definite")
    return R


def synthesize_controller(vf: ValueFunction, p: OcpProblem) -> list[Polynomial]:
    """Closed-form minimizer of the HJB inequality for input-affine problems.

    With f = a + B(x) u and running cost q + u' R u (constant R > 0), the
    pointwise minimizer of grad(v) . f + h over u is
    u = -(1/2) R^{-1} B(x)' grad_x v, returned as one polynomial per input.
    """
    if not p.inputs:
        raise ProblemError("controller synthesis needs at least one input")
    _, gain = _affine_input_split(p)
    R = _input_cost_matrix(p)
    Rinv = np.linalg.inv(R)
    tname = vf.time_name or p.time
    out_vs = VarSet(states=p.states, time=tname)
    grad = [vf.v.differentiate(s).adapt(out_vs) for s in p.states]
    m = len(p.inputs)
    bt_grad = []
    for j in range(m):
        acc = Polynomial.zero(out_vs)
        for i in range(len(p.states)):
            gij = gain[i][j]
            if not gij.is_zero():
                acc = acc + gij.adapt(out_vs) * grad[i]
        bt_grad.append(acc)
    controllers = []
    for j in range(m):
        acc = Polynomial.zero(out_vs)
        for k in range(m):
            if Rinv[j, k] != 0.0:
                acc = acc + (-0.5 * Rinv[j, k]) * bt_grad[k]
        controllers.append(acc)
    return controllers
