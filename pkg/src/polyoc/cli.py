"""Problem-file front end and command-line driver.

A problem file is a sectioned plain-text format::

    [variables]
    states = x1, x2
    inputs = u
    time = t            # optional

    [dynamics]
    x1' = x2            # one equation per state
    x2' = u

    [cost]
    integrand = 1       # running cost (default 0)
    final = 0           # terminal cost (default 0)
    horizon = free      # or a positive number of seconds

    [initial]           # one factor assignment or constraint per line
    dirac x1 = 1
    dirac x2 = 1
    # uniform x1 in [-1, 1]
    # dirac x1 x2 = 0 1 @ 0.8 ; 1 1 @ 0.2      (weighted mixture)
    # x1 >= 0                                   (support constraint, free vars)

    [final]
    dirac x1 = 0
    dirac x2 = 0

    [trajectory]        # pointwise constraints on (t, x, u)
    x2 >= -1
    u >= -1
    u <= 1

    [integral]          # constraints on integrals along the trajectory
    mom(u^2) <= 1

    [options]
    testtime = true     # force time-(in)dependent test functions
    scale x1 = 2        # per-variable scaling applied around the solve
    tmax = 5            # time bound for free-horizon time-dependent problems
    seed = 0            # verification sampling seed

``[variables]`` must come before any section that uses the variables, and
single-point ``dirac``/``uniform`` lines for different variables merge into
one product factor.

Subcommands: ``solve`` runs the relaxation pipeline and writes a JSON report
(status, lower bound, moment data, value function, controllers,
verification); ``simulate`` integrates the closed loop with a report's
controllers; ``verify`` re-checks the subsolution contract on a fresh grid.
Exit codes: 0 success/optimal, 2 infeasible or unbounded, 3 numerical
failure or a failed contract, 64 usage error, 1 other runtime errors.
"""

from __future__ import annotations

import argparse
import itertools
import json
import os
import re
import sys
import tempfile
import time
from dataclasses import dataclass

import numpy as np

from .hjb import (
    SubsolutionError,
    ValueFunction,
    detect_bounds,
    extract_subsolution,
    synthesize_controller,
    verify_subsolution,
    _eval_on,
    _integrate_known,
    _partial_integrate,
    _resolve_box,
)
from .moments import DiracFactor, UniformFactor
from .ocp import (
    BoundarySpec,
    MomentConstraint,
    OcpProblem,
    ProblemError,
    SupportConstraint,
    apply_scaling,
    build_problem,
)
from .poly import Polynomial, PolyError, VarSet, lie_derivative, parse_poly
from .relaxation import assemble_conic, build_moment_problem, resolve_degrees
from .sim import export_csv, simulate
from .solver import SolverOptions, Status, extract_moment_matrices, solve_conic

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_INFEASIBLE = 2
EXIT_NUMERICAL = 3
EXIT_USAGE = 64

_SECTIONS = (
    "variables",
    "dynamics",
    "cost",
    "initial",
    "final",
    "trajectory",
    "integral",
    "options",
)


class ProblemFileError(ValueError):
    """Malformed problem file, with the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        where = f"line {line}: " if line else ""
        super().__init__(f"{where}{message}")
        self.line = line


@dataclass
class LoadedProblem:
    """A parsed problem file plus the solver-session options it carried."""

    problem: OcpProblem
    scaling: dict[str, float]
    seed: int
    text: str


# ---------------------------------------------------------------------------
# problem-file parsing
# ---------------------------------------------------------------------------

_REL_SPLIT = re.compile(r"(<=|>=|==|<|>|=)")
_MOM_LINE = re.compile(r"^mom\s*\((.*)\)\s*(<=|>=|==|=)\s*(\S+)$")


def _strip(line: str) -> str:
    cut = line.find("#")
    if cut >= 0:
        line = line[:cut]
    return line.strip()


def _split_sections(text: str) -> dict[str, list[tuple[int, str]]]:
    sections: dict[str, list[tuple[int, str]]] = {}
    current: str | None = None
    order: list[str] = []
    for no, raw in enumerate(text.splitlines(), start=1):
        line = _strip(raw)
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip().lower()
            if name not in _SECTIONS:
                raise ProblemFileError(f"unknown section [{name}]", no)
            if name in sections:
                raise ProblemFileError(f"duplicate section [{name}]", no)
            sections[name] = []
            order.append(name)
            current = name
            continue
        if current is None:
            raise ProblemFileError(f"content before any section: {line!r}", no)
        sections[current].append((no, line))
    if "variables" not in sections:
        raise ProblemFileError("missing [variables] section")
    needs_vars = set(_SECTIONS) - {"variables", "options"}
    for name in order[: order.index("variables")]:
        if name in needs_vars:
            raise ProblemFileError(f"[variables] must precede [{name}]")
    return sections


def _parse_names(value: str, no: int) -> tuple[str, ...]:
    names = tuple(n.strip() for n in value.replace(",", " ").split())
    if not names:
        raise ProblemFileError("empty variable list", no)
    return names


def _parse_float(tok: str, no: int, what: str) -> float:
    try:
        return float(tok)
    except ValueError:
        raise ProblemFileError(f"malformed {what} {tok!r}", no) from None


def _parse_constraint(line: str, no: int, vs: VarSet) -> SupportConstraint:
    parts = _REL_SPLIT.split(line)
    if len(parts) != 3:
        raise ProblemFileError(
            f"expected one relation (<=, >=, =) in constraint {line!r}", no
        )
    lhs_text, op, rhs_text = parts
    try:
        lhs = parse_poly(lhs_text, vs)
        rhs = parse_poly(rhs_text, vs)
    except PolyError as exc:
        raise ProblemFileError(str(exc), no) from None
    return SupportConstraint.normalize(lhs, op, rhs)


def _parse_boundary(lines, vs: VarSet, states) -> BoundarySpec:
    dirac_simple: dict[str, float] = {}
    mixture: DiracFactor | None = None
    uniform_vars: list[str] = []
    uniform_lo: list[float] = []
    uniform_hi: list[float] = []
    constraints: list[SupportConstraint] = []
    for no, line in lines:
        if line.startswith("dirac"):
            body = line[len("dirac") :].strip()
            if "=" not in body:
                raise ProblemFileError("dirac line needs '=': dirac <vars> = <points>", no)
            names_text, points_text = body.split("=", 1)
            names = _parse_names(names_text, no)
            for nm in names:
                if nm not in states:
                    raise ProblemFileError(f"dirac assigns non-state {nm!r}", no)
            atoms = [a.strip() for a in points_text.split(";")]
            points, weights = [], []
            for atom in atoms:
                if "@" in atom:
                    coords_text, w_text = atom.split("@", 1)
                    w = _parse_float(w_text.strip(), no, "weight")
                else:
                    coords_text, w = atom, 1.0
                coords = [
                    _parse_float(tok, no, "coordinate") for tok in coords_text.split()
                ]
                if len(coords) != len(names):
                    raise ProblemFileError(
                        f"dirac point has {len(coords)} coordinates for "
                        f"{len(names)} variables",
                        no,
                    )
                points.append(coords)
                weights.append(w)
            if len(points) > 1 or len(names) > 1:
                if mixture is not None or dirac_simple:
                    raise ProblemFileError(
                        "a dirac mixture line cannot be combined with other "
                        "dirac lines in the same section",
                        no,
                    )
                try:
                    mixture = DiracFactor(names, np.array(points), np.array(weights))
                except PolyError as exc:
                    raise ProblemFileError(str(exc), no) from None
            else:
                if mixture is not None:
                    raise ProblemFileError(
                        "a dirac mixture line cannot be combined with other "
                        "dirac lines in the same section",
                        no,
                    )
                if names[0] in dirac_simple:
                    raise ProblemFileError(f"duplicate dirac line for {names[0]!r}", no)
                dirac_simple[names[0]] = points[0][0]
        elif line.startswith("uniform"):
            m = re.match(
                r"^uniform\s+(\w+)\s+in\s*\[\s*([^,\]]+)\s*,\s*([^\]]+)\s*\]$", line
            )
            if not m:
                raise ProblemFileError(
                    "uniform line must read: uniform <var> in [a, b]", no
                )
            nm = m.group(1)
            if nm not in states:
                raise ProblemFileError(f"uniform assigns non-state {nm!r}", no)
            if nm in uniform_vars:
                raise ProblemFileError(f"duplicate uniform line for {nm!r}", no)
            uniform_vars.append(nm)
            uniform_lo.append(_parse_float(m.group(2), no, "bound"))
            uniform_hi.append(_parse_float(m.group(3), no, "bound"))
        else:
            constraints.append(_parse_constraint(line, no, vs))
    dirac = mixture
    if dirac_simple:
        names = tuple(nm for nm in states if nm in dirac_simple)
        point = [[dirac_simple[nm] for nm in names]]
        dirac = DiracFactor(names, np.array(point), np.array([1.0]))
    uniform = None
    if uniform_vars:
        uniform = UniformFactor(
            tuple(uniform_vars), np.array(uniform_lo), np.array(uniform_hi)
        )
    return BoundarySpec(dirac=dirac, uniform=uniform, constraints=tuple(constraints))


def load_problem(path: str) -> LoadedProblem:
    """Parse a problem file into a validated problem plus session options."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    sections = _split_sections(text)

    states: tuple[str, ...] = ()
    inputs: tuple[str, ...] = ()
    tname: str | None = None
    for no, line in sections["variables"]:
        if "=" not in line:
            raise ProblemFileError(f"expected 'key = value', got {line!r}", no)
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "states":
            states = _parse_names(value, no)
        elif key == "inputs":
            inputs = _parse_names(value, no)
        elif key == "time":
            tname = value
        else:
            raise ProblemFileError(f"unknown [variables] key {key!r}", no)
    if not states:
        raise ProblemFileError("the [variables] section must declare states")
    try:
        vs = VarSet(states=states, inputs=inputs, time=tname)
    except PolyError as exc:
        raise ProblemFileError(str(exc)) from None

    equations: dict[str, Polynomial] = {}
    for no, line in sections.get("dynamics", []):
        m = re.match(r"^(\w+)\s*'\s*=\s*(.*)$", line)
        if not m:
            raise ProblemFileError(f"expected \"<state>' = <expression>\", got {line!r}", no)
        nm = m.group(1)
        if nm not in states:
            raise ProblemFileError(f"dynamics equation for non-state {nm!r}", no)
        if nm in equations:
            raise ProblemFileError(f"duplicate dynamics equation for {nm!r}", no)
        try:
            equations[nm] = parse_poly(m.group(2), vs)
        except PolyError as exc:
            raise ProblemFileError(str(exc), no) from None
    missing = [nm for nm in states if nm not in equations]
    if missing:
        raise ProblemFileError(f"missing dynamics equation for {missing}")

    scost: Polynomial = Polynomial.zero(vs)
    fcost: Polynomial = Polynomial.zero(vs)
    horizon: float | None = None
    for no, line in sections.get("cost", []):
        if "=" not in line:
            raise ProblemFileError(f"expected 'key = value', got {line!r}", no)
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            if key == "integrand":
                scost = parse_poly(value, vs)
            elif key == "final":
                fcost = parse_poly(value, vs)
            elif key == "horizon":
                horizon = None if value.lower() == "free" else _parse_float(value, no, "horizon")
            else:
                raise ProblemFileError(f"unknown [cost] key {key!r}", no)
        except PolyError as exc:
            raise ProblemFileError(str(exc), no) from None

    initial = _parse_boundary(sections.get("initial", []), vs, states)
    final = _parse_boundary(sections.get("final", []), vs, states)
    tcon = [_parse_constraint(line, no, vs) for no, line in sections.get("trajectory", [])]

    scon: list[MomentConstraint] = []
    for no, line in sections.get("integral", []):
        m = _MOM_LINE.match(line)
        if not m:
            raise ProblemFileError(
                "integral line must read: mom(<expression>) <=|=|>= <bound>", no
            )
        try:
            integrand = parse_poly(m.group(1), vs)
        except PolyError as exc:
            raise ProblemFileError(str(exc), no) from None
        op = "=" if m.group(2) in ("=", "==") else m.group(2)
        scon.append(MomentConstraint(integrand, op, _parse_float(m.group(3), no, "bound")))

    testtime: bool | None = None
    tmax: float | None = None
    seed = 0
    scaling: dict[str, float] = {}
    for no, line in sections.get("options", []):
        if "=" not in line:
            raise ProblemFileError(f"expected 'key = value', got {line!r}", no)
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "testtime":
            if value.lower() not in ("true", "false"):
                raise ProblemFileError(f"testtime must be true or false, got {value!r}", no)
            testtime = value.lower() == "true"
        elif key == "tmax":
            tmax = _parse_float(value, no, "tmax")
        elif key == "seed":
            try:
                seed = int(value)
            except ValueError:
                raise ProblemFileError(f"malformed seed {value!r}", no) from None
        elif key.startswith("scale"):
            parts = key.split()
            if len(parts) != 2:
                raise ProblemFileError("scale lines read: scale <var> = <factor>", no)
            scaling[parts[1]] = _parse_float(value, no, "scale factor")
        else:
            raise ProblemFileError(f"unknown [options] key {key!r}", no)

    try:
        problem = build_problem(
            varset=vs,
            dynamics=[equations[nm] for nm in states],
            scost=scost,
            fcost=fcost,
            horizon=horizon,
            initial=initial,
            final=final,
            tconstraints=tcon,
            sconstraints=scon,
            testtime=testtime,
            tmax=tmax,
        )
    except (ProblemError, PolyError) as exc:
        raise ProblemFileError(str(exc)) from None
    return LoadedProblem(problem=problem, scaling=scaling, seed=seed, text=text)


def parse_problem_file(path: str) -> OcpProblem:
    """Parse a problem file, returning just the validated problem."""
    return load_problem(path).problem


# ---------------------------------------------------------------------------
# report serialization
# ---------------------------------------------------------------------------


def _poly_payload(q: Polynomial) -> dict:
    items = q.sorted_terms()
    return {
        "variables": list(q.varset.names),
        "exponents": [list(e) for e, _ in items],
        "coefficients": [c for _, c in items],
    }


def _poly_from_payload(d: dict) -> Polynomial:
    vs = VarSet(states=tuple(d["variables"]))
    return Polynomial(vs, {tuple(e): c for e, c in zip(d["exponents"], d["coefficients"])})


def _write_report(report: dict, path: str):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _map_back_poly(q: Polynomial, factors: dict[str, float]) -> Polynomial:
    """Express a polynomial of scaled variables in the original ones."""
    for nm, f in factors.items():
        if nm in q.varset:
            q = q.scale_var(nm, 1.0 / f)
    return q


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------


def cmd_solve(args) -> int:
    timings: dict[str, float] = {}
    t_all = time.perf_counter()
    try:
        t0 = time.perf_counter()
        loaded = load_problem(args.file)
        timings["parse"] = time.perf_counter() - t0
    except (ProblemFileError, OSError) as exc:
        print(f"{args.file}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    p = loaded.problem
    p_solve = apply_scaling(p, loaded.scaling) if loaded.scaling else p
    mode, degree = ("mom", args.mom_degree) if args.mom_degree else ("tf", args.tf_degree)

    report: dict = {
        "degree_mode": mode,
        "requested_degree": degree,
        "seed": loaded.seed,
        "problem_file": loaded.text,
        "scaling": loaded.scaling,
        "value_function": None,
        "verification": None,
        "controllers": None,
        "measures": None,
    }

    try:
        t0 = time.perf_counter()
        plan = resolve_degrees(p_solve, mode, degree)
        mp = build_moment_problem(p_solve, plan)
        cp = assemble_conic(mp)
        timings["assemble"] = time.perf_counter() - t0
    except (ProblemError, PolyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    t0 = time.perf_counter()
    sol = solve_conic(cp, SolverOptions())
    timings["solve"] = time.perf_counter() - t0

    report["status"] = sol.status.value
    report["tf_degree"] = plan.tf_degree
    report["trajectory_degree"] = plan.traj_degree
    report["lower_bound"] = sol.objective if np.isfinite(sol.objective) else None
    report["residuals"] = sol.residuals
    report["iterations"] = sol.iterations

    code = {
        Status.OPTIMAL: EXIT_OK,
        Status.INFEASIBLE: EXIT_INFEASIBLE,
        Status.UNBOUNDED: EXIT_INFEASIBLE,
    }.get(sol.status, EXIT_NUMERICAL)

    if sol.status is Status.OPTIMAL:
        t0 = time.perf_counter()
        state_factors = {
            nm: f for nm, f in loaded.scaling.items() if nm in p.states
        }
        time_factor = (
            loaded.scaling.get(p.time, 1.0) if p.time is not None else 1.0
        )

        measures = {}
        for name, mm in extract_moment_matrices(sol, cp).items():
            scale_per_var = []
            for nm in mm.var_names:
                if nm in p.states or nm in p.inputs:
                    scale_per_var.append(loaded.scaling.get(nm, 1.0))
                else:  # internal time on [0, 1] back to original seconds
                    scale_per_var.append((mp.t_scale or 1.0) * time_factor)
            exps = np.array(mm.exponents, dtype=float)
            per_moment = np.prod(np.array(scale_per_var) ** exps, axis=1)
            moments = mm.moments * per_moment
            nb = mm.matrix.shape[0]
            half = per_moment[:nb]  # graded order: leading block is the half basis
            matrix = mm.matrix * np.outer(half, half)
            measures[name] = {
                "variables": list(mm.var_names),
                "exponents": [list(e) for e in mm.exponents],
                "moments": moments.tolist(),
                "matrix": matrix.tolist(),
            }
        report["measures"] = measures

        try:
            vf = extract_subsolution(mp, sol, seed=loaded.seed)
            if loaded.scaling:
                v_orig = _map_back_poly(vf.v, loaded.scaling)
                horizon = vf.horizon * time_factor if vf.horizon is not None else None
                vf = ValueFunction(
                    v=v_orig,
                    tf_degree=vf.tf_degree,
                    bound=vf.bound,
                    time_name=vf.time_name,
                    horizon=horizon,
                )
                vf.verification = verify_subsolution(vf, p, seed=loaded.seed)
            report["value_function"] = _poly_payload(vf.v)
            report["verification"] = vf.verification
            if loaded.scaling and not vf.verification["passed"]:
                code = EXIT_NUMERICAL
        except SubsolutionError as exc:
            report["verification"] = exc.report
            code = EXIT_NUMERICAL
            vf = None
        except ProblemError as exc:
            print(f"value function unavailable: {exc}", file=sys.stderr)
            vf = None

        if vf is not None:
            try:
                controllers = synthesize_controller(vf, p)
                report["controllers"] = [_poly_payload(u) for u in controllers]
            except ProblemError:
                report["controllers"] = None
        timings["extract"] = time.perf_counter() - t0

    timings["total"] = time.perf_counter() - t_all
    report["timings"] = timings
    _write_report(report, args.out)
    lb = report.get("lower_bound")
    print(
        f"status {report['status']}  lower_bound "
        f"{lb if lb is not None else 'n/a'}  report {args.out}"
    )
    return code


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    try:
        loaded = load_problem(args.file)
        with open(args.report, encoding="utf-8") as fh:
            report = json.load(fh)
    except (ProblemFileError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    p = loaded.problem
    if not report.get("controllers"):
        print("error: report contains no controller polynomials", file=sys.stderr)
        return EXIT_RUNTIME
    controllers = [_poly_from_payload(d) for d in report["controllers"]]
    try:
        x0 = np.array([float(tok) for tok in args.x0.split(",")])
    except ValueError:
        print(f"error: malformed --x0 {args.x0!r}", file=sys.stderr)
        return EXIT_RUNTIME
    try:
        traj = simulate(p, controllers, x0, t_max=args.tmax, dt=args.dt)
    except ProblemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if args.csv:
        export_csv(traj, args.csv)
    point = {nm: 0.0 for nm in p.varset.names}
    point.update(zip(p.states, traj.final_state))
    if p.time is not None:
        point[p.time] = traj.times[-1]
    achieved = traj.total_cost + p.fcost.evaluate(point)
    bound = report.get("lower_bound")
    line = (
        f"t_end {traj.times[-1]:.6g}  |x_end| {np.linalg.norm(traj.final_state):.6g}  "
        f"achieved_cost {achieved:.9g}"
    )
    if bound is not None:
        line += f"  lower_bound {bound:.9g}  gap {achieved - bound:+.3g}"
    if traj.blew_up:
        line += "  (diverged)"
    print(line)
    return EXIT_RUNTIME if traj.blew_up else EXIT_OK


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def _grid_points(names, box, constraints, k: int) -> np.ndarray:
    axes = [np.linspace(box[nm][0], box[nm][1], max(1, k)) for nm in names]
    pts = np.array(list(itertools.product(*axes)))
    keep = np.ones(pts.shape[0], dtype=bool)
    for c in constraints:
        if not c.equality:
            keep &= _eval_on(c.poly, names, pts) >= -1e-9
    return pts[keep]


def cmd_verify(args) -> int:
    try:
        with open(args.report, encoding="utf-8") as fh:
            report = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if not report.get("value_function"):
        print("error: report contains no value function", file=sys.stderr)
        return EXIT_RUNTIME
    with tempfile.NamedTemporaryFile(
        "w", suffix=".ocp", delete=False, encoding="utf-8"
    ) as fh:
        fh.write(report["problem_file"])
        tmp = fh.name
    try:
        p = load_problem(tmp).problem
    finally:
        os.unlink(tmp)

    vf_poly = _poly_from_payload(report["value_function"])
    bound = float(report["lower_bound"])
    tname = next(
        (nm for nm in vf_poly.varset.names if nm not in p.states), None
    )

    ext_vs = VarSet(states=p.states, inputs=p.inputs, time=tname)
    dyn = [f.adapt(ext_vs) for f in p.dynamics]
    residual = lie_derivative(vf_poly.adapt(ext_vs), dyn, p.states) + p.scost.adapt(ext_vs)

    scale = max([1.0, abs(bound)] + [abs(c) for c in vf_poly.terms.values()])
    eps = 1e-4 * (1.0 + scale)
    eps_b = 1e-5 * (1.0 + abs(bound))

    horizon_val = p.horizon if p.horizon is not None else p.tmax
    traj_names = ((tname,) if tname else ()) + p.states + p.inputs
    detected = detect_bounds(p.tconstraints)
    box = _resolve_box(traj_names, detected)
    if tname is not None:
        lo, hi = detected.get(tname, (None, None))
        box[tname] = (
            max(0.0, lo or 0.0),
            horizon_val if hi is None else min(hi, horizon_val),
        )
    pts = _grid_points(traj_names, box, p.tconstraints, args.grid)
    hjb_min = float(np.min(_eval_on(residual, traj_names, pts)))

    # terminal inequality on the final set; a fixed horizon pins the time
    # coordinate while a free horizon with time-dependent data sweeps it
    if tname is not None and p.horizon is not None:
        vT = vf_poly.substitute_value(tname, p.horizon)
    else:
        vT = vf_poly
    margin = vT - p.fcost.adapt(vT.varset)
    fin_free = p.final.free_vars(p.states)
    blocks: list[tuple[tuple[str, ...], np.ndarray]] = []
    for f in p.final.known_factors():
        if isinstance(f, DiracFactor):
            blocks.append((tuple(f.variables), np.asarray(f.points, dtype=float)))
        else:  # uniform box: a modest grid per axis keeps the product small
            axes = [
                np.linspace(f.lower[k], f.upper[k], min(max(2, args.grid), 7))
                for k in range(len(f.variables))
            ]
            blocks.append(
                (tuple(f.variables), np.array(list(itertools.product(*axes))))
            )
    if fin_free:
        fbox = _resolve_box(fin_free, detect_bounds(p.final.constraints))
        blocks.append(
            (tuple(fin_free), _grid_points(fin_free, fbox, p.final.constraints, args.grid))
        )
    if tname is not None and p.horizon is None:
        taxis = np.linspace(0.0, horizon_val, max(2, args.grid))
        blocks.append(((tname,), taxis[:, None]))
    fin_names = tuple(nm for names, _ in blocks for nm in names)
    if blocks:
        fin_pts = np.array(
            [
                np.concatenate(rows)
                for rows in itertools.product(*(pts for _, pts in blocks))
            ]
        )
    else:
        fin_pts = np.zeros((1, 0))
    term_max = float(np.max(_eval_on(margin, fin_names, fin_pts)))

    # initial identity
    v0 = vf_poly.substitute_value(tname, 0.0) if tname is not None else vf_poly
    init_free = p.initial.free_vars(p.states)
    if not init_free:
        bound_err = float(_integrate_known(v0, p.initial.known_factors()) - bound)
    else:
        phi = _partial_integrate(v0, p.initial.known_factors(), init_free)
        ibox = _resolve_box(init_free, detect_bounds(p.initial.constraints))
        ipts = _grid_points(init_free, ibox, p.initial.constraints, args.grid)
        bound_err = float(np.min(_eval_on(phi, init_free, ipts)) - bound)

    ok = hjb_min >= -eps and term_max <= eps and abs(bound_err) <= eps_b
    print(
        f"hjb_min_residual {hjb_min:+.6e} (tolerance -{eps:.1e})\n"
        f"terminal_max_violation {term_max:+.6e} (tolerance {eps:.1e})\n"
        f"bound_error {bound_err:+.6e} (tolerance {eps_b:.1e})\n"
        f"{'PASS' if ok else 'FAIL'}"
    )
    return EXIT_OK if ok else EXIT_RUNTIME


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="polyoc",
        description="Moment relaxations for polynomial optimal control",
    )
    sub = parser.add_subparsers(dest="command")

    ps = sub.add_parser("solve", help="solve a problem file and write a JSON report")
    ps.add_argument("file", help="problem file")
    ps.add_argument("--mom-degree", type=int, help="moment truncation degree")
    ps.add_argument("--tf-degree", type=int, help="test-function degree")
    ps.add_argument("--out", default="report.json", help="report path")

    pm = sub.add_parser("simulate", help="integrate the closed loop of a report")
    pm.add_argument("file", help="problem file")
    pm.add_argument("--report", required=True, help="report with controllers")
    pm.add_argument("--x0", required=True, help="comma-separated initial state")
    pm.add_argument("--tmax", type=float, default=20.0, help="time horizon")
    pm.add_argument("--dt", type=float, default=1e-3, help="integration step")
    pm.add_argument("--csv", help="write the trajectory as CSV")

    pv = sub.add_parser("verify", help="re-check a report's value function on a grid")
    pv.add_argument("--report", required=True, help="report with a value function")
    pv.add_argument("--grid", type=int, default=25, help="grid points per axis")

    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    if args.command == "solve":
        if (args.mom_degree is None) == (args.tf_degree is None):
            print(
                "error: exactly one of --mom-degree or --tf-degree is required",
                file=sys.stderr,
            )
            return EXIT_USAGE
        return cmd_solve(args)
    if args.command == "simulate":
        return cmd_simulate(args)
    return cmd_verify(args)


if __name__ == "__main__":
    sys.exit(main())
