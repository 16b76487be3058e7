"""Embedded primal-dual interior-point solver for block semidefinite programs.

The program solved here is

    minimize    c @ y + offset
    subject to  A @ y == b
                S_k(y) = C0_k + sum_i y_i C_ik  is PSD for each block k
                nonneg_A @ y <= nonneg_b

with free variables ``y``.  Its dual is

    maximize    b @ lam - sum_k <C0_k, Z_k> + offset
    subject to  A.T @ lam + sum_k [<C_ik, Z_k>]_i - nonneg_A.T @ z = c
                Z_k PSD,  z >= 0

and reported solutions satisfy the stationarity identity above, so equality
duals ``lam`` match the usual Lagrangian sign convention.

The method is a standard infeasible-start path-following iteration with
Nesterov-Todd scaling and a Mehrotra predictor-corrector step.  Each
iteration eliminates the block dual directions, leaving a dense Schur
system ``H = sum_k B_k.T (W_k^-1 x W_k^-1) B_k`` over the variables that is
solved through two Cholesky factorizations (jitter is added only if a
factorization fails outright) plus iterative refinement, first of the
reduced system and then of the full KKT direction.  The Schur accumulation
is the hot loop and runs through the kernels in :mod:`polyoc._kernels`.

Moment relaxations are often near-degenerate: truncation leaves a few
top-degree moments outside every localizing constraint, so the feasible set
can contain rays along which those moments diverge while the objective
creeps.  Two safeguards keep such solves well-posed: static diagonal
regularization of the KKT systems (``SolverOptions.reg``) and a box bound
on the iterates (``SolverOptions.iterate_bound``).

External solvers can be plugged in by implementing ``solve_conic``'s
signature against :class:`ConicProgram`; :func:`dump_program` writes the
program in a plain text format (one line per nonzero) for offline debugging.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import _kernels


@dataclass
class PsdBlockSpec:
    """Affine PSD constraint ``C0 + sum_i y_i C_i >= 0`` in entry form.

    ``rows/cols/vars/coefs`` list every nonzero of every ``C_i`` over the
    full (symmetric) matrix, so off-diagonal entries appear twice.
    """

    name: str
    size: int
    rows: np.ndarray
    cols: np.ndarray
    vars: np.ndarray
    coefs: np.ndarray
    const: np.ndarray


@dataclass
class MeasureView:
    """Recipe for reconstructing one measure's full moment vector.

    Moment ``i`` equals ``coefs[i] * y[vars[i]]`` (or just ``coefs[i]`` when
    ``vars[i] < 0``, the fully known case); ``pair_index`` maps moment-matrix
    positions to moment indices.
    """

    name: str
    var_names: tuple[str, ...]
    basis_exponents: list[tuple[int, ...]]
    pair_index: np.ndarray
    coefs: np.ndarray
    vars: np.ndarray


@dataclass
class ConicProgram:
    n: int
    c: np.ndarray
    offset: float
    A: sp.csr_matrix
    b: np.ndarray
    blocks: list[PsdBlockSpec]
    nonneg_A: sp.csr_matrix
    nonneg_b: np.ndarray
    measure_views: list[MeasureView] = field(default_factory=list)


class Status(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration_limit"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass
class SolverOptions:
    tol_gap: float = 1e-8
    tol_feas: float = 1e-8
    max_iter: int = 200
    reg: float = 1e-9  # static diagonal regularization of the KKT systems
    accept_gap: float = 1e-7  # fallback acceptance when progress stalls
    accept_feas: float = 1e-7
    # Moment relaxations of problems whose support is unbounded in some
    # variable can have feasible rays along which a handful of top-degree
    # moments grow without bound while the objective creeps downward; the
    # infimum is then approached only by diverging iterates and no finite
    # certificate exists.  Bounding every variable by this box keeps the
    # iterates on the scale of physically meaningful moment vectors and
    # makes the solve well-posed; set to None to disable the safeguard.
    iterate_bound: float | None = 1e4
    verbose: bool = False


@dataclass
class ConicSolution:
    status: Status
    y: np.ndarray
    objective: float
    dual_objective: float
    eq_duals: np.ndarray
    psd_duals: list[np.ndarray]
    nonneg_duals: np.ndarray
    residuals: dict[str, float]
    iterations: int
    solve_time: float


class _Block:
    """Workspace for one PSD block (1x1 blocks model nonnegative rows)."""

    def __init__(self, size: int, rows, cols, vars_, coefs, const):
        self.size = int(size)
        self.rows = np.asarray(rows, dtype=np.int64)
        self.cols = np.asarray(cols, dtype=np.int64)
        self.vars = np.asarray(vars_, dtype=np.int64)
        self.coefs = np.asarray(coefs, dtype=np.float64)
        self.const = np.asarray(const, dtype=np.float64).reshape(self.size, self.size)
        self.lin = self.rows * self.size + self.cols
        self._order = np.argsort(self.vars, kind="stable")
        self.active = np.unique(self.vars)
        self.p_sorted = np.ascontiguousarray(self.rows[self._order].astype(np.int32))
        self.q_sorted = np.ascontiguousarray(self.cols[self._order].astype(np.int32))
        self.c_sorted = np.ascontiguousarray(self.coefs[self._order])
        sorted_vars = self.vars[self._order]
        starts = np.searchsorted(sorted_vars, self.active)
        self.col_start = np.concatenate(
            [starts, [sorted_vars.size]]
        ).astype(np.int64)
        self.p_all = np.ascontiguousarray(self.rows.astype(np.int32))
        self.q_all = np.ascontiguousarray(self.cols.astype(np.int32))
        self.v_all = np.ascontiguousarray(self.vars)
        self.c_all = np.ascontiguousarray(self.coefs)

    def rescale(self, d: np.ndarray):
        """Congruence C -> D C D with D = diag(d), applied to every C_i."""
        self.coefs = self.coefs * (d[self.rows] * d[self.cols])
        self.const = d[:, None] * self.const * d[None, :]
        self.c_sorted = np.ascontiguousarray(self.coefs[self._order])
        self.c_all = np.ascontiguousarray(self.coefs)

    def affine(self, y: np.ndarray) -> np.ndarray:
        """S(y) = C0 + sum_i y_i C_i."""
        if self.vars.size == 0:
            return self.const.copy()
        flat = np.bincount(
            self.lin, weights=self.coefs * y[self.vars], minlength=self.size * self.size
        )
        return self.const + flat.reshape(self.size, self.size)

    def adjoint(self, Z: np.ndarray, out: np.ndarray):
        """out_i += <C_i, Z> for every variable of the block."""
        if self.vars.size:
            np.add.at(out, self.vars, self.coefs * Z[self.rows, self.cols])

    def schur(self, Winv: np.ndarray, H: np.ndarray):
        _kernels.schur_block(
            self.active,
            self.col_start,
            (self.p_sorted, self.q_sorted, self.c_sorted),
            (self.p_all, self.q_all, self.v_all, self.c_all),
            Winv,
            H,
        )


def _build_blocks(cp: ConicProgram) -> tuple[list[_Block], int]:
    """PSD blocks plus one 1x1 block per nonnegative row; returns slack count."""
    blocks = [
        _Block(b.size, b.rows, b.cols, b.vars, b.coefs, b.const) for b in cp.blocks
    ]
    nn = sp.csr_matrix(cp.nonneg_A)
    for i in range(nn.shape[0]):
        row = nn.getrow(i)
        k = row.indices.size
        blocks.append(
            _Block(
                1,
                np.zeros(k, dtype=np.int64),
                np.zeros(k, dtype=np.int64),
                row.indices.astype(np.int64),
                -row.data,
                np.array([[cp.nonneg_b[i]]]),
            )
        )
    return blocks, nn.shape[0]


def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def _chol(M: np.ndarray) -> np.ndarray | None:
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        base = max(1.0, np.trace(M) / M.shape[0])
        for jitter in (1e-12, 1e-9, 1e-6):
            try:
                return np.linalg.cholesky(M + jitter * base * np.eye(M.shape[0]))
            except np.linalg.LinAlgError:
                continue
        return None


def _max_step(L: np.ndarray, dX: np.ndarray) -> float:
    """Largest alpha with L L.T + alpha dX still PSD."""
    Y = sla.solve_triangular(L, dX, lower=True, check_finite=False)
    Y = sla.solve_triangular(L, Y.T, lower=True, check_finite=False)
    lmin = float(np.linalg.eigvalsh(_sym(Y))[0])
    if lmin >= -1e-16:
        return np.inf
    return -1.0 / lmin


def solve_conic(cp: ConicProgram, opts: SolverOptions | None = None) -> ConicSolution:
    """Solve a :class:`ConicProgram`; deterministic for identical inputs."""
    opts = opts or SolverOptions()
    t0 = time.perf_counter()
    n = cp.n
    if n < 1:
        raise ValueError("conic program must have at least one variable")
    n_slack_orig = cp.nonneg_A.shape[0]
    bnd_limit = None
    if opts.iterate_bound is not None and math.isfinite(opts.iterate_bound):
        bnd = float(opts.iterate_bound)
        if bnd <= 0:
            raise ValueError("iterate_bound must be positive")
        bnd_limit = bnd
        eye = sp.identity(n, format="csr", dtype=float)
        cp = replace(
            cp,
            nonneg_A=sp.vstack([cp.nonneg_A, eye, -eye], format="csr"),
            nonneg_b=np.concatenate([cp.nonneg_b, np.full(2 * n, bnd)]),
        )
    blocks, n_slack = _build_blocks(cp)
    n_core = len(cp.blocks) + n_slack_orig  # blocks beyond this are the box
    sizes = np.array([bl.size for bl in blocks])
    ntot = float(sizes.sum()) if len(blocks) else 1.0

    Ad = np.asarray(cp.A.todense()) if cp.A.shape[0] else np.zeros((0, n))
    b = np.asarray(cp.b, dtype=float)
    c = np.asarray(cp.c, dtype=float)
    m_orig = Ad.shape[0]

    # all-zero equality rows (e.g. relations between fully known measures)
    # are dropped so the Schur system stays full rank; their right-hand
    # sides must vanish or the program is trivially infeasible
    eq_keep = np.arange(m_orig)
    if m_orig:
        zero_rows = (Ad != 0.0).sum(axis=1) == 0
        if zero_rows.any():
            btol = 1e-9 * (1.0 + float(np.abs(b).max()))
            if (np.abs(b[zero_rows]) > btol).any():
                return ConicSolution(
                    status=Status.INFEASIBLE,
                    y=np.zeros(n),
                    objective=math.nan,
                    dual_objective=math.nan,
                    eq_duals=np.zeros(m_orig),
                    psd_duals=[np.zeros((bl.size, bl.size)) for bl in blocks[: len(cp.blocks)]],
                    nonneg_duals=np.zeros(n_slack_orig),
                    residuals={"primal": math.inf, "dual": 0.0, "gap_rel": 0.0, "gap_abs": 0.0},
                    iterations=0,
                    solve_time=time.perf_counter() - t0,
                )
            eq_keep = np.flatnonzero(~zero_rows)
            Ad = Ad[~zero_rows]
            b = b[~zero_rows]
    m = Ad.shape[0]

    # row equilibration of the equalities (duals are unscaled on return)
    row_scale = np.ones(m)
    if m:
        norms = np.sqrt((Ad**2).sum(axis=1))
        row_scale = 1.0 / np.maximum(norms, 1.0)
        Ad = Ad * row_scale[:, None]
        b = b * row_scale

    # normalize the objective so dual variables stay O(1); keeps the float64
    # error of the Schur elimination proportionate to the tolerances
    obj_scale = max(1.0, np.linalg.norm(c))
    c = c / obj_scale

    bnorm = 1.0 + np.linalg.norm(b)
    cnorm = 1.0 + np.linalg.norm(c)
    c0norms = [1.0 + np.linalg.norm(bl.const) for bl in blocks]

    y = np.zeros(n)
    lam = np.zeros(m)
    S = [np.eye(bl.size) * max(1.0, np.linalg.norm(bl.const)) for bl in blocks]
    Z = [np.eye(bl.size) for bl in blocks]

    def adjoint_all(Zs) -> np.ndarray:
        out = np.zeros(n)
        for bl, Zk in zip(blocks, Zs):
            bl.adjoint(Zk, out)
        return out

    def residuals():
        r_p = b - Ad @ y if m else np.zeros(0)
        r_c = [bl.affine(y) - Sk for bl, Sk in zip(blocks, S)]
        r_d = c - (Ad.T @ lam if m else 0.0) - adjoint_all(Z)
        return r_p, r_c, r_d

    def metrics(r_p, r_c, r_d):
        gap = sum(float(np.tensordot(Sk, Zk)) for Sk, Zk in zip(S, Z))
        pobj = float(c @ y)
        dobj = float(b @ lam) - sum(
            float(np.tensordot(bl.const, Zk)) for bl, Zk in zip(blocks, Z)
        )
        pres = np.linalg.norm(r_p) / bnorm
        for rc, c0n in zip(r_c, c0norms):
            pres = max(pres, np.linalg.norm(rc) / c0n)
        dres = np.linalg.norm(r_d) / cnorm
        relgap = gap / (1.0 + abs(pobj) + abs(dobj))
        return gap, pobj, dobj, pres, dres, relgap

    status = Status.ITERATION_LIMIT
    iters = 0
    stall = 0
    last = None
    best = None
    best_merit = np.inf
    # cumulative Jacobi equilibration of each PSD block's basis (see below)
    bscale = [np.ones(bl.size) for bl in blocks]

    for it in range(opts.max_iter + 1):
        iters = it
        r_p, r_c, r_d = residuals()
        gap, pobj, dobj, pres, dres, relgap = metrics(r_p, r_c, r_d)
        last = (gap, pobj, dobj, pres, dres, relgap)
        merit = max(pres, dres, relgap)
        improved = merit < 0.98 * best_merit
        if merit < best_merit:
            best_merit = merit
            best = (y.copy(), lam.copy(), [Sk.copy() for Sk in S],
                    [Zk.copy() for Zk in Z], last)
        mu = gap / ntot
        if opts.verbose:
            print(
                f"  it {it:3d}  mu {mu:9.2e}  gap {relgap:9.2e}  "
                f"pres {pres:9.2e}  dres {dres:9.2e}  obj {pobj + cp.offset:+.9e}"
            )
        bm = best[4]
        if bm[3] <= opts.tol_feas and bm[4] <= opts.tol_feas and bm[5] <= opts.tol_gap:
            status = Status.OPTIMAL
            break

        # infeasibility certificate: A.T lam + B* Z ~ 0 with positive dual gain
        theta = float(b @ lam) - sum(
            float(np.tensordot(bl.const, Zk)) for bl, Zk in zip(blocks, Z)
        )
        if theta > 1e-6:
            hom = (Ad.T @ lam if m else 0.0) + adjoint_all(Z)
            if np.linalg.norm(hom) <= 1e-8 * theta:
                status = Status.INFEASIBLE
                break
        # unboundedness certificate: an improving ray in y.  With the iterate
        # box in place a genuine ray parks against the box instead of growing
        # without bound, so start looking once the iterate presses into it;
        # the appended box blocks are excluded from the certificate (the ray
        # violates them by design).
        ynorm = np.linalg.norm(y)
        if ynorm > 1e6 or (bnd_limit is not None and ynorm > 0.25 * bnd_limit):
            yhat = y / ynorm
            ray_ok = (np.linalg.norm(Ad @ yhat) if m else 0.0) <= 1e-8
            if ray_ok and c @ yhat < -1e-8:
                eigmin = 0.0
                for bl in blocks[:n_core]:
                    ray = bl.affine(yhat) - bl.const / ynorm
                    eigmin = min(eigmin, float(np.linalg.eigvalsh(_sym(ray))[0]))
                if eigmin >= -1e-8:
                    status = Status.UNBOUNDED
                    break

        if it == opts.max_iter:
            status = Status.ITERATION_LIMIT
            break

        # Plateau handling: once the worst KKT measure stops improving by a
        # meaningful factor, further iterations only polish noise.  If the
        # best iterate already sits inside the acceptance tolerances, report
        # it as optimal; only give up after a much longer flat stretch.
        if improved:
            stall = 0
        else:
            stall += 1
        ok = (
            bm[3] <= opts.accept_feas
            and bm[4] <= opts.accept_feas
            and bm[5] <= opts.accept_gap
        )
        if (stall >= 10 and ok) or stall >= 30:
            status = Status.OPTIMAL if ok else Status.NUMERICAL_FAILURE
            break

        # Nesterov-Todd scalings
        failed = False
        Gs, Ginvs, Winvs, lams, Lss, Lzs = [], [], [], [], [], []
        for Sk, Zk in zip(S, Z):
            Ls = _chol(Sk)
            Lz = _chol(Zk)
            if Ls is None or Lz is None:
                failed = True
                break
            M = Lz.T @ Ls
            U, sv, Vt = np.linalg.svd(M)
            sv = np.maximum(sv, 1e-150)
            sq = np.sqrt(sv)
            G = Ls @ (Vt.T / sq)
            Lsinv = sla.solve_triangular(
                Ls, np.eye(Ls.shape[0]), lower=True, check_finite=False
            )
            Ginv = sq[:, None] * (Vt @ Lsinv)
            Gs.append(G)
            Ginvs.append(Ginv)
            Winvs.append(Ginv.T @ Ginv)
            lams.append(sv)
            Lss.append(Ls)
            Lzs.append(Lz)
        if failed:
            status = Status.NUMERICAL_FAILURE
            break

        # Schur complement and KKT factorizations
        H = np.zeros((n, n))
        for bl, Winv in zip(blocks, Winvs):
            bl.schur(Winv, H)
        H = _sym(H)
        # static absolute regularization: negligible against healthy curvature,
        # it only restrains directions whose curvature has collapsed (moment
        # relaxations routinely have such flat rays); refinement below solves
        # against the unregularized system where that is contractive
        L_H = _chol(H + opts.reg * np.eye(n))
        if L_H is None:
            status = Status.NUMERICAL_FAILURE
            break
        cho = (L_H, True)
        if m:
            X = sla.cho_solve(cho, Ad.T, check_finite=False)
            L_M = _chol(_sym(Ad @ X) + opts.reg * np.eye(m))
            if L_M is None:
                status = Status.NUMERICAL_FAILURE
                break
            cho2 = (L_M, True)

        def kkt_once(g1, rp):
            t1 = sla.cho_solve(cho, g1, check_finite=False)
            if m:
                dl = sla.cho_solve(cho2, rp + Ad @ t1, check_finite=False)
                dy = sla.cho_solve(cho, Ad.T @ dl, check_finite=False) - t1
            else:
                dl = np.zeros(0)
                dy = -t1
            return dy, dl

        # mixed-precision refinement: the factorizations stay in float64 but
        # the refinement residual is evaluated in extended precision.  |H|
        # grows like 1/mu once bounds become active, so the float64 noise of
        # H @ dy alone (eps * |H| * |dy|) would floor the dual residual far
        # above the feasibility tolerances.
        H_ld = H.astype(np.longdouble)
        A_ld = Ad.astype(np.longdouble) if m else None

        def kkt_res(g1, rp, dy, dl):
            r1 = g1 + H_ld @ dy.astype(np.longdouble)
            if m:
                r1 -= A_ld.T @ dl.astype(np.longdouble)
                r2 = rp - A_ld @ dy.astype(np.longdouble)
            else:
                r2 = rp
            return np.asarray(r1, dtype=np.float64), np.asarray(r2, dtype=np.float64)

        def kkt_solve(g1, rp):
            # refinement against the unregularized system, keeping the best
            # iterate: contraction fails only in flat directions where the
            # static regularization is doing its job
            dy, dl = kkt_once(g1, rp)
            res1, res2 = kkt_res(g1, rp, dy, dl)
            rn = np.linalg.norm(res1) + np.linalg.norm(res2)
            for _ in range(2):
                ey, el = kkt_once(res1, res2)
                dy2, dl2 = dy + ey, dl + el
                res1b, res2b = kkt_res(g1, rp, dy2, dl2)
                rnb = np.linalg.norm(res1b) + np.linalg.norm(res2b)
                if rnb >= rn:
                    break
                dy, dl, res1, res2, rn = dy2, dl2, res1b, res2b, rnb
            return dy, dl

        def direction(Xt):
            # Xt is the complementarity target in the scaled space where the
            # scaled S and Z both equal diag(lam); using scaled quantities
            # throughout sidesteps forming Winv @ S @ Winv, whose float64
            # cancellation wrecks the dual residual once mu is tiny.
            g1 = r_d.copy()
            scratch = np.zeros(n)
            for bl, Ginv, Winv, Xk, rck in zip(blocks, Ginvs, Winvs, Xt, r_c):
                T = Ginv.T @ Xk @ Ginv - Winv @ rck @ Winv
                bl.adjoint(T, scratch)
            g1 -= scratch
            dy, dl = kkt_solve(g1, r_p)
            dS = [
                _sym(bl.affine(dy) - bl.const + rck)
                for bl, rck in zip(blocks, r_c)
            ]
            Ds = [_sym(Ginv @ dSk @ Ginv.T) for Ginv, dSk in zip(Ginvs, dS)]
            Dz = [Xk - Dsk for Xk, Dsk in zip(Xt, Ds)]
            dZ = [_sym(Ginv.T @ Dzk @ Ginv) for Ginv, Dzk in zip(Ginvs, Dz)]
            # refinement against the full KKT system: fold the residual of
            # the dual equation back through a zero-complementarity solve;
            # roll back and stop if a pass makes things worse (the reduced
            # system can be too ill-conditioned for refinement to contract)
            prev = None
            prev_norm = np.inf
            for _ in range(3):
                e_d = r_d - (Ad.T @ dl if m else 0.0) - adjoint_all(dZ)
                e_p = r_p - Ad @ dy if m else r_p
                ed_norm = float(np.linalg.norm(e_d))
                if prev is not None and ed_norm >= prev_norm:
                    dy, dl, dS, Ds, Dz, dZ = prev
                    break
                if ed_norm <= 1e-13 * cnorm:
                    break
                prev = (
                    dy.copy(),
                    dl.copy(),
                    [M.copy() for M in dS],
                    [M.copy() for M in Ds],
                    [M.copy() for M in Dz],
                    [M.copy() for M in dZ],
                )
                prev_norm = ed_norm
                ey, el = kkt_solve(e_d, e_p)
                dy = dy + ey
                dl = dl + el
                for k, bl in enumerate(blocks):
                    eS = _sym(bl.affine(ey) - bl.const)
                    eDs = _sym(Ginvs[k] @ eS @ Ginvs[k].T)
                    dS[k] += eS
                    Ds[k] += eDs
                    Dz[k] -= eDs
                    dZ[k] -= _sym(Ginvs[k].T @ eDs @ Ginvs[k])
            e_d = r_d - (Ad.T @ dl if m else 0.0) - adjoint_all(dZ)
            return dy, dl, dS, dZ, Ds, Dz, float(np.linalg.norm(e_d))

        # predictor: target 0, i.e. scaled equation Xt = -diag(lam)^2 ... in
        # the symmetrized form the affine target is -Lambda
        X_aff = [-np.diag(lv) for lv in lams]
        dy_a, dl_a, dS_a, dZ_a, Ds_a, Dz_a, _ed_a = direction(X_aff)
        ap = min(1.0, min(_max_step(L, D) for L, D in zip(Lss, dS_a)))
        ad = min(1.0, min(_max_step(L, D) for L, D in zip(Lzs, dZ_a)))
        gap_aff = sum(
            float(np.tensordot(Sk + ap * dSk, Zk + ad * dZk))
            for Sk, dSk, Zk, dZk in zip(S, dS_a, Z, dZ_a)
        )
        mu_aff = max(gap_aff / ntot, 0.0)
        sigma = min(1.0, max((mu_aff / mu) ** 3 if mu > 0 else 0.0, 1e-8))
        # once the duality gap is safely below tolerance there is nothing to
        # gain from smaller mu, and the Schur system only gets nastier: with
        # active bounds the KKT norm grows like 1/mu, so even evaluating the
        # dual residual carries eps*|KKT| noise.  Park the barrier just below
        # the gap tolerance and let the feasibility residuals catch up there.
        mu_floor = 0.3 * opts.tol_gap * (1.0 + abs(pobj) + abs(dobj)) / ntot
        if mu > 0 and sigma * mu < mu_floor:
            sigma = min(1.0, mu_floor / mu)

        # Mehrotra corrector in the scaled space
        def corrector(sig):
            Xc = []
            for lv, Dsk, Dzk in zip(lams, Ds_a, Dz_a):
                N = -0.5 * (Dsk @ Dzk + Dzk @ Dsk)
                N -= np.diag(lv * lv)
                N[np.diag_indices_from(N)] += sig * mu
                Xc.append(_sym(2.0 * N / (lv[:, None] + lv[None, :])))
            return Xc

        eta = 0.9 + 0.09 * min(ap, ad)
        if opts.verbose:
            print(f"      mu_aff {mu_aff:9.2e} sigma {sigma:9.2e} "
                  f"ap_aff {ap:6.3f} ad_aff {ad:6.3f}")
        # The next iterate inherits ad*ed_c of the direction's dual-equation
        # error.  Near the flat directions of a degenerate endgame that error
        # can rival the residual itself; damping the dual step keeps the
        # inherited part within a budget while the y step (which carries no
        # dual pollution) stays full length, so the gap keeps closing.  If
        # the damped dual step collapses entirely, fall back to a pure
        # centering direction, which has a small error and reopens the cone
        # margins that aggressive steps squeezed shut.
        rd_abs = dres * cnorm
        ed_budget = cnorm * max(0.8 * opts.accept_feas, 0.25 * dres)
        for sig in (sigma, 1.0):
            dy, dl, dS, dZ, _, _, ed_c = direction(corrector(sig))
            ap = min(1.0, eta * min(_max_step(L, D) for L, D in zip(Lss, dS)))
            ad = min(1.0, eta * min(_max_step(L, D) for L, D in zip(Lzs, dZ)))
            if ed_c > ed_budget and ed_c > rd_abs:
                ad = min(ad, max(0.0, ed_budget - rd_abs) / (ed_c - rd_abs))
            if ad >= 0.05 or sig >= 1.0:
                sigma = sig
                break
        if ap < 1e-10 and ad < 1e-10:
            ok = (
                bm[3] <= opts.accept_feas
                and bm[4] <= opts.accept_feas
                and bm[5] <= opts.accept_gap
            )
            status = Status.OPTIMAL if ok else Status.NUMERICAL_FAILURE
            break

        y = y + ap * dy
        lam = lam + ad * dl
        S = [Sk + ap * dSk for Sk, dSk in zip(S, dS)]
        Z = [Zk + ad * dZk for Zk, dZk in zip(Z, dZ)]

        # Keep every PSD block Jacobi-equilibrated: replace C -> D C D,
        # S -> D S D, Z -> Dinv Z Dinv with D = diag(S)^(-1/2).  The
        # congruence leaves the cone, the duality gap, the dual residual and
        # the eigenvalues of S Z unchanged, but without it the spread of
        # diag(S) (moments spanning many orders of magnitude) is squared
        # into the Schur matrix, whose float64 image then loses exactly the
        # flat directions the dual residual lives in.
        for k, bl in enumerate(blocks):
            if bl.size < 2:
                continue
            dg = np.diag(S[k])
            if dg.max() <= 30.0 and dg.min() >= 1.0 / 30.0:
                continue
            d = 1.0 / np.sqrt(np.maximum(dg, 1e-300))
            bl.rescale(d)
            S[k] = d[:, None] * S[k] * d[None, :]
            Z[k] = Z[k] / d[:, None] / d[None, :]
            bscale[k] = bscale[k] * d
            c0norms[k] = 1.0 + np.linalg.norm(bl.const)
            if best is not None:
                best[2][k] = d[:, None] * best[2][k] * d[None, :]
                best[3][k] = best[3][k] / d[:, None] / d[None, :]

    if status in (Status.INFEASIBLE, Status.UNBOUNDED) or best is None:
        ret_y, ret_lam, ret_Z, met = y, lam, Z, last
    else:
        ret_y, ret_lam, _, ret_Z, met = best
    gap, pobj, dobj, pres, dres, relgap = met
    npsd = len(cp.blocks)
    eq_duals = np.zeros(m_orig)
    if m:
        eq_duals[eq_keep] = ret_lam * (row_scale * obj_scale)
    return ConicSolution(
        status=status,
        y=ret_y.copy(),
        objective=pobj * obj_scale + cp.offset,
        dual_objective=dobj * obj_scale + cp.offset,
        eq_duals=eq_duals,
        psd_duals=[
            bscale[k][:, None] * ret_Z[k] * bscale[k][None, :] * obj_scale
            for k in range(npsd)
        ],
        nonneg_duals=np.array(
            [float(ret_Z[npsd + i][0, 0]) * obj_scale for i in range(n_slack_orig)]
        ),
        residuals={
            "primal": float(pres),
            "dual": float(dres),
            "gap_rel": float(relgap),
            "gap_abs": float(gap * obj_scale),
        },
        iterations=iters,
        solve_time=time.perf_counter() - t0,
    )


# ---------------------------------------------------------------------------
# moment-matrix extraction and debugging helpers
# ---------------------------------------------------------------------------


@dataclass
class MeasureMoments:
    name: str
    var_names: tuple[str, ...]
    exponents: list[tuple[int, ...]]
    moments: np.ndarray
    matrix: np.ndarray


def extract_moment_matrices(sol: ConicSolution, cp: ConicProgram) -> dict[str, MeasureMoments]:
    """Numeric moment vectors and Hankel-structured matrices per measure."""
    out: dict[str, MeasureMoments] = {}
    for view in cp.measure_views:
        moments = np.where(view.vars >= 0, view.coefs * sol.y[view.vars], view.coefs)
        out[view.name] = MeasureMoments(
            name=view.name,
            var_names=view.var_names,
            exponents=list(view.basis_exponents),
            moments=moments,
            matrix=moments[view.pair_index],
        )
    return out


def dump_program(cp: ConicProgram, path: str):
    """Write the program as plain text, one line per nonzero.

    Line formats::

        size <n> <m_eq> <n_blocks> <n_nonneg>
        offset <value>
        obj <var> <coeff>
        eq <row> <var> <coeff>
        eqrhs <row> <value>
        block <k> <name> <size>
        entry <k> <row> <col> <var> <coeff>
        const <k> <row> <col> <value>
        nonneg <row> <var> <coeff>
        nonnegrhs <row> <value>
    """
    with open(path, "w") as fh:
        fh.write(f"size {cp.n} {cp.A.shape[0]} {len(cp.blocks)} {cp.nonneg_A.shape[0]}\n")
        fh.write(f"offset {cp.offset!r}\n")
        for i in np.nonzero(cp.c)[0]:
            fh.write(f"obj {i} {cp.c[i]!r}\n")
        coo = cp.A.tocoo()
        for r, v, x in zip(coo.row, coo.col, coo.data):
            fh.write(f"eq {r} {v} {x!r}\n")
        for r, x in enumerate(cp.b):
            if x:
                fh.write(f"eqrhs {r} {x!r}\n")
        for k, blk in enumerate(cp.blocks):
            fh.write(f"block {k} {blk.name} {blk.size}\n")
            for p, q, v, x in zip(blk.rows, blk.cols, blk.vars, blk.coefs):
                fh.write(f"entry {k} {p} {q} {v} {x!r}\n")
            for p, q in zip(*np.nonzero(blk.const)):
                fh.write(f"const {k} {p} {q} {blk.const[p, q]!r}\n")
        coo = cp.nonneg_A.tocoo()
        for r, v, x in zip(coo.row, coo.col, coo.data):
            fh.write(f"nonneg {r} {v} {x!r}\n")
        for r, x in enumerate(cp.nonneg_b):
            if x:
                fh.write(f"nonnegrhs {r} {x!r}\n")
