"""Numerical kernels, numba-compiled when available.

Every kernel here exists in two flavours: a numba ``@njit`` build of the
loop-based reference and a vectorized (or plain Python) fallback that needs
nothing beyond numpy.  The compiled flavour is selected at import time when
numba is importable and the environment variable ``POLYOC_DISABLE_NUMBA`` is
unset or falsy.  Both flavours return identical results up to floating-point
roundoff; ``tests/test_kernels.py`` checks the parity and
``benchmarks/kernel_bench.py`` compares their speed.

Polynomials are passed to kernels in packed form: an integer exponent matrix
``exps`` of shape ``(nterms, nvars)`` and a coefficient vector ``coeffs`` of
shape ``(nterms,)``.  Families of polynomials over a common variable layout
are concatenated with an ``offsets`` array of length ``npoly + 1`` so that
polynomial ``i`` owns rows ``offsets[i]:offsets[i + 1]``.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba as nb

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised via POLYOC_DISABLE_NUMBA
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and os.environ.get("POLYOC_DISABLE_NUMBA", "").lower() not in (
    "1",
    "true",
    "yes",
)


# ---------------------------------------------------------------------------
# batch polynomial evaluation
# ---------------------------------------------------------------------------

def _eval_many_loops(exps, coeffs, pts, out):
    npts = pts.shape[0]
    nterms = exps.shape[0]
    nvars = exps.shape[1]
    for p in range(npts):
        acc = 0.0
        for j in range(nterms):
            v = coeffs[j]
            for k in range(nvars):
                e = exps[j, k]
                if e > 0:
                    base = pts[p, k]
                    w = base
                    for _ in range(e - 1):
                        w *= base
                    v *= w
            acc += v
        out[p] = acc
    return out


def _eval_many_numpy(exps, coeffs, pts, out):
    # Chunk over points so the (chunk, nterms, nvars) broadcast stays small.
    npts = pts.shape[0]
    chunk = max(1, int(2_000_000 / max(1, exps.shape[0] * exps.shape[1])))
    for s in range(0, npts, chunk):
        block = pts[s : s + chunk]
        powers = block[:, None, :] ** exps[None, :, :]
        out[s : s + chunk] = powers.prod(axis=2) @ coeffs
    return out


# ---------------------------------------------------------------------------
# trapezoidal integrals of monomials along a sampled trajectory
# ---------------------------------------------------------------------------

def _monomial_trapezoid_loops(exps, pts, dt, out):
    nmono = exps.shape[0]
    npts = pts.shape[0]
    nvars = exps.shape[1]
    for j in range(nmono):
        acc = 0.0
        for p in range(npts):
            v = 1.0
            for k in range(nvars):
                e = exps[j, k]
                if e > 0:
                    base = pts[p, k]
                    w = base
                    for _ in range(e - 1):
                        w *= base
                    v *= w
            if p == 0 or p == npts - 1:
                acc += 0.5 * v
            else:
                acc += v
        out[j] = acc * dt
    return out


def _monomial_trapezoid_numpy(exps, pts, dt, out):
    npts = pts.shape[0]
    weights = np.full(npts, dt)
    weights[0] *= 0.5
    weights[-1] *= 0.5
    out[:] = 0.0
    chunk = max(1, int(2_000_000 / max(1, exps.shape[0] * exps.shape[1])))
    for s in range(0, npts, chunk):
        block = pts[s : s + chunk]
        powers = block[:, None, :] ** exps[None, :, :]
        out += powers.prod(axis=2).T @ weights[s : s + chunk]
    return out


# ---------------------------------------------------------------------------
# closed-loop RK4 integration
# ---------------------------------------------------------------------------
#
# Points live in the layout (t, x_1..x_n, u_1..u_m).  The dynamics family has
# one packed polynomial per state; the controller family one per input.  Input
# values are clamped to [ulo, uhi] componentwise after every controller
# evaluation.  A nonnegative stop radius ends the run once |x| <= radius.

def _rk4_loop(dyn_off, dyn_exps, dyn_coeffs, ctl_off, ctl_exps, ctl_coeffs,
              x0, dt, nsteps, ulo, uhi, stop_radius, xs, us):
    n = x0.shape[0]
    m = ulo.shape[0]
    z = np.empty(1 + n + m)
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    x = x0.copy()

    def eval_packed(offsets, exps, coeffs, idx):
        acc = 0.0
        for j in range(offsets[idx], offsets[idx + 1]):
            v = coeffs[j]
            for k in range(exps.shape[1]):
                e = exps[j, k]
                if e > 0:
                    base = z[k]
                    w = base
                    for _ in range(e - 1):
                        w *= base
                    v *= w
            acc += v
        return acc

    def fill(t, state):
        z[0] = t
        for i in range(n):
            z[1 + i] = state[i]
        for i in range(m):
            u = eval_packed(ctl_off, ctl_exps, ctl_coeffs, i)
            if u < ulo[i]:
                u = ulo[i]
            elif u > uhi[i]:
                u = uhi[i]
            z[1 + n + i] = u

    def deriv(out):
        for i in range(n):
            out[i] = eval_packed(dyn_off, dyn_exps, dyn_coeffs, i)

    nodes = nsteps + 1
    for step in range(nsteps + 1):
        t = step * dt
        fill(t, x)
        xs[step] = x
        for i in range(m):
            us[step, i] = z[1 + n + i]
        if stop_radius >= 0.0:
            r2 = 0.0
            for i in range(n):
                r2 += x[i] * x[i]
            if r2 <= stop_radius * stop_radius:
                nodes = step + 1
                break
        if step == nsteps:
            break
        deriv(k1)
        fill(t + 0.5 * dt, x + 0.5 * dt * k1)
        deriv(k2)
        fill(t + 0.5 * dt, x + 0.5 * dt * k2)
        deriv(k3)
        fill(t + dt, x + dt * k3)
        deriv(k4)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return nodes


# ---------------------------------------------------------------------------
# Schur-complement accumulation for the interior-point solver
# ---------------------------------------------------------------------------
#
# A PSD block of the conic program is an affine map y -> C0 + sum_i y_i C_i
# stored as entry arrays (row p, col q, variable v, coefficient c) covering
# the full symmetric matrix.  Given the inverse NT scaling V = W^{-1}, the
# solver needs H[i, j] += tr(C_i V C_j V) for all variable pairs of the
# block.  The loop flavour forms T_j = V C_j V one variable at a time by
# accumulating scaled outer products of rows/columns of V; the numpy
# flavour batches the congruences V C_j V as dense matmuls over chunks of
# variables.

def _schur_block_loops(cols, col_start, p_sorted, q_sorted, c_sorted,
                       p_all, q_all, v_all, c_all, V, H):
    nk = V.shape[0]
    ncols = cols.shape[0]
    nnz = p_all.shape[0]
    T = np.empty((nk, nk))
    for jj in range(ncols):
        for r in range(nk):
            for s in range(nk):
                T[r, s] = 0.0
        for e in range(col_start[jj], col_start[jj + 1]):
            p = p_sorted[e]
            q = q_sorted[e]
            c = c_sorted[e]
            for r in range(nk):
                vrp = c * V[r, p]
                if vrp != 0.0:
                    for s in range(nk):
                        T[r, s] += vrp * V[q, s]
        jglob = cols[jj]
        for e in range(nnz):
            H[v_all[e], jglob] += c_all[e] * T[p_all[e], q_all[e]]
    return H


def _schur_block_numpy(cols, col_start, p_sorted, q_sorted, c_sorted,
                       p_all, q_all, v_all, c_all, V, H):
    import scipy.sparse as sp

    nk = V.shape[0]
    ncols = cols.shape[0]
    entry_col = np.repeat(np.arange(ncols), np.diff(col_start))
    B = sp.csc_matrix(
        (c_sorted, (p_sorted * nk + q_sorted, entry_col)), shape=(nk * nk, ncols)
    )
    chunk = max(1, int(8_000_000 / max(1, nk * nk)))
    Hloc = np.empty((ncols, ncols))
    for s in range(0, ncols, chunk):
        dense = B[:, s : s + chunk].toarray().T.reshape(-1, nk, nk)
        T = V @ dense @ V
        Hloc[:, s : s + chunk] = B.T @ T.reshape(-1, nk * nk).T
    idx = cols  # scatter into the global matrix
    H[np.ix_(idx, idx)] += Hloc
    return H


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

if USE_NUMBA:
    _jit = nb.njit(cache=True, fastmath=False)
    eval_poly_many_impl = _jit(_eval_many_loops)
    monomial_trapezoid_impl = _jit(_monomial_trapezoid_loops)
    _rk4_impl = _jit(_rk4_loop)
    schur_block_impl = _jit(_schur_block_loops)
else:
    eval_poly_many_impl = _eval_many_numpy
    monomial_trapezoid_impl = _monomial_trapezoid_numpy
    _rk4_impl = _rk4_loop
    schur_block_impl = _schur_block_numpy


def eval_poly_many(exps, coeffs, pts):
    """Evaluate one packed polynomial at many points; returns ``(npts,)``."""
    exps = np.ascontiguousarray(exps, dtype=np.int64)
    coeffs = np.ascontiguousarray(coeffs, dtype=np.float64)
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    out = np.empty(pts.shape[0])
    if coeffs.size == 0:
        out[:] = 0.0
        return out
    return eval_poly_many_impl(exps, coeffs, pts, out)


def monomial_trapezoid(exps, pts, dt):
    """Trapezoidal integrals of each monomial along a uniformly sampled path."""
    exps = np.ascontiguousarray(exps, dtype=np.int64)
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    out = np.empty(exps.shape[0])
    return monomial_trapezoid_impl(exps, pts, float(dt), out)


def rk4_closed_loop(dyn, ctl, x0, dt, nsteps, ulo, uhi, stop_radius):
    """Integrate a closed loop with classical RK4.

    ``dyn`` and ``ctl`` are packed families ``(offsets, exps, coeffs)`` over
    the point layout ``(t, x, u)``; ``ctl`` must not reference the input
    slots.  Returns ``(ts, xs, us)`` truncated at the early-stop node when
    ``stop_radius >= 0`` triggers.
    """
    dyn_off, dyn_exps, dyn_coeffs = dyn
    ctl_off, ctl_exps, ctl_coeffs = ctl
    x0 = np.ascontiguousarray(x0, dtype=np.float64)
    n = x0.shape[0]
    m = ulo.shape[0]
    xs = np.empty((nsteps + 1, n))
    us = np.empty((nsteps + 1, m))
    nodes = _rk4_impl(
        np.ascontiguousarray(dyn_off, dtype=np.int64),
        np.ascontiguousarray(dyn_exps, dtype=np.int64),
        np.ascontiguousarray(dyn_coeffs, dtype=np.float64),
        np.ascontiguousarray(ctl_off, dtype=np.int64),
        np.ascontiguousarray(ctl_exps, dtype=np.int64),
        np.ascontiguousarray(ctl_coeffs, dtype=np.float64),
        x0,
        float(dt),
        int(nsteps),
        np.ascontiguousarray(ulo, dtype=np.float64),
        np.ascontiguousarray(uhi, dtype=np.float64),
        float(stop_radius),
        xs,
        us,
    )
    ts = dt * np.arange(nodes)
    return ts, xs[:nodes].copy(), us[:nodes].copy()


def schur_block(cols, col_start, sorted_entries, all_entries, V, H):
    """Accumulate tr(C_i V C_j V) contributions of one PSD block into ``H``.

    ``sorted_entries = (p, q, c)`` lists the block entries grouped by local
    column (variable) with ``col_start`` delimiting the groups and ``cols``
    mapping local columns to global variable indices; ``all_entries =
    (p, q, v, c)`` lists every entry with its global variable index.
    """
    p_s, q_s, c_s = sorted_entries
    p_a, q_a, v_a, c_a = all_entries
    return schur_block_impl(cols, col_start, p_s, q_s, c_s, p_a, q_a, v_a, c_a, V, H)
