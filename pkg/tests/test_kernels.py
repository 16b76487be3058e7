"""Parity tests for the numerical kernels.

Every kernel ships a loop flavour (numba-compiled when enabled) and a
numpy fallback; both are exercised here directly and compared against
independent dense oracles, so the tests hold regardless of which flavour
the package selected at import time.
"""

import math
import os
import subprocess
import sys

import numpy as np

from polyoc import _kernels
from polyoc._kernels import (
    _eval_many_loops,
    _eval_many_numpy,
    _monomial_trapezoid_loops,
    _monomial_trapezoid_numpy,
    _schur_block_loops,
    _schur_block_numpy,
    eval_poly_many,
    monomial_trapezoid,
    rk4_closed_loop,
)


def _random_packed(rng, nterms, nvars, max_exp=4):
    exps = rng.integers(0, max_exp + 1, size=(nterms, nvars)).astype(np.int64)
    coeffs = rng.standard_normal(nterms)
    return exps, coeffs


def _eval_reference(exps, coeffs, pts):
    return (pts[:, None, :] ** exps[None, :, :]).prod(axis=2) @ coeffs


# ---------------------------------------------------------------------------
# batch evaluation
# ---------------------------------------------------------------------------


def test_eval_poly_many_flavours_agree():
    rng = np.random.default_rng(0)
    for _ in range(10):
        exps, coeffs = _random_packed(rng, nterms=8, nvars=3)
        pts = rng.uniform(-2, 2, size=(40, 3))
        ref = _eval_reference(exps, coeffs, pts)

        out_a = _eval_many_loops(exps, coeffs, pts, np.empty(40))
        out_b = _eval_many_numpy(exps, coeffs, pts, np.empty(40))
        out_pub = eval_poly_many(exps, coeffs, pts)
        np.testing.assert_allclose(out_a, ref, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(out_b, ref, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(out_pub, ref, rtol=1e-12, atol=1e-12)


def test_eval_poly_many_empty_polynomial():
    pts = np.zeros((5, 2))
    out = eval_poly_many(np.zeros((0, 2), dtype=np.int64), np.zeros(0), pts)
    np.testing.assert_array_equal(out, np.zeros(5))


# ---------------------------------------------------------------------------
# monomial trapezoid
# ---------------------------------------------------------------------------


def test_monomial_trapezoid_flavours_agree():
    rng = np.random.default_rng(1)
    dt = 1e-3
    t = np.arange(0.0, 1.0 + dt / 2, dt)
    pts = np.column_stack([np.sin(t), np.cos(2 * t), t**2])
    exps = np.array(
        [[0, 0, 0], [1, 0, 0], [0, 2, 0], [1, 1, 1], [3, 0, 2]], dtype=np.int64
    )
    ref = np.array(
        [np.trapezoid(pts[:, 0] ** e[0] * pts[:, 1] ** e[1] * pts[:, 2] ** e[2], dx=dt)
         for e in exps]
    )
    out_a = _monomial_trapezoid_loops(exps, pts, dt, np.empty(len(exps)))
    out_b = _monomial_trapezoid_numpy(exps, pts, dt, np.empty(len(exps)))
    out_pub = monomial_trapezoid(exps, pts, dt)
    np.testing.assert_allclose(out_a, ref, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(out_b, ref, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(out_pub, ref, rtol=1e-12, atol=1e-14)


# ---------------------------------------------------------------------------
# closed-loop RK4
# ---------------------------------------------------------------------------


def _family(polys_packed, nvars):
    """Concatenate packed polynomials into an (offsets, exps, coeffs) family."""
    offsets = [0]
    all_e, all_c = [], []
    for e, c in polys_packed:
        all_e.append(e)
        all_c.append(c)
        offsets.append(offsets[-1] + len(c))
    exps = (
        np.vstack(all_e) if all_e else np.zeros((0, nvars), dtype=np.int64)
    )
    coeffs = np.concatenate(all_c) if all_c else np.zeros(0)
    return np.array(offsets, dtype=np.int64), exps, coeffs


def test_rk4_matches_exponential():
    # x' = x over the layout (t, x): exact solution e^t
    dyn = _family([(np.array([[0, 1]], dtype=np.int64), np.array([1.0]))], 2)
    ctl = _family([], 2)
    empty = np.zeros(0)
    dt = 1e-3
    ts, xs, us = rk4_closed_loop(dyn, ctl, np.array([1.0]), dt, 1000, empty, empty, -1.0)
    assert len(ts) == 1001 and us.shape == (1001, 0)
    assert math.isclose(xs[-1, 0], math.e, rel_tol=1e-10)


def test_rk4_early_stop_radius():
    # x' = -x from 1 stops when |x| <= 0.5, i.e. near t = ln 2
    dyn = _family([(np.array([[0, 1]], dtype=np.int64), np.array([-1.0]))], 2)
    ctl = _family([], 2)
    empty = np.zeros(0)
    dt = 1e-3
    ts, xs, _ = rk4_closed_loop(dyn, ctl, np.array([1.0]), dt, 5000, empty, empty, 0.5)
    assert ts[-1] < 5.0  # stopped early
    assert abs(ts[-1] - math.log(2.0)) <= 2 * dt
    assert xs[-1, 0] <= 0.5 + 1e-12


def test_rk4_clamps_inputs():
    # x' = u with controller u = 2 clamped to [-1, 1]: slope exactly 1
    layout = 3  # (t, x, u)
    dyn = _family([(np.array([[0, 0, 1]], dtype=np.int64), np.array([1.0]))], layout)
    ctl = _family([(np.array([[0, 0, 0]], dtype=np.int64), np.array([2.0]))], layout)
    ts, xs, us = rk4_closed_loop(
        dyn, ctl, np.array([0.0]), 0.01, 100, np.array([-1.0]), np.array([1.0]), -1.0
    )
    np.testing.assert_allclose(us[:, 0], 1.0)
    assert math.isclose(xs[-1, 0], 1.0, rel_tol=1e-12)


def test_rk4_fourth_order_convergence():
    # halving dt must shrink the global error by about 2^4
    dyn = _family([(np.array([[0, 1]], dtype=np.int64), np.array([1.0]))], 2)
    ctl = _family([], 2)
    empty = np.zeros(0)
    errs = []
    for dt in (2e-2, 1e-2):
        n = int(round(1.0 / dt))
        _, xs, _ = rk4_closed_loop(dyn, ctl, np.array([1.0]), dt, n, empty, empty, -1.0)
        errs.append(abs(xs[-1, 0] - math.e))
    ratio = errs[0] / errs[1]
    assert 12.0 <= ratio <= 20.0


# ---------------------------------------------------------------------------
# Schur accumulation
# ---------------------------------------------------------------------------


def _random_block(rng, nk, nvars, cols=None):
    """Random symmetric C_i matrices in the kernel's entry format.

    ``cols`` maps the block's local variables to global indices; the
    ``all_entries`` record carries the global index per entry.
    """
    if cols is None:
        cols = np.arange(nvars, dtype=np.int64)
    mats = []
    for _ in range(nvars):
        raw = rng.standard_normal((nk, nk))
        mats.append(0.5 * (raw + raw.T))
    p_s, q_s, c_s, starts = [], [], [], [0]
    p_a, q_a, v_a, c_a = [], [], [], []
    for v, C in enumerate(mats):
        for p in range(nk):
            for q in range(nk):
                p_s.append(p)
                q_s.append(q)
                c_s.append(C[p, q])
                p_a.append(p)
                q_a.append(q)
                v_a.append(int(cols[v]))
                c_a.append(C[p, q])
        starts.append(len(p_s))
    to = lambda a, t: np.asarray(a, dtype=t)
    sorted_entries = (to(p_s, np.int32), to(q_s, np.int32), to(c_s, float))
    all_entries = (to(p_a, np.int32), to(q_a, np.int32), to(v_a, np.int64), to(c_a, float))
    return mats, sorted_entries, all_entries, to(starts, np.int64)


def test_schur_block_flavours_match_trace_oracle():
    rng = np.random.default_rng(4)
    for _ in range(5):
        nk, nvars = 5, 4
        mats, sorted_e, all_e, starts = _random_block(rng, nk, nvars)
        raw = rng.standard_normal((nk, nk))
        V = raw @ raw.T + nk * np.eye(nk)  # symmetric positive definite
        cols = np.arange(nvars, dtype=np.int64)

        oracle = np.empty((nvars, nvars))
        for i in range(nvars):
            for j in range(nvars):
                oracle[i, j] = np.einsum("pq,qr,rs,sp->", mats[i], V, mats[j], V)

        H1 = _schur_block_loops(
            cols, starts, *sorted_e, *all_e, V, np.zeros((nvars, nvars))
        )
        H2 = _schur_block_numpy(
            cols, starts, *sorted_e, *all_e, V, np.zeros((nvars, nvars))
        )
        np.testing.assert_allclose(H1, oracle, rtol=1e-10, atol=1e-10)
        np.testing.assert_allclose(H2, oracle, rtol=1e-10, atol=1e-10)


def test_schur_block_scatters_into_global_matrix():
    rng = np.random.default_rng(5)
    nk, nvars, nglobal = 3, 2, 6
    cols = np.array([1, 4], dtype=np.int64)  # block variables sit at 1 and 4
    mats, sorted_e, all_e, starts = _random_block(rng, nk, nvars, cols)
    V = np.eye(nk)
    H = _schur_block_loops(cols, starts, *sorted_e, *all_e, V, np.zeros((nglobal, nglobal)))
    mask = np.zeros((nglobal, nglobal), dtype=bool)
    mask[np.ix_(cols, cols)] = True
    assert np.all(H[~mask] == 0.0)
    assert math.isclose(H[1, 4], np.einsum("pq,qp->", mats[0], mats[1]), rel_tol=1e-12)
    H2 = _schur_block_numpy(
        cols, starts, *sorted_e, *all_e, V, np.zeros((nglobal, nglobal))
    )
    np.testing.assert_allclose(H2, H, rtol=1e-12, atol=1e-12)


# ---------------------------------------------------------------------------
# dispatch flag
# ---------------------------------------------------------------------------


def test_disable_flag_selects_numpy_flavour():
    code = (
        "from polyoc import _kernels\n"
        "assert not _kernels.USE_NUMBA\n"
        "assert _kernels.eval_poly_many_impl is _kernels._eval_many_numpy\n"
        "import numpy as np\n"
        "out = _kernels.eval_poly_many(np.array([[1]]), np.array([2.0]),"
        " np.array([[3.0]]))\n"
        "assert float(out[0]) == 6.0\n"
    )
    env = dict(os.environ, POLYOC_DISABLE_NUMBA="1")
    subprocess.run([sys.executable, "-c", code], check=True, env=env)
