"""Tests for monomial bases and closed-form moments of known measures.

The uniform-box and Dirac-mixture moment formulas are checked against an
independent 16-node Gauss-Legendre quadrature, which is exact for the
polynomial degrees involved.
"""

import math

import numpy as np
import pytest

from polyoc import (
    DiracFactor,
    MomentBasis,
    PolyError,
    UniformFactor,
    basis_size,
    enumerate_exponents,
    known_moments,
)


def _gauss_legendre_moment(lower, upper, exps, nodes=16):
    """Moment of the uniform law on a box via tensorized quadrature."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    out = 1.0
    for a, b, e in zip(lower, upper, exps):
        t = 0.5 * (b - a) * x + 0.5 * (a + b)
        # weights integrate over [a, b]; divide by the length to average
        out *= (0.5 * (b - a) * w @ t ** float(e)) / (b - a)
    return out


# ---------------------------------------------------------------------------
# bases
# ---------------------------------------------------------------------------


def test_basis_sizes():
    assert basis_size(1, 2) == 3
    assert basis_size(2, 2) == 6
    assert basis_size(3, 7) == math.comb(10, 3)
    assert len(MomentBasis(("x", "y"), 3)) == 10


def test_enumeration_is_graded():
    exps = enumerate_exponents(3, 4)
    assert exps[0] == (0, 0, 0)
    degrees = [sum(e) for e in exps]
    assert degrees == sorted(degrees)
    assert len(exps) == len(set(exps)) == basis_size(3, 4)


def test_index_round_trip_exhaustive():
    for nvars in (1, 2, 3):
        for degree in range(7):
            basis = MomentBasis(tuple(f"v{k}" for k in range(nvars)), degree)
            for i, exps in enumerate(basis.exponents):
                assert basis.index(exps) == i
                assert exps in basis
            assert (degree + 1,) + (0,) * (nvars - 1) not in basis
            with pytest.raises(PolyError):
                basis.index((degree + 1,) + (0,) * (nvars - 1))


def test_exponent_matrix_shape():
    basis = MomentBasis(("x", "y"), 3)
    m = basis.exponent_matrix()
    assert m.shape == (10, 2)
    assert m.dtype == np.int64
    np.testing.assert_array_equal(m[0], [0, 0])


# ---------------------------------------------------------------------------
# Dirac factors
# ---------------------------------------------------------------------------


def test_dirac_point_mass_moments():
    f = DiracFactor(("x1", "x2"), np.array([[1.0, 1.0]]), np.array([1.0]))
    for exps in enumerate_exponents(2, 6):
        assert f.moment(exps) == 1.0
    g = DiracFactor(("x",), np.array([[2.0]]), np.array([1.0]))
    assert g.moment((3,)) == 8.0


def test_dirac_mixture_moments():
    f = DiracFactor(
        ("x1", "x2"), np.array([[0.0, 1.0], [1.0, 1.0]]), np.array([0.8, 0.2])
    )
    assert math.isclose(f.moment((0, 0)), 1.0)
    assert math.isclose(f.moment((1, 0)), 0.2)
    assert math.isclose(f.moment((0, 1)), 1.0)
    assert math.isclose(f.moment((1, 1)), 0.2)
    assert math.isclose(f.moment((2, 0)), 0.2)


def test_symmetric_mixture_odd_moments_vanish():
    rng = np.random.default_rng(9)
    for _ in range(20):
        a = rng.uniform(0.1, 2.0)
        w = rng.uniform(0.1, 0.9)
        f = DiracFactor(("x",), np.array([[a], [-a]]), np.array([w, 1 - w]))
        g = DiracFactor(("x",), np.array([[a], [-a]]), np.array([0.5, 0.5]))
        for e in (1, 3, 5, 7):
            # only the equal-weight mixture is symmetric
            assert abs(g.moment((e,))) < 1e-12
            assert math.isclose(f.moment((e,)), (2 * w - 1) * a**e, rel_tol=1e-12)


def test_dirac_validation():
    with pytest.raises(PolyError):
        DiracFactor(("x",), np.array([[1.0]]), np.array([0.5]))  # sum != 1
    with pytest.raises(PolyError):
        DiracFactor(("x",), np.array([[1.0], [2.0]]), np.array([1.0, 0.0]))
    with pytest.raises(PolyError):
        DiracFactor(("x", "y"), np.array([[1.0]]), np.array([1.0]))  # shape


# ---------------------------------------------------------------------------
# uniform factors
# ---------------------------------------------------------------------------


def test_uniform_symmetric_interval():
    f = UniformFactor(("x",), np.array([-1.0]), np.array([1.0]))
    assert f.moment((0,)) == 1.0
    assert f.moment((1,)) == 0.0
    assert math.isclose(f.moment((2,)), 1.0 / 3.0)
    assert f.moment((3,)) == 0.0
    assert math.isclose(f.moment((4,)), 1.0 / 5.0)


def test_uniform_against_quadrature_random_boxes():
    rng = np.random.default_rng(17)
    for _ in range(100):
        nvars = int(rng.integers(1, 4))
        lo = rng.uniform(-2.0, 1.5, size=nvars)
        hi = lo + rng.uniform(0.1, 2.0, size=nvars)
        f = UniformFactor(tuple(f"v{k}" for k in range(nvars)), lo, hi)
        for _ in range(5):
            exps = rng.integers(0, 13, size=nvars)
            while exps.sum() > 12:
                exps = rng.integers(0, 13, size=nvars)
            ref = _gauss_legendre_moment(lo, hi, exps)
            assert math.isclose(f.moment(exps), ref, rel_tol=1e-10, abs_tol=1e-10)


def test_uniform_validation():
    with pytest.raises(PolyError):
        UniformFactor(("x",), np.array([1.0]), np.array([1.0]))  # empty interval
    with pytest.raises(PolyError):
        UniformFactor(("x", "y"), np.array([0.0]), np.array([1.0]))  # shape


# ---------------------------------------------------------------------------
# products of factors
# ---------------------------------------------------------------------------


def test_known_moments_product_structure():
    rng = np.random.default_rng(29)
    for _ in range(100):
        # one Dirac mixture over x and one uniform box over (y, z)
        npts = int(rng.integers(1, 4))
        pts = rng.uniform(-1.5, 1.5, size=(npts, 1))
        w = rng.uniform(0.1, 1.0, size=npts)
        w /= w.sum()
        dir_f = DiracFactor(("x",), pts, w)
        lo = rng.uniform(-2.0, 1.0, size=2)
        hi = lo + rng.uniform(0.2, 1.5, size=2)
        uni_f = UniformFactor(("y", "z"), lo, hi)

        names = ("x", "y", "z")
        exps_list = enumerate_exponents(3, 6)
        vals = known_moments([dir_f, uni_f], names, exps_list)
        for exps, got in zip(exps_list, vals):
            by_hand = dir_f.moment((exps[0],)) * _gauss_legendre_moment(
                lo, hi, exps[1:]
            )
            assert math.isclose(got, by_hand, rel_tol=1e-10, abs_tol=1e-10)


def test_known_moments_order_follows_names():
    f = DiracFactor(("a",), np.array([[2.0]]), np.array([1.0]))
    g = DiracFactor(("b",), np.array([[3.0]]), np.array([1.0]))
    # names order (b, a): exponent (1, 0) touches b only
    vals = known_moments([f, g], ("b", "a"), [(1, 0), (0, 1), (1, 1)])
    np.testing.assert_allclose(vals, [3.0, 2.0, 6.0])


def test_known_moments_requires_partition():
    f = DiracFactor(("x",), np.array([[1.0]]), np.array([1.0]))
    with pytest.raises(PolyError):
        known_moments([f], ("x", "y"), [(0, 0)])  # y uncovered
    g = DiracFactor(("y",), np.array([[1.0]]), np.array([1.0]))
    with pytest.raises(PolyError):
        known_moments([f, g], ("x",), [(0,)])  # y extraneous
