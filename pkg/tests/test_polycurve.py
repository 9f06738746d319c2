import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polypattern.errors import ConstantTermError, HypothesisError, ZeroPolynomialError
from polypattern.polycurve import (
    Polynomial,
    ScaleLattice,
    analyze_dependence,
    calibrate_lattice,
    curve_from_json,
    eval_curve,
    load_curve,
    make_curve,
    phase_coefficients,
    rescale_curve,
)

coeff = st.floats(min_value=-5, max_value=5, allow_nan=False).filter(lambda v: abs(v) > 1e-3)


@st.composite
def curves(draw, n_max=3, d_max=4):
    n = draw(st.integers(1, n_max))
    polys = []
    for _ in range(n):
        exps = draw(st.lists(st.integers(1, d_max), min_size=1, max_size=3, unique=True))
        polys.append({e: draw(coeff) for e in exps})
    return make_curve(polys)


def test_monomial_pair_structure():
    c = make_curve([{1: 1.0}, {2: 1.0}])
    assert (c.n, c.d, c.distinct_degrees, c.rank) == (2, 2, True, 2)


def test_proportional_rows_have_rank_one():
    c = make_curve([{1: 1.0, 2: 1.0}, {1: 2.0, 2: 2.0}])
    assert c.rank == 1


def test_constant_term_rejected():
    with pytest.raises(ConstantTermError):
        make_curve([{0: 1.0, 1: 1.0}])


def test_zero_polynomial_rejected():
    with pytest.raises(ZeroPolynomialError):
        make_curve([{1: 0.0}])


def test_eval_examples():
    c = make_curve([{1: 1.0}, {2: 1.0}])
    np.testing.assert_array_equal(eval_curve(c, 0.0), [0.0, 0.0])
    np.testing.assert_array_equal(eval_curve(c, 2.0), [2.0, 4.0])
    assert eval_curve(make_curve([{1: 1.0, 3: 1.0}]), 1.0)[0] == 2.0


def test_rescale_examples():
    c = make_curve([{1: 1.0, 2: 1.0}])
    assert rescale_curve(c, 0) is c
    r = rescale_curve(c, 1)
    assert r.polys[0].coeffs == {1: 0.5, 2: 1.0}
    assert eval_curve(r, 1.0)[0] == 1.5
    m = make_curve([{1: 1.0}, {2: 1.0}])
    for s in range(5):
        assert rescale_curve(m, s).polys == m.polys


@settings(max_examples=60, deadline=None)
@given(curves())
def test_zero_fixing(c):
    assert np.all(eval_curve(c, 0.0) == 0.0)


@settings(max_examples=60, deadline=None)
@given(curves(), st.integers(0, 8), st.floats(-4, 4))
def test_rescale_consistency(c, s, t):
    lhs = eval_curve(rescale_curve(c, s), t)
    rhs = np.array([2.0 ** (-p.deg * s) * p(2.0**s * t) for p in c.polys])
    scale = np.array([2.0 ** (-p.deg * s) * sum(abs(a) * abs(2.0**s * t) ** b for b, a in p.coeffs.items())
                      for p in c.polys])
    assert np.all(np.abs(lhs - rhs) <= 1e-12 * np.maximum(scale, 1e-300))


@settings(max_examples=40, deadline=None)
@given(curves(), st.lists(st.floats(0.1, 10), min_size=3, max_size=3))
def test_rank_invariant_under_row_scaling(c, factors):
    scaled = make_curve([{b: a * factors[i] for b, a in p.coeffs.items()} for i, p in enumerate(c.polys)])
    assert scaled.rank == c.rank


def test_dependence_examples():
    info = analyze_dependence(make_curve([{1: 1, 2: 1}, {1: 2, 2: 2}]))
    assert info.n0 == 1
    np.testing.assert_allclose(info.L, [[2.0]], atol=1e-12)
    info = analyze_dependence(make_curve([{1: 1}, {2: 1}, {1: 1, 2: 1}]))
    assert info.n0 == 2
    np.testing.assert_allclose(info.L, [[1.0], [1.0]], atol=1e-12)
    info = analyze_dependence(make_curve([{1: 1}, {2: 1}]))
    assert info.full_rank
    assert info.minor_idx == (1, 2)
    assert info.minor_inverse_norm == pytest.approx(1.0)


@settings(max_examples=40, deadline=None)
@given(curves(n_max=2, d_max=3), st.lists(coeff, min_size=2, max_size=2))
def test_dependence_reconstruction(base, mix):
    if not base.full_rank:
        return
    dep = {}
    for i, p in enumerate(base.polys):
        for b, a in p.coeffs.items():
            dep[b] = dep.get(b, 0.0) + mix[i] * a
    dep = {b: a for b, a in dep.items() if abs(a) > 1e-9}
    if not dep:
        return
    c = make_curve([p.coeffs for p in base.polys] + [dep])
    info = analyze_dependence(c)
    A = np.asarray(c.coeff_matrix)
    recon = np.asarray(info.L).T @ A[list(info.basis_idx)]
    np.testing.assert_allclose(recon, A[list(info.dependent_idx)], atol=1e-12 * np.abs(A).max())


def test_phase_coefficients_match_rescaled_curve():
    rng = np.random.default_rng(1)
    c = make_curve([{1: 1.3, 3: -0.4}, {2: 0.7}, {1: 0.2, 4: 1.1}])
    for _ in range(20):
        s, ell = int(rng.integers(0, 5)), int(rng.integers(0, 5))
        xi = rng.normal(size=3)
        u = rng.uniform(0.5, 2.0)
        C = phase_coefficients(c, s, ell, xi)[0]
        direct = sum(C[b] * u**b for b in range(len(C)))
        oracle = 2.0 ** (c.d * ell) * eval_curve(rescale_curve(c, s), 2.0**-ell * u) @ xi
        assert direct == pytest.approx(oracle, rel=1e-10, abs=1e-12)


def test_lattice_membership_and_rounding():
    lat = ScaleLattice(3)
    assert lat.is_s(0) and lat.is_s(6) and not lat.is_s(3)
    assert lat.is_ell(3) and lat.is_ell(9) and not lat.is_ell(6)
    for x in np.linspace(0, 40, 81):
        assert lat.is_ell(lat.round_ell(x))
    assert lat.next_ell(3) == 9


def test_calibration_single_linear_term_gives_gamma_one():
    lat, report = calibrate_lattice(make_curve([{1: 1.0}]))
    assert lat.Gamma == 1
    assert report["min_margin"] >= 0


def test_calibration_monomials_small_gamma():
    # At ell = 1, 2 the first derivative 2^ell xi_1 + 2 u xi_2 can vanish on the
    # shell even when |xi_1| >= |xi_2|; the floor first holds at ell = 3.
    lat, report = calibrate_lattice(make_curve([{1: 1.0}, {2: 1.0}]))
    assert lat.Gamma == 3
    assert report["min_margin"] >= 0


def test_calibration_large_lower_order_coefficient_needs_larger_gamma():
    # A large linear coefficient in the top-degree component delays the onset of
    # the derivative floor for small ell, so the calibrated Gamma grows.
    small, _ = calibrate_lattice(make_curve([{1: 1.0}, {1: 1.0, 3: 1.0}]))
    large, _ = calibrate_lattice(make_curve([{1: 1.0}, {1: 1e3, 3: 1.0}]))
    assert large.Gamma > small.Gamma


def test_calibration_rejects_degenerate_curve():
    with pytest.raises(HypothesisError):
        calibrate_lattice(make_curve([{1: 1.0, 2: 1.0}, {1: 2.0, 2: 2.0}]))


def test_json_round_trip(tmp_path):
    c = make_curve([{1: 1.0, 3: -2.5}, {2: 0.5}])
    path = tmp_path / "c.json"
    path.write_text(json.dumps(c.to_json()))
    assert load_curve(path).polys == c.polys
    assert curve_from_json(json.dumps(c.to_json())).polys == c.polys
    bare = {"polys": [{"1": 1.0, "3": -2.5}, {"2": 0.5}]}
    assert curve_from_json(bare).polys == c.polys


def test_polynomial_derivative_and_call():
    p = Polynomial.from_map({1: 2.0, 3: 1.0})
    assert p(2.0) == 12.0
    assert p.derivative_coeffs() == {0: 2.0, 2: 3.0}
    assert math.isclose(p.rescaled(1)(1.0), 2.0**-3 * p(2.0))

