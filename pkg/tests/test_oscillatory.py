import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from polypattern.errors import HypothesisError, PreconditionError, QuadratureError, ShellError
from polypattern.gridfield import GridFunction, l2_norm, psi, tau
from polypattern.oscillatory import (
    apply_T,
    band_limited_field,
    check_lemma_hypothesis,
    decay_fit,
    multiplier,
    oscillatory_integral,
    phase,
    phase_direct,
    pigeonhole_index,
    relative_l2,
    shell_sup,
    transfer_factor,
)
from polypattern.polycurve import ScaleLattice, make_curve, phase_coefficients
from polypattern.sampling import shell_points

PARABOLA = make_curve([{1: 1.0}, {2: 1.0}])


def tau_hat_oracle(w):
    """int tau(u) e^{2 pi i w u} du by QUADPACK's Fourier-weighted rule."""
    re, _ = integrate.quad(tau, 0.5, 2.0, weight="cos", wvar=2 * math.pi * w, epsabs=1e-13, limit=400)
    im, _ = integrate.quad(tau, 0.5, 2.0, weight="sin", wvar=2 * math.pi * w, epsabs=1e-13, limit=400)
    return complex(re, im)


def test_phase_monomial_example():
    t, xi = 0.7, np.array([0.3, -1.1])
    assert phase(PARABOLA, 0, 0, t, xi) == pytest.approx(t * xi[0] + t**2 * xi[1], rel=1e-14)
    assert phase(PARABOLA, 2, 3, np.linspace(0, 2, 5), np.zeros(2)).tolist() == [0.0] * 5


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 6), st.integers(0, 6), st.floats(0.5, 2.0), st.integers(0, 2**31))
def test_phase_two_routes_agree(s, ell, t, seed):
    c = make_curve([{1: 0.4, 3: 1.2}, {2: -0.9}, {1: 1.0, 2: 0.3, 4: 0.5}])
    xi = np.random.default_rng(seed).normal(size=3)
    a, b = phase(c, s, ell, t, xi), phase_direct(c, s, ell, t, xi)
    scale = 2.0 ** (c.d * ell) * np.abs(xi).sum() * 8
    assert abs(a - b) <= 1e-10 * max(abs(b), 1e-3 * scale)


def test_pigeonhole_examples():
    assert pigeonhole_index([1.0, 0.0]) == 0  # first axis (0-based)
    a = 1 / math.sqrt(2)
    assert pigeonhole_index([a, a]) == 0
    for xi in shell_points(3, 200):
        i0 = pigeonhole_index(xi)
        assert abs(xi[i0]) >= np.linalg.norm(xi) / (2 * math.sqrt(3))
    with pytest.raises(ShellError):
        pigeonhole_index([0.1, 0.0])


@pytest.mark.parametrize("xi", [[0.3], [4.5], [0.1, 0.1], [3.0, 3.0]])
def test_multiplier_zero_off_shell(xi):
    c = make_curve([{1: 1.0}]) if len(xi) == 1 else PARABOLA
    assert multiplier(c, 5, 0, 0, xi).value == 0


@pytest.mark.parametrize("k", [0, 3, 6, 10])
@pytest.mark.parametrize("xi", [0.6, 1.0, 1.7, -2.5, 3.9])
def test_multiplier_one_dimensional_oracle(k, xi):
    line = make_curve([{1: 1.0}])
    m = multiplier(line, k, 0, 0, [xi], tol=1e-12)
    oracle = float(psi(abs(xi))) * tau_hat_oracle(2.0**k * xi)
    assert abs(m.value - oracle) < 1e-8


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 14), st.integers(0, 2**31))
def test_multiplier_bounded_by_one(k, seed):
    xi = shell_points(2, 1, r_min=0.5, r_max=4.0)[0] if seed % 7 == 0 else \
        np.random.default_rng(seed).uniform(-3, 3, size=2)
    m = multiplier(PARABOLA, k, 0, 3, xi)
    assert abs(m.value) <= 1 + 1e-9 + m.quad_error


def test_quadrature_budget_exhaustion_raises():
    coeffs = phase_coefficients(PARABOLA, 0, 0, np.array([[1.0, 1.0]]))
    with pytest.raises(QuadratureError):
        oscillatory_integral(coeffs, 2.0**12, tol=1e-15, budget_factor=1)


def test_admissibility_enforced():
    with pytest.raises(HypothesisError):
        multiplier(PARABOLA, 4, 1, 3, [1.0, 0.0], lattice=ScaleLattice(3))


def test_lemma_hypotheses():
    with pytest.raises(HypothesisError):
        check_lemma_hypothesis(make_curve([{1: 1.0, 2: 1.0}, {1: 2.0, 2: 2.0}]), 0)
    with pytest.raises(HypothesisError):
        check_lemma_hypothesis(make_curve([{1: 1.0}, {1: 1.0, 2: 1.0}, {2: 3.0}]), 2)


def test_decay_fit_needs_wide_k_range():
    with pytest.raises(PreconditionError):
        decay_fit(PARABOLA, 0, 3, 6, 10)


def test_shell_sup_dominates_samples():
    xi = shell_points(2, 256)
    sup = shell_sup(PARABOLA, 12, 0, 3, xi)
    direct = max(abs(multiplier(PARABOLA, 12, 0, 3, p).value) for p in xi[::16])
    assert sup.sup >= direct - 1e-9


@pytest.mark.slow
def test_decay_parabola_trend():
    fit = decay_fit(PARABOLA, 0, 3, 6, 16, shell_pts=1024)
    assert fit.slope <= -0.5 + 0.1
    # non-increasing beyond the stationary-phase onset, 10% slack
    vals = [v for k, v in zip(fit.ks, fit.sup_values) if k in fit.fit_ks]
    for a, b in zip(vals, vals[1:]):
        assert b <= a * 1.1


def test_transfer_factor_at_zero_is_one():
    np.testing.assert_allclose(transfer_factor(PARABOLA, 0, 2, np.zeros((1, 2))), [1.0], atol=1e-12)


def test_apply_T_constant_interior():
    f = GridFunction(np.ones((256, 256)), ((-2.0, 2.0), (-2.0, 2.0)))
    g = apply_T(f, PARABOLA, 0, 1).value
    x, y = g.mesh()
    inside = (np.abs(x) < 1) & (np.abs(y) < 1)
    np.testing.assert_allclose(g.values[inside], 1.0, atol=1e-6)


@pytest.mark.parametrize("seed", range(3))
def test_apply_T_is_a_contraction(seed):
    rng = np.random.default_rng(seed)
    f = GridFunction(rng.random((128, 128)), ((0.0, 1.0), (0.0, 1.0)))
    g = apply_T(f, PARABOLA, 0, 2).value
    assert l2_norm(g) <= l2_norm(f) * (1 + 1e-6)


def test_band_limited_bound_and_routes():
    k, ell = 8, 3
    g, freqs, band = band_limited_field(k, (1024, 1024), seed=0)
    spatial = apply_T(g, PARABOLA, 0, ell, periodic=True, band_limit=band).value
    spectral = apply_T(g, PARABOLA, 0, ell, route="multiplier", periodic=True).value
    assert relative_l2(spatial, spectral) < 1e-4
    sup = shell_sup(PARABOLA, k, 0, ell, shell_points(2, 4096), refine=2).sup
    assert l2_norm(spectral) <= sup * l2_norm(g) * (1 + 1e-3)


def test_routes_agree_on_smooth_field():
    f = GridFunction.from_function(
        lambda x, y: np.clip(1 - ((x - .5) ** 2 + (y - .5) ** 2) / 0.2, 0, None) ** 6 * (1 + 0.3 * np.sin(9 * x)),
        ((0.0, 1.0), (0.0, 1.0)), (512, 512))
    for ell in (1, 3):
        a = apply_T(f, PARABOLA, 0, ell).value
        b = apply_T(f, PARABOLA, 0, ell, route="multiplier").value
        assert relative_l2(a, b) < 1e-4
