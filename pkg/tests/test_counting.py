import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polypattern.counting import (
    bourgain_step,
    corner_form,
    corner_step,
    lower_bound_lemma,
    substitution_kernel,
    t_nodes,
    two_point_form,
    zeta_partition,
)
from polypattern.errors import HypothesisError, SubstitutionError
from polypattern.gridfield import GridFunction, bump_kit, l2_norm, mollify, subtract, tau_ell
from polypattern.polycurve import Polynomial, make_curve
from polypattern.sets import random_density_set

PARABOLA = make_curve([{1: 1.0}, {2: 1.0}])
LINE = make_curve([{1: 1.0}])
T, T2 = Polynomial.from_map({1: 1.0}), Polynomial.from_map({2: 1.0})


def cell_overlap_matrix(m, h, a):
    """O[i, i'] = |I_i ∩ (I_i' - a)| for the cells I_i = [i h, (i + 1) h)."""
    lo = np.arange(m) * h
    left = np.maximum(lo[:, None], lo[None, :] - a)
    right = np.minimum(lo[:, None] + h, lo[None, :] - a + h)
    return np.clip(right - left, 0.0, None)


def brute_corner(S, P1, P2, count):
    """Midpoint rule in t; for each t the cell integrals are sums of interval overlaps."""
    m1, m2 = S.shape
    h1, h2 = 1.0 / m1, 1.0 / m2
    total = 0.0
    for t in (np.arange(count) + 0.5) / count:
        X = cell_overlap_matrix(m1, h1, P1(t)) @ S
        Y = S @ cell_overlap_matrix(m2, h2, P2(t)).T
        total += np.sum(S * X * Y)
    return total / count


def brute_two_point(S, c, count):
    m1, m2 = S.shape
    total = 0.0
    for t in (np.arange(count) + 0.5) / count:
        a, b = c(np.asarray(t))
        total += np.sum(S * (cell_overlap_matrix(m1, 1.0 / m1, a) @ S @ cell_overlap_matrix(m2, 1.0 / m2, b).T))
    return total / count


def unit(values):
    return GridFunction(values, tuple((0.0, 1.0) for _ in values.shape), density=True)


def test_line_closed_form():
    r = two_point_form(unit(np.ones(1024)), LINE)
    assert r.value == pytest.approx(0.5, abs=2e-3)


def test_zero_function_gives_zero():
    assert two_point_form(unit(np.zeros((32, 32))), PARABOLA).value == 0.0
    assert corner_form(unit(np.zeros((32, 32))), T, T2).value == 0.0


def test_parabola_closed_form():
    r = two_point_form(unit(np.ones((512, 512))), PARABOLA)
    assert r.value == pytest.approx(5 / 12, abs=5e-3)


def test_corner_closed_form():
    r = corner_form(unit(np.ones((256, 256))), T, T2)
    assert r.value == pytest.approx(5 / 12, abs=5e-3)


@pytest.mark.parametrize("seed", range(4))
def test_corner_matches_brute_force(seed):
    S = random_density_set((64, 64), 0.4, seed).values
    ref = brute_corner(S, T, T2, 40)
    got = corner_form(unit(S), T, T2, nodes=40).value
    assert got == pytest.approx(ref, rel=1e-2)


@pytest.mark.parametrize("seed", range(3))
def test_two_point_matches_brute_force(seed):
    S = random_density_set((64, 64), 0.4, seed).values
    ref = brute_two_point(S, PARABOLA, 40)
    got = two_point_form(unit(S), PARABOLA, nodes=40).value
    assert got == pytest.approx(ref, rel=1e-2)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_positivity_and_monotonicity(seed):
    f = random_density_set((32, 32), 0.3, seed)
    g = unit(np.maximum(f.values, random_density_set((32, 32), 0.3, seed + 1).values))
    a = two_point_form(f, PARABOLA, nodes=64).value
    b = two_point_form(g, PARABOLA, nodes=64).value
    assert a >= 0
    assert a <= b + 1e-12


def test_t_nodes_integrate_tau_to_one():
    t, w = t_nodes(3, 4000)
    assert w.sum() == pytest.approx(1.0, abs=1e-10)
    assert np.all((t > 2**-4) & (t < 2**-2))


def test_lemma_half_cube_and_constant():
    kit = bump_kit(2)
    x = (np.arange(256) + 0.5) / 256
    half = unit(((x[:, None] < 0.5) & (x[None, :] < 0.5)).astype(float))
    lhs, rhs, ratio = lower_bound_lemma(half, kit, 6)
    assert ratio >= 1.0
    eps = 0.3
    const = unit(np.full((256, 256), eps))
    _, _, ratio = lower_bound_lemma(const, kit, 6)
    assert ratio == pytest.approx(1.0, abs=0.05)


@pytest.mark.parametrize("seed", range(10))
def test_bourgain_step_audit(seed):
    f = random_density_set((256, 256), 0.2, seed, blob=2)
    kit = bump_kit(2)
    a = bourgain_step(f, PARABOLA, kit, 3, 4, 5, lemma_bands=False)
    assert a.identity_error <= 1e-6
    assert abs(a.I1 + a.I2 + a.I3 - a.smoothed) <= 1e-6 * abs(a.smoothed)
    diff = l2_norm(subtract(mollify(f, kit, 5), mollify(f, kit, 3)))
    assert abs(a.I2) <= diff * (1 + 1e-9)
    assert a.checks["I1_shift"]["ok"]
    assert a.ok


def test_substitution_kernel_monomial_is_tau():
    for ell in (1, 3, 5):
        tt = substitution_kernel(Polynomial.from_map({1: -1.0}), ell)
        assert tt.sign == -1
        np.testing.assert_allclose(tt.values, tau_ell(tt.omega, ell), atol=1e-10 * tt.values.max())
        assert tt.mass == pytest.approx(1.0, abs=1e-8)


def test_substitution_kernel_mass_general():
    tt = substitution_kernel(Polynomial.from_map({1: 1.0, 2: 0.7}), 2)
    assert tt.mass == pytest.approx(1.0, abs=1e-8)


def test_substitution_critical_point_raises():
    # P(t) = t - 2 t^2 has P'(1/4) = 0, inside the window of ell = 2
    with pytest.raises(SubstitutionError):
        substitution_kernel(Polynomial.from_map({1: 1.0, 2: -2.0}), 2)


def test_partition_of_unity():
    x = np.linspace(0, 6, 1201)
    Z = zeta_partition(6, x)
    np.testing.assert_allclose(Z.sum(axis=0), 1.0, atol=1e-14)
    assert Z.min() >= 0


def test_corner_pair_hypothesis():
    with pytest.raises(HypothesisError):
        corner_form(unit(np.ones((16, 16))), T2, T)


@pytest.mark.slow
def test_corner_step_audit():
    f = random_density_set((512, 512), 0.3, 1, blob=2)
    a = corner_step(f, Polynomial.from_map({1: -1.0}), T2, kit=bump_kit(2), ell_prime=1, ell=3, ell_dprime=5)
    assert abs(a.tau_tilde_mass - 1.0) <= 1e-8
    assert a.identity_error <= 1e-6
    assert a.ok, {k: v for k, v in a.checks.items() if not v["ok"]}
