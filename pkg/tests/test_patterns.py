import numpy as np
import pytest

from polypattern.errors import HypothesisError, NoSliceFound, PreconditionError
from polypattern.gridfield import GridFunction
from polypattern.patterns import (
    autocorrelation,
    corner_overlap,
    corner_refinement_check,
    corner_search,
    overlap_at,
    rectangle_reduce,
    refinement_check,
    search,
    search_scaled,
    search_unit,
    slice_kappa,
    slice_reduce,
    slice_search,
)
from polypattern.polycurve import Polynomial, rescale_curve, make_curve
from polypattern.sets import planted_corner, planted_in_tile, planted_pair, random_density_set, strip_set

PARABOLA = make_curve([{1: 1.0}, {2: 1.0}])
T, T2 = Polynomial.from_map({1: 1.0}), Polynomial.from_map({2: 1.0})


def brute_overlap(vals, disp):
    """Cell-union overlap |E ∩ (E - v)| for an integer displacement v (in cells)."""
    a = vals
    sl_a, sl_b = [], []
    for d, m in zip(disp, vals.shape):
        if d >= 0:
            sl_a.append(slice(0, m - d))
            sl_b.append(slice(d, m))
        else:
            sl_a.append(slice(-d, m))
            sl_b.append(slice(0, m + d))
    return float(np.sum(a[tuple(sl_a)] * a[tuple(sl_b)]))


def test_autocorrelation_matches_brute_force():
    E = random_density_set((24, 20), 0.4, 2)
    A = autocorrelation(E)
    for v in [(0, 0), (3, -2), (-5, 7), (10, 0)]:
        assert A[v] == brute_overlap(E.values, v)


@pytest.mark.parametrize("t0", [0.25, 0.35, 0.45])
def test_planted_unit_pair(t0):
    E, info = planted_pair(PARABOLA, t0, (512, 512), seed=1)
    w = search_unit(E, PARABOLA, eps=None)
    disp = np.array(w.points[1]) - np.array(w.points[0])
    assert np.max(np.abs(disp - PARABOLA(np.asarray(w.t))) / E.h) <= 2.0
    assert abs(w.t - t0) <= 2 * np.max(E.h) / 0.5  # |gamma'| >= 1 on [0, 1]
    assert w.overlap_mass > w.noise
    assert E.values[tuple(np.floor(np.array(w.points[0]) / E.h).astype(int))] == 1


def test_full_cube_witness():
    E = GridFunction(np.ones((128, 128)), ((0.0, 1.0), (0.0, 1.0)), density=True)
    w = search_unit(E, PARABOLA, eps=0.5)
    assert w.t > 0.95
    assert overlap_at(E, PARABOLA, w.t) == pytest.approx(w.overlap_mass, rel=1e-9)


def test_eps_below_cell_volume_rejected():
    E = random_density_set((32, 32), 0.5, 0)
    with pytest.raises(PreconditionError):
        search_unit(E, PARABOLA, eps=1e-6)
    with pytest.raises(PreconditionError):
        search_unit(E, PARABOLA, eps=0.9)


def test_rank_deficient_rejected_by_unit_search():
    E = random_density_set((32, 32), 0.5, 0)
    with pytest.raises(HypothesisError):
        search_unit(E, make_curve([{1: 1.0}, {1: 2.0}]), eps=0.1)


def test_rectangle_pigeonhole():
    E = random_density_set((256, 256), 0.3, 4, side=16.0)
    red, unit = rectangle_reduce(E, (1, 2), 0.25)
    assert (red.s, red.N_rounded, red.extents) == (2, 16.0, [4.0, 16.0])
    assert red.density_in_rect >= 0.25
    assert unit.values.shape == (64, 256)
    assert unit.values.mean() == pytest.approx(red.density_in_rect)


def test_rectangle_reduction_uses_whole_box_for_full_rectangle():
    E = GridFunction(np.ones((256, 256)), ((0.0, 16.0), (0.0, 16.0)), density=True)
    w = search_scaled(E, PARABOLA, 0.5)
    red = w.reductions[0]
    assert red["tiles"] == 4
    assert w.t > 0.95 * 2.0**red["s"]
    # the witness fits inside the first tile [0,4] x [0,16]
    for p in w.points:
        assert 0 <= p[0] <= 4 and 0 <= p[1] <= 16


@pytest.mark.parametrize("seed", range(3))
def test_scaled_and_unit_commute(seed):
    t0 = 1.0 + 0.5 * seed
    disp = PARABOLA(np.asarray(t0))
    E, info = planted_in_tile([disp], (4.0, 16.0), (256, 256), 16.0, seed=seed)
    w = search_scaled(E, PARABOLA, 1e-5)
    assert abs(w.t - t0) <= 2 * E.h[0] / 1.0 + 1e-12
    s = w.reductions[0]["s"]
    # rescaled curve on the unit tile sees t_unit = t / 2^s
    red, unit = rectangle_reduce(E, (1, 2), 1e-5)
    wu = search_unit(unit, rescale_curve(PARABOLA, s), eps=None)
    assert w.t == pytest.approx(2.0**s * wu.t, rel=1e-12)
    assert np.max(np.abs(w.residual_cells[0])) <= 2.0


def test_dispatch_prefers_slices_for_dependent_curves():
    E = strip_set((256, 256), [2.0], 0.3, offset=-0.5)
    w = search(E, make_curve([{1: 1.0}, {1: 2.0}]), 0.1)
    assert w.mode == "slice"


def test_slice_strip_witness():
    c = make_curve([{1: 1.0}, {1: 2.0}])
    E = strip_set((256, 256), [2.0], 0.3, offset=-0.5)
    w = slice_search(E, c, 0.1)
    assert np.max(np.abs(w.residual_cells[0])) <= 2.0
    x, y = np.array(w.points[0]), np.array(w.points[1])
    assert (y - x)[1] == pytest.approx(2 * (y - x)[0], abs=3 * E.h[0])
    red = w.reductions[0]
    assert red["slice_measure"] >= red["kappa"] * 0.1


def test_slice_measure_on_product_set():
    # E = [0,1] x [0, 1/2]; the best slice along x2 = 2 x1 + z has length sqrt(5)/4 (z = 0)
    vals = np.zeros((256, 256))
    vals[:, :128] = 1
    E = GridFunction(vals, ((0.0, 1.0), (0.0, 1.0)), density=True)
    red, info = slice_reduce(E, make_curve([{1: 1.0}, {1: 2.0}]), 0.1)
    assert red.jacobian == pytest.approx(np.sqrt(5))
    assert red.slice_measure == pytest.approx(np.sqrt(5) / 4, rel=0.02)
    assert red.kappa == pytest.approx(slice_kappa(np.array([[2.0]])))


@pytest.mark.parametrize("seed", range(5))
def test_slice_averaging_guarantee(seed):
    # averaging over translates: some slice always carries at least kappa * int(E)
    E = random_density_set((128, 128), 0.1, seed)
    eps = float(E.values.mean())
    red, _ = slice_reduce(E, make_curve([{1: 1.0}, {1: 2.0}]), eps)
    assert red.slice_measure >= red.kappa * eps


def test_no_slice_found_reports_max_measure():
    E = random_density_set((64, 64), 0.1, 0)
    with pytest.raises(NoSliceFound) as err:
        slice_reduce(E, make_curve([{1: 1.0}, {1: 2.0}]), 10.0)
    assert 0 < err.value.max_measure < slice_kappa(np.array([[2.0]])) * 10.0


def test_slice_full_rank_raises():
    with pytest.raises(HypothesisError):
        slice_reduce(random_density_set((32, 32), 0.5, 0), PARABOLA, 0.1)


def test_full_square_corner():
    S = GridFunction(np.ones((128, 128)), ((0.0, 1.0), (0.0, 1.0)), density=True)
    w = corner_search(S, T, T2, 0.5)
    assert w.t > 0.95
    assert corner_overlap(S, T(w.t) / S.h[0], T2(w.t) / S.h[1]) == pytest.approx(w.overlap_mass, rel=1e-9)


@pytest.mark.parametrize("t0", [0.2, 0.4])
def test_planted_corner(t0):
    S, info = planted_corner(T, T2, t0, (512, 512), seed=3)
    w = corner_search(S, T, T2, None)
    assert abs(w.t - t0) <= 2 * S.h[0]
    for r in w.residual_cells:
        assert np.max(np.abs(r)) <= 2.0


def test_corner_low_density_raises():
    S = random_density_set((64, 64), 0.05, 0)
    with pytest.raises(PreconditionError):
        corner_search(S, T, T2, 0.2)


def test_refinement_keeps_overlap():
    E, _ = planted_pair(PARABOLA, 0.3, (256, 256), seed=0)
    w = search_unit(E, PARABOLA)
    assert refinement_check(E, PARABOLA, w) == pytest.approx(w.overlap_mass, rel=0.5)
    S, _ = planted_corner(T, T2, 0.3, (256, 256), seed=0)
    wc = corner_search(S, T, T2, None)
    assert corner_refinement_check(S, T, T2, wc) > 0


def test_witness_serialisation():
    E, _ = planted_pair(PARABOLA, 0.3, (128, 128), seed=0)
    w = search_unit(E, PARABOLA)
    d = w.to_json()
    assert d["mode"] == "unit" and d["t"] == w.t
    assert len(w.csv_row()) > 3
