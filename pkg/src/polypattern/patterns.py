"""Witness search: x, x + gamma(t) in a grid set, for unit cubes, dyadic boxes, slices and corners.

Grid sets are unions of cells.  For such sets the overlap
``|E ∩ (E - v)|`` is exactly the multilinear interpolant (in v / h) of the
integer autocorrelation of the cell indicator, and the corner overlap is
exactly the product of the two one-dimensional linear interpolants, summed
over cells.  The only error in a scanned overlap is therefore floating-point
round-off, which is what the noise threshold guards against.
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import fft as sfft

from .counting import check_corner_pair
from .errors import (
    HypothesisError,
    NoSliceFound,
    NoWitnessFound,
    PreconditionError,
    ResolutionError,
    RoundingError,
)
from .gridfield import GridFunction, integral, shift_values
from .polycurve import analyze_dependence, rescale_curve

NOISE_FACTOR = 4.0
MAX_T_POINTS = 1 << 20
MIN_T_POINTS = 33
PATH_SAMPLES = 4097
MAX_LEVELS = 64


@dataclass
class PatternWitness:
    mode: str
    x: list
    t: float
    overlap_mass: float
    gap_certified: float
    noise: float
    points: list
    residual_cells: list
    level: int
    reductions: list = field(default_factory=list)
    scan: list = field(default_factory=list)

    def to_json(self):
        return asdict(self)

    def csv_row(self):
        return {"mode": self.mode, "t": self.t, "gap_certified": self.gap_certified,
                "overlap_mass": self.overlap_mass, "level": self.level,
                "x": " ".join(f"{v:.10g}" for v in self.x),
                "max_residual_cells": max((abs(r) for rr in self.residual_cells for r in rr), default=0.0)}


@dataclass
class RectangleReduction:
    s: int
    N: float
    N_rounded: float
    offset: list
    extents: list
    density_in_rect: float
    density_rounded_box: float
    tiles: int

    def to_json(self):
        return {"kind": "rectangle", **asdict(self)}


@dataclass
class SliceReduction:
    x0: list
    basis_idx: list
    dependent_idx: list
    L: list
    kappa: float
    jacobian: float
    slice_measure: float
    max_measure: float
    reduced_set: object = field(repr=False)

    def to_json(self):
        out = {k: v for k, v in asdict(self).items() if k != "reduced_set"}
        out["kind"] = "slice"
        out["n0"] = len(self.basis_idx)
        return out


# ---------------------------------------------------------------------------
# helpers


def _indicator(E):
    return bool(np.all((E.values == 0.0) | (E.values == 1.0)))


def _check_set(E, eps):
    if eps is None:
        return
    if eps <= 0:
        raise PreconditionError("epsilon must be positive")
    if eps < E.cell_volume:
        raise PreconditionError(f"epsilon = {eps:g} is below one grid cell ({E.cell_volume:g})")
    mass = integral(E)
    if mass < eps * (1 - 1e-12):
        raise PreconditionError(f"int E = {mass:.6g} < epsilon = {eps:g}")


def _path_cells(path, t_lo, t_hi, h):
    t = np.linspace(t_lo, t_hi, PATH_SAMPLES)
    pts = path(t) / h
    return float(np.sum(np.max(np.abs(np.diff(pts, axis=0)), axis=1)))


def _levels(path, extents, h):
    """Dyadic levels l (t = 2^-l u, u in [1/2, 2]) from the first one that fits the box
    down to the first one whose displacements are all below one cell."""
    u = np.linspace(0.5, 2.0, 257)
    out = []
    for ell in range(-MAX_LEVELS // 2, MAX_LEVELS):
        disp = np.abs(path(2.0**-ell * u))
        fits = np.any(np.all(disp < extents, axis=1))
        if not fits:
            continue
        out.append(ell)
        if np.all(disp / h < 1.0):
            break
    return out


def _t_grid(path, ell, h):
    lo, hi = 2.0 ** (-ell - 1), 2.0 ** (1 - ell)
    count = int(min(MAX_T_POINTS, max(MIN_T_POINTS, math.ceil(2 * _path_cells(path, lo, hi, h)) + 1)))
    return np.linspace(hi, lo, count)


def _scan(path, extents, h, evaluate):
    """Levels coarse to fine; in each level t descending.  First level with a hit wins
    and its largest passing t is returned."""
    ledger = []
    for ell in _levels(path, extents, h):
        ts = _t_grid(path, ell, h)
        vals, noise = evaluate(ts)
        ok = vals > NOISE_FACTOR * noise
        rec = {"ell": ell, "t_max": float(ts[0]), "t_min": float(ts[-1]), "count": int(ts.size),
               "max_overlap": float(np.max(vals)) if vals.size else 0.0,
               "threshold": float(NOISE_FACTOR * np.max(noise)) if np.size(noise) else 0.0}
        ledger.append(rec)
        if np.any(ok):
            i = int(np.argmax(ok))
            gap = float(ts[i + 1]) if i + 1 < ts.size else 2.0 ** (-ell - 2)
            return ell, float(ts[i]), float(vals[i]), float(np.broadcast_to(noise, vals.shape)[i]), gap, ledger
    raise NoWitnessFound("no scanned t clears the noise threshold", ledger=ledger)


def autocorrelation(E):
    """A[v] = sum_j E[j] E[j + v] for all integer v, stored circularly with period 2m."""
    shape = tuple(sfft.next_fast_len(2 * m, real=True) for m in E.dims)
    F = sfft.rfftn(E.values, shape)
    A = sfft.irfftn(np.abs(F) ** 2, shape)
    if _indicator(E):
        A = np.rint(A)
    return A


def _interp_autocorr(A, dims, disp):
    """Multilinear interpolation of the autocorrelation at real offsets disp (k, n), in cells."""
    disp = np.atleast_2d(disp)
    k = np.floor(disp).astype(np.int64)
    theta = disp - k
    shape = np.array(A.shape)
    m = np.array(dims)
    out = np.zeros(disp.shape[0])
    n = disp.shape[1]
    for corner in range(1 << n):
        bits = np.array([(corner >> i) & 1 for i in range(n)])
        idx = k + bits
        w = np.prod(np.where(bits == 1, theta, 1.0 - theta), axis=1)
        valid = np.all(np.abs(idx) < m, axis=1)
        wrapped = np.mod(idx, shape)
        vals = A[tuple(wrapped[:, i] for i in range(n))]
        out += np.where(valid, w * vals, 0.0)
    return out


def _snap(E, point):
    """Cell index containing ``point`` (may lie outside the grid)."""
    return np.floor((np.asarray(point) - E.lower) / E.h).astype(int)


def _centre(E, idx):
    return E.lower + (np.asarray(idx) + 0.5) * E.h


def _value_at(E, idx):
    idx = np.asarray(idx)
    if np.any(idx < 0) or np.any(idx >= np.array(E.dims)):
        return 0.0
    return float(E.values[tuple(idx)])


def _best_neighbour(E, target):
    """Cell of E nearest to ``target`` among the 2^n cells of its interpolation stencil."""
    rel = (np.asarray(target) - E.lower) / E.h - 0.5
    base = np.floor(rel).astype(int)
    theta = rel - base
    best, best_w = None, -1.0
    for corner in range(1 << E.n):
        bits = np.array([(corner >> i) & 1 for i in range(E.n)])
        idx = base + bits
        w = float(np.prod(np.where(bits == 1, theta, 1.0 - theta)))
        if _value_at(E, idx) > 0 and w > best_w:
            best, best_w = idx, w
    return best


def _localize(E, disp_cells):
    """Argmax cell of E(x) E(x + v), with v given in cells."""
    prod = E.values * shift_values(E.values, disp_cells)
    return np.array(np.unravel_index(int(np.argmax(prod)), E.dims))


# ---------------------------------------------------------------------------
# unit cube


def search_unit(E, c, eps=None, mode="unit"):
    """Largest scanned t with |E ∩ (E - gamma(t))| above the noise threshold."""
    if c.n != E.n:
        raise HypothesisError("curve and grid dimensions differ")
    if not c.full_rank:
        raise HypothesisError("rank-deficient curve: use slice_search")
    _check_set(E, eps)
    h = E.h
    extents = np.array([hi - lo for lo, hi in E.box])
    A = autocorrelation(E)
    a0 = float(np.max(A))
    fft_err = 0.0 if _indicator(E) else 8 * np.finfo(float).eps * math.log2(A.size) * a0
    noise = max(a0, 1.0) * 8 * (E.n + 1) * np.finfo(float).eps + fft_err

    def path(t):
        return c(np.asarray(t))

    def evaluate(ts):
        disp = path(ts) / h
        return _interp_autocorr(A, E.dims, disp) * E.cell_volume, noise * E.cell_volume

    ell, t, mass, nz, gap, ledger = _scan(path, extents, h, evaluate)
    v = path(t) / h
    xi = _localize(E, v)
    x = _centre(E, xi)
    yi = _best_neighbour(E, x + path(t))
    if yi is None:
        raise NoWitnessFound("localisation failed to find a partner cell", ledger=ledger)
    y = _centre(E, yi)
    residual = ((y - x - path(t)) / h).tolist()
    return PatternWitness(mode, x.tolist(), t, mass, gap, nz, [x.tolist(), y.tolist()], [residual],
                          ell, [], ledger)


def overlap_at(E, c, t):
    """|E ∩ (E - gamma(t))| by direct multilinear shifting."""
    v = c(np.asarray(t)) / E.h
    return float(np.sum(E.values * shift_values(E.values, v)) * E.cell_volume)


def refinement_check(E, c, witness, factor=2):
    """Overlap at the witness t recomputed on a grid refined ``factor`` times per axis."""
    vals = E.values
    for ax in range(E.n):
        vals = np.repeat(vals, factor, axis=ax)
    if witness.mode == "corner":
        raise ValueError("use corner_refinement_check for corner witnesses")
    return overlap_at(GridFunction(vals, E.box, E.density), c, witness.t)


# ---------------------------------------------------------------------------
# dyadic boxes


def _box_side(E):
    sides = {round(hi - lo, 12) for lo, hi in E.box}
    if len(sides) != 1 or any(lo != 0.0 for lo, _ in E.box):
        raise PreconditionError("scaled search needs a cube [0, N]^n")
    return float(E.box[0][1])


def rectangle_reduce(E, degrees, eps, lattice=None):
    """Round N down to 2^(s d), then take the first 2^(s d_1) x ... x 2^(s d_n) tile of density >= eps."""
    N = _box_side(E)
    d = max(degrees)
    s = 0
    while True:
        nxt = s + (2 * lattice.Gamma if lattice else 1)
        if 2.0 ** (nxt * d) <= N * (1 + 1e-12):
            s = nxt
        else:
            break
    Nr = 2.0 ** (s * d)
    if Nr < N / 2.0**d * (1 - 1e-12):
        raise RoundingError(f"admissible N' = {Nr:g} < N / 2^d = {N / 2.0**d:g}")
    h = E.h
    box_cells = Nr / h
    tile_len = np.array([2.0 ** (s * di) for di in degrees])
    tile_cells = tile_len / h
    for q in (box_cells, tile_cells):
        if np.any(np.abs(q - np.rint(q)) > 1e-9) or np.any(np.rint(q) < 1):
            raise ResolutionError("rectangle sides are not whole numbers of cells")
    box_cells = np.rint(box_cells).astype(int)
    tile_cells = np.rint(tile_cells).astype(int)
    vals = E.values[tuple(slice(0, m) for m in box_cells)]
    dens = float(vals.mean())
    if eps is not None and dens < eps * (1 - 1e-12):
        raise PreconditionError(f"density {dens:.6g} on the rounded box [0, {Nr:g}]^n is below epsilon")
    counts_shape = []
    for m, tc in zip(box_cells, tile_cells):
        counts_shape += [m // tc, tc]
    sums = vals.reshape(counts_shape).sum(axis=tuple(range(1, 2 * E.n, 2)))
    tile_density = sums / float(np.prod(tile_cells))
    if float(tile_density.max()) < dens * (1 - 1e-12):
        raise AssertionError("tile averaging violated")
    thresh = (eps if eps is not None else dens) * (1 - 1e-12)
    flat = np.flatnonzero(tile_density.ravel() >= thresh)
    j = np.array(np.unravel_index(int(flat[0]), tile_density.shape))
    lo = j * tile_cells
    sub = vals[tuple(slice(a, a + tc) for a, tc in zip(lo, tile_cells))]
    red = RectangleReduction(s, N, Nr, (lo * h).tolist(), tile_len.tolist(),
                             float(tile_density[tuple(j)]), dens, int(tile_density.size))
    unit = GridFunction(sub, tuple((0.0, 1.0) for _ in degrees), E.density)
    return red, unit


def _lift_scaled(w, red, c, E):
    """Map a unit-cube witness back to [0, N]^n."""
    off = np.array(red.offset)
    R = np.array(red.extents)
    scale = 2.0**red.s
    pts = [(off + R * np.array(p)).tolist() for p in w.points]
    t = scale * w.t
    x = np.array(pts[0])
    if c is not None:
        residual = [((np.array(pts[1]) - x - c(np.asarray(t))) / E.h).tolist()]
    else:
        residual = w.residual_cells
    return PatternWitness("scaled", x.tolist(), t, w.overlap_mass * float(np.prod(R)), scale * w.gap_certified,
                          w.noise * float(np.prod(R)), pts, residual, w.level, [red.to_json()], w.scan)


def search_scaled(E, c, eps, lattice=None):
    """Witness in [0, N]^n with t reported in the original scale (t = 2^s t_unit)."""
    if not c.distinct_degrees:
        raise HypothesisError("scaled search needs pairwise distinct degrees")
    red, unit = rectangle_reduce(E, c.degrees, eps, lattice)
    w = search_unit(unit, rescale_curve(c, red.s), eps=None, mode="unit")
    return _lift_scaled(w, red, c, E)


# ---------------------------------------------------------------------------
# slices for rank-deficient curves


def slice_kappa(L):
    n0 = L.shape[0]
    norm = float(np.linalg.norm(L, 2)) if L.size else 0.0
    return (1.0 + norm**2) ** (-n0 / 2) / 2.0


def slice_reduce(E, c, eps, chunk=64):
    """Best slice x0 + V (V = image of y -> (y, L^T y)) and the reduced set on [0,1]^n0."""
    if c.full_rank:
        raise HypothesisError("full-rank curve: use search_unit")
    if any(lo != 0.0 or hi != 1.0 for lo, hi in E.box):
        raise PreconditionError("slice search runs on the unit cube")
    info = analyze_dependence(c)
    B, D, L = list(info.basis_idx), list(info.dependent_idx), np.asarray(info.L)
    n0 = len(B)
    gram = np.eye(n0) + L @ L.T
    J = float(math.sqrt(np.linalg.det(gram)))
    kappa = slice_kappa(L)
    h = E.h
    ys = np.meshgrid(*[E.axis(i) for i in B], indexing="ij")
    Y = np.stack([y.ravel() for y in ys], axis=1)  # (P, n0)
    LY = Y @ L  # (P, nD): dependent coordinates relative to the slice base
    zlo = -np.sum(np.maximum(L, 0.0), axis=0)
    zhi = 1.0 - np.sum(np.minimum(L, 0.0), axis=0)
    zaxes = [np.arange(math.floor(lo / h[j]), math.ceil(hi / h[j]) + 1) * h[j]
             for j, lo, hi in zip(D, zlo, zhi)]
    Z = np.stack([z.ravel() for z in np.meshgrid(*zaxes, indexing="ij")], axis=1)
    iB = np.floor(Y / h[B]).astype(int)
    best, best_mass, best_vals = None, -1.0, None
    dims = np.array(E.dims)
    for start in range(0, Z.shape[0], chunk):
        zc = Z[start:start + chunk]
        coords = zc[:, None, :] + LY[None, :, :]  # (z, P, nD)
        iD = np.floor(coords / h[D]).astype(int)
        inside = np.all((iD >= 0) & (iD < dims[D]), axis=-1)
        idx = [None] * E.n
        for a, ax in enumerate(B):
            idx[ax] = np.broadcast_to(iB[None, :, a], inside.shape)
        for a, ax in enumerate(D):
            idx[ax] = np.clip(iD[..., a], 0, dims[ax] - 1)
        vals = np.where(inside, E.values[tuple(idx)], 0.0)
        mass = vals.sum(axis=1)
        k = int(np.argmax(mass))
        if mass[k] > best_mass:
            best, best_mass, best_vals = zc[k], float(mass[k]), vals[k]
    cell = float(np.prod(h[B]))
    measure = J * best_mass * cell
    x0 = np.zeros(E.n)
    x0[D] = best
    if measure < kappa * eps * (1 - 1e-12):
        raise NoSliceFound(f"largest slice measure {measure:.6g} < kappa * eps = {kappa * eps:.6g}",
                           max_measure=measure)
    reduced = GridFunction(best_vals.reshape([E.dims[i] for i in B]), tuple((0.0, 1.0) for _ in B), E.density)
    red = SliceReduction(x0.tolist(), B, D, L.tolist(), kappa, J, measure, measure, reduced)
    return red, info


def lift_map(red):
    """L1: y in R^n0 -> x0 + (y on basis axes, L^T y on dependent axes)."""
    L = np.asarray(red.L)
    B, D = red.basis_idx, red.dependent_idx
    x0 = np.asarray(red.x0)

    def L1(y):
        y = np.asarray(y, dtype=float)
        x = x0.copy()
        x[B] += y
        x[D] += y @ L
        return x

    def L2(x):
        return (np.asarray(x, dtype=float) - x0)[B]

    return L1, L2


def slice_search(E, c, eps, max_residual_cells=2.0):
    """Reduce to a slice, search the reduced curve there, lift the witness back."""
    _check_set(E, eps)
    red, info = slice_reduce(E, c, eps)
    rc = info.reduced_curve(c)
    reduced = red.reduced_set
    w = search_unit(reduced, rc, eps=None, mode="unit")
    L1, _ = lift_map(red)
    x = L1(np.array(w.points[0]))
    g = c(np.asarray(w.t))
    xi = _snap(E, x)
    if _value_at(E, xi) <= 0:
        raise NoWitnessFound("lifted base point is not in E", ledger=w.scan)
    xc = _centre(E, xi)
    yi = _best_neighbour(E, xc + g)
    if yi is None:
        raise NoWitnessFound("lifted partner cell is not in E", ledger=w.scan)
    yc = _centre(E, yi)
    residual = (yc - xc - g) / E.h
    if np.max(np.abs(residual)) > max_residual_cells:
        raise NoWitnessFound(f"lift residual {np.max(np.abs(residual)):.3g} cells", ledger=w.scan)
    return PatternWitness("slice", xc.tolist(), w.t, w.overlap_mass, w.gap_certified, w.noise,
                          [xc.tolist(), yc.tolist()], [residual.tolist()], w.level, [red.to_json()], w.scan)


def search(E, c, eps, lattice=None):
    """Dispatch: slices for rank-deficient curves, dyadic boxes when the box is not the unit cube."""
    if not c.full_rank:
        return slice_search(E, c, eps)
    if any(lo != 0.0 or hi != 1.0 for lo, hi in E.box):
        return search_scaled(E, c, eps, lattice)
    return search_unit(E, c, eps)


# ---------------------------------------------------------------------------
# corners


def _axis_autocorr(S, axis):
    """a[v] = sum_{i,j} S S(shifted by v along axis), for all integer v (period 2m)."""
    m = S.shape[axis]
    size = sfft.next_fast_len(2 * m, real=True)
    F = sfft.rfft(S, size, axis=axis)
    a = sfft.irfft(np.abs(F) ** 2, size, axis=axis).sum(axis=1 - axis)
    return a, m


def _interp_1d(a, m, v):
    k = np.floor(v).astype(np.int64)
    th = v - k
    out = np.zeros_like(v, dtype=float)
    for b, w in ((0, 1.0 - th), (1, th)):
        idx = k + b
        ok = np.abs(idx) < m
        out += np.where(ok, w * a[np.mod(idx, a.size)], 0.0)
    return out


def corner_overlap(S, d1, d2):
    """sum S(i,j) S(i + d1, j) S(i, j + d2) (real d in cells, linear interpolation), times the cell area."""
    a = shift_values(S.values, (d1, 0.0))
    b = shift_values(S.values, (0.0, d2))
    return float(np.sum(S.values * a * b) * S.cell_volume)


def corner_search_unit(S, P1, P2, eps=None):
    check_corner_pair(P1, P2)
    if S.n != 2:
        raise HypothesisError("corner search lives in the plane")
    _check_set(S, eps)
    h = S.h
    extents = np.array([hi - lo for lo, hi in S.box])
    vals = S.values
    a1, m1 = _axis_autocorr(vals, 0)
    a2, m2 = _axis_autocorr(vals, 1)
    mass = float(vals.sum())
    noise = max(mass, 1.0) * 16 * math.log2(max(vals.size, 2)) * np.finfo(float).eps

    def path(t):
        t = np.asarray(t)
        return np.stack([P1(t), P2(t)], axis=-1)

    def evaluate(ts):
        d = path(ts) / h
        bound = np.minimum(_interp_1d(a1, m1, d[:, 0]), _interp_1d(a2, m2, d[:, 1]))
        out = np.zeros(ts.size)
        for i in np.flatnonzero(bound > NOISE_FACTOR * noise):
            out[i] = corner_overlap(S, d[i, 0], d[i, 1]) / S.cell_volume
            if out[i] > NOISE_FACTOR * noise:
                break  # descending t: the first hit is the largest
        return out * S.cell_volume, noise * S.cell_volume

    ell, t, m, nz, gap, ledger = _scan(path, extents, h, evaluate)
    d1, d2 = path(t) / h
    prod = vals * shift_values(vals, (d1, 0.0)) * shift_values(vals, (0.0, d2))
    xi = np.array(np.unravel_index(int(np.argmax(prod)), S.dims))
    x = _centre(S, xi)
    targets = [x + [P1(t), 0.0], x + [0.0, P2(t)]]
    pts, res = [x.tolist()], []
    for tg in targets:
        yi = _best_neighbour(S, tg)
        if yi is None:
            raise NoWitnessFound("corner localisation failed", ledger=ledger)
        y = _centre(S, yi)
        pts.append(y.tolist())
        res.append(((y - tg) / h).tolist())
    return PatternWitness("corner", x.tolist(), t, m, gap, nz, pts, res, ell, [], ledger)


def corner_search(S, P1, P2, eps, lattice=None):
    """Triple (x,y), (x+P1(t),y), (x,y+P2(t)) in S, via the dyadic rectangle reduction on [0,N]^2."""
    check_corner_pair(P1, P2)
    if all(lo == 0.0 and hi == 1.0 for lo, hi in S.box):
        return corner_search_unit(S, P1, P2, eps)
    red, unit = rectangle_reduce(S, (P1.deg, P2.deg), eps, lattice)
    w = corner_search_unit(unit, P1.rescaled(red.s), P2.rescaled(red.s), eps=None)
    lifted = _lift_scaled(w, red, None, S)
    t = lifted.t
    x = np.array(lifted.points[0])
    targets = [x + [P1(t), 0.0], x + [0.0, P2(t)]]
    lifted.residual_cells = [((np.array(p) - tg) / S.h).tolist() for p, tg in zip(lifted.points[1:], targets)]
    lifted.mode = "corner"
    return lifted


def corner_refinement_check(S, P1, P2, witness, factor=2):
    vals = S.values
    for ax in range(2):
        vals = np.repeat(vals, factor, axis=ax)
    R = GridFunction(vals, S.box, S.density)
    t = witness.t
    return corner_overlap(R, P1(t) / R.h[0], P2(t) / R.h[1])

