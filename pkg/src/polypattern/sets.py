"""Seeded test sets: random density, unions of balls, Cantor-like products and planted patterns."""

import numpy as np

from .errors import PreconditionError
from .gridfield import GridFunction


def _unit_box(n, side=1.0):
    return tuple((0.0, float(side)) for _ in range(n))


def random_density_set(dims, density, seed, blob=1, side=1.0):
    """i.i.d. cells (or blob x ... x blob blocks) present with probability ``density``."""
    rng = np.random.default_rng(seed)
    coarse = tuple(max(1, m // blob) for m in dims)
    vals = (rng.random(coarse) < density).astype(float)
    for ax in range(len(dims)):
        vals = np.repeat(vals, blob, axis=ax)
    return GridFunction(vals, _unit_box(len(dims), side), density=True)


def union_of_balls(dims, density, seed, radius=0.05, side=1.0, max_balls=100000):
    """Random balls added until the covered fraction reaches ``density``."""
    rng = np.random.default_rng(seed)
    f = GridFunction.zeros(_unit_box(len(dims), side), dims)
    mesh = np.stack(f.mesh(), axis=-1)
    vals = np.zeros(dims)
    r = radius * side
    for _ in range(max_balls):
        if vals.mean() >= density:
            break
        centre = rng.random(len(dims)) * side
        vals[np.sum((mesh - centre) ** 2, axis=-1) <= r * r] = 1.0
    return GridFunction(vals, f.box, density=True)


def cantor_like(dims, levels=3, keep=(0, 2), base=3, side=1.0):
    """Product of 1-D Cantor-type sets: at each level keep the listed sub-intervals."""
    axes = []
    for m in dims:
        x = (np.arange(m) + 0.5) / m
        ok = np.ones(m, dtype=bool)
        y = x.copy()
        for _ in range(levels):
            digit = np.floor(y * base).astype(int)
            ok &= np.isin(digit, keep)
            y = y * base - digit
        axes.append(ok)
    vals = np.ones(tuple(dims), dtype=bool)
    for ax, ok in enumerate(axes):
        shape = [1] * len(dims)
        shape[ax] = -1
        vals = vals & ok.reshape(shape)
    return GridFunction(vals.astype(float), _unit_box(len(dims), side), density=True)


def smooth_set(dims, density, side=1.0):
    """Centred ball of the given volume fraction (a set that is already smooth at coarse scales)."""
    from scipy.special import gamma

    n = len(dims)
    r = (density * side**n * gamma(n / 2 + 1) / np.pi ** (n / 2)) ** (1.0 / n)
    f = GridFunction.zeros(_unit_box(n, side), dims)
    mesh = np.stack(f.mesh(), axis=-1)
    vals = (np.sum((mesh - side / 2) ** 2, axis=-1) <= r * r).astype(float)
    return GridFunction(vals, f.box, density=True)


def _cell_of(f, point):
    idx = np.floor((np.asarray(point, dtype=float) - f.lower) / f.h).astype(int)
    if np.any(idx < 0) or np.any(idx >= np.array(f.dims)):
        raise PreconditionError(f"planted point {point} lies outside the grid")
    return tuple(int(i) for i in idx)


def planted_points(dims, points, side=1.0):
    """Indicator of the grid cells containing the given points."""
    f = GridFunction.zeros(_unit_box(len(dims), side), dims)
    vals = np.zeros(dims)
    cells = [_cell_of(f, p) for p in points]
    for cell in cells:
        vals[cell] = 1.0
    return GridFunction(vals, f.box, density=True), cells


def planted_pair(c, t0, dims, x0=None, seed=0, side=1.0):
    """Two cells containing x0 and x0 + gamma(t0); x0 is drawn so both fit."""
    disp = c(np.asarray(t0))
    if x0 is None:
        rng = np.random.default_rng(seed)
        lo = np.maximum(0.0, -disp) + 0.05 * side
        hi = np.minimum(side, side - disp) - 0.05 * side
        if np.any(hi <= lo):
            raise PreconditionError(f"gamma({t0}) does not fit in the box")
        x0 = lo + rng.random(len(dims)) * (hi - lo)
    f, cells = planted_points(dims, [x0, np.asarray(x0) + disp], side)
    return f, {"t": float(t0), "x": [float(v) for v in x0], "cells": cells}


def planted_corner(P1, P2, t0, dims, x0=None, seed=0, side=1.0):
    """Three cells containing (x, y), (x + P1(t0), y), (x, y + P2(t0))."""
    disp = np.array([float(P1(t0)), float(P2(t0))])
    if x0 is None:
        rng = np.random.default_rng(seed)
        lo = np.maximum(0.0, -disp) + 0.05 * side
        hi = np.minimum(side, side - disp) - 0.05 * side
        if np.any(hi <= lo):
            raise PreconditionError(f"corner at t = {t0} does not fit in the box")
        x0 = lo + rng.random(2) * (hi - lo)
    x0 = np.asarray(x0, dtype=float)
    pts = [x0, x0 + [disp[0], 0.0], x0 + [0.0, disp[1]]]
    f, cells = planted_points(dims, pts, side)
    return f, {"t": float(t0), "x": [float(v) for v in x0], "cells": cells}


def planted_in_tile(disps, tile, dims, side, seed=0):
    """Points x0, x0 + v_1, ... placed inside one random tile of the exact
    partition of [0, side]^n into boxes of the given extents."""
    rng = np.random.default_rng(seed)
    tile = np.asarray(tile, dtype=float)
    disps = [np.asarray(v, dtype=float) for v in disps]
    lo_rel = np.maximum.reduce([np.zeros_like(tile)] + [-v for v in disps]) + 0.05 * tile
    hi_rel = np.minimum.reduce([tile] + [tile - v for v in disps]) - 0.05 * tile
    if np.any(hi_rel <= lo_rel):
        raise PreconditionError("pattern does not fit inside one tile")
    counts = np.rint(side / tile).astype(int)
    j = np.array([rng.integers(0, k) for k in counts])
    x0 = j * tile + lo_rel + rng.random(tile.size) * (hi_rel - lo_rel)
    pts = [x0] + [x0 + v for v in disps]
    f, cells = planted_points(dims, pts, side)
    return f, {"x": x0.tolist(), "tile": j.tolist(), "cells": cells}


def strip_set(dims, direction, width, offset=0.0, side=1.0):
    """Slab {|x_n - sum_i a_i x_i - offset| < width} with a = ``direction`` (length n - 1).

    For n = 2 and a = (2,) this is a strip along the line x2 = 2 x1.
    """
    a = np.asarray(direction, dtype=float)
    f = GridFunction.zeros(_unit_box(len(dims), side), dims)
    mesh = f.mesh()
    lin = sum(a[i] * mesh[i] for i in range(len(dims) - 1))
    vals = (np.abs(mesh[-1] - lin - offset) < width).astype(float)
    return GridFunction(vals, f.box, density=True)


GENERATORS = {
    "random": random_density_set,
    "balls": union_of_balls,
    "cantor": cantor_like,
    "smooth": smooth_set,
}
