"""Deterministic low-discrepancy point sets on frequency shells."""

import numpy as np
from scipy.stats import qmc
from scipy.special import ndtri


def shell_points(n, count, r_min=0.5, r_max=4.0):
    """Return `count` quasi-random points of the annulus r_min <= |xi| <= r_max in R^n.

    Unscrambled Halton points (first point skipped) are pushed through an
    equal-volume radial map; directions come from the angle in 2-D and from
    normalised inverse-normal coordinates in higher dimensions.  The result is fully
    deterministic.
    """
    if n == 1:
        u = qmc.Halton(d=1, scramble=False).random(count + 1)[1:, 0]
        # half the points on each side of the origin
        r = r_min + (r_max - r_min) * ((2 * u) % 1.0)
        sign = np.where(u < 0.5, -1.0, 1.0)
        return (sign * r)[:, None]

    sampler = qmc.Halton(d=2 if n == 2 else n + 1, scramble=False)
    u = sampler.random(count + 1)[1:]
    rad = (r_min**n + u[:, 0] * (r_max**n - r_min**n)) ** (1.0 / n)
    if n == 2:
        theta = 2 * np.pi * u[:, 1]
        direction = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    else:
        g = ndtri(np.clip(u[:, 1:], 1e-12, 1 - 1e-12))
        direction = g / np.linalg.norm(g, axis=1, keepdims=True)
    return rad[:, None] * direction
