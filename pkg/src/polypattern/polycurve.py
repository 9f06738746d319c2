"""Polynomial curves t -> (P_1(t), ..., P_n(t)) with P_i(0) = 0.

Coefficients are indexed by exponent; column ``j`` of the coefficient matrix
holds the coefficient of ``t**(j + 1)``.
"""

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CalibrationFailed,
    ConstantTermError,
    DegenerateCurveError,
    HypothesisError,
    ZeroPolynomialError,
)
from .sampling import shell_points

RANK_TOL = 1e-10


@dataclass(frozen=True)
class Polynomial:
    coeffs: dict
    sigma: int
    deg: int

    @classmethod
    def from_map(cls, spec):
        coeffs = {}
        for key, value in dict(spec).items():
            beta = int(key)
            if beta == 0:
                raise ConstantTermError("polynomial has a constant term")
            if beta < 0:
                raise ValueError(f"negative exponent {beta}")
            if float(value) != 0.0:
                coeffs[beta] = float(value)
        if not coeffs:
            raise ZeroPolynomialError("polynomial has no nonzero coefficient")
        return cls(coeffs=dict(sorted(coeffs.items())), sigma=min(coeffs), deg=max(coeffs))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        acc = np.zeros_like(t)
        for beta in range(self.deg, 0, -1):
            acc = (acc + self.coeffs.get(beta, 0.0)) * t
        return acc

    def derivative_coeffs(self):
        return {b - 1: b * a for b, a in self.coeffs.items()}

    def rescaled(self, s):
        """Coefficients of 2**(-s*deg) * P(2**s * t)."""
        return Polynomial(
            coeffs={b: a * 2.0 ** (s * (b - self.deg)) for b, a in self.coeffs.items()},
            sigma=self.sigma,
            deg=self.deg,
        )

    def to_json(self):
        return {"coeffs": {str(b): a for b, a in self.coeffs.items()}}


def _numeric_rank(matrix, tol=RANK_TOL):
    """Rank by full-pivot elimination after normalising each row by its max entry."""
    a = np.array(matrix, dtype=float)
    if a.size == 0:
        return 0
    scale = np.max(np.abs(a), axis=1, keepdims=True)
    scale[scale == 0] = 1.0
    a = a / scale
    rank = 0
    rows, cols = a.shape
    for _ in range(min(rows, cols)):
        sub = np.abs(a[rank:, rank:])
        if sub.size == 0:
            break
        i, j = np.unravel_index(np.argmax(sub), sub.shape)
        if sub[i, j] <= tol:
            break
        i += rank
        j += rank
        a[[rank, i]] = a[[i, rank]]
        a[:, [rank, j]] = a[:, [j, rank]]
        a[rank + 1:] -= np.outer(a[rank + 1:, rank] / a[rank, rank], a[rank])
        rank += 1
    return rank


@dataclass(frozen=True)
class Curve:
    polys: tuple
    n: int = field(init=False)
    d: int = field(init=False)
    distinct_degrees: bool = field(init=False)
    coeff_matrix: np.ndarray = field(init=False, repr=False, compare=False)
    rank: int = field(init=False)

    def __post_init__(self):
        polys = tuple(self.polys)
        object.__setattr__(self, "polys", polys)
        n = len(polys)
        d = max(p.deg for p in polys)
        A = np.zeros((n, d))
        for i, p in enumerate(polys):
            for b, a in p.coeffs.items():
                A[i, b - 1] = a
        A.setflags(write=False)
        degs = [p.deg for p in polys]
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "distinct_degrees", len(set(degs)) == n)
        object.__setattr__(self, "coeff_matrix", A)
        object.__setattr__(self, "rank", _numeric_rank(A))

    @property
    def degrees(self):
        return tuple(p.deg for p in self.polys)

    @property
    def full_rank(self):
        return self.rank == self.n

    def __call__(self, t):
        return eval_curve(self, t)

    def to_json(self):
        return {"polys": [p.to_json() for p in self.polys]}

    def label(self):
        parts = []
        for p in self.polys:
            terms = [f"{a:g}*t^{b}" for b, a in p.coeffs.items()]
            parts.append("+".join(terms))
        return "(" + ", ".join(parts) + ")"


def make_curve(poly_specs):
    """Build a Curve from a list of {exponent: coefficient} maps."""
    if len(poly_specs) == 0:
        raise ValueError("a curve needs at least one component")
    return Curve(tuple(Polynomial.from_map(spec) for spec in poly_specs))


def curve_from_json(obj):
    if isinstance(obj, str):
        obj = json.loads(obj)
    # each component is {"coeffs": {exp: coeff}} or a bare {exp: coeff} map
    return make_curve([p["coeffs"] if "coeffs" in p else p for p in obj["polys"]])


def load_curve(path):
    with open(path) as fh:
        return curve_from_json(json.load(fh))


def eval_curve(c, t):
    """Evaluate the curve; returns shape ``np.shape(t) + (n,)``."""
    return np.stack([p(t) for p in c.polys], axis=-1)


def rescale_curve(c, s):
    """Component-wise 2**(-s*d_i) * P_i(2**s * t)."""
    if s == 0:
        return c
    return Curve(tuple(p.rescaled(s) for p in c.polys))


@dataclass(frozen=True)
class DependenceInfo:
    n0: int
    basis_idx: tuple
    dependent_idx: tuple
    L: np.ndarray
    minor_idx: tuple
    minor_inverse_norm: float

    @property
    def full_rank(self):
        return len(self.dependent_idx) == 0

    def reduced_curve(self, c):
        return Curve(tuple(c.polys[i] for i in self.basis_idx))


def _best_minor(A):
    """Column subset (as exponents) of size rank(A) maximising the smallest singular value."""
    rows, cols = A.shape
    best, best_sv = None, -1.0
    for cols_idx in itertools.combinations(range(cols), rows):
        sv = np.linalg.svd(A[:, cols_idx], compute_uv=False)[-1]
        if sv > best_sv * (1 + 1e-12):
            best, best_sv = cols_idx, sv
    return tuple(j + 1 for j in best), best_sv


def analyze_dependence(c):
    """Basis selection, dependence matrix L and the best invertible minor."""
    A = np.asarray(c.coeff_matrix)
    if c.rank == 0:
        raise DegenerateCurveError("coefficient matrix has rank 0")
    basis = []
    for i in range(c.n):
        if _numeric_rank(A[basis + [i]]) == len(basis) + 1:
            basis.append(i)
        if len(basis) == c.rank:
            break
    dependent = [i for i in range(c.n) if i not in basis]
    Ab = A[basis]
    if dependent:
        Ad = A[dependent]
        L, *_ = np.linalg.lstsq(Ab.T, Ad.T, rcond=None)
        recon = L.T @ Ab
        err = np.max(np.abs(recon - Ad)) / max(np.max(np.abs(Ad)), 1e-300)
        if err > 1e-12:
            raise DegenerateCurveError(f"dependence reconstruction residual {err:.3e}")
    else:
        L = np.zeros((len(basis), 0))
    minor_idx, sv = _best_minor(Ab)
    L.setflags(write=False)
    return DependenceInfo(
        n0=len(basis),
        basis_idx=tuple(basis),
        dependent_idx=tuple(dependent),
        L=L,
        minor_idx=minor_idx,
        minor_inverse_norm=float(1.0 / sv),
    )


@dataclass(frozen=True)
class ScaleLattice:
    """s in Gamma*{0, 2, 4, ...}, ell in Gamma*{1, 3, 5, ...}."""

    Gamma: int

    def is_s(self, s):
        return s >= 0 and s % (2 * self.Gamma) == 0

    def is_ell(self, ell):
        return ell >= self.Gamma and ell % self.Gamma == 0 and (ell // self.Gamma) % 2 == 1

    def admissible(self, s, ell):
        return self.is_s(s) and self.is_ell(ell)

    def s_values(self, s_max):
        return list(range(0, s_max + 1, 2 * self.Gamma))

    def ell_values(self, ell_max):
        return list(range(self.Gamma, ell_max + 1, 2 * self.Gamma))

    def round_ell(self, x):
        """Nearest odd multiple of Gamma (ties upward), never below Gamma."""
        m = max(1, int(round(x / self.Gamma)))
        if m % 2 == 0:
            m = m + 1 if (x / self.Gamma) >= m else m - 1
        return max(self.Gamma, m * self.Gamma)

    def next_ell(self, ell):
        return ell + 2 * self.Gamma if self.is_ell(ell) else self.round_ell(ell + self.Gamma)


def phase_coefficients(c, s, ell, xi):
    """Coefficients C[..., beta] of u**beta in 2**(d*ell) * gamma_s(2**-ell * u) . xi.

    Column 0 (constant term) is always zero.
    """
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    A = np.asarray(c.coeff_matrix)
    degs = np.array(c.degrees)
    betas = np.arange(1, c.d + 1)
    scaled = A * 2.0 ** (s * (betas[None, :] - degs[:, None]))
    weights = 2.0 ** ((c.d - betas) * ell)
    out = np.zeros((xi.shape[0], c.d + 1))
    out[:, 1:] = (xi @ scaled) * weights[None, :]
    return out


def _derivative_values(coeffs, order, u):
    """d^order/du^order of sum_beta coeffs[:, beta] u**beta on the grid u; one row per xi."""
    deg = coeffs.shape[1] - 1
    powers = np.arange(order, deg + 1)
    factor = np.array([math.factorial(b) / math.factorial(b - order) for b in powers])
    dcoef = coeffs[:, order:] * factor[None, :]
    vander = u[None, :] ** (powers - order)[:, None]
    return dcoef @ vander


def _pair_violation(c, s, ell, xi, u, minor, minor_inv_norm):
    coeffs = phase_coefficients(c, s, ell, xi)
    n = c.n
    if s == 0:
        eta = xi @ np.asarray(c.coeff_matrix)
        cols = np.array(minor) - 1
        pick = cols[np.argmax(np.abs(eta[:, cols]), axis=1)]
        orders = pick + 1
        floor = 1.0 / (2 * math.sqrt(2 * n) * minor_inv_norm)
    else:
        i0 = np.argmax(np.abs(xi), axis=1)
        orders = np.array(c.degrees)[i0]
        floor = 1.0 / (2 * math.sqrt(2 * n))
    worst = None
    for m in np.unique(orders):
        rows = np.nonzero(orders == m)[0]
        vals = np.abs(_derivative_values(coeffs[rows], int(m), u))
        k = np.unravel_index(np.argmin(vals), vals.shape)
        margin = vals[k] - floor
        if worst is None or margin < worst["margin"]:
            worst = {
                "margin": float(margin),
                "xi": xi[rows[k[0]]].tolist(),
                "t": float(u[k[1]]),
                "s": s,
                "ell": ell,
                "order": int(m),
                "floor": floor,
            }
    return worst


def calibrate_lattice(c, n_xi=4096, n_t=1024, gamma_max=64):
    """Smallest Gamma for which the derivative floor holds on the test grids.

    Test pairs are ell in {Gamma, 3 Gamma} and s in {0, 2 Gamma, 4 Gamma}; the
    s > 0 pairs are only tested for curves with distinct degrees.  At s = 0 the
    derivative order comes from the best invertible minor (see
    ``analyze_dependence``); at s > 0 from the pigeonhole index of xi.
    Returns ``(ScaleLattice, report)``.
    """
    if not (c.full_rank or c.distinct_degrees):
        raise HypothesisError("calibration needs linearly independent components")
    info = analyze_dependence(c)
    xi = shell_points(c.n, n_xi)
    u = np.linspace(0.5, 2.0, n_t)
    last = None
    for gamma in range(1, gamma_max + 1):
        ells = [gamma, 3 * gamma]
        ss = [0] + ([2 * gamma, 4 * gamma] if c.distinct_degrees else [])
        worst = None
        for ell in ells:
            if (c.d - 1) * ell > 900:
                continue
            for s in ss:
                w = _pair_violation(c, s, ell, xi, u, info.minor_idx, info.minor_inverse_norm)
                if worst is None or w["margin"] < worst["margin"]:
                    worst = w
        last = worst
        if worst is not None and worst["margin"] >= 0:
            return ScaleLattice(gamma), {"Gamma": gamma, "min_margin": worst["margin"], "worst": worst}
    raise CalibrationFailed(f"no Gamma <= {gamma_max} satisfies the derivative floor", violation=last)
