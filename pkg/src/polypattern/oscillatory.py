"""Phases, Fourier multipliers and the averaging operator along a rescaled curve.

The multiplier is

    m_{k,s,l}(xi) = psi(|xi|) * int exp(2 pi i 2^k gamma_s(t) . xi) tau_l(t) dt
                  = psi(|xi|) * int_{1/2}^{2} exp(2 pi i lam phi(u, xi)) tau(u) du,

with lam = 2^(k - d l) and phi(u, xi) = 2^(d l) gamma_s(2^-l u) . xi.
"""

import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import fft as sfft
from scipy import optimize

from .errors import (
    HypothesisError,
    PreconditionError,
    QuadratureError,
    ResolutionError,
    ShellError,
)
from .gridfield import GridFunction, accumulate_shifts, frequency_radius, psi, tau, tau_derivative
from .polycurve import eval_curve, phase_coefficients, rescale_curve
from .sampling import shell_points

GL_NODES = 16
QUAD_TOL = 1e-9
DEFAULT_SHELL = {1: 1024, 2: 4096, 3: 16384}


def phase(c, s, ell, t, xi):
    """phi_{s,l}(t, xi) from the coefficient sum; t may be an array."""
    coeffs = phase_coefficients(c, s, ell, xi)[0]
    return np.polynomial.polynomial.polyval(np.asarray(t, dtype=float), coeffs)


def phase_direct(c, s, ell, t, xi):
    """2^(d l) gamma_s(2^-l t) . xi evaluated through the rescaled curve."""
    g = eval_curve(rescale_curve(c, s), 2.0**-ell * np.asarray(t, dtype=float))
    return 2.0 ** (c.d * ell) * (g @ np.asarray(xi, dtype=float))


def pigeonhole_index(xi):
    """0-based index of the largest |xi_i| (lowest index on ties)."""
    xi = np.asarray(xi, dtype=float)
    r = float(np.linalg.norm(xi))
    if r < 0.5 or r > 4.0:
        raise ShellError(f"|xi| = {r:g} outside [1/2, 4]")
    return int(np.argmax(np.abs(xi)))


# ---------------------------------------------------------------------------
# oscillatory quadrature


def _gl_panels(panels):
    x, w = np.polynomial.legendre.leggauss(GL_NODES)
    edges = np.linspace(0.5, 2.0, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    u = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    wt = (half[:, None] * w[None, :]).ravel()
    return u, wt * tau(u)


def _oscillation_count(coeffs, lam):
    """Upper bound on the number of cycles of exp(2 pi i lam phi) over [1/2, 2]."""
    deg = coeffs.shape[1] - 1
    betas = np.arange(1, deg + 1)
    dmax = np.abs(coeffs[:, 1:]) @ (betas * 2.0 ** (betas - 1))
    return lam * 1.5 * dmax


@numba.njit(cache=True)
def _quad_kernel(coeffs, lam, u, wt):
    rows, ncoef = coeffs.shape
    out = np.empty(rows, dtype=np.complex128)
    two_pi_lam = 2.0 * np.pi * lam
    for r in range(rows):
        re = 0.0
        im = 0.0
        for q in range(u.size):
            x = u[q]
            ph = coeffs[r, ncoef - 1]
            for b in range(ncoef - 2, -1, -1):
                ph = ph * x + coeffs[r, b]
            arg = two_pi_lam * ph
            re += wt[q] * math.cos(arg)
            im += wt[q] * math.sin(arg)
        out[r] = complex(re, im)
    return out


def _quad_rows(coeffs, lam, panels):
    u, wt = _gl_panels(panels)
    return _quad_kernel(np.ascontiguousarray(coeffs, dtype=float), float(lam), u, wt)


def oscillatory_integral(coeffs, lam, tol=QUAD_TOL, budget_factor=64):
    """int_{1/2}^{2} exp(2 pi i lam phi(u)) tau(u) du for each row of phase coefficients.

    Gauss-Legendre panels, starting at one panel per two oscillations and doubling
    until two successive panel counts agree to ``tol``.  Returns (values, errors).
    """
    coeffs = np.atleast_2d(np.asarray(coeffs, dtype=float))
    osc = float(np.max(_oscillation_count(coeffs, lam))) if coeffs.size else 0.0
    panels = max(4, int(math.ceil(osc / 2)))
    budget = budget_factor * max(4, int(math.ceil(1.0 + osc)))
    coarse = _quad_rows(coeffs, lam, panels)
    while True:
        fine = _quad_rows(coeffs, lam, 2 * panels)
        err = np.abs(fine - coarse)
        if np.all(err <= tol):
            return fine, err
        panels *= 2
        if 2 * panels > budget:
            raise QuadratureError(
                f"error {err.max():.2e} above {tol:g} with {panels} panels (budget {budget})"
            )
        coarse = fine


@dataclass(frozen=True)
class MultiplierSample:
    k: int
    s: int
    ell: int
    xi: tuple
    lam: float
    value: complex
    quad_error: float


def multiplier(c, k, s, ell, xi, kit=None, lattice=None, tol=QUAD_TOL):
    """m_{k,s,l}(xi) with its quadrature error estimate.

    ``kit`` is accepted for interface symmetry (tau and psi are fixed); with a
    ``lattice`` the pair (s, l) must be admissible.
    """
    if lattice is not None and not lattice.admissible(s, ell):
        raise HypothesisError(f"(s, l) = ({s}, {ell}) is not admissible for Gamma = {lattice.Gamma}")
    xi = np.asarray(xi, dtype=float).reshape(c.n)
    lam = 2.0 ** (k - c.d * ell)
    r = float(np.linalg.norm(xi))
    weight = float(psi(r))
    if weight == 0.0:
        return MultiplierSample(k, s, ell, tuple(xi), lam, 0j, 0.0)
    vals, errs = oscillatory_integral(phase_coefficients(c, s, ell, xi), lam, tol)
    return MultiplierSample(k, s, ell, tuple(xi), lam, complex(weight * vals[0]), float(weight * errs[0]))


def _ibp_bound(coeffs, lam, n_grid=2048):
    """Integration-by-parts bound (1/2 pi) ||(tau / Phi')'||_1 with Phi = lam * phi.

    Rows whose derivative changes sign (or nearly vanishes) on the grid get the
    trivial bound 1.
    """
    u = np.linspace(0.5, 2.0, n_grid + 1)
    du = u[1] - u[0]
    tu = tau(u)
    dtu = tau_derivative(u)
    out = np.ones(coeffs.shape[0])
    deg = coeffs.shape[1] - 1
    d1 = coeffs[:, 1:] * np.arange(1, deg + 1)[None, :]
    d2 = d1[:, 1:] * np.arange(1, deg)[None, :] if deg > 1 else np.zeros((coeffs.shape[0], 1))
    chunk = 2048
    for a in range(0, coeffs.shape[0], chunk):
        p1 = lam * np.atleast_2d(np.polynomial.polynomial.polyval(u, d1[a:a + chunk].T))
        p2 = lam * np.atleast_2d(np.polynomial.polynomial.polyval(u, d2[a:a + chunk].T))
        mn = np.abs(p1).min(axis=1)
        same_sign = np.all(p1 > 0, axis=1) | np.all(p1 < 0, axis=1)
        safe = np.where(np.abs(p1) > 0, p1, 1.0)
        integrand = np.abs(dtu / safe - tu * p2 / safe**2)
        l1 = np.sum(0.5 * (integrand[:, 1:] + integrand[:, :-1]), axis=1) * du
        bound = 1.05 * l1 / (2 * np.pi)
        ok = same_sign & (mn > 1e-3)
        out[a:a + chunk] = np.where(ok, np.minimum(bound, 1.0), 1.0)
    return out


@dataclass
class ShellSup:
    sup: float
    argmax: np.ndarray
    quad_error: float
    evaluated: int


def shell_sup(c, k, s, ell, xi_pts, tol=QUAD_TOL, refine=0):
    """max over xi_pts of |m_{k,s,l}(xi)|, computed exactly on the grid.

    Points are visited in decreasing order of an integration-by-parts upper
    bound and the scan stops once that bound drops below the running maximum.
    With ``refine`` > 0, the best few points are polished by a local search
    (the result is still a lower bound of the true supremum).
    """
    lam = 2.0 ** (k - c.d * ell)
    radii = np.linalg.norm(xi_pts, axis=1)
    weights = psi(radii)
    coeffs = phase_coefficients(c, s, ell, xi_pts)
    bounds = weights * _ibp_bound(coeffs, lam)
    order = np.argsort(-bounds, kind="stable")
    best, arg, qerr, count = 0.0, xi_pts[order[0]], 0.0, 0
    values = {}
    batch = 16
    pos = 0
    while pos < order.size and bounds[order[pos]] > best:
        idx = order[pos:pos + batch]
        idx = idx[bounds[idx] > best]
        vals, errs = oscillatory_integral(coeffs[idx], lam, tol)
        mags = weights[idx] * np.abs(vals)
        count += idx.size
        for j, mg, er in zip(idx, mags, errs):
            values[int(j)] = float(mg)
            if mg > best:
                best, arg, qerr = float(mg), xi_pts[j], float(weights[j] * er)
        pos += batch
    if refine and values:
        top = sorted(values, key=values.get, reverse=True)[:refine]

        def neg(x):
            r = np.linalg.norm(x)
            w = float(psi(r))
            if w == 0.0:
                return 0.0
            v, _ = oscillatory_integral(phase_coefficients(c, s, ell, x), lam, tol)
            return -w * abs(v[0])

        for j in top:
            res = optimize.minimize(neg, xi_pts[j], method="Nelder-Mead",
                                    options={"xatol": 1e-7, "fatol": 1e-12, "maxiter": 400})
            if -res.fun > best:
                best, arg = float(-res.fun), np.asarray(res.x)
                _, e = oscillatory_integral(phase_coefficients(c, s, ell, arg), lam, tol)
                qerr = float(e[0])
    return ShellSup(best, np.asarray(arg), qerr, count)


@dataclass
class DecayFit:
    curve: str
    s: int
    ell: int
    k_range: tuple
    ks: list
    sup_values: list
    argmax: list
    i0: list
    quad_errors: list
    fit_ks: list
    slope: float
    intercept: float
    slack: float
    target: float
    verdict: bool
    note: str = field(default="suprema over a finite shell grid are lower bounds of the true sup")

    def to_json(self):
        return {"slope": self.slope, "intercept": self.intercept, "verdict": self.verdict,
                "slack": self.slack, "target": self.target, "fit_ks": self.fit_ks,
                "s": self.s, "ell": self.ell, "curve": self.curve, "note": self.note}

    def csv_rows(self):
        rows = [["k", "s", "ell", "sup_abs_m", "argmax_xi", "i0", "quad_error_max"]]
        for k, v, a, i, e in zip(self.ks, self.sup_values, self.argmax, self.i0, self.quad_errors):
            rows.append([k, self.s, self.ell, repr(v), ";".join(repr(float(x)) for x in a), i, repr(e)])
        return rows


def check_lemma_hypothesis(c, s):
    if s > 0 and not c.distinct_degrees:
        raise HypothesisError("rescaled decay (s > 0) needs components of distinct degrees")
    if s == 0 and not c.full_rank:
        raise HypothesisError("decay at s = 0 needs linearly independent components")


def decay_fit(c, s, ell, kmin, kmax, shell_pts=None, slack=0.1, lam_min=4.0, refine=0):
    """Per-k shell suprema of |m_{k,s,l}| and the least-squares slope of log2 sup vs k.

    Only k with lam = 2^(k - d l) >= lam_min enter the fit.  The verdict is
    slope <= -1/d + slack.
    """
    if kmax - kmin < 6:
        raise PreconditionError("need kmax - kmin >= 6")
    check_lemma_hypothesis(c, s)
    shell_pts = shell_pts or DEFAULT_SHELL.get(c.n, 16384)
    xi = shell_points(c.n, shell_pts)
    ks, sups, args, i0s, errs = [], [], [], [], []
    for k in range(kmin, kmax + 1):
        res = shell_sup(c, k, s, ell, xi, refine=refine)
        ks.append(k)
        sups.append(res.sup)
        args.append([float(x) for x in res.argmax])
        i0s.append(pigeonhole_index(res.argmax))
        errs.append(res.quad_error)
    fit_ks = [k for k in ks if 2.0 ** (k - c.d * ell) >= lam_min]
    if len(fit_ks) < 2:
        raise PreconditionError(f"fewer than two k with lambda >= {lam_min} in [{kmin}, {kmax}]")
    y = np.log2([sups[ks.index(k)] for k in fit_ks])
    slope, intercept = np.polyfit(fit_ks, y, 1)
    target = -1.0 / c.d + slack
    return DecayFit(c.label(), s, ell, (kmin, kmax), ks, sups, args, i0s, errs, fit_ks,
                    float(slope), float(intercept), slack, target, bool(slope <= target))


# ---------------------------------------------------------------------------
# the averaging operator T_{s,l}


def _curve_window(c, s, ell, count):
    """Midpoint u-nodes on [1/2, 2], their tau weights and gamma_s(2^-l u)."""
    du = 1.5 / count
    u = 0.5 + (np.arange(count) + 0.5) * du
    g = eval_curve(rescale_curve(c, s), 2.0**-ell * u)
    return u, tau(u) * du, g


def _path_length(c, s, ell, h, samples=4096):
    _, _, g = _curve_window(c, s, ell, samples)
    return float(np.max(np.sum(np.abs(np.diff(g, axis=0)) / h[None, :], axis=0)))


def spatial_node_count(c, s, ell, f, max_nodes=20000, band_limit=None):
    """Number of u-nodes for the spatial route.

    Default rule: at most one grid cell of displacement per node (error if
    more than four cells would be needed within the budget).  With a band
    limit (cycles per unit) the rule is a phase step of at most pi/4.
    """
    if band_limit is not None:
        _, _, g = _curve_window(c, s, ell, 4096)
        length = float(np.sum(np.linalg.norm(np.diff(g, axis=0), axis=1)))
        need = int(math.ceil(length * band_limit * 8.0))
        return max(64, need)
    cells = _path_length(c, s, ell, f.h)
    need = max(64, int(math.ceil(cells)))
    if need > max_nodes:
        if cells / max_nodes > 4:
            raise ResolutionError(f"{cells / max_nodes:.1f} cells per node exceeds 4")
        need = max_nodes
    return need


def _apply_spatial(f, c, s, ell, nodes, periodic):
    _, w, g = _curve_window(c, s, ell, nodes)
    out = accumulate_shifts(f.values, g / f.h[None, :], w, periodic=periodic)
    return f.with_values(out)


def transfer_factor(c, s, ell, freqs, tol=1e-12, batch=1024):
    """int exp(2 pi i gamma_s(t) . xi) tau_l(t) dt at frequencies xi (cycles per unit)."""
    freqs = np.atleast_2d(freqs)
    lam = 2.0 ** (-c.d * ell)
    coeffs = phase_coefficients(c, s, ell, freqs)
    # batches of similar oscillation count share a panel layout
    order = np.argsort(_oscillation_count(coeffs, lam), kind="stable")
    out = np.empty(freqs.shape[0], dtype=complex)
    for a in range(0, order.size, batch):
        idx = order[a:a + batch]
        out[idx] = oscillatory_integral(coeffs[idx], lam, tol)[0]
    return out


def _apply_multiplier(f, c, s, ell, periodic, support_tol=1e-10):
    if periodic:
        shape = f.dims
        vals = f.values
    else:
        _, _, g = _curve_window(c, s, ell, 4096)
        reach = np.ceil(np.max(np.abs(g), axis=0) / f.h).astype(int) + 2
        shape = tuple(1 << int(m + r - 1).bit_length() for m, r in zip(f.dims, reach))
        vals = np.zeros(shape)
        vals[tuple(slice(0, m) for m in f.dims)] = f.values
    spec = sfft.rfftn(vals)
    freqs = [np.fft.fftfreq(m, d=hh) for m, hh in zip(shape, f.h)]
    freqs[-1] = np.fft.rfftfreq(shape[-1], d=f.h[-1])
    mag = np.abs(spec)
    idx = np.nonzero(mag > support_tol * mag.max()) if mag.max() > 0 else (np.array([], int),) * f.n
    pts = np.stack([freqs[i][idx[i]] for i in range(f.n)], axis=1)
    out = np.zeros_like(spec)
    out[idx] = spec[idx] * transfer_factor(c, s, ell, pts)
    res = sfft.irfftn(out, shape)
    return f.with_values(res[tuple(slice(0, m) for m in f.dims)])


@dataclass
class TResult:
    value: GridFunction
    route: str
    nodes: int = 0
    richardson_error: float = float("nan")


def apply_T(f, c, s, ell, kit=None, route="spatial", periodic=False, band_limit=None,
            nodes=None, richardson=False):
    """T_{s,l} f(x) = int f(x + gamma_s(t)) tau_l(t) dt.

    route="spatial": midpoint u-nodes times multilinear interpolation of f;
    route="multiplier": multiplication of the (zero-padded or periodic) DFT by
    the exact transfer factor on the support of f's spectrum.
    """
    if c.n != f.n:
        raise HypothesisError("curve and grid dimensions differ")
    if route == "multiplier":
        return TResult(_apply_multiplier(f, c, s, ell, periodic), route)
    if route != "spatial":
        raise ValueError(f"unknown route {route!r}")
    count = nodes or spatial_node_count(c, s, ell, f, band_limit=band_limit)
    val = _apply_spatial(f, c, s, ell, count, periodic)
    err = float("nan")
    if richardson:
        half = _apply_spatial(f, c, s, ell, max(1, count // 2), periodic)
        diff = val.values - half.values
        err = float(np.sqrt(np.sum(diff**2) * f.cell_volume) / 3.0)
    return TResult(val, route, count, err)


def relative_l2(a, b):
    den = np.sqrt(np.sum(b.values**2))
    return float(np.sqrt(np.sum((a.values - b.values) ** 2)) / den) if den > 0 else 0.0


def band_limited_field(k, dims, seed, n=2, modes_radius=(2, 4)):
    """Random real trigonometric polynomial on the torus [0, 2^(1-k))^n, band k.

    Every integer mode m with 2 <= |m| < 4 gets an independent complex
    Gaussian coefficient (paired with -m so the field is real); frequencies
    m * 2^(k-1) satisfy 2^k <= |xi| < 2^(k+1) and every wavelength spans at
    least dims/4 cells.  Returns (field, frequencies, band limit).
    """
    rng = np.random.default_rng(seed)
    side = 2.0 ** (1 - k)
    lo, hi = modes_radius
    span = np.arange(-hi, hi + 1)
    mesh = np.stack(np.meshgrid(*[span] * n, indexing="ij"), axis=-1).reshape(-1, n)
    r = np.linalg.norm(mesh, axis=1)
    modes = mesh[(r >= lo) & (r < hi)]
    # one representative per +-m pair
    half = [m for m in modes if tuple(m) > tuple(-m)]
    axes = [(np.arange(m) + 0.5) * side / m for m in dims]
    grid = np.meshgrid(*axes, indexing="ij")
    vals = np.zeros(tuple(dims))
    for m in half:
        amp = rng.normal() + 1j * rng.normal()
        ph = 2 * np.pi * sum(mi * x / side for mi, x in zip(m, grid))
        vals += 2 * np.real(amp * np.exp(1j * ph))
    box = tuple((0.0, side) for _ in range(n))
    freqs = modes / side
    return GridFunction(vals, box), freqs, float(np.max(np.linalg.norm(freqs, axis=1)))


__all__ = [
    "phase", "phase_direct", "pigeonhole_index", "oscillatory_integral", "multiplier",
    "MultiplierSample", "shell_sup", "decay_fit", "DecayFit", "apply_T", "transfer_factor",
    "band_limited_field", "relative_l2", "frequency_radius",
]
