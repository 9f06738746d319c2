"""Two-point and corner counting forms, and their audited decompositions.

All forms are tensor quadratures: midpoint nodes in the curve parameter
times grid sums, with shifted copies of f obtained by multilinear
interpolation (zero outside the grid).  The decompositions pair a single
"dual" array Q with each slot function, so the splitting identities hold up
to rounding.
"""

import functools
import math
from dataclasses import asdict, dataclass, field

import numba
import numpy as np
from scipy.signal import fftconvolve

from .errors import HypothesisError, PreconditionError, ResolutionError, SubstitutionError
from .gridfield import (
    GridFunction,
    accumulate_shifts,
    band_project,
    bump_kit,
    check_resolvable,
    displacement_constant,
    embed,
    expand_box,
    integral,
    kernel_radius_cells,
    l2_norm,
    max_band,
    mollify,
    partial_convolve,
    rho_1d_kernel,
    smooth_step,
    tau,
)
from .oscillatory import check_lemma_hypothesis, shell_sup
from .polycurve import Polynomial, curve_from_json, eval_curve, rescale_curve
from .sampling import shell_points

MAX_NODES = 20000
MIN_NODES = 64
AUDIT_TOL = 1e-9


# ---------------------------------------------------------------------------
# quadrature nodes in the curve parameter


def t_nodes(window, count):
    """Nodes t_q and weights w_q for int ... dt over [0, 1] ("full") or against tau_l."""
    if window == "full":
        dt = 1.0 / count
        t = (np.arange(count) + 0.5) * dt
        return t, np.full(count, dt)
    ell = int(window)
    du = 1.5 / count
    u = 0.5 + (np.arange(count) + 0.5) * du
    return 2.0**-ell * u, tau(u) * du


def node_count(path_fn, window, h, max_nodes=MAX_NODES):
    """At most one cell of displacement per node (ResolutionError beyond 4)."""
    t, _ = t_nodes(window, 4096)
    g = path_fn(t)
    cells = float(np.max(np.sum(np.abs(np.diff(g, axis=0)) / np.asarray(h)[None, :], axis=0)))
    need = max(MIN_NODES, int(math.ceil(cells)))
    if need > max_nodes:
        if cells / max_nodes > 4:
            raise ResolutionError(f"{cells / max_nodes:.1f} cells per t-node exceeds 4")
        need = max_nodes
    return need


def _check_unit_support(f, tol=0.0):
    for i in range(f.n):
        x = f.axis(i)
        outside = (x < 0) | (x > 1)
        if np.any(outside):
            sl = [slice(None)] * f.n
            sl[i] = outside
            if np.any(np.abs(f.values[tuple(sl)]) > tol):
                raise PreconditionError("f must be supported in the unit box")


@dataclass
class CountingResult:
    value: float
    t_window: object
    nodes: int
    error: float
    scheme: dict = field(default_factory=dict)

    def to_json(self):
        return asdict(self)


# ---------------------------------------------------------------------------
# two-point form


def _two_point(f, c, s, window, count):
    t, w = t_nodes(window, count)
    g = eval_curve(rescale_curve(c, s), t)
    shifted = accumulate_shifts(f.values, g / f.h[None, :], w)
    return float(np.sum(f.values * shifted) * f.cell_volume)


def two_point_form(f, c, s=0, t_window="full", nodes=None):
    """int f(x) f(x + gamma_s(t)) dt dx, over t in [0, 1] or weighted by tau_l."""
    if c.n != f.n:
        raise HypothesisError("curve and grid dimensions differ")
    _check_unit_support(f)
    cs = rescale_curve(c, s)
    count = nodes or node_count(lambda t: eval_curve(cs, t), t_window, f.h)
    value = _two_point(f, c, s, t_window, count)
    half = _two_point(f, c, s, t_window, max(1, count // 2))
    return CountingResult(value, t_window, count, abs(value - half) / 3.0,
                          {"t_rule": "midpoint", "interpolation": "multilinear"})


def lower_bound_lemma(f, kit, k):
    """(lhs, rhs, ratio) with lhs = int f (f * rho_k), rhs = (int f)^2."""
    sm = mollify(f, kit, k, extend=False)
    lhs = float(np.sum(f.values * sm.values) * f.cell_volume)
    rhs = integral(f) ** 2
    return lhs, rhs, (lhs / rhs if rhs > 0 else float("inf"))


# ---------------------------------------------------------------------------
# two-point step audit


def _check(value, bound, tol=AUDIT_TOL, kind="le"):
    ok = value <= bound * (1 + tol) + tol if kind == "le" else value >= bound * (1 - tol) - tol
    return {"value": float(value), "bound": float(bound), "ok": bool(ok)}


@functools.lru_cache(maxsize=256)
def _band_multiplier_sup(curve_json, k, s, ell, shell):
    c = curve_from_json(curve_json)
    return shell_sup(c, k, s, ell, shell_points(c.n, shell), refine=2).sup


def band_multiplier_sup(c, k, s, ell, shell=None):
    import json

    shell = shell or {1: 1024, 2: 4096}.get(c.n, 16384)
    return _band_multiplier_sup(json.dumps(c.to_json(), sort_keys=True), k, s, ell, shell)


@dataclass
class StepAudit:
    ell_prime: int
    ell: int
    ell_dprime: int
    k0: int
    smoothed: float
    I1: float
    I2: float
    I3: float
    I1_prime: float
    bound_I2: float
    bound_I3: dict
    bound_I1_shift: float
    lower_I1_prime: object
    identity_error: float
    checks: dict
    bands: list
    nodes: int
    f_integral: float
    f_l2: float

    @property
    def ok(self):
        return all(v["ok"] for v in self.checks.values())

    def to_json(self):
        out = asdict(self)
        out["ok"] = self.ok
        return out


def _work_grid(f, margins):
    return embed(f, expand_box(f, margins))


def _select_k0(ks, terms, ell_dprime, k0=None):
    """argmin over k0 of 2^(k0 - l'') + sum_{k > k0} |band term k|."""
    if k0 is not None:
        return int(k0)
    best, arg = None, ks[0] - 1
    for cand in [ks[0] - 1, *ks[:-1]]:
        val = 2.0 ** (cand - ell_dprime) + sum(abs(t) for k, t in zip(ks, terms) if k > cand)
        if best is None or val < best:
            best, arg = val, cand
    return int(arg)


def bourgain_step(f, c, kit, ell_prime, ell, ell_dprime, k0=None, s=0, c_lemma=None,
                  lattice=None, lemma_bands=True):
    """Split the tau_l-smoothed two-point form into I1 + I2 + I3 and audit each bound."""
    if not ell_prime < ell < ell_dprime:
        raise PreconditionError("need l' < l < l''")
    if lattice is not None:
        for v in (ell_prime, ell_dprime):
            if not lattice.is_ell(v):
                raise PreconditionError(f"scale {v} is not on the lattice")
    kit = kit or bump_kit(f.n)
    _check_unit_support(f)
    check_resolvable(kit, ell_dprime, f.h)
    cs = rescale_curve(c, s)
    t, _ = t_nodes(ell, 4096)
    reach = np.ceil(np.max(np.abs(eval_curve(cs, t)), axis=0) / f.h).astype(int) + 2
    margin = kernel_radius_cells(kit, ell_prime, f.h) + reach
    W = _work_grid(f, margin)
    F1 = mollify(W, kit, ell_prime, extend=False)
    F2 = mollify(W, kit, ell_dprime, extend=False)

    count = node_count(lambda tt: eval_curve(cs, tt), ell, f.h)
    tq, wq = t_nodes(ell, count)
    gq = eval_curve(cs, tq)
    Q = accumulate_shifts(W.values, gq / W.h[None, :], wq, transpose=True)
    vol = W.cell_volume

    def form(a):
        return float(np.sum(Q * a) * vol)

    smoothed = form(W.values)
    I1 = form(F1.values)
    I2 = form(F2.values - F1.values)
    G = W.with_values(W.values - F2.values)
    I3 = form(G.values)
    identity_error = abs(I1 + I2 + I3 - smoothed) / max(abs(smoothed), 1e-300)

    mass = float(np.sum(wq))
    fl2 = l2_norm(f)
    fint = integral(f)
    fmax = float(np.max(np.abs(f.values)))
    diff_norm = float(np.sqrt(np.sum((F2.values - F1.values) ** 2) * vol))

    kmax = max_band(W)
    bd = band_project(G, 0, kmax)
    ks = list(bd.bands)
    terms, bands = [], []
    for k in ks:
        gk = bd.bands[k]
        term = form(gk.values)
        gnorm = l2_norm(gk)
        entry = {"k": k, "term": term, "g_l2": gnorm, "cs_bound": fl2 * gnorm * mass}
        resolved = 2.0 ** (k + 1) * float(np.max(W.h)) <= 1.0 / 8
        entry["resolved"] = bool(resolved)
        if lemma_bands and resolved and gnorm > 0:
            try:
                check_lemma_hypothesis(c, s)
                msup = band_multiplier_sup(c, k, s, ell)
                entry["multiplier_sup"] = msup
                entry["lemma_bound"] = fl2 * msup * gnorm
            except HypothesisError:
                pass
        terms.append(term)
        bands.append(entry)
    k0 = _select_k0(ks, terms, ell_dprime, k0)
    low_term = form(bd.low.values) + sum(t for k, t in zip(ks, terms) if k <= k0)
    low_norm = math.sqrt(l2_norm(bd.low) ** 2 + sum(b["g_l2"] ** 2 for b in bands if b["k"] <= k0))
    high_term = form(bd.high.values)

    I1p = float(np.sum(f.values * embed(F1, f.box).values) * f.cell_volume) * mass
    lengths = np.sum(np.abs(gq), axis=1)
    shift_bound = displacement_constant(kit) * 2.0**ell_prime * fmax * fint * float(np.sum(wq * lengths))

    checks = {
        "identity": _check(identity_error, 0.0, tol=1e-6),
        "I2_cauchy_schwarz": _check(abs(I2), fl2 * diff_norm * mass),
        "I2_displayed": _check(abs(I2), diff_norm),
        "I3_low_pass": _check(abs(low_term), fl2 * low_norm * mass),
        "I1_shift": _check(abs(I1 - I1p), shift_bound),
    }
    for b in bands:
        if b["k"] > k0:
            checks[f"I3_band_{b['k']}_cs"] = _check(abs(b["term"]), b["cs_bound"])
            if "lemma_bound" in b:
                checks[f"I3_band_{b['k']}_lemma"] = _check(abs(b["term"]), b["lemma_bound"], tol=1e-3)
    lower = None
    if c_lemma is not None:
        lower = c_lemma * fint**2
        checks["I1_prime_floor"] = _check(I1p, lower, kind="ge")
    bound_I3 = {
        "k0": k0,
        "low_pass_term": low_term,
        "low_pass_norm": low_norm,
        "rate_low_pass": 2.0 ** (k0 - ell_dprime),
        "high_remainder_term": high_term,
        "band_terms": {b["k"]: b["term"] for b in bands if b["k"] > k0},
        "total_bound": fl2 * low_norm * mass + sum(b["cs_bound"] for b in bands if b["k"] > k0),
    }
    return StepAudit(ell_prime, ell, ell_dprime, k0, smoothed, I1, I2, I3, I1p, diff_norm, bound_I3,
                     shift_bound, lower, identity_error, checks, bands, count, fint, fl2)


# ---------------------------------------------------------------------------
# corner machinery


@numba.njit(cache=True)
def _lerp_axis0(a, i, j, k, th):
    m0 = a.shape[0]
    v = 0.0
    r = i + k
    if 0 <= r < m0:
        v += (1.0 - th) * a[r, j]
    if th > 0.0 and 0 <= r + 1 < m0:
        v += th * a[r + 1, j]
    return v


@numba.njit(cache=True)
def _lerp_axis1(a, i, j, k, th):
    m1 = a.shape[1]
    v = 0.0
    r = j + k
    if 0 <= r < m1:
        v += (1.0 - th) * a[i, r]
    if th > 0.0 and 0 <= r + 1 < m1:
        v += th * a[i, r + 1]
    return v


@numba.njit(cache=True)
def _bilinear_field(G, H, d1, d2, w):
    """sum_q w_q G(i + d1_q, j) H(i, j + d2_q)."""
    m0, m1 = G.shape
    out = np.zeros((m0, m1))
    for q in range(d1.size):
        k1 = int(math.floor(d1[q]))
        t1 = d1[q] - k1
        k2 = int(math.floor(d2[q]))
        t2 = d2[q] - k2
        for i in range(m0):
            for j in range(m1):
                g = _lerp_axis0(G, i, j, k1, t1)
                if g != 0.0:
                    out[i, j] += w[q] * g * _lerp_axis1(H, i, j, k2, t2)
    return out


@numba.njit(cache=True)
def _corner_dual(F, G, d1, d2, w):
    """Q with sum(Q * H) = sum_q w_q sum F(i,j) G(i + d1_q, j) H(i, j + d2_q)."""
    m0, m1 = F.shape
    out = np.zeros((m0, m1))
    for q in range(d1.size):
        k1 = int(math.floor(d1[q]))
        t1 = d1[q] - k1
        k2 = int(math.floor(d2[q]))
        t2 = d2[q] - k2
        for i in range(m0):
            for j in range(m1):
                if F[i, j] == 0.0:
                    continue
                p = w[q] * F[i, j] * _lerp_axis0(G, i, j, k1, t1)
                if p == 0.0:
                    continue
                r = j + k2
                if 0 <= r < m1:
                    out[i, r] += (1.0 - t2) * p
                if t2 > 0.0 and 0 <= r + 1 < m1:
                    out[i, r + 1] += t2 * p
    return out


def check_corner_pair(P1, P2):
    if not (isinstance(P1, Polynomial) and isinstance(P2, Polynomial)):
        raise TypeError("corner forms take two Polynomial objects")
    if P1.deg >= P2.deg:
        raise HypothesisError("corner forms need deg P1 < deg P2")


def _corner_nodes(P1s, P2s, window, h, nodes=None):
    def path(t):
        return np.stack([P1s(t), P2s(t)], axis=-1)

    count = nodes or node_count(path, window, h)
    t, w = t_nodes(window, count)
    return t, w, P1s(t) / h[0], P2s(t) / h[1]


def corner_form(f, P1, P2, s=0, t_window="full", nodes=None):
    """int f(x, y) f(x + P1_s(t), y) f(x, y + P2_s(t)) dt dx dy."""
    check_corner_pair(P1, P2)
    if f.n != 2:
        raise HypothesisError("corner forms live in the plane")
    _check_unit_support(f)
    P1s, P2s = P1.rescaled(s), P2.rescaled(s)

    def value(count):
        t, w, d1, d2 = _corner_nodes(P1s, P2s, t_window, f.h, count)
        B = _bilinear_field(f.values, f.values, d1, d2, w)
        return float(np.sum(f.values * B) * f.cell_volume), count

    val, count = value(nodes or node_count(lambda t: np.stack([P1s(t), P2s(t)], -1), t_window, f.h))
    half, _ = value(max(1, count // 2))
    return CountingResult(val, t_window, count, abs(val - half) / 3.0,
                          {"t_rule": "midpoint", "interpolation": "linear per axis"})


@dataclass
class TauTilde:
    """Kernel of the inner t-average after the substitution omega = |P1_s(t)|."""

    omega: np.ndarray
    values: np.ndarray
    mass: float
    sign: int
    window: tuple

    def kernel(self, v):
        """K with  int f(x + P1_s(t), y) tau_l(t) dt = int f(x - v, y) K(v) dv."""
        v = np.asarray(v, dtype=float)
        # P1_s < 0: f(x - omega), so K = tau~;  P1_s > 0: f(x + omega), K is reflected
        om = v if self.sign < 0 else -v
        return np.interp(om, self.omega, self.values, left=0.0, right=0.0)


def substitution_kernel(P1s, ell, samples=20001):
    """tau~(omega) = tau_l(t(omega)) t'(omega) on the monotone branch over supp tau_l."""
    a, b = 2.0 ** (-ell - 1), 2.0 ** (1 - ell)
    deriv = np.polynomial.Polynomial([0.0] + [P1s.coeffs.get(j, 0.0) for j in range(1, P1s.deg + 1)]).deriv()
    roots = deriv.roots()
    for r in roots:
        if abs(r.imag) < 1e-12 and a <= r.real <= b:
            raise SubstitutionError(f"P1_s' vanishes at t = {r.real:.6g} inside the window",
                                    critical_point=float(r.real))
    t = np.linspace(a, b, samples)
    p = P1s(t)
    if np.any(p == 0) or not (np.all(p > 0) or np.all(p < 0)):
        raise SubstitutionError("P1_s changes sign on the window")
    sign = 1 if p[0] > 0 else -1
    omega = np.abs(p)
    if omega[0] > omega[-1]:
        t, omega = t[::-1], omega[::-1]
    dp = np.abs(deriv(t))
    vals = 2.0**ell * tau(2.0**ell * t) / dp
    mass = float(np.trapezoid(vals, omega))
    return TauTilde(omega, vals, mass, sign, (a, b))


def _kernel_on_grid(fn, radius, h):
    r = int(math.ceil(radius / h))
    x = np.arange(-r, r + 1) * h
    k = fn(x)
    return k / (np.sum(k) * h)


def zeta_partition(count, x):
    """Smooth nonnegative partition of unity on [0, count]: row i lives near [i, i+1]."""
    x = np.asarray(x, dtype=float)

    def H(v):
        return smooth_step(v + 0.5)

    rows = []
    for i in range(count):
        left = 1.0 if i == 0 else H(x - i)
        right = 0.0 if i == count - 1 else H(x - i - 1)
        rows.append(left - right)
    return np.array(rows)


@dataclass
class CornerAudit:
    s: int
    ell_prime: int
    ell: int
    ell_dprime: int
    k0: int
    smoothed: float
    I1: float
    I2: float
    I3: float
    I4: float
    I1_prime: float
    I1_dprime: float
    identity_error: float
    band_terms: dict
    tau_tilde_mass: float
    tau_tilde_sign: int
    varsigma: dict
    r1: int
    r2: int
    A1: float
    A2: float
    swap: dict
    squares: dict
    sigma_fit: dict
    checks: dict
    nodes: int
    f_integral: float
    metadata: dict = field(default_factory=dict)

    @property
    def ok(self):
        return all(v["ok"] for v in self.checks.values())

    def to_json(self):
        out = asdict(self)
        out["ok"] = self.ok
        return out


def _l1_on_line(a, dx):
    return float(np.sum(np.abs(a)) * dx)


def corner_step(f, P1, P2, kit=None, s=0, ell_prime=1, ell=3, ell_dprime=5, k0=None,
                c_rho=None, lattice=None, max_squares=4096):
    """Corner analogue of the step audit: I1 + I2 + I3, I3 = I4 + sum_k I_{3,k}."""
    check_corner_pair(P1, P2)
    if f.n != 2:
        raise HypothesisError("corner forms live in the plane")
    if not ell_prime < ell < ell_dprime:
        raise PreconditionError("need l' < l < l''")
    if lattice is not None:
        for v in (ell_prime, ell, ell_dprime):
            if not lattice.admissible(s, v):
                raise PreconditionError(f"(s, l) = ({s}, {v}) is not admissible")
    if s == ell:
        raise PreconditionError("the dominant monomial is undefined for s = l")
    _check_unit_support(f)
    k1 = bump_kit(1)
    hx, hy = f.h
    P1s, P2s = P1.rescaled(s), P2.rescaled(s)
    r1 = P1.sigma if s < ell else P1.deg
    r2 = P2.sigma if s < ell else P2.deg

    def varsigma(lv):
        return abs(P1.coeffs[r1]) * 2.0 ** (-s * (P1.deg - r1) - r1 * lv)

    vs = {"prime": varsigma(ell_prime), "ell": varsigma(ell), "dprime": varsigma(ell_dprime)}
    A1 = 2.0 ** ((P1.deg - r1) * s + ell * r1)
    A2 = 2.0 ** ((P2.deg - r2) * s + ell * r2)

    tt = substitution_kernel(P1s, ell)
    rad_y1 = k1.support_radius * 2.0**-ell_prime
    rad_y2 = k1.support_radius * 2.0**-ell_dprime
    rad_x1 = k1.support_radius * vs["prime"]
    rad_x2 = k1.support_radius * vs["dprime"]
    for rad, hh, name in ((rad_y2, hy, "rho_l''"), (rad_x2, hx, "rho_varsigma''"),
                          (tt.omega[-1] - tt.omega[0], hx, "tau~")):
        if rad / hh < 4:
            raise ResolutionError(f"{name} spans {rad / hh:.2f} cells (< 4)")

    t_probe, _ = t_nodes(ell, 4096)
    reach_x = int(math.ceil(np.max(np.abs(P1s(t_probe))) / hx)) + 2
    reach_y = int(math.ceil(np.max(np.abs(P2s(t_probe))) / hy)) + 2
    mx = reach_x + int(math.ceil(max(rad_x1, tt.omega[-1]) / hx)) + 2
    my = reach_y + int(math.ceil(rad_y1 / hy)) + 2
    W = _work_grid(f, [mx, my])
    vol = W.cell_volume

    rho_y1 = rho_1d_kernel(2.0**-ell_prime, hy, k1)
    rho_y2 = rho_1d_kernel(2.0**-ell_dprime, hy, k1)
    Y1 = partial_convolve(W, rho_y1, 2)
    Y2 = partial_convolve(W, rho_y2, 2)

    t, w, d1, d2 = _corner_nodes(P1s, P2s, ell, f.h)
    Q = _corner_dual(W.values, W.values, d1, d2, w)

    def form(a):
        return float(np.sum(Q * a) * vol)

    smoothed = form(W.values)
    I1 = form(Y1.values)
    I2 = form(Y2.values - Y1.values)
    G = W.with_values(W.values - Y2.values)
    I3 = form(G.values)
    identity_error = abs(I1 + I2 + I3 - smoothed) / max(abs(smoothed), 1e-300)

    mass = float(np.sum(w))
    fl2 = l2_norm(f)
    fint = integral(f)
    fmax = float(np.max(np.abs(f.values)))
    diff_norm = float(np.sqrt(np.sum((Y2.values - Y1.values) ** 2) * vol))

    kmax = max_band(W, axis=2)
    bd = band_project(G, 0, kmax, axis=2)
    ks = list(bd.bands)
    terms = {k: form(bd.bands[k].values) for k in ks}
    k0 = _select_k0(ks, [terms[k] for k in ks], ell_dprime, k0)
    low_parts = [bd.low] + [bd.bands[k] for k in ks if k <= k0]
    I4 = form(bd.low.values) + sum(terms[k] for k in ks if k <= k0)
    low_norm = math.sqrt(sum(l2_norm(p) ** 2 for p in low_parts))
    high_term = form(bd.high.values)
    band_sum = sum(terms[k] for k in ks if k > k0)
    split_error = abs(I4 + band_sum + high_term - I3) / max(abs(I3), 1e-300)

    # I1' replaces the y-shift of rho_l' *_2 f by no shift
    A_field = accumulate_shifts(W.values, np.stack([d1, np.zeros_like(d1)], axis=1), w)
    prod = W.values * Y1.values
    I1p = float(np.sum(prod * A_field) * vol)
    shift_bound = (displacement_constant(k1) * 2.0**ell_prime * fmax * fint
                   * float(np.sum(w * np.abs(P2s(t)))))

    # substitution and mollifier swap
    K_grid = _kernel_on_grid(tt.kernel, tt.omega[-1] + hx, hx)
    Ktf = partial_convolve(W, K_grid, 1)
    subst_err = float(np.sqrt(np.sum((Ktf.values - A_field) ** 2) * vol))
    rho_x1 = rho_1d_kernel(vs["prime"], hx, k1)
    rho_x2 = rho_1d_kernel(vs["dprime"], hx, k1)
    X1 = partial_convolve(W, rho_x1, 1)
    X2 = partial_convolve(W, rho_x2, 1)
    swap_lhs = float(np.sqrt(np.sum((Ktf.values - X1.values) ** 2) * vol))
    swap_main = float(np.sqrt(np.sum((X2.values - X1.values) ** 2) * vol))
    dx = min(vs["dprime"], tt.omega[-1] - tt.omega[0]) / 200.0
    R = k1.support_radius * vs["prime"] + tt.omega[-1] + 4 * dx
    line = np.arange(-int(R / dx), int(R / dx) + 1) * dx
    Kc = tt.kernel(line)
    rc1 = k1.rho_radial(np.abs(line) / vs["prime"]) / vs["prime"]
    rc2 = k1.rho_radial(np.abs(line) / vs["dprime"]) / vs["dprime"]
    tail1 = _l1_on_line(Kc - fftconvolve(Kc, rc2, mode="same") * dx, dx)
    tail2 = _l1_on_line(fftconvolve(Kc, rc1, mode="same") * dx - rc1, dx)
    swap_rhs = swap_main + (tail1 + tail2) * fl2
    I1pp = float(np.sum(prod * X1.values) * vol)
    prod_norm = float(np.sqrt(np.sum(prod**2) * vol))

    # per-band bilinear fields and the unit-square partition
    unit = embed(f, f.box)
    ox = int(round((f.box[0][0] - W.box[0][0]) / hx))
    oy = int(round((f.box[1][0] - W.box[1][0]) / hy))
    nA1, nA2 = int(round(A1)), int(round(A2))
    partition_ok = (1.0 / A1 >= 2 * hx and 1.0 / A2 >= 2 * hy and nA1 * nA2 <= max_squares
                    and abs(A1 - nA1) < 1e-9 and abs(A2 - nA2) < 1e-9)
    if partition_ok:
        Zx = zeta_partition(nA1, A1 * unit.axis(0))
        Zy = zeta_partition(nA2, A2 * unit.axis(1))
    square_records, fit_k, fit_y = {}, [], []
    for k in ks:
        if k <= k0:
            continue
        gk = bd.bands[k]
        B = _bilinear_field(W.values, gk.values, d1, d2, w)
        Bu = np.abs(B[ox:ox + f.dims[0], oy:oy + f.dims[1]])
        total = float(np.sum(Bu) * f.cell_volume)
        rec = {"abs_B_integral": total, "lambda": 2.0**k / A2, "g_l2": l2_norm(gk)}
        if partition_ok:
            per = Zx @ Bu @ Zy.T * f.cell_volume
            rec["square_sum"] = float(per.sum())
            rec["square_max"] = float(per.max())
        square_records[k] = rec
        resolved = 2.0 ** (k + 1) * hy <= 1.0 / 8
        if resolved and total > 0 and rec["g_l2"] > 0 and fl2 > 0:
            fit_k.append(k)
            fit_y.append(math.log2(total / (fl2 * rec["g_l2"])))
    if len(fit_k) >= 2:
        slope, icpt = np.polyfit(fit_k, fit_y, 1)
        sigma_fit = {"sigma": float(-slope), "intercept": float(icpt), "ks": fit_k}
    else:
        sigma_fit = {"sigma": None, "intercept": None, "ks": fit_k}

    checks = {
        "identity": _check(identity_error, 0.0, tol=1e-6),
        "I3_split": _check(split_error, 0.0, tol=1e-6),
        "tau_tilde_mass": _check(abs(tt.mass - 1.0), 1e-8, tol=0.0),
        "varsigma_positive": {"value": vs["ell"], "bound": 0.0, "ok": vs["ell"] > 0},
        "I2_cauchy_schwarz": _check(abs(I2), fl2 * diff_norm * mass),
        "I4_low_pass": _check(abs(I4), fl2 * low_norm * mass),
        "I1_shift": _check(abs(I1 - I1p), shift_bound),
        "swap_triangle": _check(swap_lhs, swap_rhs, tol=1e-6),
        "I1_prime_swap": _check(abs(I1p - I1pp), prod_norm * (swap_rhs + subst_err), tol=1e-6),
    }
    for k, rec in square_records.items():
        checks[f"I3_band_{k}_bilinear"] = _check(abs(terms[k]), rec["abs_B_integral"])
        if "square_sum" in rec:
            checks[f"I3_band_{k}_partition"] = _check(
                abs(rec["square_sum"] - rec["abs_B_integral"]), 1e-9 * max(rec["abs_B_integral"], 1e-300),
                tol=0.0)
    if c_rho is not None:
        checks["I1_dprime_floor"] = _check(I1pp, c_rho * fint**3, kind="ge")
    swap = {"lhs": swap_lhs, "main": swap_main, "tail_dprime": tail1, "tail_prime": tail2,
            "rhs": swap_rhs, "substitution_error": subst_err,
            "rate_dprime": 2.0 ** (ell - ell_dprime), "rate_prime": 2.0 ** (ell_prime - ell)}
    metadata = {
        "regime": "s<l (r_j = lowest exponents)" if s < ell else "s>l (r_j = degrees, b = 0)",
        "r1_differs_from_r2": r1 != r2,
        "partition_resolved": partition_ok,
        "I1_dprime_ratio": I1pp / fint**3 if fint > 0 else None,
        "high_remainder_term": high_term,
        "low_pass_rate": 2.0 ** (k0 - ell_dprime),
        "shift_bound": shift_bound,
    }
    return CornerAudit(s, ell_prime, ell, ell_dprime, k0, smoothed, I1, I2, I3, I4, I1p, I1pp,
                       identity_error, {k: terms[k] for k in ks if k > k0}, tt.mass, tt.sign, vs, r1, r2,
                       A1, A2, swap, square_records, sigma_fit, checks, len(t), fint, metadata)
