"""The density-increment iteration: scale schedule, dichotomy steps and the telescoping budget."""

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import fft as sfft

from .counting import bourgain_step, lower_bound_lemma
from .errors import BudgetExceeded, PreconditionError, ScheduleError
from .gridfield import MIN_KERNEL_CELLS, bump_kit, frequency_radius, integral, l2_norm, tau
from .sets import random_density_set

TAU_SUP = float(np.max(tau(np.linspace(0.5, 2.0, 200001))))


def resolution_cap(kit, h):
    """Largest l whose mollifier support still spans MIN_KERNEL_CELLS cells."""
    return int(math.floor(math.log2(kit.support_radius / (MIN_KERNEL_CELLS * float(np.max(h))))))


@dataclass
class Schedule:
    epsilon: float
    C_base: float
    Gamma: int
    ells: list
    cap: int
    truncated: bool
    c: float = None
    C_rho: float = None
    K_cap: int = None

    def with_constants(self, c, C_rho):
        """Second pass: K = ceil(8 c^-2 C_rho eps^-4) + 1 from measured constants."""
        K = math.ceil(8.0 * C_rho / (c**2 * self.epsilon**4)) + 1
        return Schedule(self.epsilon, self.C_base, self.Gamma, list(self.ells), self.cap,
                        self.truncated, c, C_rho, K)

    def to_json(self):
        return asdict(self)


def make_schedule(epsilon, lattice, C_base=2.0, cap=None, h=None, n=None, min_len=3):
    """l_k = lattice-round(C_base^(k-1) log2(1/eps)), strictly increasing, up to the cap."""
    if not 0 < epsilon < 0.5:
        raise PreconditionError("epsilon must lie in (0, 1/2)")
    if cap is None:
        if h is None or n is None:
            raise ValueError("give either cap or (h, n)")
        cap = resolution_cap(bump_kit(n), h)
    base = math.log2(1.0 / epsilon)
    ells = []
    k = 0
    truncated = False
    while True:
        cand = lattice.round_ell(C_base**k * base)
        if ells and cand <= ells[-1]:
            cand = lattice.next_ell(ells[-1])
        if cand > cap:
            truncated = True
            break
        ells.append(cand)
        k += 1
        if k > 64:
            break
    if len(ells) < min_len:
        raise ScheduleError(f"only {len(ells)} admissible scales fit under the cap l <= {cap}")
    return Schedule(epsilon, C_base, lattice.Gamma, ells, cap, truncated)


def middle_scale(lattice, lo, hi, s=0):
    """Lattice scale strictly between lo and hi nearest to their midpoint.

    When the lattice has no point in between (consecutive odd multiples) and
    s = 0, the integer midpoint is used instead; the flag reports this.
    """
    mid = 0.5 * (lo + hi)
    cands = [v for v in range(lo + 1, hi) if lattice.is_ell(v)]
    if cands:
        return min(cands, key=lambda v: (abs(v - mid), v)), False
    if s == 0 and hi - lo >= 2:
        return int(math.floor(mid)), True
    raise ScheduleError(f"no admissible scale strictly between {lo} and {hi}")


# ---------------------------------------------------------------------------
# telescoping budget


def _spectrum(f, kit, ells):
    """|f^(xi)|^2 d(xi) weights and |xi| on a zero-padded DFT grid."""
    from .gridfield import kernel_radius_cells

    pad = kernel_radius_cells(kit, min(ells), f.h)
    shape = tuple(1 << int(m + 2 * p - 1).bit_length() for m, p in zip(f.dims, pad))
    spec = sfft.rfftn(f.values, shape)
    power = np.abs(spec) ** 2
    # rfft halves the last axis: interior columns stand for two frequencies
    mult = np.full(power.shape[-1], 2.0)
    mult[0] = 1.0
    if shape[-1] % 2 == 0:
        mult[-1] = 1.0
    power = power * mult * f.cell_volume**2 / float(np.prod(np.array(shape) * f.h))
    radius = np.broadcast_to(frequency_radius(shape, f.h), power.shape)
    return power, radius


def measured_C_rho(kit, ells, r_max=None, points=20000):
    """sup_r sum_k |rho^(2^-l_k r) - rho^(2^-l_{k+1} r)|^2 on a dense radial grid."""
    r_max = r_max or kit.q_max * 2.0 ** max(ells)
    r = np.concatenate([[0.0], np.geomspace(1e-4, r_max, points)])
    total = np.zeros_like(r)
    for a, b in zip(ells[:-1], ells[1:]):
        total += (kit.rho_hat(2.0**-a * r) - kit.rho_hat(2.0**-b * r)) ** 2
    return float(total.max())


@dataclass
class TelescopeAudit:
    ells: list
    squared_differences: list
    total: float
    J1: float
    J2: float
    J3: float
    J_bounds: dict
    C_rho_measured: float
    f_l2_sq: float
    checks: dict

    @property
    def ok(self):
        return all(v["ok"] for v in self.checks.values())

    def to_json(self):
        out = asdict(self)
        out["ok"] = self.ok
        return out


def telescope_audit(f, kit, ells):
    """sum_k ||f*rho_{l_{k+1}} - f*rho_{l_k}||^2 split by |xi| into J1 / J2 / J3."""
    ells = list(ells)
    if any(b <= a for a, b in zip(ells[:-1], ells[1:])):
        raise PreconditionError("ells must be strictly increasing")
    if kit.rho_hat_tail > 1e-12:
        raise PreconditionError("rho^ table does not decay to zero")
    power, radius = _spectrum(f, kit, ells)
    diffs, J = [], np.zeros(3)
    j3_decay = []
    for a, b in zip(ells[:-1], ells[1:]):
        w = (kit.rho_hat(2.0**-a * radius) - kit.rho_hat(2.0**-b * radius)) ** 2
        contrib = power * w
        lo = radius <= 2.0 ** (a / 2)
        hi = radius >= 2.0 ** (b / 2)
        mid = ~lo & ~hi
        parts = [float(contrib[lo].sum()), float(contrib[mid].sum()), float(contrib[hi].sum())]
        diffs.append(float(contrib.sum()))
        J += parts
        j3_decay.append(float(w[hi].max()) if np.any(hi) else 0.0)
    total = float(sum(diffs))
    f2 = float(power.sum())
    C_rho = measured_C_rho(kit, ells)
    qt, vt = kit._rho_hat_table
    rho_sup = float(np.max(np.abs(vt)))
    rho_osc = float(vt.max() - min(vt.min(), 0.0))
    bounds = {
        "J1": kit.grad_rho_hat_sup**2 * f2 * sum(2.0**-a for a in ells[:-1]),
        "J2_displayed": rho_sup**2 * f2,
        "J2_signed": rho_osc**2 * f2,
        "J3": sum(d * float(power[radius >= 2.0 ** (b / 2)].sum())
                  for d, b in zip(j3_decay, ells[1:])),
        "J3_decay_sup": j3_decay,
        "grad_rho_hat_sup": kit.grad_rho_hat_sup,
        "rho_hat_sup": rho_sup,
        "rho_hat_min": float(vt.min()),
    }
    rel = abs(J.sum() - total) / max(total, 1e-300)
    checks = {
        "split_reproduces_total": {"value": rel, "bound": 1e-8, "ok": bool(rel <= 1e-8)},
        "total_le_C_rho": {"value": total, "bound": C_rho * f2, "ok": total <= C_rho * f2 * (1 + 1e-9)},
        "J1": {"value": float(J[0]), "bound": bounds["J1"], "ok": bool(J[0] <= bounds["J1"] * (1 + 1e-9))},
        "J2_displayed": {"value": float(J[1]), "bound": bounds["J2_displayed"],
                         "ok": bool(J[1] <= bounds["J2_displayed"] * (1 + 1e-9))},
        "J3": {"value": float(J[2]), "bound": bounds["J3"], "ok": bool(J[2] <= bounds["J3"] * (1 + 1e-9) + 1e-300)},
    }
    return TelescopeAudit(ells, diffs, total, float(J[0]), float(J[1]), float(J[2]), bounds, C_rho,
                          f2, checks)


# ---------------------------------------------------------------------------
# lemma constant


def calibrate_c(n, dims, ks, count=20, density=0.2, seed=0, blob=4):
    """Smallest ratio int f (f*rho_k) / (int f)^2 over a seeded suite of random sets."""
    kit = bump_kit(n)
    worst = float("inf")
    records = []
    for i in range(count):
        f = random_density_set(dims, density, seed + i, blob)
        for k in ks:
            _, _, ratio = lower_bound_lemma(f, kit, k)
            records.append({"seed": seed + i, "k": k, "ratio": ratio})
            worst = min(worst, ratio)
    return worst, records


# ---------------------------------------------------------------------------
# the iteration


@dataclass
class IterationTrace:
    schedule: dict
    steps: list = field(default_factory=list)
    verdicts: list = field(default_factory=list)
    increments: list = field(default_factory=list)
    partial_sums: list = field(default_factory=list)
    k0: int = None
    delta: float = None
    statement: str = ""
    resolution_limited: bool = False
    increment_steps: int = 0
    increment_budget: float = None
    budget_ok: bool = True
    flags: list = field(default_factory=list)

    def to_json(self):
        return asdict(self)


def run_iteration(f, c, kit, schedule, lattice=None, s=0, lemma_bands=False):
    """Walk the schedule until the counting form is certified large.

    At step k, with (l', l, l'') = (l_k, middle scale, l_{k+1}):
      branch 1: I >= smoothed / (2^l ||tau||_inf) > 2^(-l''-1) c eps^2  -> stop, delta = threshold;
      branch 2: ||f*rho_l'' - f*rho_l'||_2 >= c eps^2 / 2               -> next step.
    """
    if schedule.c is None or schedule.C_rho is None:
        raise PreconditionError("schedule constants c and C_rho are not set")
    kit = kit or bump_kit(f.n)
    eps = schedule.epsilon
    if integral(f) < eps * (1 - 1e-12):
        raise PreconditionError(f"int f = {integral(f):.4g} < epsilon = {eps}")
    if np.any(f.values < 0) or np.any(f.values > 1):
        raise PreconditionError("f must satisfy 0 <= f <= 1")
    cc = schedule.c
    f2 = l2_norm(f) ** 2
    trace = IterationTrace(schedule=schedule.to_json())
    trace.increment_budget = schedule.C_rho * f2 / (cc * eps**2 / 2) ** 2
    running = 0.0
    ells = schedule.ells
    for k in range(1, len(ells)):
        lo, hi = ells[k - 1], ells[k]
        mid, deviated = middle_scale(lattice, lo, hi, s) if lattice else (int((lo + hi) // 2), True)
        if deviated:
            trace.flags.append(f"step {k}: middle scale {mid} is off the lattice")
        audit = bourgain_step(f, c, kit, lo, mid, hi, s=s, c_lemma=cc, lemma_bands=lemma_bands)
        threshold = 2.0 ** (-hi - 1) * cc * eps**2
        lower = audit.smoothed / (2.0**mid * TAU_SUP)
        increment = audit.bound_I2
        running += increment**2
        trace.steps.append(audit.to_json())
        trace.increments.append(increment)
        trace.partial_sums.append(running)
        verdict = {"k": k, "scales": [lo, mid, hi], "I_lower": lower, "threshold": threshold,
                   "increment": increment, "increment_threshold": cc * eps**2 / 2}
        if lower > threshold:
            verdict["branch"] = "counting"
            trace.verdicts.append(verdict)
            trace.k0 = k
            trace.delta = threshold
            trace.statement = (f"I > 2^(-{hi}-1) * c * eps^2 = {threshold:.6g} "
                               f"(tau-smoothed at l = {mid}, c = {cc:.6g})")
            trace.resolution_limited = schedule.truncated and k == len(ells) - 1
            trace.budget_ok = trace.increment_steps <= trace.increment_budget
            return trace
        if increment >= cc * eps**2 / 2:
            verdict["branch"] = "increment"
            trace.verdicts.append(verdict)
            trace.increment_steps += 1
            if trace.increment_steps > schedule.K_cap:
                raise BudgetExceeded("more increment steps than K", trace=trace)
            continue
        verdict["branch"] = "neither"
        trace.verdicts.append(verdict)
        raise BudgetExceeded(f"step {k}: neither branch certifiable", trace=trace)
    trace.resolution_limited = True
    raise BudgetExceeded("schedule exhausted at the resolution cap before termination", trace=trace)
