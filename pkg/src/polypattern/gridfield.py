"""Grid-sampled functions on boxes, the bump kit, mollifiers and band projections.

A :class:`GridFunction` stores cell-centred samples of a function on an
axis-aligned box and is implicitly zero outside it.  Grids that share a cell
size and whose lower corners differ by whole cells are *aligned*; binary
operations require alignment.
"""

import functools
import json
import math
import os
import tempfile
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import fft as sfft
from scipy import integrate, special

from .errors import DimensionError, NyquistError, ResolutionError

MIN_KERNEL_CELLS = 4


def smooth_step(x):
    """C-infinity step: 0 for x <= 0, 1 for x >= 1, S(x) + S(1 - x) = 1."""
    x = np.asarray(x, dtype=float)
    a = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
    y = 1.0 - x
    b = np.where(y > 0, np.exp(-1.0 / np.where(y > 0, y, 1.0)), 0.0)
    return a / (a + b)


@dataclass(frozen=True)
class GridFunction:
    values: np.ndarray
    box: tuple
    density: bool = False

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        box = tuple((float(lo), float(hi)) for lo, hi in self.box)
        if values.ndim != len(box):
            raise DimensionError(f"{values.ndim}-D values on a {len(box)}-D box")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "box", box)

    @classmethod
    def from_function(cls, fn, box, dims, density=False):
        axes = [lo + (np.arange(m) + 0.5) * (hi - lo) / m for (lo, hi), m in zip(box, dims)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return cls(np.asarray(fn(*mesh), dtype=float) * np.ones(tuple(dims)), box, density)

    @classmethod
    def zeros(cls, box, dims):
        return cls(np.zeros(tuple(dims)), box)

    @property
    def n(self):
        return self.values.ndim

    @property
    def dims(self):
        return self.values.shape

    @property
    def h(self):
        return np.array([(hi - lo) / m for (lo, hi), m in zip(self.box, self.dims)])

    @property
    def cell_volume(self):
        return float(np.prod(self.h))

    @property
    def lower(self):
        return np.array([lo for lo, _ in self.box])

    def axis(self, i):
        lo, hi = self.box[i]
        return lo + (np.arange(self.dims[i]) + 0.5) * self.h[i]

    def mesh(self):
        return np.meshgrid(*[self.axis(i) for i in range(self.n)], indexing="ij")

    def with_values(self, values, density=False):
        return GridFunction(values, self.box, density)


def integral(f):
    return float(np.sum(f.values) * f.cell_volume)


def l2_norm(f):
    return float(math.sqrt(np.sum(f.values**2) * f.cell_volume))


def _offset(g, f):
    """Whole-cell offset of g's lower corner relative to f's."""
    if not np.allclose(g.h, f.h, rtol=1e-9, atol=0):
        raise DimensionError("grids have different cell sizes")
    raw = (g.lower - f.lower) / f.h
    off = np.round(raw).astype(int)
    if not np.allclose(raw, off, atol=1e-6):
        raise DimensionError("grids are not aligned")
    return off


def embed(f, box):
    """Place f on an aligned grid covering ``box`` (zero fill, crop if smaller)."""
    box = tuple((float(lo), float(hi)) for lo, hi in box)
    dims = tuple(int(round((hi - lo) / hh)) for (lo, hi), hh in zip(box, f.h))
    target = GridFunction(np.zeros(dims), box)
    off = _offset(f, target)
    out = np.zeros(dims)
    src, dst = [], []
    for i in range(f.n):
        a = max(0, off[i])
        b = min(dims[i], off[i] + f.dims[i])
        if b <= a:
            return target
        dst.append(slice(a, b))
        src.append(slice(a - off[i], b - off[i]))
    out[tuple(dst)] = f.values[tuple(src)]
    return GridFunction(out, box, f.density)


def expand_box(f, cells):
    """Box of f enlarged by ``cells[i]`` whole cells on each side of axis i."""
    cells = np.broadcast_to(np.asarray(cells, dtype=int), (f.n,))
    return tuple((lo - c * hh, hi + c * hh) for (lo, hi), c, hh in zip(f.box, cells, f.h))


def inner(f, g):
    """Integral of f*g over the overlap of two aligned grids."""
    off = _offset(g, f)
    fs, gs = [], []
    for i in range(f.n):
        a = max(0, off[i])
        b = min(f.dims[i], off[i] + g.dims[i])
        if b <= a:
            return 0.0
        fs.append(slice(a, b))
        gs.append(slice(a - off[i], b - off[i]))
    return float(np.sum(f.values[tuple(fs)] * g.values[tuple(gs)]) * f.cell_volume)


def subtract(f, g):
    """f - g on f's box (g aligned, zero outside its own box)."""
    return f.with_values(f.values - embed(g, f.box).values)


def clamp(f, lo=0.0, hi=1.0):
    return f.with_values(np.clip(f.values, lo, hi), density=True)


# ---------------------------------------------------------------------------
# shifting with multilinear interpolation


def _int_shift(a, k, axis, periodic):
    """b[j] = a[j + k] along ``axis`` (zero fill unless periodic)."""
    if periodic:
        return np.roll(a, -k, axis=axis)
    out = np.zeros_like(a)
    m = a.shape[axis]
    if abs(k) >= m:
        return out
    dst = [slice(None)] * a.ndim
    src = [slice(None)] * a.ndim
    if k >= 0:
        dst[axis] = slice(0, m - k)
        src[axis] = slice(k, m)
    else:
        dst[axis] = slice(-k, m)
        src[axis] = slice(0, m + k)
    out[tuple(dst)] = a[tuple(src)]
    return out


def shift_values(a, disp, periodic=False, transpose=False):
    """Sample a at j + disp (in cells) by multilinear interpolation.

    With ``transpose=True`` the adjoint (splatting) operator is applied
    instead, so that ``sum(b * shift_values(a, d)) == sum(shift_values(b, d, transpose=True) * a)``.
    """
    out = a
    for axis, dv in enumerate(np.broadcast_to(np.asarray(disp, dtype=float), (a.ndim,))):
        if dv == 0.0:
            continue
        k = math.floor(dv)
        theta = dv - k
        if transpose:
            nxt = (1.0 - theta) * _int_shift(out, -k, axis, periodic)
            if theta > 0:
                nxt = nxt + theta * _int_shift(out, -k - 1, axis, periodic)
        else:
            nxt = (1.0 - theta) * _int_shift(out, k, axis, periodic)
            if theta > 0:
                nxt = nxt + theta * _int_shift(out, k + 1, axis, periodic)
        out = nxt
    return out


# ---------------------------------------------------------------------------
# bump kit


def _tau_raw(u):
    u = np.asarray(u, dtype=float)
    inside = (u > 0.5) & (u < 2.0)
    uu = np.where(inside, u, 1.0)
    return np.where(inside, np.exp(-1.0 / ((uu - 0.5) * (2.0 - uu))), 0.0)


_TAU_MASS = integrate.quad(_tau_raw, 0.5, 2.0, epsabs=1e-14, epsrel=1e-12, limit=200)[0]


def tau(u):
    """Smooth bump on [1/2, 2] with unit integral."""
    return _tau_raw(u) / _TAU_MASS


def tau_derivative(u):
    u = np.asarray(u, dtype=float)
    inside = (u > 0.5) & (u < 2.0)
    uu = np.where(inside, u, 1.0)
    q = (uu - 0.5) * (2.0 - uu)
    dq = 2.5 - 2.0 * uu
    return np.where(inside, tau(uu) * dq / q**2, 0.0)


def tau_ell(t, ell):
    return 2.0**ell * tau(2.0**ell * np.asarray(t, dtype=float))


def psi(r):
    """Equal to 1 on [1, 2], vanishing outside (1/2, 4)."""
    r = np.asarray(r, dtype=float)
    return smooth_step(2.0 * (r - 0.5)) * smooth_step((4.0 - r) / 2.0)


def tau_nodes(count):
    """Midpoint nodes and weights for integrals against tau over [1/2, 2]."""
    du = 1.5 / count
    u = 0.5 + (np.arange(count) + 0.5) * du
    return u, tau(u) * du


@dataclass(frozen=True)
class BumpKit:
    """The radial mollifier rho on R^n together with tau and psi.

    rho(x) = C * S((R1 - |x|) / (R1 - R0)) with R0 = sqrt(n) + 1/2 and
    R1 = sqrt(n) + 3/2, so rho is constant on the ball of radius R0, which
    contains [-1, 1]^n.  C normalises the integral to one.
    """

    n: int
    q_max: float = 64.0
    q_points: int = 4097
    r0: float = field(init=False)
    r1: float = field(init=False)
    plateau: float = field(init=False)
    grad_l1: float = field(init=False)

    def __post_init__(self):
        r0 = math.sqrt(self.n) + 0.5
        r1 = r0 + 1.0
        object.__setattr__(self, "r0", r0)
        object.__setattr__(self, "r1", r1)
        area = 2 * math.pi ** (self.n / 2) / math.gamma(self.n / 2)
        raw = integrate.quad(lambda r: self._profile_raw(r) * r ** (self.n - 1), 0, r1,
                             epsabs=1e-14, epsrel=1e-12, limit=200, points=[r0])[0]
        plateau = 1.0 / (area * raw)
        object.__setattr__(self, "plateau", plateau)
        grad = integrate.quad(lambda r: abs(self._profile_raw_deriv(r)) * r ** (self.n - 1), r0, r1,
                              epsabs=1e-14, epsrel=1e-10, limit=200)[0]
        object.__setattr__(self, "grad_l1", area * plateau * grad)

    def _profile_raw(self, r):
        return smooth_step((self.r1 - np.asarray(r, dtype=float)) / (self.r1 - self.r0))

    def _profile_raw_deriv(self, r, eps=1e-6):
        return (self._profile_raw(r + eps) - self._profile_raw(r - eps)) / (2 * eps)

    @property
    def support_radius(self):
        return self.r1

    def rho(self, x):
        """rho evaluated at points of shape (..., n)."""
        r = np.linalg.norm(np.asarray(x, dtype=float), axis=-1)
        return self.plateau * self._profile_raw(r)

    def rho_radial(self, r):
        return self.plateau * self._profile_raw(r)

    def rho_ell(self, x, ell):
        return 2.0 ** (self.n * ell) * self.rho(2.0**ell * np.asarray(x, dtype=float))

    @functools.cached_property
    def _rho_hat_table(self):
        q = np.linspace(0.0, self.q_max, self.q_points)
        nodes, weights = np.polynomial.legendre.leggauss(1600)
        r = 0.5 * self.r1 * (nodes + 1.0)
        w = 0.5 * self.r1 * weights * self.rho_radial(r)
        n = self.n
        arg = 2 * np.pi * np.outer(q, r)
        if n == 1:
            vals = 2.0 * np.cos(arg) @ w
        elif n == 3:
            with np.errstate(invalid="ignore", divide="ignore"):
                kern = np.where(arg > 0, np.sin(arg) / np.where(arg > 0, arg, 1.0), 1.0)
            vals = 4 * np.pi * (kern * r**2) @ w
        else:
            nu = n / 2 - 1
            with np.errstate(invalid="ignore", divide="ignore"):
                kern = special.jv(nu, arg) / np.where(arg > 0, arg, 1.0) ** nu
            kern[:, 0] = 1.0 / (2**nu * math.gamma(nu + 1))
            kern[q == 0] = 1.0 / (2**nu * math.gamma(nu + 1))
            vals = (2 * np.pi) ** (nu + 1) * (kern * r ** (n - 1)) @ w
        return q, vals

    def rho_hat(self, q):
        """Radial Fourier transform of rho at frequency radius q (cycles per unit)."""
        qt, vt = self._rho_hat_table
        q = np.abs(np.asarray(q, dtype=float))
        return np.where(q <= self.q_max, np.interp(q, qt, vt), 0.0)

    @property
    def rho_hat_tail(self):
        """|rho_hat| at the end of the table (treated as zero beyond)."""
        return float(abs(self._rho_hat_table[1][-1]))

    @property
    def grad_rho_hat_sup(self):
        qt, vt = self._rho_hat_table
        return float(np.max(np.abs(np.gradient(vt, qt))))

    def metadata(self):
        return {
            "n": self.n,
            "rho_plateau_radius": self.r0,
            "rho_support_radius": self.r1,
            "rho_plateau_value": self.plateau,
            "rho_grad_l1": self.grad_l1,
            "tau_support": [0.5, 2.0],
            "psi_plateau": [1.0, 2.0],
            "psi_support": [0.5, 4.0],
        }


@functools.lru_cache(maxsize=8)
def bump_kit(n):
    return BumpKit(n)


# ---------------------------------------------------------------------------
# mollification


def kernel_radius_cells(kit, ell, h):
    return np.ceil(kit.support_radius * 2.0**-ell / np.asarray(h) - 1e-9).astype(int)


def check_resolvable(kit, ell, h):
    cells = kit.support_radius * 2.0**-ell / np.asarray(h)
    if np.any(cells < MIN_KERNEL_CELLS):
        raise ResolutionError(
            f"rho_{ell} has support radius {np.min(cells):.2f} cells (< {MIN_KERNEL_CELLS})"
        )


def kernel_samples(kit, ell, h):
    """rho_ell sampled at whole-cell offsets, normalised to unit discrete mass."""
    h = np.asarray(h, dtype=float)
    rad = kernel_radius_cells(kit, ell, h)
    axes = [np.arange(-r, r + 1) * hh for r, hh in zip(rad, h)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    k = kit.rho_ell(mesh, ell)
    return k / (k.sum() * np.prod(h))


def _next_pow2(m):
    return 1 << (int(m) - 1).bit_length()


@functools.lru_cache(maxsize=32)
def _kernel_spectrum(n, ell, h, shape):
    kit = bump_kit(n)
    k = kernel_samples(kit, ell, np.array(h))
    rad = (np.array(k.shape) - 1) // 2
    placed = np.zeros(shape)
    idx = np.ix_(*[np.arange(-r, r + 1) % m for r, m in zip(rad, shape)])
    placed[idx] = k
    return sfft.rfftn(placed)


def fft_convolve(values, kernel, h):
    """Full linear convolution (times cell volume) of values with a centred kernel."""
    rad = (np.array(kernel.shape) - 1) // 2
    shape = tuple(_next_pow2(m + 2 * r) for m, r in zip(values.shape, rad))
    placed = np.zeros(shape)
    idx = np.ix_(*[np.arange(-r, r + 1) % m for r, m in zip(rad, shape)])
    placed[idx] = kernel
    spec = sfft.rfftn(values, shape) * sfft.rfftn(placed)
    full = sfft.irfftn(spec, shape)
    full = np.roll(full, tuple(rad), axis=tuple(range(values.ndim)))
    crop = tuple(slice(0, m + 2 * r) for m, r in zip(values.shape, rad))
    return full[crop] * float(np.prod(h))


def mollify(f, kit, ell, extend=True):
    """f * rho_ell through a zero-padded FFT.

    With ``extend`` the result lives on f's box enlarged by the kernel radius,
    so no mass is lost; otherwise it is cropped back to f's box.
    """
    if kit.n != f.n:
        raise DimensionError("kit dimension does not match the grid")
    check_resolvable(kit, ell, f.h)
    rad = kernel_radius_cells(kit, ell, f.h)
    shape = tuple(_next_pow2(m + 2 * r) for m, r in zip(f.dims, rad))
    spec = sfft.rfftn(f.values, shape) * _kernel_spectrum(f.n, ell, tuple(f.h), shape)
    full = sfft.irfftn(spec, shape)
    full = np.roll(full, tuple(rad), axis=tuple(range(f.n)))
    vol = f.cell_volume
    if extend:
        crop = tuple(slice(0, m + 2 * r) for m, r in zip(f.dims, rad))
        return GridFunction(full[crop] * vol, expand_box(f, rad))
    crop = tuple(slice(r, r + m) for m, r in zip(f.dims, rad))
    return GridFunction(full[crop] * vol, f.box)


def direct_convolve(f, kernel):
    """Spatial (non-FFT) convolution on the enlarged box; reference implementation."""
    from scipy.signal import convolve

    rad = (np.array(kernel.shape) - 1) // 2
    out = convolve(f.values, kernel, mode="full", method="direct") * f.cell_volume
    return GridFunction(out, expand_box(f, rad))


def partial_convolve(f, kernel, axis, extend=False):
    """Convolve a 2-D grid function along one axis (1 or 2) with a centred 1-D kernel.

    ``kernel`` holds samples at whole-cell offsets along that axis; the
    discrete unit mass is ``kernel = [1 / h]``.
    """
    if f.n != 2:
        raise DimensionError("partial convolution needs a 2-D grid function")
    if axis not in (1, 2):
        raise DimensionError("axis must be 1 or 2")
    kernel = np.asarray(kernel, dtype=float)
    if kernel.ndim != 1 or kernel.size % 2 == 0:
        raise ValueError("kernel must be 1-D with odd length")
    ax = axis - 1
    r = (kernel.size - 1) // 2
    m = f.dims[ax]
    size = _next_pow2(m + 2 * r)
    placed = np.zeros(size)
    placed[np.arange(-r, r + 1) % size] = kernel
    spec = sfft.rfft(f.values, size, axis=ax) * np.expand_dims(sfft.rfft(placed), 1 - ax)
    full = np.roll(sfft.irfft(spec, size, axis=ax), r, axis=ax) * f.h[ax]
    cells = [0, 0]
    cells[ax] = r
    if extend:
        sl = [slice(None), slice(None)]
        sl[ax] = slice(0, m + 2 * r)
        return GridFunction(full[tuple(sl)], expand_box(f, cells))
    sl = [slice(None), slice(None)]
    sl[ax] = slice(r, r + m)
    return GridFunction(full[tuple(sl)], f.box)


def rho_1d_kernel(scale, h, kit=None):
    """1-D kernel samples of scale**-1 * rho(x / scale) at spacing h, unit discrete mass."""
    kit = kit or bump_kit(1)
    r = int(math.ceil(kit.support_radius * scale / h - 1e-9))
    x = np.arange(-r, r + 1) * h
    k = kit.rho_radial(np.abs(x) / scale) / scale
    if k.sum() <= 0:
        raise ResolutionError(f"1-D kernel at scale {scale:g} is below the grid spacing {h:g}")
    return k / (k.sum() * h)


def displacement_constant(kit):
    """C with ||f*rho_l(. + v) - f*rho_l||_inf <= C 2**l |v| ||f||_inf (C = ||grad rho||_1)."""
    return kit.grad_l1


# ---------------------------------------------------------------------------
# Littlewood-Paley bands


@dataclass(frozen=True)
class BandDecomposition:
    k0: int
    low: GridFunction
    bands: dict
    high: GridFunction

    def parts(self):
        return [self.low, *self.bands.values(), self.high]

    def reconstruct(self):
        total = self.low.values.copy()
        for part in [*self.bands.values(), self.high]:
            total += part.values
        return self.low.with_values(total)


def frequency_radius(dims, h, real=True):
    """|xi| (cycles per unit) on the (r)fft grid of the given shape."""
    freqs = [np.fft.fftfreq(m, d=hh) for m, hh in zip(dims, h)]
    if real:
        freqs[-1] = np.fft.rfftfreq(dims[-1], d=h[-1])
    mesh = np.meshgrid(*freqs, indexing="ij", sparse=True)
    return np.sqrt(sum(m**2 for m in mesh))


def _axis_frequency(f, axis):
    """|eta| along one axis (1-based), broadcast on the rfft grid of f."""
    ax = axis - 1
    m = f.dims[ax]
    if ax == f.n - 1:
        eta = np.fft.rfftfreq(m, d=f.h[ax])
    else:
        eta = np.abs(np.fft.fftfreq(m, d=f.h[ax]))
    shape = [1] * f.n
    shape[ax] = eta.size
    return eta.reshape(shape)


def band_project(f, k0, kmax, axis=None):
    """Sharp dyadic frequency split of f (periodic DFT on f's own box).

    low: |xi| < 2**(k0+1); band k (k0 < k <= kmax): 2**k <= |xi| < 2**(k+1);
    high: |xi| >= 2**(kmax+1).  With ``axis`` (1-based) only the frequency
    along that axis is used, giving the partial projections S^(j), Delta^(j).
    """
    radius = frequency_radius(f.dims, f.h) if axis is None else _axis_frequency(f, axis)
    radius = np.broadcast_to(radius, frequency_radius(f.dims, f.h).shape)
    spec = sfft.rfftn(f.values)

    def part(mask):
        return f.with_values(sfft.irfftn(np.where(mask, spec, 0.0), f.dims))

    top = radius.max()
    if kmax > k0 and not np.any((radius >= 2.0**kmax) & (radius < 2.0 ** (kmax + 1))):
        raise NyquistError(f"band {kmax} holds no discrete frequency (max |xi| = {top:.1f})")
    bands = {}
    for k in range(k0 + 1, kmax + 1):
        bands[k] = part((radius >= 2.0**k) & (radius < 2.0 ** (k + 1)))
    low = part(radius < 2.0 ** (k0 + 1))
    high = part(radius >= 2.0 ** (max(kmax, k0) + 1))
    return BandDecomposition(k0=k0, low=low, bands=bands, high=high)


def max_band(f, axis=None):
    """Largest k whose dyadic annulus contains a discrete frequency of f's grid."""
    radius = frequency_radius(f.dims, f.h) if axis is None else _axis_frequency(f, axis)
    return int(math.floor(math.log2(radius.max())))


# ---------------------------------------------------------------------------
# binary grid files


def _sidecar(path):
    root, _ = os.path.splitext(str(path))
    return root + ".json"


def _atomic_write(path, data, mode="wb"):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_grid(path, f, extra=None):
    meta = {
        "n": f.n,
        "dims": list(f.dims),
        "box": [list(b) for b in f.box],
        "dtype": "f64-le",
        "order": "row-major",
    }
    if extra:
        meta.update(extra)
    _atomic_write(str(path), np.ascontiguousarray(f.values, dtype="<f8").tobytes())
    _atomic_write(_sidecar(path), json.dumps(meta, indent=2, sort_keys=True), mode="w")


def read_grid(path):
    with open(_sidecar(path)) as fh:
        meta = json.load(fh)
    if meta.get("dtype") != "f64-le" or meta.get("order") != "row-major":
        raise ValueError("unsupported grid encoding")
    dims = tuple(meta["dims"])
    raw = np.fromfile(str(path), dtype="<f8")
    if raw.size != int(np.prod(dims)):
        raise ValueError(f"payload holds {raw.size} values, expected {int(np.prod(dims))}")
    values = raw.reshape(dims)
    density = bool(np.all((values >= 0) & (values <= 1)))
    return GridFunction(values, tuple(tuple(b) for b in meta["box"]), density)


# ---------------------------------------------------------------------------
# weighted sums of shifted copies (the inner loop of every t-quadrature)


@numba.njit(cache=True)
def _acc_1d(a, disps, weights, periodic, transpose):
    m = a.shape[0]
    out = np.zeros(m)
    for q in range(disps.shape[0]):
        d = disps[q, 0]
        k = int(math.floor(d))
        th = d - k
        w = weights[q]
        for i in range(m):
            for e in range(2):
                c = (1.0 - th) if e == 0 else th
                if c == 0.0:
                    continue
                j = i + k + e if not transpose else i - k - e
                if periodic:
                    j %= m
                elif j < 0 or j >= m:
                    continue
                out[i] += w * c * a[j]
    return out


@numba.njit(cache=True)
def _acc_2d(a, disps, weights, periodic, transpose):
    m0, m1 = a.shape
    out = np.zeros((m0, m1))
    col0 = np.empty(m1, dtype=np.int64)
    col1 = np.empty(m1, dtype=np.int64)
    s = -1 if transpose else 1
    for q in range(disps.shape[0]):
        w = weights[q]
        k0 = int(math.floor(disps[q, 0]))
        k1 = int(math.floor(disps[q, 1]))
        t0 = disps[q, 0] - k0
        t1 = disps[q, 1] - k1
        if transpose:
            # adjoint of sampling at j + k + theta: gathers from i - k - 1 + (1 - theta)
            k0, t0 = -k0 - 1, 1.0 - t0
            k1, t1 = -k1 - 1, 1.0 - t1
            if t0 == 1.0:
                k0, t0 = k0 + 1, 0.0
            if t1 == 1.0:
                k1, t1 = k1 + 1, 0.0
        # column indices (-1 marks zero fill)
        for j in range(m1):
            for e in range(2):
                jj = j + k1 + e
                if periodic:
                    jj %= m1
                elif jj < 0 or jj >= m1:
                    jj = -1
                if e == 0:
                    col0[j] = jj
                else:
                    col1[j] = jj
        for i in range(m0):
            r0 = i + k0
            r1 = r0 + 1
            if periodic:
                r0 %= m0
                r1 %= m0
            else:
                if r0 < 0 or r0 >= m0:
                    r0 = -1
                if r1 < 0 or r1 >= m0:
                    r1 = -1
            c00 = w * (1.0 - t0) * (1.0 - t1)
            c01 = w * (1.0 - t0) * t1
            c10 = w * t0 * (1.0 - t1)
            c11 = w * t0 * t1
            for j in range(m1):
                acc = 0.0
                a0 = col0[j]
                a1 = col1[j]
                if r0 >= 0:
                    if a0 >= 0:
                        acc += c00 * a[r0, a0]
                    if a1 >= 0:
                        acc += c01 * a[r0, a1]
                if r1 >= 0:
                    if a0 >= 0:
                        acc += c10 * a[r1, a0]
                    if a1 >= 0:
                        acc += c11 * a[r1, a1]
                out[i, j] += acc
    return out


def accumulate_shifts(a, disps, weights, periodic=False, transpose=False):
    """sum_q weights[q] * shift_values(a, disps[q]) (or its adjoint), in cells."""
    a = np.ascontiguousarray(a, dtype=float)
    disps = np.ascontiguousarray(np.atleast_2d(disps), dtype=float)
    weights = np.ascontiguousarray(weights, dtype=float)
    if disps.shape[1] != a.ndim:
        raise DimensionError("displacement dimension does not match the array")
    if a.ndim == 1:
        return _acc_1d(a, disps, weights, periodic, transpose)
    if a.ndim == 2:
        return _acc_2d(a, disps, weights, periodic, transpose)
    out = np.zeros_like(a)
    for d, w in zip(disps, weights):
        out += w * shift_values(a, d, periodic=periodic, transpose=transpose)
    return out
