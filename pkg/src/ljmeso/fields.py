"""Periodic grid fields and spectral operators.

The whole space is replaced by the torus ``[-L, L)^d`` sampled at nodes
``x_k = -L + k h`` with ``h = 2L/n``. With the transform convention
``f^(xi) = int f exp(-i xi.x) dx`` and ``xi`` in ``(pi/L) Z^d`` the heat
semigroup is exactly the multiplier ``exp(-t |xi|^2)``.

Fields are immutable: every operator returns a new object.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import fft as sfft
from scipy import integrate

from .kernel import LJParams, RadialKernelTable, eval_KN, force_profile, lj_force, sphere_area

__all__ = [
    "GridSpec", "ScalarField", "VectorField", "KernelSpectrum", "heat_propagate",
    "grad", "div", "laplacian", "duhamel_div_step", "bessel_apply", "norm_lp",
    "norm_intersection", "bessel_norm", "holder_seminorm_estimate",
    "convolve_kernel_field", "kernel_spectrum", "singular_moment_defect", "gaussian_density",
    "interpolate_periodic", "boundary_mass",
]

_WORKERS = -1


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid on ``[-L, L)^d`` with ``n`` points per axis."""

    d: int
    L: float
    n: int

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ValueError(f"grid dimension must be 2 or 3, got {self.d}")
        if self.n < 16 or self.n % 2:
            raise ValueError(f"n must be even and >= 16, got {self.n}")
        if not self.L > 0:
            raise ValueError("L must be positive")

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def cell_volume(self) -> float:
        return self.h ** self.d

    @cached_property
    def axis(self) -> np.ndarray:
        return -self.L + self.h * np.arange(self.n)

    def coords(self) -> tuple[np.ndarray, ...]:
        """Sparse coordinate arrays broadcastable to ``shape``."""
        return tuple(np.meshgrid(*([self.axis] * self.d), indexing="ij", sparse=True))

    def points(self) -> np.ndarray:
        """All nodes as an array ``(n**d, d)`` in row-major order."""
        mesh = np.meshgrid(*([self.axis] * self.d), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        """Sparse wavenumber arrays matching the half-spectrum of ``rfftn``."""
        full = 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.h)
        half = 2.0 * np.pi * np.fft.rfftfreq(self.n, d=self.h)
        axes = [full] * (self.d - 1) + [half]
        return tuple(np.meshgrid(*axes, indexing="ij", sparse=True))

    @cached_property
    def xi2(self) -> np.ndarray:
        return sum(k * k for k in self.wavenumbers)

    @cached_property
    def derivative_symbols(self) -> tuple[np.ndarray, ...]:
        """``i xi_j`` with the Nyquist mode of axis ``j`` removed (odd symbols)."""
        out = []
        for j, k in enumerate(self.wavenumbers):
            kk = k.copy()
            nyq = np.isclose(np.abs(kk), np.pi / self.h)
            kk[nyq] = 0.0
            out.append(1j * kk)
        return tuple(out)

    def derivative_symbols_full(self) -> list[np.ndarray]:
        """Derivative symbols broadcast to the full half-spectrum shape."""
        shape = np.broadcast_shapes(*(k.shape for k in self.wavenumbers))
        return [np.broadcast_to(s, shape) for s in self.derivative_symbols]

    @cached_property
    def displacements(self) -> tuple[np.ndarray, ...]:
        """Sparse node displacements in FFT order (minimum image)."""
        k = np.arange(self.n)
        z = self.h * np.where(k < self.n // 2, k, k - self.n)
        return tuple(np.meshgrid(*([z] * self.d), indexing="ij", sparse=True))


def _fwd(a: np.ndarray) -> np.ndarray:
    return sfft.rfftn(a, workers=_WORKERS)


def _inv(a: np.ndarray, grid: GridSpec) -> np.ndarray:
    return sfft.irfftn(a, s=grid.shape, workers=_WORKERS)


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError(f"values shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", v)

    def _new(self, values) -> "ScalarField":
        return ScalarField(self.grid, values)

    def __add__(self, other):
        return self._new(self.values + _vals(other))

    def __sub__(self, other):
        return self._new(self.values - _vals(other))

    def __mul__(self, other):
        return self._new(self.values * _vals(other))

    __rmul__ = __mul__

    def __neg__(self):
        return self._new(-self.values)

    def integral(self) -> float:
        return float(self.values.sum() * self.grid.cell_volume)

    def to_bytes(self) -> bytes:
        """Flat binary: little-endian header ``(d, n, L)`` then row-major float64 values."""
        g = self.grid
        return struct.pack("<iid", g.d, g.n, g.L) + self.values.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "ScalarField":
        d, n, L = struct.unpack_from("<iid", data)
        grid = GridSpec(d, L, n)
        vals = np.frombuffer(data, dtype="<f8", offset=struct.calcsize("<iid"))
        return cls(grid, vals.reshape(grid.shape).copy())

    def to_csv(self) -> str:
        """``x1,x2,value`` rows; two-dimensional fields only."""
        if self.grid.d != 2:
            raise ValueError("CSV export is defined for d = 2")
        buf = io.StringIO()
        buf.write("x1,x2,value\n")
        ax = self.grid.axis.tolist()
        for i, x in enumerate(ax):
            for j, y in enumerate(ax):
                buf.write(f"{x!r},{y!r},{float(self.values[i, j])!r}\n")
        return buf.getvalue()


@dataclass(frozen=True, eq=False)
class VectorField:
    grid: GridSpec
    components: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.components, dtype=float)
        if c.shape != (self.grid.d,) + self.grid.shape:
            raise ValueError(f"components shape {c.shape} does not match grid")
        if not np.all(np.isfinite(c)):
            raise ValueError("field components must be finite")
        object.__setattr__(self, "components", c)

    def __mul__(self, other):
        if isinstance(other, ScalarField):
            return VectorField(self.grid, self.components * other.values[None])
        return VectorField(self.grid, self.components * other)

    __rmul__ = __mul__

    def __sub__(self, other: "VectorField"):
        return VectorField(self.grid, self.components - other.components)

    def magnitude(self) -> ScalarField:
        return ScalarField(self.grid, np.sqrt(np.sum(self.components ** 2, axis=0)))


def _vals(x):
    return x.values if isinstance(x, ScalarField) else x


# ---------------------------------------------------------------------------
# spectral operators


def heat_propagate(f: ScalarField, t: float) -> ScalarField:
    """``exp(t Laplacian) f``."""
    if t < 0:
        raise ValueError("t must be >= 0")
    if t == 0:
        return f._new(f.values.copy())
    g = f.grid
    return f._new(_inv(_fwd(f.values) * np.exp(-t * g.xi2), g))


def grad(f: ScalarField) -> VectorField:
    g = f.grid
    fh = _fwd(f.values)
    return VectorField(g, np.stack([_inv(fh * s, g) for s in g.derivative_symbols]))


def div(F: VectorField) -> ScalarField:
    g = F.grid
    acc = sum(_fwd(c) * s for c, s in zip(F.components, g.derivative_symbols))
    return ScalarField(g, _inv(acc, g))


def laplacian(f: ScalarField) -> ScalarField:
    return f._new(_inv(-_fwd(f.values) * f.grid.xi2, f.grid))


def _duhamel_multiplier(grid: GridSpec, dt: float) -> np.ndarray:
    xi2 = grid.xi2
    with np.errstate(invalid="ignore", divide="ignore"):
        m = -np.expm1(-dt * xi2) / xi2
    m[xi2 == 0] = dt
    return m


def duhamel_div_step_hat(F: VectorField, dt: float, multiplier: np.ndarray | None = None) -> np.ndarray:
    g = F.grid
    m = _duhamel_multiplier(g, dt) if multiplier is None else multiplier
    return m * sum(_fwd(c) * s for c, s in zip(F.components, g.derivative_symbols))


def duhamel_div_step(F: VectorField, dt: float) -> ScalarField:
    """``int_0^dt div exp(s Laplacian) F ds``, exact for a frozen ``F``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    return ScalarField(F.grid, _inv(duhamel_div_step_hat(F, dt), F.grid))


def bessel_apply(f: ScalarField, beta: float) -> ScalarField:
    """``(I - Laplacian)**(beta/2) f``."""
    if not -2.0 <= beta <= 2.0:
        raise ValueError("beta must lie in [-2, 2]")
    if beta == 0:
        return f._new(f.values.copy())
    return f._new(_inv(_fwd(f.values) * (1.0 + f.grid.xi2) ** (beta / 2), f.grid))


# ---------------------------------------------------------------------------
# norms


def norm_lp(f: ScalarField | VectorField, p: float) -> float:
    """Riemann-sum ``L^p`` norm; vector fields use the pointwise Euclidean length."""
    v = f.magnitude().values if isinstance(f, VectorField) else np.abs(f.values)
    if math.isinf(p):
        return float(v.max())
    if p < 1:
        raise ValueError("p must be >= 1")
    vol = f.grid.cell_volume
    if p == 1:
        return float(v.sum() * vol)
    if p == 2:
        return float(math.sqrt(np.sum(v * v) * vol))
    top = v.max()
    if top == 0:
        return 0.0
    return float(top * (np.sum((v / top) ** p) * vol) ** (1.0 / p))


def norm_intersection(f: ScalarField, r: float) -> float:
    """``||f||_{L^1 cap L^r} = ||f||_1 + ||f||_r``."""
    return norm_lp(f, 1) + norm_lp(f, r)


def bessel_norm(f: ScalarField, beta: float, r: float) -> float:
    return norm_lp(bessel_apply(f, beta), r)


def holder_seminorm_estimate(f: ScalarField | VectorField, zeta: float, max_offset: int = 8) -> float:
    """Lower bound of ``sup |f(x) - f(y)| / |x - y|**zeta`` over node pairs.

    Pairs are restricted to offsets of at most ``max_offset`` cells and are
    never taken across the periodic wrap.
    """
    if not 0 < zeta <= 1:
        raise ValueError("zeta must lie in (0, 1]")
    vals = f.components if isinstance(f, VectorField) else f.values[None]
    g = f.grid
    n, d = g.n, g.d
    best = 0.0
    rng = range(-max_offset, max_offset + 1)
    for off in np.ndindex(*([len(rng)] * d)):
        o = np.array(off) - max_offset
        nz = o[o != 0]
        if nz.size == 0 or nz[0] < 0 or o @ o > max_offset ** 2:
            continue  # keep one of each +-o pair
        a = tuple(slice(max(0, -k), n - max(0, k)) for k in o)
        b = tuple(slice(max(0, k), n - max(0, -k)) for k in o)
        diff = vals[(slice(None),) + b] - vals[(slice(None),) + a]
        m = float(np.sqrt(np.max(np.sum(diff * diff, axis=0))))
        best = max(best, m / (g.h * math.sqrt(o @ o)) ** zeta)
    return best


# ---------------------------------------------------------------------------
# kernel convolution


@dataclass(frozen=True, eq=False)
class KernelSpectrum:
    """Half-spectra of the grid-sampled kernel components (times ``h**d``)."""

    grid: GridSpec
    spectra: np.ndarray


def kernel_spectrum(kernel: LJParams | RadialKernelTable, grid: GridSpec,
                    moment_correction: bool = True) -> KernelSpectrum:
    """Sample a kernel on minimum-image displacements and transform it.

    Exact kernels have the origin cell set to zero, and (unless
    ``moment_correction`` is off) the resulting first-moment defect is
    restored as a gradient term, see :func:`singular_moment_defect`. The
    plane ``z_j = -L`` is zeroed for component ``j`` so the sampled kernel
    stays odd on the torus.
    """
    params = kernel if isinstance(kernel, LJParams) else kernel.params
    if params.d != grid.d:
        raise ValueError("kernel and grid dimensions differ")
    z = np.stack(np.broadcast_arrays(*grid.displacements), axis=-1)
    if isinstance(kernel, LJParams):
        r2 = np.sum(z * z, axis=-1)
        z[r2 == 0] = 1.0  # placeholder, overwritten below
        K = np.moveaxis(lj_force(kernel, z), -1, 0)
        K[(slice(None),) + (0,) * grid.d] = 0.0
    else:
        K = np.moveaxis(eval_KN(kernel, z), -1, 0)
    half = grid.n // 2
    for j in range(grid.d):
        idx = [slice(None)] * grid.d
        idx[j] = half
        K[(j,) + tuple(idx)] = 0.0
    spectra = np.stack([_fwd(c) for c in K]) * grid.cell_volume
    if isinstance(kernel, LJParams) and moment_correction:
        delta = singular_moment_defect(kernel, grid)
        spectra = spectra - delta * np.stack(grid.derivative_symbols_full())
    return KernelSpectrum(grid, spectra)


def singular_moment_defect(params: LJParams, grid: GridSpec, taper_cells: float = 6.0) -> float:
    """Continuum minus lattice first moment of the exact kernel near its singularity.

    With ``u(x - z) = u(x) - z.grad u(x) + ...`` the only low-order error of
    the origin-zeroed Riemann sum is ``-(Delta I) grad u``, where ``Delta`` is
    the defect of the tapered isotropic moment ``(1/d) int k(|z|) |z| phi``,
    ``phi(s) = (1 - s**2)**4`` on ``s = |z|/R < 1``.
    """
    d, h = grid.d, grid.h
    R = taper_cells * h

    def phi(s):
        return np.where(s < 1.0, np.clip(1.0 - s * s, 0.0, None) ** 4, 0.0)

    cont, _ = integrate.quad(lambda r: float(force_profile(params, r)) * r ** d * phi(r / R),
                             0.0, R, limit=200, epsabs=0.0, epsrel=1e-12)
    cont *= sphere_area(d) / d
    m = int(math.ceil(taper_cells))
    ax = h * np.arange(-m, m + 1)
    mesh = np.meshgrid(*([ax] * d), indexing="ij")
    r = np.sqrt(sum(x * x for x in mesh)).ravel()
    r = r[r > 0]
    disc = float(np.sum(force_profile(params, r) * r * phi(r / R))) * h ** d / d
    return cont - disc


def convolve_kernel_field(kernel, f: ScalarField) -> VectorField:
    """``K * f`` on the grid by spectral (circular) convolution.

    ``kernel`` may be an :class:`LJParams` (exact force), a
    :class:`RadialKernelTable`, or a precomputed :class:`KernelSpectrum`.
    """
    spec = kernel if isinstance(kernel, KernelSpectrum) else kernel_spectrum(kernel, f.grid)
    if spec.grid != f.grid:
        raise ValueError("kernel spectrum built for another grid")
    fh = _fwd(f.values)
    return VectorField(f.grid, np.stack([_inv(s * fh, f.grid) for s in spec.spectra]))


# ---------------------------------------------------------------------------
# helpers


def gaussian_density(grid: GridSpec, variance: float, center=None) -> ScalarField:
    """Isotropic Gaussian renormalized to unit Riemann mass on the torus."""
    c = np.zeros(grid.d) if center is None else np.asarray(center, dtype=float)
    r2 = sum((x - cj) ** 2 for x, cj in zip(grid.coords(), c))
    v = np.exp(-r2 / (2.0 * variance)) * np.ones(grid.shape)
    return ScalarField(grid, v / (v.sum() * grid.cell_volume))


def boundary_mass(f: ScalarField, margin_fraction: float = 0.25) -> float:
    """Mass of ``|f|`` within ``margin_fraction * L`` of the torus boundary."""
    g = f.grid
    inner = (1.0 - margin_fraction) * g.L
    mask = np.zeros(g.shape, dtype=bool)
    for x in g.coords():
        mask |= np.abs(x) > inner
    return float(np.abs(f.values)[mask].sum() * g.cell_volume)


def interpolate_periodic(values: np.ndarray, grid: GridSpec, points: np.ndarray) -> np.ndarray:
    """Multilinear periodic interpolation of ``values`` (shape ``(..., *grid.shape)``).

    Returns an array ``(..., M)`` for ``M`` points ``(M, d)``.
    """
    points = np.asarray(points, dtype=float)
    u = (points + grid.L) / grid.h
    base = np.floor(u)
    frac = u - base
    base = base.astype(np.int64)
    lead = values.shape[: values.ndim - grid.d]
    out = np.zeros(lead + (points.shape[0],))
    for corner in np.ndindex(*([2] * grid.d)):
        idx = tuple((base[:, j] + corner[j]) % grid.n for j in range(grid.d))
        w = np.prod([frac[:, j] if corner[j] else 1.0 - frac[:, j] for j in range(grid.d)], axis=0)
        out += values[(Ellipsis,) + idx] * w
    return out
