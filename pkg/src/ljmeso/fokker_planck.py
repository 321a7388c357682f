"""Mild solutions of the nonlocal Fokker-Planck equation

    du/dt = Laplacian u - div(u (K * u)),   u(0) = u0,

written in Duhamel form ``u(t) = exp(t Lap) u0 - B(u, u)(t)`` with

    B(u, v)(t) = int_0^t div exp((t-s) Lap) (u(s) (K * v(s))) ds.

Two solvers share one discretization (integrand frozen on each step,
semigroup integrated exactly): a time-marching exponential integrator and
a Picard iteration on the whole time grid whose successive differences
witness the contraction of the fixed-point map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import HypothesisViolation, NumericalAbort
from .fields import (GridSpec, KernelSpectrum, ScalarField, _duhamel_multiplier, _fwd, _inv,
                     bessel_norm, boundary_mass, kernel_spectrum, norm_intersection)
from .kernel import KernelConstants, LJParams, conjugate

__all__ = [
    "PDEConfig", "ExistenceReport", "PDESolution", "InitialDataError", "HorizonError",
    "ContractionError", "existence_horizon_check", "bilinear_B", "bilinear_B_series",
    "picard_solve", "mild_march", "bessel_regularity_report",
]


class InitialDataError(ValueError):
    """``u0`` is not a probability density on the grid."""


class HorizonError(HypothesisViolation):
    """The requested horizon lies outside the existence regime."""

    def __init__(self, report: "ExistenceReport"):
        super().__init__(
            f"C_T,u0 = {report.C_T_u0:.6g} is outside [0, 1); "
            f"largest admissible horizon is about {report.T_max_estimate:.6g}")
        self.report = report


class ContractionError(NumericalAbort):
    def __init__(self, iteration: int, ratio: float):
        super().__init__(f"Picard difference ratio {ratio:.6g} >= 1 at iteration {iteration}")
        self.iteration = iteration
        self.ratio = ratio


@dataclass(frozen=True)
class PDEConfig:
    """Discretization and exponents of one PDE solve.

    ``T`` must be an integer multiple of ``dt``; ``r >= p'`` is required.
    """

    params: LJParams
    grid: GridSpec
    T: float
    dt: float
    r: float
    p: float
    beta: float = 0.0
    q: float = math.inf
    snapshot_stride: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.T > 0:
            raise ValueError("T must be positive")
        steps = self.T / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ValueError(f"T = {self.T} is not an integer multiple of dt = {self.dt}")
        if self.r < conjugate(self.p):
            raise HypothesisViolation(
                f"r = {self.r} < p' = {conjugate(self.p):.6g}: the existence theorem needs r >= p'")
        if self.params.d != self.grid.d:
            raise ValueError("kernel and grid dimensions differ")
        if self.snapshot_stride < 1:
            raise ValueError("snapshot_stride must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))


@dataclass(frozen=True)
class ExistenceReport:
    C_T_u0: float
    horizon_ok: bool
    solution_bound: float
    T_max_estimate: float
    u0_norm: float
    degenerate: bool
    kernel_off: bool


def existence_horizon_check(u0: ScalarField, constants: KernelConstants, r: float,
                            T: float) -> ExistenceReport:
    """Closed-form existence condition and a priori bound.

    ``C = 1 - 4 C_DeltaKpq sqrt(T) ||u0||`` must lie in ``[0, 1)``; then
    ``||u|| <= (1 - sqrt(C)) / (2 C_DeltaKpq sqrt(T))``. With the kernel
    switched off the equation is the heat equation and every horizon is
    admissible, with bound ``||u0||``.
    """
    mass = u0.integral()
    if np.min(u0.values) < -1e-12 * np.max(np.abs(u0.values)):
        raise InitialDataError("u0 takes negative values")
    if abs(mass - 1.0) > 1e-6:
        raise InitialDataError(f"u0 has mass {mass!r}, expected 1")
    if T < 0:
        raise ValueError("T must be >= 0")
    norm = norm_intersection(u0, r)
    c = constants.C_DeltaKpq
    if c == 0:
        return ExistenceReport(1.0, T > 0, norm, math.inf, norm, T == 0, True)
    C_T = 1.0 - 4.0 * c * math.sqrt(T) * norm
    ok = 0.0 <= C_T < 1.0
    bound = (1.0 - math.sqrt(C_T)) / (2.0 * c * math.sqrt(T)) if ok else math.nan
    return ExistenceReport(C_T, ok, bound, (4.0 * c * norm) ** -2, norm, T == 0, False)


@dataclass(frozen=True, eq=False)
class PDESolution:
    """Snapshots of a solve plus monitored diagnostics.

    ``sup_norm`` is the maximum of ``||u(t)||_{L^1 cap L^r}`` over every time
    step, not just the stored snapshots.
    """

    config: PDEConfig
    times: np.ndarray
    fields: list[ScalarField]
    sup_norm: float
    min_value: float = 0.0
    max_mass_drift: float = 0.0
    boundary_mass: float = 0.0
    waived: bool = False
    diagnostics: dict = field(default_factory=dict)

    def at(self, t: float) -> ScalarField:
        """Linear interpolation in time between snapshots."""
        times = self.times
        if t < times[0] - 1e-12 or t > times[-1] + 1e-9 * max(1.0, times[-1]):
            raise ValueError(f"time {t} outside the solution interval")
        k = int(np.searchsorted(times, t, side="right") - 1)
        k = min(max(k, 0), len(times) - 1)
        if k == len(times) - 1 or abs(times[k] - t) <= 1e-12 * max(1.0, t):
            return self.fields[k]
        if abs(times[k + 1] - t) <= 1e-12 * max(1.0, t):
            return self.fields[k + 1]
        lam = (t - times[k]) / (times[k + 1] - times[k])
        return ScalarField(self.fields[k].grid,
                           (1 - lam) * self.fields[k].values + lam * self.fields[k + 1].values)


def _spectrum(config: PDEConfig, spectrum):
    return kernel_spectrum(config.params, config.grid) if spectrum is None else spectrum


def _guard(config: PDEConfig, u0: ScalarField, constants, waive_horizon):
    if constants is None:
        return None, False
    report = existence_horizon_check(u0, constants, config.r, config.T)
    if not report.horizon_ok:
        if not waive_horizon:
            raise HorizonError(report)
        return report, True
    return report, False


def _flux_div_hat(uh: np.ndarray, spec: KernelSpectrum, grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """``u`` in real space and the transform of ``div(u (K * u))`` without the multiplier."""
    u = _inv(uh, grid)
    acc = 0
    for s_j, sym in zip(spec.spectra, grid.derivative_symbols):
        acc = acc + sym * _fwd(u * _inv(s_j * uh, grid))
    return u, acc


def mild_march(u0: ScalarField, config: PDEConfig, constants: KernelConstants | None = None,
               waive_horizon: bool = False, spectrum: KernelSpectrum | None = None,
               blowup_factor: float = 1e3) -> PDESolution:
    """March ``u_{n+1} = exp(dt Lap) u_n - int_0^dt div exp(s Lap)(u_n (K * u_n)) ds``.

    When ``constants`` are given the existence condition is checked first and
    the solve is refused outside it unless ``waive_horizon`` is set.
    """
    report, waived = _guard(config, u0, constants, waive_horizon)
    g = config.grid
    spec = _spectrum(config, spectrum)
    E = np.exp(-config.dt * g.xi2)
    M = _duhamel_multiplier(g, config.dt)
    interact = config.params.epsilon != 0

    uh = _fwd(u0.values)
    u = u0.values
    limit = blowup_factor * np.max(np.abs(u))
    mass_prev = u0.integral()
    times, snaps = [0.0], [u0]
    sup_norm = norm_intersection(u0, config.r)
    min_val = float(u.min())
    drift = 0.0
    margin = boundary_mass(u0)
    for n in range(config.n_steps):
        if interact:
            u, div_hat = _flux_div_hat(uh, spec, g)
            uh = E * uh - M * div_hat
        else:
            uh = E * uh
        u = _inv(uh, g)
        t = (n + 1) * config.dt
        top = float(np.max(np.abs(u)))
        if not np.isfinite(top) or top > limit:
            raise NumericalAbort(
                f"blow-up guard: ||u||_inf = {top:.6g} exceeds {limit:.6g} at step {n + 1} (t = {t:.6g})")
        f = ScalarField(g, u)
        mass = f.integral()
        drift = max(drift, abs(mass - mass_prev))
        mass_prev = mass
        sup_norm = max(sup_norm, norm_intersection(f, config.r))
        min_val = min(min_val, float(u.min()))
        if (n + 1) % config.snapshot_stride == 0 or n + 1 == config.n_steps:
            times.append(t)
            snaps.append(f)
            margin = max(margin, boundary_mass(f))
    diag = {"min_value": min_val, "positivity_ok": min_val >= -1e-6}
    if report is not None:
        diag["C_T_u0"] = report.C_T_u0
        diag["solution_bound"] = report.solution_bound
    return PDESolution(config, np.array(times), snaps, sup_norm, min_val, drift, margin,
                       waived, diag)


def _as_array(series, grid: GridSpec) -> np.ndarray:
    if isinstance(series, np.ndarray):
        return series
    return np.stack([f.values for f in series])


def _b_series_hat(u: np.ndarray, v: np.ndarray, config: PDEConfig, spec: KernelSpectrum,
                  E: np.ndarray, M: np.ndarray, upto: int) -> list[np.ndarray]:
    """Spectral ``B(u, v)(t_n)`` for n = 0..upto, accumulated recursively."""
    g = config.grid
    out = [np.zeros_like(E, dtype=complex)]
    bh = out[0]
    for k in range(upto):
        vh = _fwd(v[k])
        acc = 0
        for s_j, sym in zip(spec.spectra, g.derivative_symbols):
            acc = acc + sym * _fwd(u[k] * _inv(s_j * vh, g))
        bh = E * bh + M * acc
        out.append(bh)
    return out


def bilinear_B_series(u, v, config: PDEConfig, spectrum: KernelSpectrum | None = None) -> list[ScalarField]:
    """``B(u, v)`` at every time of the grid ``0, dt, ..., len(u)-1``.

    Each step freezes the integrand at its left end and integrates the
    semigroup exactly.
    """
    g = config.grid
    ua, va = _as_array(u, g), _as_array(v, g)
    if ua.shape != va.shape or ua.shape[1:] != g.shape:
        raise ValueError("series must share the time grid and the spatial grid")
    spec = _spectrum(config, spectrum)
    E = np.exp(-config.dt * g.xi2)
    M = _duhamel_multiplier(g, config.dt)
    return [ScalarField(g, _inv(bh, g)) for bh in _b_series_hat(ua, va, config, spec, E, M, len(ua) - 1)]


def bilinear_B(u, v, t_index: int, config: PDEConfig, spectrum: KernelSpectrum | None = None) -> ScalarField:
    """``B(u, v)(t_index * dt)``."""
    g = config.grid
    ua, va = _as_array(u, g), _as_array(v, g)
    if ua.shape != va.shape:
        raise ValueError("series must share the time grid and the spatial grid")
    spec = _spectrum(config, spectrum)
    E = np.exp(-config.dt * g.xi2)
    M = _duhamel_multiplier(g, config.dt)
    return ScalarField(g, _inv(_b_series_hat(ua, va, config, spec, E, M, t_index)[-1], g))


def picard_solve(u0: ScalarField, config: PDEConfig, tol: float = 1e-10, max_iter: int = 100,
                 constants: KernelConstants | None = None, initial="heat",
                 waive_horizon: bool = False, spectrum: KernelSpectrum | None = None):
    """Iterate ``u <- exp(t Lap) u0 - B(u, u)`` on the whole time grid.

    Parameters
    ----------
    initial : {"heat", "zero"} or array
        First iterate: the heat flow of ``u0``, zero, or an explicit series
        of shape ``(n_steps + 1, *grid.shape)``.

    Returns
    -------
    solution : PDESolution
        Fields at every time step.
    ratios : list of float
        ``||u^{k+1} - u^k|| / ||u^k - u^{k-1}||`` in the sup-in-time
        ``L^1 cap L^r`` norm.

    Raises
    ------
    ContractionError
        A ratio reached 1 inside the existence regime.
    NumericalAbort
        ``max_iter`` exceeded.
    """
    report, waived = _guard(config, u0, constants, waive_horizon)
    g = config.grid
    nt = config.n_steps
    spec = _spectrum(config, spectrum)
    E = np.exp(-config.dt * g.xi2)
    M = _duhamel_multiplier(g, config.dt)
    u0h = _fwd(u0.values)
    heat = np.empty((nt + 1,) + g.shape)
    hh = u0h
    for n in range(nt + 1):
        heat[n] = _inv(hh, g)
        hh = E * hh

    if isinstance(initial, str):
        if initial == "heat":
            cur = heat.copy()
        elif initial == "zero":
            cur = np.zeros_like(heat)
        else:
            raise ValueError(f"unknown initial iterate {initial!r}")
    else:
        cur = np.asarray(initial, dtype=float).copy()
        if cur.shape != heat.shape:
            raise ValueError("initial series has the wrong shape")

    def sup_norm(series):
        return max(norm_intersection(ScalarField(g, s), config.r) for s in series)

    diffs, ratios = [], []
    enforce = report is not None and report.horizon_ok
    for it in range(1, max_iter + 1):
        if config.params.epsilon != 0:
            b = _b_series_hat(cur, cur, config, spec, E, M, nt)
            new = heat - np.stack([_inv(bh, g) for bh in b])
        else:
            new = heat.copy()
        diff = sup_norm(new - cur)
        if diffs:
            ratio = diff / diffs[-1] if diffs[-1] > 0 else 0.0
            ratios.append(ratio)
            if enforce and ratio >= 1.0 and diff >= tol:
                raise ContractionError(it, ratio)
        diffs.append(diff)
        cur = new
        if diff < tol:
            break
    else:
        raise NumericalAbort(f"Picard iteration did not reach tol {tol} in {max_iter} iterations")

    fields_ = [ScalarField(g, s) for s in cur]
    masses = np.array([f.integral() for f in fields_])
    diag = {"iterations": it, "differences": diffs}
    if report is not None:
        diag["C_T_u0"] = report.C_T_u0
        diag["solution_bound"] = report.solution_bound
    sol = PDESolution(config, config.dt * np.arange(nt + 1), fields_, sup_norm(cur),
                      float(cur.min()), float(np.max(np.abs(np.diff(masses)))) if nt else 0.0,
                      max(boundary_mass(f) for f in fields_), waived, diag)
    return sol, ratios


def bessel_regularity_report(sol: PDESolution, beta: float, r: float) -> float:
    """``sup_t ||u(t)||_{H^{beta, r}}`` over the stored snapshots."""
    return max(bessel_norm(f, beta, r) for f in sol.fields)
