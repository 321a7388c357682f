"""Euler-Maruyama simulation of the moderately interacting particle system

    dX^i = (1/N) sum_{k != i} K_N(X^i - X^k) dt + sqrt(2) dW^i,

its cut-off variant, and the frozen-drift McKean-Vlasov process.

Every Gaussian increment is a pure function of ``(seed, label, step)``
(see :mod:`ljmeso.rng`), so a raw and a cut-off run with the same seed are
driven by the same Brownian paths.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import _accel, rng
from .errors import NumericalAbort
from .fields import GridSpec, ScalarField, convolve_kernel_field, interpolate_periodic, kernel_spectrum
from .kernel import KernelConstants, RadialKernelTable

__all__ = [
    "GaussianU0", "ParticleState", "Trajectory", "CutoffSpec", "SimulationConfig",
    "sample_initial", "pairwise_drift", "cutoff_build", "cutoff_apply", "cutoff_threshold",
    "drift_cutoff", "em_step", "simulate", "McKeanEnsemble", "mckean_simulate",
    "mckean_ensemble",
]


@dataclass(frozen=True)
class GaussianU0:
    """Isotropic Gaussian initial law."""

    d: int
    variance: float = 0.25
    center: tuple[float, ...] | None = None

    def mean(self) -> np.ndarray:
        return np.zeros(self.d) if self.center is None else np.asarray(self.center, dtype=float)


@dataclass(frozen=True, eq=False)
class ParticleState:
    positions: np.ndarray
    time: float = 0.0

    @property
    def N(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Recorded states of one run.

    ``positions[k]`` is the state at ``times[k]``. When Wiener increments are
    recorded, ``wiener[n]`` holds the increments of step ``n`` (shape
    ``(N, d)``) and ``step_positions[n]`` the left-end positions they act on.
    """

    times: np.ndarray
    positions: np.ndarray
    seed: int
    config_hash: str
    labels: np.ndarray
    wiener: np.ndarray | None = None
    step_positions: np.ndarray | None = None
    max_raw_drift: np.ndarray | None = None
    dt: float = 0.0

    def state(self, k: int) -> ParticleState:
        return ParticleState(self.positions[k], float(self.times[k]))

    def to_csv(self) -> str:
        d = self.positions.shape[-1]
        head = "t,i," + ",".join(f"x{j + 1}" for j in range(d))
        rows = [head]
        for t, pos in zip(self.times.tolist(), self.positions):
            for i, x in zip(self.labels.tolist(), pos.tolist()):
                rows.append(f"{t!r},{i}," + ",".join(repr(v) for v in x))
        return "\n".join(rows) + "\n"


# ---------------------------------------------------------------------------
# initial law


def sample_initial(u0, N: int, seed: int, labels=None, max_proposals: int = 10 ** 6) -> ParticleState:
    """I.i.d. draws from ``u0``.

    ``u0`` is a :class:`GaussianU0` (direct transform) or a grid density
    (:class:`ScalarField`, piecewise constant on node cells, rejection
    sampling under a uniform envelope). Each draw depends on its label only.
    """
    labels = np.arange(N, dtype=np.uint64) if labels is None else np.asarray(labels, dtype=np.uint64)
    if isinstance(u0, GaussianU0):
        z = rng.normals(seed, rng.STREAM_INIT, 0, labels, u0.d)
        return ParticleState(u0.mean() + math.sqrt(u0.variance) * z)
    if isinstance(u0, ScalarField):
        return ParticleState(_rejection(u0, labels, seed, max_proposals))
    raise TypeError(f"unsupported initial law {type(u0).__name__}")


def _rejection(u0: ScalarField, labels: np.ndarray, seed: int, max_proposals: int) -> np.ndarray:
    g = u0.grid
    vals = np.clip(u0.values, 0.0, None)
    top = vals.max()
    if not top > 0:
        raise ValueError("grid density has no positive mass")
    out = np.empty((labels.size, g.d))
    pending = np.arange(labels.size)
    for attempt in range(max_proposals):
        if pending.size == 0:
            return out
        u = rng.uniforms(seed, rng.STREAM_INIT, attempt, labels[pending], g.d + 1)
        x = -g.L - 0.5 * g.h + 2.0 * g.L * u[:, : g.d]
        idx = tuple((np.rint((x[:, j] + g.L) / g.h).astype(np.int64)) % g.n for j in range(g.d))
        accept = u[:, g.d] * top < vals[idx]
        out[pending[accept]] = x[accept]
        pending = pending[~accept]
    if pending.size:
        raise NumericalAbort(f"rejection sampler exceeded {max_proposals} proposals for "
                             f"{pending.size} particles")
    return out


# ---------------------------------------------------------------------------
# drift


def pairwise_drift(positions: np.ndarray, table: RadialKernelTable, method: str = "compiled",
                   block: int = 512) -> np.ndarray:
    """``(1/N) sum_{k != i} K_N(X_i - X_k)`` by exact summation over pairs.

    ``method="numpy"`` evaluates all pairs with array operations through
    :meth:`RadialKernelTable.profile`; ``"compiled"`` visits each unordered
    pair once in a compiled loop. Both agree to rounding.
    """
    X = np.ascontiguousarray(positions, dtype=float)
    N = X.shape[0]
    if N < 2:
        return np.zeros_like(X)
    if method == "compiled":
        p = table.params
        return _accel.pairwise_drift(X, table.radii, table.values, table.crossover_radius,
                                     float(p.epsilon), float(p.R0), float(p.a), float(p.b))
    if method != "numpy":
        raise ValueError(f"unknown method {method!r}")
    out = np.zeros_like(X)
    for start in range(0, N, block):
        sl = slice(start, min(N, start + block))
        diff = X[sl, None, :] - X[None, :, :]
        r = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        k = table.profile(r)
        with np.errstate(invalid="ignore", divide="ignore"):
            coef = np.where(r > 0, k / np.where(r > 0, r, 1.0), 0.0)
        out[sl] = np.einsum("ij,ijk->ik", coef, diff)
    return out / N


@dataclass(frozen=True)
class CutoffSpec:
    """``C^2`` saturation ``f`` with threshold ``B`` and transition width ``eta_bar``.

    On ``[B, B + eta_bar]``, ``f(y) = B + eta_bar g((y - B)/eta_bar)`` with
    ``g(s) = s - 6 s**3 + 8 s**4 - 3 s**5``, the quintic meeting value, slope
    and curvature ``(0, 1, 0)`` at ``s = 0`` and ``(0, 0, 0)`` at ``s = 1``.
    """

    B: float
    eta_bar: float
    coeffs: tuple[float, ...] = (0.0, 1.0, 0.0, -6.0, 8.0, -3.0)

    def __call__(self, y):
        return cutoff_apply(self, y)

    def derivative(self, y):
        y = np.asarray(y, dtype=float)
        a = np.abs(y)
        s = np.clip((a - self.B) / self.eta_bar, 0.0, 1.0)
        dg = np.polynomial.polynomial.polyval(s, np.polynomial.polynomial.polyder(self.coeffs))
        return np.where(a <= self.B, 1.0, np.where(a >= self.B + self.eta_bar, 0.0, dg))


def cutoff_apply(spec: CutoffSpec, y):
    """Componentwise ``f``; values with ``|y| <= B`` are returned untouched."""
    y = np.asarray(y, dtype=float)
    a = np.abs(y)
    s = np.clip((a - spec.B) / spec.eta_bar, 0.0, 1.0)
    ramp = spec.B + spec.eta_bar * np.polynomial.polynomial.polyval(s, spec.coeffs)
    ramp = np.where(a >= spec.B + spec.eta_bar, spec.B, ramp)
    return np.where(a <= spec.B, y, np.sign(y) * ramp)


def cutoff_build(B: float, eta_bar: float, samples: int = 10 ** 4) -> CutoffSpec:
    """Build and verify the saturation function.

    The slope on the transition is ``g'(s)``, which does not depend on
    ``eta_bar``; the sampled check ``|f'| <= 1`` therefore either passes for
    every width or for none, and a failure is raised rather than retried.
    """
    if not (B > 0 and eta_bar > 0):
        raise ValueError("B and eta_bar must be positive")
    spec = CutoffSpec(float(B), float(eta_bar))
    y = np.linspace(B, B + eta_bar, samples)
    if np.max(np.abs(spec.derivative(y))) > 1.0 + 1e-12:
        raise NumericalAbort("cut-off transition violates |f'| <= 1")
    return spec


def cutoff_threshold(constants: KernelConstants, eta: float, u_norm: float) -> float:
    """``B = C1_nu C_Kpq (eta + ||u||)``."""
    if not eta > 0 or u_norm < 0:
        raise ValueError("need eta > 0 and u_norm >= 0")
    return constants.C1_nu * constants.C_Kpq * (eta + u_norm)


def drift_cutoff(positions: np.ndarray, table: RadialKernelTable, spec: CutoffSpec) -> np.ndarray:
    return cutoff_apply(spec, pairwise_drift(positions, table))


def em_step(state: ParticleState, drifts: np.ndarray, dt: float, noise: np.ndarray) -> ParticleState:
    """``X <- X + drift dt + sqrt(2 dt) noise``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    new = state.positions + drifts * dt + math.sqrt(2.0 * dt) * noise
    bad = ~np.all(np.isfinite(new), axis=1)
    if np.any(bad):
        raise NumericalAbort(f"non-finite position for particle {int(np.flatnonzero(bad)[0])}")
    return ParticleState(new, state.time + dt)


# ---------------------------------------------------------------------------
# full runs


@dataclass(frozen=True, eq=False)
class SimulationConfig:
    """Everything a particle run needs besides the seed.

    ``mode`` is ``"raw"`` or ``"cutoff"``; the latter needs ``cutoff``.
    """

    table: RadialKernelTable
    N: int
    dt: float
    n_steps: int
    u0: object
    mode: str = "raw"
    cutoff: CutoffSpec | None = None
    record_stride: int = 1
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("raw", "cutoff"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "cutoff" and self.cutoff is None:
            raise ValueError("cutoff mode needs a CutoffSpec")
        if self.record_stride < 1 or self.n_steps < 1 or not self.dt > 0:
            raise ValueError("invalid stepping parameters")

    def digest(self) -> str:
        p = self.table.params
        blob = {
            "kernel": [p.epsilon, p.R0, p.a, p.b, p.d], "N": self.N, "alpha": self.table.alpha,
            "dt": self.dt, "n_steps": self.n_steps, "mode": self.mode,
            "cutoff": None if self.cutoff is None else [self.cutoff.B, self.cutoff.eta_bar],
            "u0": repr(self.u0) if not isinstance(self.u0, ScalarField) else
            hashlib.sha256(self.u0.to_bytes()).hexdigest(),
            "stride": self.record_stride, "meta": self.meta,
        }
        return hashlib.sha256(json.dumps(blob, sort_keys=True).encode()).hexdigest()[:16]


def simulate(config: SimulationConfig, seed: int, record_wiener: bool = False,
             labels=None) -> Trajectory:
    """Run the particle system over ``n_steps`` steps of length ``dt``.

    ``labels`` identify particles to the random number generator; permuting
    them together with the particle order permutes the trajectories.
    """
    N = config.N
    labels = np.arange(N, dtype=np.uint64) if labels is None else np.asarray(labels, dtype=np.uint64)
    if labels.shape != (N,):
        raise ValueError("need one label per particle")
    state = sample_initial(config.u0, N, seed, labels)
    d = state.positions.shape[1]
    sqdt = math.sqrt(config.dt)
    times, states = [0.0], [state.positions]
    wiener = np.empty((config.n_steps, N, d)) if record_wiener else None
    left = np.empty((config.n_steps, N, d)) if record_wiener else None
    max_raw = np.empty(config.n_steps)
    for n in range(config.n_steps):
        raw = pairwise_drift(state.positions, config.table)
        max_raw[n] = np.max(np.abs(raw)) if N else 0.0
        drift = raw if config.mode == "raw" else cutoff_apply(config.cutoff, raw)
        noise = rng.normals(seed, rng.STREAM_NOISE, n, labels, d)
        if record_wiener:
            wiener[n] = sqdt * noise
            left[n] = state.positions
        state = em_step(state, drift, config.dt, noise)
        if (n + 1) % config.record_stride == 0 or n + 1 == config.n_steps:
            times.append((n + 1) * config.dt)
            states.append(state.positions)
    return Trajectory(np.array(times), np.stack(states), seed, config.digest(), labels,
                      wiener, left, max_raw, config.dt)


# ---------------------------------------------------------------------------
# McKean-Vlasov process


@dataclass(frozen=True, eq=False)
class McKeanEnsemble:
    """Paths of the frozen-drift process ``dX = (K*u)(t, X) dt + sqrt(2) dW``.

    ``flagged[m]`` marks paths that entered the outer quarter of the torus,
    where the truncated PDE solution is not trusted.
    """

    times: np.ndarray
    positions: np.ndarray
    flagged: np.ndarray


def _drift_fields(sol) -> np.ndarray:
    spec = kernel_spectrum(sol.config.params, sol.config.grid)
    return np.stack([convolve_kernel_field(spec, f).components for f in sol.fields])


def mckean_ensemble(sol, x0: np.ndarray, dt: float, seed: int, labels=None,
                    drift_fields: np.ndarray | None = None) -> McKeanEnsemble:
    """Euler-Maruyama for many independent McKean paths started at ``x0`` ``(M, d)``.

    The drift is ``K * u(t_n)`` interpolated multilinearly in space and
    linearly in time between solution snapshots.
    """
    x = np.array(x0, dtype=float, copy=True)
    if x.ndim == 1:
        x = x[None]
    M, d = x.shape
    grid: GridSpec = sol.config.grid
    labels = np.arange(M, dtype=np.uint64) if labels is None else np.asarray(labels, dtype=np.uint64)
    fields_ = _drift_fields(sol) if drift_fields is None else drift_fields
    T = float(sol.times[-1])
    steps = int(round(T / dt))
    if abs(steps * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError("dt must divide the solution horizon")
    trusted = 0.75 * grid.L
    flagged = np.any(np.abs(x) > trusted, axis=1)
    path = [x.copy()]
    for n in range(steps):
        t = n * dt
        k = min(int(np.searchsorted(sol.times, t, side="right") - 1), len(sol.times) - 1)
        if k < len(sol.times) - 1 and t > sol.times[k]:
            lam = (t - sol.times[k]) / (sol.times[k + 1] - sol.times[k])
            field_t = (1 - lam) * fields_[k] + lam * fields_[k + 1]
        else:
            field_t = fields_[k]
        drift = interpolate_periodic(field_t, grid, x).T
        noise = rng.normals(seed, rng.STREAM_MCKEAN, n, labels, d)
        x = x + drift * dt + math.sqrt(2.0 * dt) * noise
        flagged |= np.any(np.abs(x) > trusted, axis=1)
        path.append(x.copy())
    return McKeanEnsemble(dt * np.arange(steps + 1), np.stack(path), flagged)


def mckean_simulate(sol, x0, dt: float, seed: int, label: int = 0) -> McKeanEnsemble:
    """One McKean path; the same draws as member ``label`` of an ensemble."""
    return mckean_ensemble(sol, np.asarray(x0, dtype=float)[None], dt, seed, labels=[label])
