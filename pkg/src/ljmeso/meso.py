"""Mesoscale analysis: mollified empirical densities, rate exponents, error
series, and the stochastic convolution

    S_N(t) = -(1/N) sum_i int_0^t exp((t-s) Lap) grad V_N(. - X^i_s) . dW^i_s

together with log-log fits of its size against ``N``.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import _accel
from .fields import GridSpec, ScalarField, _fwd, _inv, norm_intersection, norm_lp
from .kernel import MollifierSpec, conjugate, mollifier_grad, mollifier_value

__all__ = [
    "MesoParams", "RateVariant", "RateTheory", "ErrorSeries", "FitResult", "Verdict",
    "ResolutionError", "empirical_density", "admissible_alpha", "theoretical_rate",
    "error_series", "stochastic_convolution", "sconv_sup_norms", "sconv_norm_scaling",
    "fit_loglog", "sconv_scaling_from_norms",
]


class ResolutionError(ValueError):
    """The mollifier support is too small for the grid."""


@dataclass(frozen=True)
class MesoParams:
    alpha: float
    N: int
    beta: float
    r: float
    d: int

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if not self.r > 1:
            raise ValueError("r must exceed 1")

    @property
    def r_conj(self) -> float:
        return conjugate(self.r)


# ---------------------------------------------------------------------------
# densities


def _stencil(spec: MollifierSpec, N: int, alpha: float, grid: GridSpec):
    w = spec.support_radius * N ** -alpha
    if w < 2 * grid.h:
        raise ResolutionError(
            f"mollifier support {w:.4g} is below two grid spacings ({2 * grid.h:.4g}); "
            "refine the grid or lower alpha * log N")
    m = int(math.ceil(w / grid.h)) + 1
    rng_ = np.arange(-m, m + 1)
    offs = np.stack(np.meshgrid(*([rng_] * grid.d), indexing="ij"), axis=-1).reshape(-1, grid.d)
    return w, offs


def _deposit(positions, grid: GridSpec, offs, weight_fn):
    """Sum per-particle stencil weights into a flat grid array."""
    X = np.asarray(positions, dtype=float)
    base = np.rint((X + grid.L) / grid.h).astype(np.int64)
    nodes = base[:, None, :] + offs[None]
    disp = X[:, None, :] - (-grid.L + grid.h * nodes)
    w = weight_fn(disp)
    flat = np.zeros(grid.n ** grid.d)
    idx = np.ravel_multi_index(tuple(np.moveaxis(nodes % grid.n, -1, 0)), grid.shape)
    return flat, idx, w


def _check_inside(positions, grid: GridSpec):
    outside = np.any(np.abs(positions) >= grid.L, axis=1)
    if np.any(outside):
        warnings.warn(f"{int(outside.sum())} particles lie outside the torus and were wrapped",
                      RuntimeWarning, stacklevel=3)


def empirical_density(positions, meso: MesoParams, spec: MollifierSpec,
                      grid: GridSpec, method: str = "compiled") -> ScalarField:
    """``u_N = (1/N) sum_k V_N(x - X_k)`` deposited on the grid.

    Each particle's bump is renormalized so that its Riemann sum is exactly
    ``1/N``; total mass is then 1 to rounding at any resolution allowed by
    the two-cell support rule.
    """
    X = np.ascontiguousarray(positions, dtype=float)
    _check_inside(X, grid)
    w, offs = _stencil(spec, meso.N, meso.alpha, grid)
    if method == "compiled":
        c = spec.normalization * (spec.support_radius / w) ** grid.d
        flat = _accel.deposit_bump(X, offs, float(grid.L), grid.h, grid.n, w, c, grid.cell_volume)
        return ScalarField(grid, flat.reshape(grid.shape))
    flat, idx, wts = _deposit(X, grid, offs, lambda z: mollifier_value(spec, meso.N, meso.alpha, z))
    mass = wts.sum(axis=1, keepdims=True) * grid.cell_volume
    wts = wts / (mass * X.shape[0])
    flat += np.bincount(idx.ravel(), weights=wts.ravel(), minlength=flat.size)
    return ScalarField(grid, flat.reshape(grid.shape))


def admissible_alpha(beta: float, d: int, r: float) -> float:
    """Upper bound ``1 / (2 (beta + d/r'))`` on the mesoscale exponent."""
    if not r > 1:
        raise ValueError("r must exceed 1")
    return 1.0 / (2.0 * (beta + d / conjugate(r)))


class RateVariant(enum.Enum):
    THEOREM = "Thm61"
    HOLDER_R = "Cor62"
    HOLDER_Q = "Cor63"


@dataclass(frozen=True)
class RateTheory:
    rho: float
    zeta: float | None
    kappa: float
    sconv_exponent_Lz: float
    sconv_exponent_Bessel: float
    degenerate: bool


def theoretical_rate(meso: MesoParams, variant: RateVariant | str = RateVariant.THEOREM,
                     q: float | None = None, z: float = 2.0, alpha: float | None = None) -> RateTheory:
    """Rate exponents of the convergence theorem and the stochastic convolution.

    ``alpha`` overrides ``meso.alpha`` (for the degenerate ``alpha = 0``).
    """
    variant = RateVariant(variant) if not isinstance(variant, RateVariant) else variant
    a = meso.alpha if alpha is None else alpha
    d = meso.d
    second = 0.5 - a * d / meso.r_conj
    if variant is RateVariant.THEOREM:
        zeta = None
        rho = min(a, second)
    else:
        if variant is RateVariant.HOLDER_R:
            zeta = 1.0 - d / meso.r
        else:
            if q is None:
                raise ValueError("this variant needs q")
            zeta = 1.0 - d / q
        if not zeta > 0:
            warnings.warn(f"zeta = {zeta:.4g} is not positive", RuntimeWarning, stacklevel=2)
        rho = min(a * zeta, second)
    if a > 0 and a >= admissible_alpha(meso.beta, d, meso.r):
        warnings.warn("alpha exceeds the admissible mesoscale bound", RuntimeWarning, stacklevel=2)
    kappa = max(1.0 - 2.0 / z, 0.0)
    return RateTheory(
        rho=rho,
        zeta=zeta,
        kappa=kappa,
        sconv_exponent_Lz=-(1.0 - a * (d + d * kappa)) / 2.0,
        sconv_exponent_Bessel=-0.5 + a * (meso.beta + d / conjugate(z)),
        degenerate=not rho > 0,
    )


# ---------------------------------------------------------------------------
# error series


@dataclass(frozen=True)
class ErrorSeries:
    times: np.ndarray
    values: np.ndarray
    sup: float
    N: int
    seed: int


def error_series(traj, sol, meso: MesoParams, spec: MollifierSpec, grid: GridSpec,
                 density_fn: Callable | None = None, time_tol: float = 1e-9) -> ErrorSeries:
    """``||u_N(t) - u(t)||_{L^1 cap L^r}`` at every recorded trajectory time.

    ``density_fn(k)`` may replace the empirical density of record ``k``
    (used to inject known fields).
    """
    if traj.times[-1] > sol.times[-1] + time_tol * max(1.0, sol.times[-1]):
        raise ValueError("trajectory extends beyond the PDE solution")
    vals = []
    for k, t in enumerate(traj.times):
        uN = density_fn(k) if density_fn is not None else empirical_density(
            traj.positions[k], meso, spec, grid)
        vals.append(norm_intersection(uN - sol.at(float(t)), meso.r))
    vals = np.array(vals)
    return ErrorSeries(np.asarray(traj.times), vals, float(vals.max()), meso.N, traj.seed)


# ---------------------------------------------------------------------------
# stochastic convolution


def _gradient_deposit(X, dW, meso: MesoParams, spec: MollifierSpec, grid: GridSpec, offs,
                      method: str) -> np.ndarray:
    """``sum_i grad V_N(x - X_i) . dW_i`` on the grid."""
    if method == "compiled":
        w = spec.support_radius * meso.N ** -meso.alpha
        c = spec.normalization * (spec.support_radius / w) ** grid.d
        flat = _accel.deposit_grad(np.ascontiguousarray(X), np.ascontiguousarray(dW), offs,
                                   float(grid.L), grid.h, grid.n, w, c)
        return flat.reshape(grid.shape)
    flat, idx, wts = _deposit(X, grid, offs, lambda z: np.einsum(
        "pmd,pd->pm", mollifier_grad(spec, meso.N, meso.alpha, -z), dW))
    flat += np.bincount(idx.ravel(), weights=wts.ravel(), minlength=flat.size)
    return flat.reshape(grid.shape)


def _sconv_hat_steps(traj, meso: MesoParams, spec: MollifierSpec, grid: GridSpec, upto: int,
                     method: str = "compiled"):
    """Yield ``(n, S_hat(t_n))`` for n = 1..upto."""
    if traj.wiener is None or traj.step_positions is None:
        raise ValueError("trajectory has no recorded Wiener increments")
    if upto > traj.wiener.shape[0]:
        raise ValueError(f"increments recorded for {traj.wiener.shape[0]} steps, {upto} requested")
    _, offs = _stencil(spec, meso.N, meso.alpha, grid)
    E = np.exp(-traj.dt * grid.xi2)
    N = traj.step_positions.shape[1]
    acc = np.zeros(E.shape, dtype=complex)
    for n in range(upto):
        G = _gradient_deposit(traj.step_positions[n], traj.wiener[n], meso, spec, grid, offs, method)
        acc = E * acc - _fwd(G / N)
        yield n + 1, acc


def stochastic_convolution(traj, meso: MesoParams, spec: MollifierSpec, grid: GridSpec,
                           t: float, method: str = "compiled") -> ScalarField:
    """``S_N(t)`` with left-end positions and heat horizons ``t - t_{n+1}``."""
    steps = int(round(t / traj.dt))
    if abs(steps * traj.dt - t) > 1e-9 * max(1.0, t):
        raise ValueError("t must be a multiple of the trajectory step")
    if steps == 0:
        return ScalarField(grid, np.zeros(grid.shape))
    for _, acc in _sconv_hat_steps(traj, meso, spec, grid, steps, method):
        pass
    return ScalarField(grid, _inv(acc, grid))


def _l2_from_half_spectrum(a: np.ndarray, grid: GridSpec) -> float:
    """Riemann ``L^2`` norm of a real field from its ``rfftn`` coefficients (Parseval)."""
    w = np.full(a.shape[-1], 2.0)
    w[0] = 1.0
    if grid.n % 2 == 0:
        w[-1] = 1.0
    power = float(np.sum(w * np.sum(np.abs(a) ** 2, axis=tuple(range(a.ndim - 1)))))
    return math.sqrt(power * grid.cell_volume / grid.n ** grid.d)


def sconv_sup_norms(traj, meso: MesoParams, spec: MollifierSpec, grid: GridSpec,
                    z: float = 2.0, beta: float = 0.0, stride: int = 1) -> tuple[float, float]:
    """``sup_t ||S_N(t)||_{L^z}`` and ``sup_t ||S_N(t)||_{H^{beta,z}}`` over every
    ``stride``-th step (and the last one)."""
    steps = traj.wiener.shape[0] if traj.wiener is not None else 0
    mult = (1.0 + grid.xi2) ** (beta / 2) if beta else None
    best_z = best_b = 0.0
    for n, acc in _sconv_hat_steps(traj, meso, spec, grid, steps):
        if n % stride and n != steps:
            continue
        accb = acc if mult is None else acc * mult
        if z == 2:
            nz = _l2_from_half_spectrum(acc, grid)
            nb = nz if mult is None else _l2_from_half_spectrum(accb, grid)
        else:
            nz = norm_lp(ScalarField(grid, _inv(acc, grid)), z)
            nb = nz if mult is None else norm_lp(ScalarField(grid, _inv(accb, grid)), z)
        best_z, best_b = max(best_z, nz), max(best_b, nb)
    return best_z, best_b


class Verdict(enum.Enum):
    WITHIN = "WithinTolerance"
    OUTSIDE = "Outside"
    DEGENERATE = "Degenerate"


@dataclass(frozen=True)
class FitResult:
    """Ordinary least squares of ``log y`` against ``log N``."""

    slope: float
    intercept: float
    stderr: float
    points: int
    theory: dict
    verdict: Verdict
    tolerance: float = 0.15


def fit_loglog(N_list: Sequence[float], values: Sequence[float], theory: float | None = None,
               extra_theory: dict | None = None, tolerance: float = 0.15) -> FitResult:
    """Least-squares slope of ``log(values)`` against ``log(N)``.

    The verdict is one-sided: within tolerance when ``slope <= theory +
    tolerance``. Non-positive or non-finite values are dropped; fewer than two
    usable points, or a degenerate (all-zero) input, yields ``DEGENERATE``.
    """
    N = np.asarray(N_list, dtype=float)
    y = np.asarray(values, dtype=float)
    th = dict(extra_theory or {})
    if theory is not None:
        th.setdefault("exponent", theory)
    keep = np.isfinite(y) & (y > 0)
    if keep.sum() < 2:
        return FitResult(math.nan, math.nan, math.nan, int(keep.sum()), th, Verdict.DEGENERATE, tolerance)
    lx, ly = np.log(N[keep]), np.log(y[keep])
    A = np.stack([lx, np.ones_like(lx)], axis=1)
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    slope, intercept = float(coef[0]), float(coef[1])
    m = lx.size
    if m > 2:
        resid = ly - A @ coef
        s2 = float(resid @ resid) / (m - 2)
        stderr = math.sqrt(s2 / float(np.sum((lx - lx.mean()) ** 2)))
    else:
        stderr = 0.0
    if theory is None:
        verdict = Verdict.WITHIN
    else:
        verdict = Verdict.WITHIN if slope <= theory + tolerance else Verdict.OUTSIDE
    return FitResult(slope, intercept, stderr, m, th, verdict, tolerance)


def sconv_norm_scaling(trajectories: dict, meso_for: Callable[[int], MesoParams],
                       spec: MollifierSpec, grid: GridSpec, z: float = 2.0, beta: float = 0.0,
                       stride: int = 1, tolerance: float = 0.15):
    """Scaling of ``E sup_t ||S_N(t)||`` with ``N``.

    Parameters
    ----------
    trajectories : dict
        ``N -> list of trajectories`` (one per seed) with recorded increments.
    meso_for : callable
        ``N -> MesoParams``.

    Returns
    -------
    fit_Lz, fit_bessel : FitResult
    table : list of dict
        Per-``N`` rows: mean, standard error and seed count.
    """
    Ns = sorted(trajectories)
    norms = {N: np.array([sconv_sup_norms(tr, meso_for(N), spec, grid, z, beta, stride)
                          for tr in trajectories[N]]).reshape(-1, 2) for N in Ns}
    return sconv_scaling_from_norms(norms, meso_for, z, tolerance)


def sconv_scaling_from_norms(norms: dict, meso_for: Callable[[int], MesoParams], z: float = 2.0,
                             tolerance: float = 0.15):
    """Fits of :func:`sconv_norm_scaling` from precomputed per-seed norms.

    ``norms[N]`` has shape ``(seeds, 2)``: the ``L^z`` and Bessel sup-norms.
    """
    Ns = sorted(norms)
    if len(Ns) < 2:
        raise ValueError("need at least two particle counts")
    rows = []
    for N in Ns:
        arr = np.asarray(norms[N], dtype=float)
        if arr.shape[0] < 2:
            raise ValueError("need at least two seeds to estimate the spread")
        rows.append({"N": N, "seed_count": int(arr.shape[0]),
                     "mean_norm": float(arr[:, 0].mean()),
                     "stderr": float(arr[:, 0].std(ddof=1) / math.sqrt(arr.shape[0])),
                     "mean_bessel": float(arr[:, 1].mean())})
    theory = theoretical_rate(meso_for(Ns[0]), z=z)
    fz = fit_loglog(Ns, [r["mean_norm"] for r in rows], theory.sconv_exponent_Lz, tolerance=tolerance)
    fb = fit_loglog(Ns, [r["mean_bessel"] for r in rows], theory.sconv_exponent_Bessel,
                    tolerance=tolerance)
    return fz, fb, rows
