"""Free-parameter Lennard-Jones potential and force.

The potential is

    Phi(x) = eps * (R0**a / (a |x|**a) - R0**b / (b |x|**b)),   d - 1 > a > b > 0,

and the force is ``K = -grad Phi``, a radial field ``k(|x|) x/|x|`` with

    k(r) = (eps / r) * ((R0/r)**a - (R0/r)**b).

Besides point evaluation this module classifies the singularity, computes
the integrability windows of ``K`` and the constants that enter the
convolution bounds, and tabulates the mollified force ``K_N = K * V_N``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

__all__ = [
    "Regime", "LJParams", "Interval", "ExponentWindows", "Verdict", "LpResult",
    "KernelConstants", "MollifierSpec", "RadialKernelTable", "KernelDomainError",
    "ExponentWindowError", "QuadratureError", "sphere_area", "force_profile",
    "lj_potential", "lj_force", "exponent_windows", "kernel_lp_ball",
    "kernel_lq_exterior", "kernel_norm_ball", "kernel_norm_exterior",
    "kernel_constants", "conjugate", "mollifier_spec", "mollifier_value",
    "mollifier_grad", "build_mollified_kernel", "eval_KN",
]


class KernelDomainError(ValueError):
    """Evaluation at the singularity ``x = 0``."""


class ExponentWindowError(ValueError):
    """An exponent lies outside its integrability window."""


class QuadratureError(RuntimeError):
    """A quadrature did not meet its tolerance.

    Attributes
    ----------
    radius : float or None
        Worst offending radius, when the failure is radius specific.
    """

    def __init__(self, message: str, radius: float | None = None):
        super().__init__(message)
        self.radius = radius


class Regime(enum.Enum):
    SUB_SINGULAR = "SubSingular"
    CRITICAL = "Critical"
    SUPER_SINGULAR = "SuperSingular"


_EXACT = 1e-12


@dataclass(frozen=True)
class LJParams:
    """Kernel parameters.

    Parameters
    ----------
    epsilon : float
        Interaction strength. Zero switches the interaction off, which is
        allowed so that pure-diffusion control runs share the code path.
    R0 : float
        Range parameter: the force vanishes at ``|x| = R0``.
    a, b : float
        Repulsive and attractive exponents, ``d - 1 > a > b > 0``.
    d : int
        Spatial dimension, at least 2.
    """

    epsilon: float
    R0: float
    a: float
    b: float
    d: int

    def __post_init__(self):
        problems = self.violations(self.epsilon, self.R0, self.a, self.b, self.d)
        if problems:
            raise ValueError("; ".join(problems))

    @staticmethod
    def violations(epsilon, R0, a, b, d) -> list[str]:
        """All parameter violations, without raising."""
        out = []
        if not (isinstance(d, (int, np.integer)) and d >= 2):
            out.append(f"d must be an integer >= 2, got {d!r}")
            return out
        if not epsilon >= 0:
            out.append(f"epsilon must be >= 0, got {epsilon!r}")
        if not R0 > 0:
            out.append(f"R0 must be > 0, got {R0!r}")
        if not (d - 1 > a > b > 0):
            out.append(f"exponents must satisfy d-1 > a > b > 0, got d={d}, a={a}, b={b}")
        elif d == 2 and abs(a - (d - 2)) <= _EXACT:
            out.append("the critical case a = d-2 needs d >= 3")
        return out

    @property
    def regime(self) -> Regime:
        gap = self.a - (self.d - 2)
        if abs(gap) <= _EXACT:
            return Regime.CRITICAL
        return Regime.SUB_SINGULAR if gap < 0 else Regime.SUPER_SINGULAR

    def with_epsilon(self, epsilon: float) -> "LJParams":
        return LJParams(epsilon, self.R0, self.a, self.b, self.d)


def sphere_area(d: int) -> float:
    """Surface measure of the unit sphere in ``R^d``."""
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


def conjugate(p: float) -> float:
    """Hölder conjugate ``p/(p-1)`` with the conventions ``1' = inf`` and ``inf' = 1``."""
    if p == 1:
        return math.inf
    if math.isinf(p):
        return 1.0
    return p / (p - 1.0)


def force_profile(params: LJParams, r):
    """Signed radial force profile ``k(r)``: positive means repulsive."""
    r = np.asarray(r, dtype=float)
    s = params.R0 / r
    return params.epsilon / r * (s ** params.a - s ** params.b)


def _radius(params: LJParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params.d:
        raise ValueError(f"points must have trailing dimension {params.d}, got {x.shape}")
    r = np.sqrt(np.sum(x * x, axis=-1))
    if np.any(r == 0):
        raise KernelDomainError("the Lennard-Jones kernel is singular at x = 0")
    return r


def lj_potential(params: LJParams, x):
    """Potential ``Phi(x)`` at one point or an array of points ``(..., d)``."""
    r = _radius(params, x)
    s = params.R0 / r
    return params.epsilon * (s ** params.a / params.a - s ** params.b / params.b)


def lj_force(params: LJParams, x):
    """Force ``K(x) = -grad Phi(x)``, shape ``(..., d)``."""
    x = np.asarray(x, dtype=float)
    r = _radius(params, x)
    return (force_profile(params, r) / r)[..., None] * x


# ---------------------------------------------------------------------------
# integrability


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float
    lo_closed: bool
    hi_closed: bool

    @property
    def empty(self) -> bool:
        if self.lo < self.hi:
            return False
        return not (self.lo == self.hi and self.lo_closed and self.hi_closed)

    def __contains__(self, x: float) -> bool:
        above = x >= self.lo if self.lo_closed else x > self.lo
        below = x <= self.hi if self.hi_closed else x < self.hi
        return above and below

    def __str__(self) -> str:
        return f"{'[' if self.lo_closed else '('}{self.lo:.6g}, {self.hi:.6g}{']' if self.hi_closed else ')'}"


@dataclass(frozen=True)
class ExponentWindows:
    p_window: Interval
    q_window: Interval
    pbar_window: Interval
    qbar_window: Interval


def exponent_windows(params: LJParams) -> ExponentWindows:
    """Exponents for which ``K`` (and its gradient) is ``L^p`` near 0 and ``L^q`` away from it."""
    d, a, b = params.d, params.a, params.b
    pbar_hi = d / (a + 2)
    pbar = Interval(1.0, pbar_hi, True, False)
    if params.regime is not Regime.SUB_SINGULAR:
        pbar = Interval(1.0, 1.0, True, False)
    return ExponentWindows(
        p_window=Interval(1.0, d / (a + 1), True, False),
        q_window=Interval(d / (b + 1), math.inf, False, True),
        pbar_window=pbar,
        qbar_window=Interval(d / (b + 2), math.inf, False, True),
    )


class Verdict(enum.Enum):
    CONVERGED = "Converged"
    DIVERGING = "Diverging"


@dataclass(frozen=True)
class LpResult:
    """Outcome of a level-by-level norm computation.

    ``values[k]`` is the norm over the region reached after ``k + 1`` levels;
    ``value`` is the tail-extrapolated limit (``inf`` when diverging).
    """

    values: np.ndarray
    verdict: Verdict
    value: float


def _log_decade_integral(params, power, lo, hi, inner: bool, rtol):
    """log of ``int_lo^hi |k(r)|**power r**(d-1) dr`` with the leading power factored out.

    Integrating in ``s = log r`` with the dominant power removed keeps every
    decade O(1), so hundreds of decades never overflow.
    """
    d, a, b, R0, eps = params.d, params.a, params.b, params.R0, params.epsilon
    lead = (a if inner else b)
    gamma = d - (lead + 1) * power
    ref = math.log(hi if inner else lo)

    def integrand(s):
        r = math.exp(s)
        if inner:
            bracket = R0 ** a - R0 ** b * r ** (a - b)
        else:
            bracket = R0 ** a * r ** (b - a) - R0 ** b
        return math.exp(gamma * (s - ref)) * abs(bracket) ** power

    s_lo, s_hi = math.log(lo), math.log(hi)
    points = [math.log(R0)] if s_lo < math.log(R0) < s_hi else None
    val, err = integrate.quad(integrand, s_lo, s_hi, points=points, epsrel=rtol,
                              epsabs=0.0, limit=200)
    if not np.isfinite(val) or (val > 0 and err > 100 * rtol * val + 1e-300):
        raise QuadratureError(f"radial quadrature failed on [{lo:.3g}, {hi:.3g}]", radius=lo)
    if val <= 0:
        return -math.inf
    return power * math.log(eps) + gamma * ref + math.log(val)


def _levels(params, power, radii, inner, tol, quad_rtol):
    logs = np.array([_log_decade_integral(params, power, min(r0, r1), max(r0, r1), inner, quad_rtol)
                     for r0, r1 in zip(radii[:-1], radii[1:])])
    log_cum = np.logaddexp.accumulate(logs)
    log_area = math.log(sphere_area(params.d))
    with np.errstate(over="ignore"):
        values = np.exp((log_area + log_cum) / power)
        increments = np.exp(logs - logs.max())

    tail = increments[-6:]
    ratios = tail[1:] / tail[:-1]
    growing = bool(np.all(ratios >= 1.0 - 1e-9))
    if growing and log_cum[-1] - log_cum[0] > math.log(10.0):
        return LpResult(values, Verdict.DIVERGING, math.inf)

    # Geometric tail: increments decay like rho**k once the leading power dominates.
    rho = float(ratios[-1])
    if not (0.0 <= rho < 1.0):
        raise QuadratureError("level increments neither decay nor grow; increase levels")
    log_tail = logs[-1] + math.log(rho / (1.0 - rho)) if rho > 0 else -math.inf
    extrap = np.logaddexp(log_cum, logs + math.log(rho / (1.0 - rho)) if rho > 0 else -math.inf)
    limits = np.exp((log_area + extrap) / power)
    if abs(limits[-1] - limits[-2]) > tol * limits[-1]:
        raise QuadratureError("extrapolated levels are not Cauchy within tolerance; increase levels")
    value = math.exp((log_area + np.logaddexp(log_cum[-1], log_tail)) / power)
    return LpResult(values, Verdict.CONVERGED, value)


def kernel_lp_ball(params: LJParams, p: float, nu: float, levels: int = 40,
                   tol: float = 1e-8, quad_rtol: float = 1e-11) -> LpResult:
    """``||K||_{L^p(B(0, nu))}`` over inner cutoffs ``nu * 10**-k``, k = 1..levels.

    The verdict is ``DIVERGING`` when the per-decade increments have stopped
    shrinking and the accumulated value exceeds ten times the first level.
    Otherwise the geometric tail is extrapolated and ``CONVERGED`` is
    returned once the extrapolated sequence is Cauchy within ``tol``.
    """
    if not (p >= 1 and nu > 0):
        raise ValueError("need p >= 1 and nu > 0")
    if math.isinf(p):
        raise ValueError("the kernel is unbounded near 0; use p < inf")
    radii = nu * 10.0 ** -np.arange(levels + 1, dtype=float)
    return _levels(params, p, radii, True, tol, quad_rtol)


def kernel_lq_exterior(params: LJParams, q: float, nu: float, levels: int = 40,
                       tol: float = 1e-8, quad_rtol: float = 1e-11) -> LpResult:
    """``||K||_{L^q(B^c(0, nu))}`` over outer radii ``nu * 10**k``, k = 1..levels."""
    if not (q >= 1 and nu > 0):
        raise ValueError("need q >= 1 and nu > 0")
    if math.isinf(q):
        v = kernel_norm_exterior(params, q, nu)
        return LpResult(np.array([v]), Verdict.CONVERGED, v)
    radii = nu * 10.0 ** np.arange(levels + 1, dtype=float)
    return _levels(params, q, radii, False, tol, quad_rtol)


def _power_substituted(params, power, bound, inner, rtol):
    """Norm to the power ``power`` after the substitution ``t = r**gamma``.

    Inside the ball ``gamma = d - (a+1)p > 0`` and the integrand becomes
    bounded; outside, ``t = r**-gamma`` with ``gamma = (b+1)q - d``.
    """
    d, a, b, R0, eps = params.d, params.a, params.b, params.R0, params.epsilon
    if inner:
        gamma = d - (a + 1) * power
        e = (a - b) / gamma

        def g(t):
            return abs(R0 ** a - R0 ** b * t ** e) ** power
        top, root = bound ** gamma, R0 ** gamma
    else:
        gamma = (b + 1) * power - d
        e = (a - b) / gamma

        def g(t):
            return abs(R0 ** a * t ** e - R0 ** b) ** power
        top, root = bound ** -gamma, R0 ** -gamma
    points = [root] if 0 < root < top else None
    val, err = integrate.quad(g, 0.0, top, points=points, epsrel=rtol, epsabs=0.0, limit=500)
    if err > 1e3 * rtol * abs(val):
        raise QuadratureError("substituted radial quadrature did not converge")
    return eps ** power * sphere_area(d) * val / gamma


def kernel_norm_ball(params: LJParams, p: float, nu: float, rtol: float = 1e-12) -> float:
    """``||K||_{L^p(B(0, nu))}`` for ``p`` inside its window."""
    if p not in exponent_windows(params).p_window:
        raise ExponentWindowError(f"p = {p} outside {exponent_windows(params).p_window}")
    return _power_substituted(params, p, nu, True, rtol) ** (1.0 / p)


def kernel_norm_exterior(params: LJParams, q: float, nu: float, rtol: float = 1e-12) -> float:
    """``||K||_{L^q(B^c(0, nu))}`` for ``q`` inside its window (``q = inf`` allowed)."""
    if q not in exponent_windows(params).q_window:
        raise ExponentWindowError(f"q = {q} outside {exponent_windows(params).q_window}")
    if math.isinf(q):
        # |k| on [nu, inf): the endpoint, or the bottom of the attractive well.
        a, b, R0 = params.a, params.b, params.R0
        r_well = R0 * ((a + 1) / (b + 1)) ** (1.0 / (a - b))
        cands = [nu] + ([r_well] if r_well > nu else [])
        return float(np.max(np.abs(force_profile(params, np.array(cands)))))
    return _power_substituted(params, q, nu, False, rtol) ** (1.0 / q)


@dataclass(frozen=True)
class KernelConstants:
    nu: float
    p: float
    q: float
    C1_nu: float
    C2_nu: float
    C_Kpq: float
    C_Delta: float
    C_DeltaKpq: float


def _c_i_nu(params: LJParams, i: int, nu: float) -> float:
    a, b, R0 = params.a, params.b, params.R0
    return max((a + i) * R0 ** a + (b + i) * R0 ** b * nu ** (a - b),
               (a + i) * R0 ** a * nu ** -(a - b) + (b + i) * R0 ** b)


def kernel_constants(params: LJParams, nu: float | None = None, p: float = 1.0,
                     q: float = math.inf) -> KernelConstants:
    """Constants of the convolution bounds.

    ``nu`` defaults to ``max(R0, 1)``.
    """
    nu = max(params.R0, 1.0) if nu is None else nu
    win = exponent_windows(params)
    if p not in win.p_window:
        raise ExponentWindowError(f"p = {p} outside the window {win.p_window}")
    if q not in win.q_window:
        raise ExponentWindowError(f"q = {q} outside the window {win.q_window}")
    C1 = _c_i_nu(params, 1, nu)
    C2 = _c_i_nu(params, 2, nu)
    C_K = max(kernel_norm_ball(params, p, nu), kernel_norm_exterior(params, q, nu))
    d = params.d
    C_D = math.exp(math.lgamma((d + 1) / 2) - math.lgamma(d / 2))
    return KernelConstants(nu, p, q, C1, C2, C_K, C_D, d * C_D * C1 * C_K)


# ---------------------------------------------------------------------------
# mollifier


@dataclass(frozen=True)
class MollifierSpec:
    """Radial ``C^2`` bump ``V(x) = c (1 - |x/rho|**2)**3`` on ``|x| <= rho``.

    ``normalization`` is the constant ``c`` making ``int V = 1``.
    """

    d: int
    profile: str = "poly3"
    support_radius: float = 1.0
    normalization: float = field(init=False)

    def __post_init__(self):
        if self.profile != "poly3":
            raise ValueError(f"unknown mollifier profile {self.profile!r}")
        if not self.support_radius > 0:
            raise ValueError("support_radius must be positive")
        # int_B (1-|x|^2)^3 dx = |S^{d-1}| * B(d/2, 4) / 2
        mass = sphere_area(self.d) * 0.5 * special.beta(self.d / 2, 4) * self.support_radius ** self.d
        object.__setattr__(self, "normalization", 1.0 / mass)


def mollifier_spec(d: int, support_radius: float = 1.0) -> MollifierSpec:
    return MollifierSpec(d=d, support_radius=support_radius)


def _scale(spec: MollifierSpec, N: float, alpha: float) -> tuple[float, float]:
    """Support radius ``w`` and peak-normalization ``c_N`` of ``V_N``."""
    w = spec.support_radius * N ** -alpha
    return w, spec.normalization * (spec.support_radius / w) ** spec.d


def mollifier_value(spec: MollifierSpec, N: float, alpha: float, x):
    """``V_N(x) = N**(d alpha) V(N**alpha x)`` for points ``(..., d)``."""
    w, c = _scale(spec, N, alpha)
    x = np.asarray(x, dtype=float)
    rho2 = np.sum(x * x, axis=-1) / (w * w)
    return np.where(rho2 < 1.0, c * np.clip(1.0 - rho2, 0.0, None) ** 3, 0.0)


def mollifier_grad(spec: MollifierSpec, N: float, alpha: float, x):
    """Gradient of ``V_N`` at points ``(..., d)``."""
    w, c = _scale(spec, N, alpha)
    x = np.asarray(x, dtype=float)
    rho2 = np.sum(x * x, axis=-1) / (w * w)
    coef = np.where(rho2 < 1.0, -6.0 * c / (w * w) * np.clip(1.0 - rho2, 0.0, None) ** 2, 0.0)
    return coef[..., None] * x


# ---------------------------------------------------------------------------
# mollified kernel


@dataclass(frozen=True, eq=False)
class RadialKernelTable:
    """Tabulated profile of ``K_N = K * V_N``; ``K_N(x) = k_N(|x|) x/|x|``."""

    params: LJParams
    N: float
    alpha: float
    radii: np.ndarray
    values: np.ndarray
    crossover_radius: float
    tol: float

    def profile(self, r):
        """``k_N(r)``: interpolated inside the crossover, exact beyond it."""
        r = np.asarray(r, dtype=float)
        inside = r <= self.crossover_radius
        out = np.interp(r, self.radii, self.values)
        if not np.all(inside):
            far = np.where(inside, self.crossover_radius, r)
            out = np.where(inside, out, force_profile(self.params, far))
        return out

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def to_csv(self) -> str:
        lines = ["r,k_N"] + [f"{r!r},{v!r}" for r, v in zip(self.radii.tolist(), self.values.tolist())]
        return "\n".join(lines) + "\n"


_GL_X, _GL_W = np.polynomial.legendre.leggauss(24)


def _angular(d: int, A0: float, A1: float) -> float:
    """``int cos(theta) * max(A0 + A1 cos(theta), 0)**3 dOmega`` over the unit sphere.

    On a partial cap ``A0 + A1 c = A1 (c - c0)`` is used, which avoids the
    cancellation of the expanded polynomial when ``A0`` and ``A1`` are large.
    """
    c0 = -A0 / A1
    if c0 >= 1.0:
        return 0.0
    if c0 <= -1.0:
        if d == 2:
            return math.pi * (3 * A0 * A0 * A1 + 0.75 * A1 ** 3)
        return 2 * math.pi * (2 * A0 * A0 * A1 + 0.4 * A1 ** 3)
    if d == 3:
        v = 1.0 - c0
        return 2 * math.pi * A1 ** 3 * v ** 4 * (c0 / 4 + v / 5)
    if d == 2:
        phi0 = math.acos(c0)
        phi = phi0 * _GL_X
        gap = 2 * np.sin(0.5 * (phi0 + phi)) * np.sin(0.5 * (phi0 - phi))
        return float(phi0 * A1 ** 3 * np.dot(_GL_W, np.cos(phi) * gap ** 3))
    raise NotImplementedError("mollified kernel tables are implemented for d = 2, 3")


def _mollified_profile(params: LJParams, w: float, c: float, r: float, rtol: float):
    """``k_N(r)`` by radial quadrature of the exact angular integral.

    Writing ``z = s omega``, the bump ``V_N(r e1 - z)`` equals
    ``c (A0 + A1 cos)**3`` on a spherical cap, whose angular moment is
    available in closed form (d = 3) or by Gauss-Legendre (d = 2).
    """
    d = params.d
    if r == 0.0:
        return 0.0, 0.0

    def integrand(s):
        A0 = 1.0 - (r * r + s * s) / (w * w)
        A1 = 2.0 * r * s / (w * w)
        return c * _angular(d, A0, A1) * float(force_profile(params, s)) * s ** (d - 1)

    lo, hi = max(0.0, r - w), r + w
    points = [p for p in (w - r, params.R0) if lo < p < hi]
    val, err = integrate.quad(integrand, lo, hi, points=points or None, epsrel=rtol,
                              epsabs=0.0, limit=200)
    return val, err


def build_mollified_kernel(params: LJParams, spec: MollifierSpec, N: float, alpha: float,
                           n_radii: int = 512, tol: float = 1e-3,
                           quad_rtol: float = 1e-9) -> RadialKernelTable:
    """Tabulate ``k_N`` on ``{0} U geomspace`` up to an adaptive crossover radius.

    The crossover starts at ``3 w + R0`` (``w = N**-alpha`` times the support
    radius) and is pushed outwards until the mollified and exact profiles
    agree within ``tol`` relative.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if spec.d != params.d:
        raise ValueError("mollifier and kernel dimensions differ")
    w, c = _scale(spec, N, alpha)
    rc = 3.0 * w + params.R0
    for _ in range(40):
        kn, _ = _mollified_profile(params, w, c, rc, quad_rtol)
        exact = float(force_profile(params, rc))
        if abs(kn - exact) <= tol * abs(exact):
            break
        rc *= 1.25
    else:
        raise QuadratureError("mollified profile never met the exact force", radius=rc)

    radii = np.concatenate([[0.0], np.geomspace(1e-3 * w, rc, n_radii - 1)])
    values = np.empty_like(radii)
    errors = np.empty_like(radii)
    for i, r in enumerate(radii):
        values[i], errors[i] = _mollified_profile(params, w, c, float(r), quad_rtol)
    if not np.all(np.isfinite(values)):
        raise QuadratureError("non-finite mollified kernel value",
                              radius=float(radii[~np.isfinite(values)][0]))
    # relative where the profile is sizeable, absolute near its sign change
    allowed = np.maximum(1e3 * quad_rtol * np.abs(values), 1e-9 * np.max(np.abs(values)))
    bad = errors > allowed
    if np.any(bad):
        worst = int(np.argmax(np.where(bad, errors / allowed, 0.0)))
        raise QuadratureError("mollified kernel quadrature tolerance not met",
                              radius=float(radii[worst]))
    return RadialKernelTable(params, float(N), float(alpha), radii, values, float(rc), float(tol))


def eval_KN(table: RadialKernelTable, x):
    """``K_N(x)`` for points ``(..., d)``; the zero vector at ``x = 0``."""
    x = np.asarray(x, dtype=float)
    r = np.sqrt(np.sum(x * x, axis=-1))
    k = table.profile(r)
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(r > 0, k / np.where(r > 0, r, 1.0), 0.0)
    return scale[..., None] * x

