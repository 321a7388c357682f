"""Experiment configuration: TOML documents with one table per module.

Example::

    [kernel]
    epsilon = 0.005
    R0 = 1.0
    a = 0.8
    b = 0.4
    d = 3
    p = 1.5
    q = 4.0

    [grid]
    L = 5.0
    n = 64

    [pde]
    T = 0.1
    dt = 0.001
    r = 4.0

    [meso]
    alpha = 0.15

    [study]
    kind = "convergence"
    N_list = [128, 256, 512, 1024]
    seeds = 20

Unknown keys are errors. :func:`parse_config` reports every violation at
once, each tagged as malformed input (``config``) or as a regime violation
(``hypothesis``).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Any

import tomli

from ..errors import ConfigError
from ..fields import GridSpec, gaussian_density
from ..fokker_planck import PDEConfig, existence_horizon_check
from ..kernel import (LJParams, MollifierSpec, Regime, conjugate,
                      exponent_windows, kernel_constants)
from ..meso import RateVariant, admissible_alpha

__all__ = ["ExperimentConfig", "StudySpec", "parse_config", "load_config", "STUDY_KINDS"]

STUDY_KINDS = ("kernel", "pde", "simulate", "convergence", "coincidence", "sconv")

_SCHEMA: dict[str, dict[str, tuple[type | tuple, Any]]] = {
    "kernel": {"epsilon": (float, None), "R0": (float, 1.0), "a": (float, None),
               "b": (float, None), "d": (int, None), "nu": (float, None),
               "p": (float, 1.0), "q": ((float, str), "inf")},
    "mollifier": {"profile": (str, "poly3"), "support_radius": (float, 1.0)},
    "grid": {"L": (float, None), "n": (int, None)},
    "pde": {"T": (float, None), "dt": (float, None), "r": (float, None), "beta": (float, 0.0),
            "u0_variance": (float, 0.25), "waive_horizon": (bool, False),
            "snapshot_stride": (int, 10)},
    "meso": {"alpha": (float, None)},
    "cutoff": {"eta": (float, 1.0), "eta_bar": ((float, str), "auto"), "B": (float, None)},
    "particles": {"record_stride": (int, 10), "table_radii": (int, 512),
                  "table_tol": (float, 1e-3)},
    "study": {"kind": (str, "pde"), "N_list": (list, None), "seeds": (int, 20), "m": (float, 2.0),
              "z": (float, 2.0), "claim_coverage": (bool, True), "variant": (str, "Thm61"),
              "seed_base": (int, 0), "sconv_stride": (int, 10)},
}
_REQUIRED_SECTIONS = ("kernel", "grid", "pde", "meso", "study")


@dataclass(frozen=True)
class StudySpec:
    kind: str
    N_list: tuple[int, ...]
    seeds: int
    m: float
    z: float
    claim_coverage: bool
    variant: RateVariant
    seed_base: int
    sconv_stride: int


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """A fully validated experiment."""

    kernel: LJParams
    nu: float
    p: float
    q: float
    mollifier: MollifierSpec
    grid: GridSpec
    pde: PDEConfig
    u0_variance: float
    waive_horizon: bool
    alpha: float
    eta: float
    eta_bar: float | None
    B_override: float | None
    record_stride: int
    table_radii: int
    table_tol: float
    study: StudySpec
    waivers: tuple[str, ...] = ()
    source: dict = field(default_factory=dict)
    digest: str = ""

    @property
    def beta(self) -> float:
        return self.pde.beta

    @property
    def r(self) -> float:
        return self.pde.r


def _coerce(section: str, key: str, value, types, problems) -> Any:
    types = types if isinstance(types, tuple) else (types,)
    if float in types and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if bool not in types and isinstance(value, bool):
        problems.append(("config", f"{section}.{key}: expected {types[0].__name__}, got a boolean"))
        return None
    if not isinstance(value, types):
        names = " or ".join(t.__name__ for t in types)
        problems.append(("config", f"{section}.{key}: expected {names}, got {type(value).__name__}"))
        return None
    return value


def _read(doc: dict, problems: list) -> dict:
    out: dict[str, dict] = {}
    for section in doc:
        if section not in _SCHEMA:
            problems.append(("config", f"unknown section [{section}]"))
    for section, schema in _SCHEMA.items():
        raw = doc.get(section, {})
        if not isinstance(raw, dict):
            problems.append(("config", f"[{section}] must be a table"))
            raw = {}
        if section in _REQUIRED_SECTIONS and section not in doc:
            problems.append(("config", f"missing section [{section}]"))
        vals = {}
        for key in raw:
            if key not in schema:
                problems.append(("config", f"unknown key {section}.{key}"))
        for key, (types, default) in schema.items():
            if key in raw:
                vals[key] = _coerce(section, key, raw[key], types, problems)
            elif default is None and section in _REQUIRED_SECTIONS and key not in ("nu", "B"):
                if section in doc:
                    problems.append(("config", f"missing key {section}.{key}"))
                vals[key] = None
            else:
                vals[key] = default
        out[section] = vals
    return out


def _as_exponent(x, name, problems):
    if isinstance(x, str):
        if x.lower() in ("inf", "infinity"):
            return math.inf
        problems.append(("config", f"{name}: expected a number or \"inf\", got {x!r}"))
        return None
    return x


def _hypothesis_set(params: LJParams, r: float, beta: float) -> tuple[bool, str]:
    """Which of the three parameter regimes of the convergence theorem applies."""
    d, a = params.d, params.a
    if params.regime is Regime.SUB_SINGULAR:
        ok = d >= 3 and r > d and beta == 0
        return ok, "sub-singular regime needs d >= 3, r > d and beta = 0"
    if params.regime is Regime.CRITICAL:
        ok = 0 < beta - d / r < 1
        return ok, "critical regime needs 0 < beta - d/r < 1"
    ok = r > d / (d - 1 - a) and (2 - d + a) < beta - d / r < 1
    return ok, "super-singular regime needs r > d/(d-1-a) and 2-d+a < beta - d/r < 1"


def parse_config(text: str, check_horizon: bool = True, kind: str | None = None) -> ExperimentConfig:
    """Parse and validate a TOML document.

    ``kind`` overrides ``study.kind``, so one document can drive several
    studies.

    Raises
    ------
    ConfigError
        With the full list of violations.
    """
    problems: list[tuple[str, str]] = []
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError([("config", f"malformed TOML: {exc}")]) from exc
    v = _read(doc, problems)
    if problems:
        raise ConfigError(problems)

    k, g, pde, meso, cut, par, st = (v[s] for s in
                                     ("kernel", "grid", "pde", "meso", "cutoff", "particles", "study"))
    waivers: list[str] = []

    params = None
    lj_problems = LJParams.violations(k["epsilon"], k["R0"], k["a"], k["b"], k["d"])
    problems += [("config", m) for m in lj_problems]
    if not lj_problems:
        params = LJParams(k["epsilon"], k["R0"], k["a"], k["b"], k["d"])

    grid = None
    try:
        grid = GridSpec(k["d"] if params else 2, g["L"], g["n"])
    except (ValueError, TypeError) as exc:
        problems.append(("config", f"grid: {exc}"))

    mollifier = None
    try:
        mollifier = MollifierSpec(d=k["d"] if params else 2, profile=v["mollifier"]["profile"],
                                  support_radius=v["mollifier"]["support_radius"])
    except ValueError as exc:
        problems.append(("config", f"mollifier: {exc}"))

    q = _as_exponent(k["q"], "kernel.q", problems)
    p = k["p"]
    nu = k["nu"] if k["nu"] is not None else (max(k["R0"], 1.0) if params else 1.0)
    if params is not None:
        win = exponent_windows(params)
        if p is not None and p not in win.p_window:
            problems.append(("hypothesis", f"p = {p} outside the local integrability window "
                                           f"{win.p_window} of the kernel"))
        if q is not None and q not in win.q_window:
            problems.append(("hypothesis", f"q = {q} outside the far-field integrability window "
                                           f"{win.q_window} of the kernel"))
    if not nu > 0:
        problems.append(("config", "kernel.nu must be positive"))

    T, dt, r, beta = pde["T"], pde["dt"], pde["r"], pde["beta"]
    if not (T and T > 0):
        problems.append(("config", "pde.T must be positive"))
    if not (dt and dt > 0):
        problems.append(("config", "pde.dt must be positive"))
    elif T and T > 0 and abs(T / dt - round(T / dt)) > 1e-9 * max(1.0, T / dt):
        problems.append(("config", f"pde.dt = {dt} does not divide pde.T = {T}"))
    if r is not None and not r > 1:
        problems.append(("config", "pde.r must exceed 1"))
    if r is not None and p is not None and r < conjugate(p):
        problems.append(("hypothesis", f"r = {r} < p' = {conjugate(p):.6g} violates the existence "
                                       "hypothesis r >= p'"))
    if not -2 <= beta <= 2:
        problems.append(("config", "pde.beta must lie in [-2, 2]"))
    if not pde["u0_variance"] > 0:
        problems.append(("config", "pde.u0_variance must be positive"))
    if pde["snapshot_stride"] < 1:
        problems.append(("config", "pde.snapshot_stride must be >= 1"))

    alpha = meso["alpha"]
    if alpha is not None and not 0 < alpha < 1:
        problems.append(("config", f"meso.alpha = {alpha} must lie in (0, 1)"))

    kind = kind or st["kind"]
    if kind not in STUDY_KINDS:
        problems.append(("config", f"study.kind must be one of {', '.join(STUDY_KINDS)}, got {kind!r}"))
    N_list = st["N_list"] or []
    if not all(isinstance(n, int) and not isinstance(n, bool) and n >= 1 for n in N_list):
        problems.append(("config", "study.N_list must hold positive integers"))
        N_list = []
    if kind in ("convergence", "coincidence", "sconv") and len(N_list) < 2:
        problems.append(("config", "study.N_list needs at least two particle counts"))
    if kind in ("simulate",) and len(N_list) < 1:
        problems.append(("config", "study.N_list needs a particle count"))
    if kind in ("convergence", "sconv") and st["seeds"] < 2:
        problems.append(("config", "study.seeds must be >= 2 so that the spread can be estimated"))
    if st["seeds"] < 1:
        problems.append(("config", "study.seeds must be >= 1"))
    if not st["m"] >= 1:
        problems.append(("config", "study.m must be >= 1"))
    if not st["z"] >= 1:
        problems.append(("config", "study.z must be >= 1"))
    try:
        variant = RateVariant(st["variant"])
    except ValueError:
        problems.append(("config", f"study.variant must be one of "
                                   f"{', '.join(x.value for x in RateVariant)}"))
        variant = RateVariant.THEOREM
    for key in ("record_stride", "table_radii"):
        if par[key] < 1:
            problems.append(("config", f"particles.{key} must be >= 1"))
    if not cut["eta"] > 0:
        problems.append(("config", "cutoff.eta must be positive"))
    eta_bar = _as_eta_bar(cut["eta_bar"], problems)
    if cut["B"] is not None and not cut["B"] > 0:
        problems.append(("config", "cutoff.B must be positive"))

    if grid is not None and alpha is not None and 0 < alpha < 1 and mollifier is not None:
        for N in N_list:
            w = mollifier.support_radius * N ** -alpha
            if w < 2 * grid.h:
                problems.append(("config", f"N = {N}: mollifier support {w:.4g} is below two grid "
                                           f"spacings {2 * grid.h:.4g}"))

    claims = st["claim_coverage"] and kind in ("convergence", "coincidence")
    if params is not None and r is not None and r > 1 and alpha is not None:
        bound = admissible_alpha(beta, params.d, r)
        if alpha >= bound:
            msg = (f"alpha = {alpha} is not below the admissible mesoscale bound "
                   f"1/(2(beta + d/r')) = {bound:.6g}")
            if claims:
                problems.append(("hypothesis", msg))
            elif kind in ("convergence", "coincidence"):
                waivers.append("uncovered-regime: " + msg)
        ok, msg = _hypothesis_set(params, r, beta)
        if not ok:
            if claims:
                problems.append(("hypothesis", msg))
            elif kind in ("convergence", "coincidence"):
                waivers.append("uncovered-regime: " + msg)

    if problems:
        raise ConfigError(problems)

    pde_cfg = PDEConfig(params, grid, T, dt, r, p, beta, q, pde["snapshot_stride"])
    if check_horizon and kind not in ("simulate", "kernel"):
        consts = kernel_constants(params, nu, p, q)
        report = existence_horizon_check(gaussian_density(grid, pde["u0_variance"]), consts, r, T)
        if not report.horizon_ok:
            msg = (f"existence condition fails: C_T,u0 = {report.C_T_u0:.6g} is outside [0, 1) "
                   f"(largest horizon about {report.T_max_estimate:.6g})")
            if pde["waive_horizon"]:
                waivers.append("uncovered-regime: " + msg)
            else:
                raise ConfigError([("hypothesis", msg)])

    study = StudySpec(kind, tuple(N_list), st["seeds"], st["m"], st["z"], st["claim_coverage"],
                      variant, st["seed_base"], st["sconv_stride"])
    digest = hashlib.sha256(repr(sorted(_flatten(v).items())).encode()).hexdigest()[:16]
    return ExperimentConfig(
        kernel=params, nu=nu, p=p, q=q, mollifier=mollifier, grid=grid, pde=pde_cfg,
        u0_variance=pde["u0_variance"], waive_horizon=pde["waive_horizon"], alpha=alpha,
        eta=cut["eta"], eta_bar=eta_bar, B_override=cut["B"],
        record_stride=par["record_stride"], table_radii=par["table_radii"],
        table_tol=par["table_tol"], study=study, waivers=tuple(waivers), source=v, digest=digest)


def _as_eta_bar(x, problems):
    if isinstance(x, str):
        if x == "auto":
            return None
        problems.append(("config", f"cutoff.eta_bar: expected a number or \"auto\", got {x!r}"))
        return None
    if not x > 0:
        problems.append(("config", "cutoff.eta_bar must be positive"))
    return x


def _flatten(v: dict) -> dict:
    return {f"{s}.{k}": repr(val) for s, sec in v.items() for k, val in sec.items()}


def load_config(path, check_horizon: bool = True, kind: str | None = None) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read(), check_horizon=check_horizon, kind=kind)

