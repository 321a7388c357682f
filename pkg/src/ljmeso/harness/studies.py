"""Study drivers.

Each driver takes a validated :class:`ExperimentConfig` and returns a
:class:`StudyResult`: named tables (lists of row dicts), fits and a summary.
Independent ``(N, seed)`` work items run on a thread pool; results are keyed
and merged in sorted order, so the schedule never shows in the output.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from ..fields import boundary_mass, gaussian_density, norm_lp
from ..fokker_planck import PDESolution, existence_horizon_check, mild_march
from ..kernel import (RadialKernelTable, build_mollified_kernel, exponent_windows, kernel_constants,
                      kernel_lp_ball, kernel_lq_exterior)
from ..meso import (FitResult, MesoParams, Verdict, admissible_alpha, error_series, fit_loglog,
                    sconv_scaling_from_norms, sconv_sup_norms, theoretical_rate)
from ..particles import (GaussianU0, SimulationConfig, Trajectory, cutoff_build, cutoff_threshold,
                         simulate)
from .config import ExperimentConfig

__all__ = ["StudyResult", "StudyContext", "prepare", "run_study", "analyze_kernel", "solve_pde",
           "simulate_study", "convergence_study", "coincidence_study", "sconv_study",
           "fit_row", "moment_estimate", "convergence_verdict"]


@dataclass
class StudyResult:
    name: str
    tables: dict[str, list[dict]] = field(default_factory=dict)
    raw_files: dict[str, str] = field(default_factory=dict)
    fits: dict[str, FitResult] = field(default_factory=dict)
    summary: dict = field(default_factory=dict)


@dataclass
class StudyContext:
    """Objects shared by all work items of a study."""

    cfg: ExperimentConfig
    constants: object
    u0_field: object
    u0_law: GaussianU0
    seeds: tuple[int, ...]
    threads: int = 1
    _solution: PDESolution | None = None
    _tables: dict = field(default_factory=dict)

    @property
    def solution(self) -> PDESolution:
        if self._solution is None:
            self._solution = mild_march(self.u0_field, self.cfg.pde, self.constants,
                                        waive_horizon=self.cfg.waive_horizon)
        return self._solution

    def table(self, N: int) -> RadialKernelTable:
        if N not in self._tables:
            self._tables[N] = build_mollified_kernel(
                self.cfg.kernel, self.cfg.mollifier, N, self.cfg.alpha,
                n_radii=self.cfg.table_radii, tol=self.cfg.table_tol)
        return self._tables[N]

    def meso(self, N: int) -> MesoParams:
        return MesoParams(self.cfg.alpha, N, self.cfg.beta, self.cfg.r, self.cfg.grid.d)

    def cutoff(self):
        cfg = self.cfg
        B = cfg.B_override
        if B is None:
            B = cutoff_threshold(self.constants, cfg.eta, self.solution.sup_norm)
        eta_bar = cfg.eta_bar if cfg.eta_bar is not None else 0.1 * B
        return cutoff_build(B, eta_bar)

    def sim_config(self, N: int, mode: str = "raw", cutoff=None) -> SimulationConfig:
        cfg = self.cfg
        return SimulationConfig(self.table(N), N, cfg.pde.dt, cfg.pde.n_steps, self.u0_law, mode,
                                cutoff, cfg.record_stride)

    def map(self, fn: Callable, items: list) -> dict:
        """``{item: fn(item)}`` computed on the pool, keys in sorted order."""
        items = sorted(items)
        if self.threads <= 1:
            return {it: fn(it) for it in items}
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            futures = {it: pool.submit(fn, it) for it in items}
            return {it: futures[it].result() for it in items}


def prepare(cfg: ExperimentConfig, threads: int = 1, seed_base: int | None = None) -> StudyContext:
    base = cfg.study.seed_base if seed_base is None else seed_base
    seeds = tuple(base + s for s in range(cfg.study.seeds))
    constants = kernel_constants(cfg.kernel, cfg.nu, cfg.p, cfg.q)
    u0_field = gaussian_density(cfg.grid, cfg.u0_variance)
    return StudyContext(cfg, constants, u0_field, GaussianU0(cfg.grid.d, cfg.u0_variance), seeds,
                        max(1, threads))


def fit_row(name: str, fit: FitResult) -> dict:
    row = {"fit": name, "slope": fit.slope, "intercept": fit.intercept, "stderr": fit.stderr,
           "points": fit.points, "verdict": fit.verdict, "tolerance": fit.tolerance}
    row.update({f"theory_{k}": v for k, v in sorted(fit.theory.items())})
    return row


def moment_estimate(values, m: float) -> float:
    """``(mean |x|^m)^(1/m)``, the empirical ``L^m(Omega)`` norm across seeds."""
    v = np.abs(np.asarray(values, dtype=float))
    return float(np.mean(v ** m) ** (1.0 / m))


def constants_row(ctx: StudyContext) -> dict:
    c = ctx.constants
    return {"nu": c.nu, "p": c.p, "q": c.q, "C1_nu": c.C1_nu, "C2_nu": c.C2_nu, "C_Kpq": c.C_Kpq,
            "C_Delta": c.C_Delta, "C_DeltaKpq": c.C_DeltaKpq}


# ---------------------------------------------------------------------------
# single-purpose studies


def analyze_kernel(ctx: StudyContext) -> StudyResult:
    cfg = ctx.cfg
    params = cfg.kernel
    win = exponent_windows(params)
    res = StudyResult("analyze-kernel")
    res.tables["windows"] = [
        {"window": name, "lower": iv.lo, "upper": iv.hi, "lower_closed": iv.lo_closed,
         "upper_closed": iv.hi_closed, "empty": iv.empty}
        for name, iv in (("p", win.p_window), ("q", win.q_window), ("pbar", win.pbar_window),
                         ("qbar", win.qbar_window))]
    res.tables["constants"] = [constants_row(ctx)]
    ball = kernel_lp_ball(params, cfg.p, cfg.nu)
    rows = [{"norm": "ball_Lp", "exponent": cfg.p, "verdict": ball.verdict, "value": ball.value}]
    if not math.isinf(cfg.q):
        ext = kernel_lq_exterior(params, cfg.q, cfg.nu)
        rows.append({"norm": "exterior_Lq", "exponent": cfg.q, "verdict": ext.verdict,
                     "value": ext.value})
    res.tables["norms"] = rows
    for N in cfg.study.N_list:
        tab = ctx.table(N)
        res.raw_files[f"table_N{N}"] = tab.to_csv()
    res.summary = {"regime": params.regime.value, "constants": constants_row(ctx),
                   "ball_verdict": ball.verdict.value}
    return res


def _solution_rows(sol: PDESolution, r: float) -> list[dict]:
    return [{"t": float(t), "mass": f.integral(), "L1": norm_lp(f, 1), "Lr": norm_lp(f, r),
             "Linf": norm_lp(f, math.inf), "min": float(f.values.min()),
             "boundary_mass": boundary_mass(f)} for t, f in zip(sol.times, sol.fields)]


def solve_pde(ctx: StudyContext) -> StudyResult:
    cfg = ctx.cfg
    report = existence_horizon_check(ctx.u0_field, ctx.constants, cfg.r, cfg.pde.T)
    sol = ctx.solution
    res = StudyResult("solve-pde")
    res.tables["series"] = _solution_rows(sol, cfg.r)
    res.tables["existence"] = [{
        "C_T_u0": report.C_T_u0, "horizon_ok": report.horizon_ok,
        "solution_bound": report.solution_bound, "T_max_estimate": report.T_max_estimate,
        "u0_norm": report.u0_norm, "kernel_off": report.kernel_off,
        "sup_norm": sol.sup_norm, "max_mass_drift": sol.max_mass_drift, "waived": sol.waived}]
    if cfg.grid.d == 2:
        res.raw_files["u_final"] = sol.fields[-1].to_csv()
    res.summary = {"sup_norm": sol.sup_norm, "max_mass_drift": sol.max_mass_drift,
                   "C_T_u0": report.C_T_u0, "horizon_ok": report.horizon_ok}
    return res


def simulate_study(ctx: StudyContext) -> StudyResult:
    cfg = ctx.cfg
    res = StudyResult("simulate")
    items = [(N, s) for N in cfg.study.N_list for s in ctx.seeds]
    trajs = ctx.map(lambda it: simulate(ctx.sim_config(it[0]), it[1]), items)
    rows = []
    for (N, s), tr in trajs.items():
        res.raw_files[f"traj_N{N}_seed{s}"] = tr.to_csv()
        rows.append({"N": N, "seed": s, "max_raw_drift": float(tr.max_raw_drift.max()),
                     "config_hash": tr.config_hash})
    res.tables["runs"] = rows
    return res


# ---------------------------------------------------------------------------
# headline studies


def convergence_verdict(fit: FitResult, medians, rho: float) -> FitResult:
    """Accept when the slope is at most ``-rho/2`` and medians strictly decrease."""
    if fit.verdict is Verdict.DEGENERATE:
        return fit
    med = np.asarray(medians, dtype=float)
    ok = fit.slope <= -0.5 * rho and bool(np.all(np.diff(med) < 0))
    return replace(fit, verdict=Verdict.WITHIN if ok else Verdict.OUTSIDE)


def convergence_study(ctx: StudyContext,
                      density_override: Callable[[Trajectory, PDESolution], Callable] | None = None
                      ) -> StudyResult:
    """Cut-off particle systems against the PDE solution over ``N_list`` and seeds.

    ``density_override(traj, sol)`` may return a ``k -> field`` replacement for
    the empirical densities (a bypass used to test the degenerate path).
    """
    cfg = ctx.cfg
    sol = ctx.solution
    cut = ctx.cutoff()
    Ns = cfg.study.N_list
    for N in Ns:
        ctx.table(N)

    def work(it):
        N, s = it
        tr = simulate(ctx.sim_config(N, "cutoff", cut), s)
        fn = density_override(tr, sol) if density_override else None
        es = error_series(tr, sol, ctx.meso(N), cfg.mollifier, cfg.grid, density_fn=fn)
        return es.sup, float(tr.max_raw_drift.max())

    out = ctx.map(work, [(N, s) for N in Ns for s in ctx.seeds])
    runs = [{"N": N, "seed": s, "sup_error": e, "max_raw_drift": mx, "cutoff_active": mx > cut.B}
            for (N, s), (e, mx) in out.items()]
    summary_rows = []
    for N in sorted(Ns):
        errs = [r["sup_error"] for r in runs if r["N"] == N]
        summary_rows.append({"N": N, "seeds": len(errs),
                             "Lm_error": moment_estimate(errs, cfg.study.m),
                             "median_error": float(np.median(errs)),
                             "min_error": float(np.min(errs)), "max_error": float(np.max(errs))})
    theory = theoretical_rate(ctx.meso(Ns[0]), cfg.study.variant, q=cfg.q)
    fit = fit_loglog([r["N"] for r in summary_rows], [r["Lm_error"] for r in summary_rows],
                     extra_theory={"rho": theory.rho, "threshold": -0.5 * theory.rho})
    fit = convergence_verdict(fit, [r["median_error"] for r in summary_rows], theory.rho)
    res = StudyResult("convergence")
    res.tables["runs"] = runs
    res.tables["summary"] = summary_rows
    res.tables["fit"] = [fit_row("Lm_error", fit)]
    res.fits["Lm_error"] = fit
    res.summary = {"rho": theory.rho, "slope": fit.slope, "verdict": fit.verdict.value,
                   "cutoff_B": cut.B, "cutoff_eta_bar": cut.eta_bar,
                   "admissible_alpha": admissible_alpha(cfg.beta, cfg.grid.d, cfg.r)}
    return res


def coincidence_study(ctx: StudyContext) -> StudyResult:
    """Raw against cut-off systems on shared noise.

    A seed counts as coincident when both runs produce bit-identical
    trajectories; the replayed Wiener increments are compared as well.
    """
    cfg = ctx.cfg
    sol = ctx.solution
    cut = ctx.cutoff()
    Ns = cfg.study.N_list
    for N in Ns:
        ctx.table(N)

    def work(it):
        N, s = it
        raw = simulate(ctx.sim_config(N, "raw"), s, record_wiener=True)
        cutr = simulate(ctx.sim_config(N, "cutoff", cut), s, record_wiener=True)
        same_noise = bool(np.array_equal(raw.wiener, cutr.wiener))
        same = bool(np.array_equal(raw.positions, cutr.positions))
        err = error_series(raw, sol, ctx.meso(N), cfg.mollifier, cfg.grid).sup
        return same, same_noise, err, float(raw.max_raw_drift.max())

    out = ctx.map(work, [(N, s) for N in Ns for s in ctx.seeds])
    runs = [{"N": N, "seed": s, "identical": same, "noise_replayed": noise, "sup_error": err,
             "max_raw_drift": mx} for (N, s), (same, noise, err, mx) in out.items()]
    rows = []
    for N in sorted(Ns):
        sub = [r for r in runs if r["N"] == N]
        rows.append({"N": N, "seeds": len(sub),
                     "coincidence_fraction": sum(r["identical"] for r in sub) / len(sub),
                     "exceed_fraction": sum(r["sup_error"] >= cfg.eta for r in sub) / len(sub),
                     "noise_replayed": all(r["noise_replayed"] for r in sub)})
    fr = [r["coincidence_fraction"] for r in rows]
    res = StudyResult("coincidence")
    res.tables["runs"] = runs
    res.tables["summary"] = rows
    res.summary = {"cutoff_B": cut.B, "cutoff_eta_bar": cut.eta_bar, "eta": cfg.eta,
                   "coincidence_nondecreasing": bool(np.all(np.diff(fr) >= 0))}
    return res


def sconv_study(ctx: StudyContext) -> StudyResult:
    cfg = ctx.cfg
    st = cfg.study
    Ns = st.N_list
    for N in Ns:
        ctx.table(N)

    def work(it):
        N, s = it
        tr = simulate(ctx.sim_config(N, "raw"), s, record_wiener=True)
        return sconv_sup_norms(tr, ctx.meso(N), cfg.mollifier, cfg.grid, st.z, cfg.beta,
                               st.sconv_stride)

    out = ctx.map(work, [(N, s) for N in Ns for s in ctx.seeds])
    norms = {N: np.array([out[(N, s)] for s in ctx.seeds]) for N in Ns}
    fz, fb, rows = sconv_scaling_from_norms(norms, ctx.meso, st.z)
    res = StudyResult("sconv")
    res.tables["runs"] = [{"N": N, "seed": s, "sup_Lz": v[0], "sup_bessel": v[1]}
                          for (N, s), v in out.items()]
    res.tables["summary"] = rows
    res.tables["fit"] = [fit_row("Lz", fz), fit_row("bessel", fb)]
    res.fits = {"Lz": fz, "bessel": fb}
    res.summary = {"slope_Lz": fz.slope, "theory_Lz": fz.theory.get("exponent"),
                   "slope_bessel": fb.slope, "theory_bessel": fb.theory.get("exponent"),
                   "verdict_Lz": fz.verdict.value, "verdict_bessel": fb.verdict.value}
    return res


_DRIVERS = {
    "analyze-kernel": analyze_kernel,
    "solve-pde": solve_pde,
    "simulate": simulate_study,
    "convergence": convergence_study,
    "coincidence": coincidence_study,
    "sconv": sconv_study,
}


def run_study(name: str, ctx: StudyContext) -> StudyResult:
    return _DRIVERS[name](ctx)

