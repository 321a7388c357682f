import math
import warnings

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from ljmeso import rng
from ljmeso.fields import GridSpec, ScalarField, gaussian_density, heat_propagate, norm_intersection
from ljmeso.fokker_planck import PDEConfig, mild_march
from ljmeso.kernel import LJParams, build_mollified_kernel, mollifier_spec, mollifier_value
from ljmeso.meso import (MesoParams, RateVariant, ResolutionError, Verdict, admissible_alpha,
                         empirical_density, error_series, fit_loglog, sconv_norm_scaling,
                         sconv_scaling_from_norms, sconv_sup_norms, stochastic_convolution,
                         theoretical_rate)
from ljmeso.particles import GaussianU0, SimulationConfig, simulate

G2 = GridSpec(2, 4.0, 64)
SPEC2 = mollifier_spec(2)


def _meso(N, alpha=0.3, d=2, r=11.0, beta=0.0):
    return MesoParams(alpha, N, beta, r, d)


# ---------------------------------------------------------------------------
# empirical density


def test_single_particle_on_node_is_the_bump():
    node = np.array([[G2.axis[40], G2.axis[20]]])
    meso = _meso(1, alpha=0.5)
    u = empirical_density(node, meso, SPEC2, G2)
    X, Y = np.meshgrid(G2.axis, G2.axis, indexing="ij")
    bump = mollifier_value(SPEC2, 1, 0.5, np.stack([X - node[0, 0], Y - node[0, 1]], axis=-1))
    bump /= bump.sum() * G2.cell_volume
    assert np.allclose(u.values, bump, rtol=0, atol=1e-12 * bump.max())


@given(st.integers(1, 300), st.integers(0, 1000), st.floats(0.05, 0.45))
@settings(max_examples=30, deadline=None)
def test_density_mass_and_backends(N, seed, alpha):
    assume(SPEC2.support_radius * N ** -alpha >= 2 * G2.h)
    X = 0.8 * rng.normals(seed, rng.STREAM_TEST, 0, np.arange(N), 2)
    meso = _meso(N, alpha)
    u = empirical_density(X, meso, SPEC2, G2)
    assert abs(u.integral() - 1) <= 1e-12
    assert np.all(u.values >= 0)
    ref = empirical_density(X, meso, SPEC2, G2, method="numpy")
    assert np.allclose(u.values, ref.values, rtol=0, atol=1e-12 * max(1.0, ref.values.max()))


def test_coincident_particles_average():
    X = np.array([[0.3, -0.2]])
    one = empirical_density(X, _meso(2), SPEC2, G2)
    two = empirical_density(np.repeat(X, 2, axis=0), _meso(2), SPEC2, G2)
    assert np.allclose(one.values, two.values, rtol=1e-14, atol=0)


def test_density_guards():
    with pytest.raises(ResolutionError):
        empirical_density(np.zeros((1, 2)), _meso(10 ** 6, 0.9), SPEC2, G2)
    with pytest.warns(RuntimeWarning):
        empirical_density(np.array([[4.5, 0.0]]), _meso(1, 0.5), SPEC2, G2)
    with pytest.raises(ValueError):
        MesoParams(1.0, 10, 0.0, 4.0, 3)
    with pytest.raises(ValueError):
        MesoParams(0.2, 10, 0.0, 1.0, 3)
    assert _meso(4, r=4.0).r_conj == pytest.approx(4 / 3)


def test_density_converges_to_smooth_law():
    # many particles from a Gaussian: u_N close to the density
    g = GridSpec(2, 4.0, 64)
    N = 40_000
    X = math.sqrt(0.3) * rng.normals(2, rng.STREAM_TEST, 0, np.arange(N), 2)
    u = empirical_density(X, _meso(N, 0.1), SPEC2, g)
    target = gaussian_density(g, 0.3)
    assert norm_intersection(u - target, 2.0) < 0.1


# ---------------------------------------------------------------------------
# rate calculators


def test_admissible_alpha_examples():
    assert admissible_alpha(0.0, 3, 4.0) == pytest.approx(2 / 9, rel=1e-14)
    assert admissible_alpha(0.99, 2, 11.0) == pytest.approx(1 / (2 * (0.99 + 20 / 11)), rel=1e-14)
    assert admissible_alpha(0.99, 2, 11.0) == pytest.approx(0.17805, abs=1e-5)
    with pytest.raises(ValueError):
        admissible_alpha(0.0, 3, 1.0)


@given(st.floats(0, 3), st.floats(0.01, 2), st.integers(2, 3), st.floats(1.1, 50))
def test_admissible_alpha_decreases_in_beta(beta, dbeta, d, r):
    assert admissible_alpha(beta + dbeta, d, r) < admissible_alpha(beta, d, r)


def test_theoretical_rate_examples():
    b = theoretical_rate(_meso(100, 0.15, 3, 4.0))
    assert b.rho == pytest.approx(0.15)
    assert 0.5 - 0.15 * 9 / 4 == pytest.approx(0.1625)
    assert b.kappa == 0.0 and not b.degenerate
    assert b.sconv_exponent_Lz == pytest.approx(-0.275, abs=1e-14)
    assert b.sconv_exponent_Bessel == pytest.approx(-0.275, abs=1e-14)
    a = theoretical_rate(_meso(100, 0.15, 2, 11.0, beta=0.99))
    assert a.rho == pytest.approx(0.15)
    assert 0.5 - 0.15 * 20 / 11 == pytest.approx(0.2273, abs=5e-5)
    zero = theoretical_rate(_meso(100, 0.15, 3, 4.0), alpha=0.0)
    assert zero.rho == 0.0 and zero.degenerate


def test_theoretical_rate_variants():
    meso = _meso(100, 0.15, 2, 11.0)
    c2 = theoretical_rate(meso, RateVariant.HOLDER_R)
    assert c2.zeta == pytest.approx(1 - 2 / 11)
    assert c2.rho == pytest.approx(min(0.15 * (1 - 2 / 11), 0.5 - 0.15 * 20 / 11))
    c3 = theoretical_rate(meso, "Cor63", q=4.0)
    assert c3.zeta == pytest.approx(0.5)
    with pytest.raises(ValueError):
        theoretical_rate(meso, "Cor63")
    with pytest.warns(RuntimeWarning):
        theoretical_rate(_meso(100, 0.15, 3, 4.0), "Cor63", q=2.0)
    with pytest.warns(RuntimeWarning):
        theoretical_rate(_meso(100, 0.3, 3, 4.0))
    assert theoretical_rate(meso, z=4.0).kappa == pytest.approx(0.5)


# ---------------------------------------------------------------------------
# fits


def test_fit_recovers_power_law():
    Ns = [64, 128, 256, 512]
    fit = fit_loglog(Ns, [3.0 * n ** -0.4 for n in Ns], theory=-0.4)
    assert fit.slope == pytest.approx(-0.4, abs=1e-12)
    assert fit.intercept == pytest.approx(math.log(3.0), abs=1e-12)
    assert fit.stderr < 1e-12 and fit.points == 4 and fit.verdict is Verdict.WITHIN
    assert fit_loglog(Ns, [n ** 0.0 for n in Ns], theory=-0.4).verdict is Verdict.OUTSIDE
    assert fit_loglog(Ns, [n ** -0.9 for n in Ns], theory=-0.4).verdict is Verdict.WITHIN


def test_fit_degenerate():
    assert fit_loglog([1, 2, 4], [0.0, 0.0, 0.0], theory=-0.3).verdict is Verdict.DEGENERATE
    partial = fit_loglog([1, 2, 4], [0.0, 1.0, 0.5])
    assert partial.points == 2 and partial.slope == pytest.approx(-1.0)


def test_scaling_from_injected_norms():
    Ns = [64, 128, 256, 512]
    norms = {N: np.array([[N ** -0.3, 2 * N ** -0.3]] * 3) for N in Ns}
    fz, fb, rows = sconv_scaling_from_norms(norms, lambda N: _meso(N, 0.15, 3, 4.0))
    assert fz.slope == pytest.approx(-0.3, abs=1e-12) and fb.slope == pytest.approx(-0.3, abs=1e-12)
    assert fz.theory["exponent"] == pytest.approx(-0.275)
    assert [r["N"] for r in rows] == Ns and rows[0]["stderr"] == 0.0
    with pytest.raises(ValueError):
        sconv_scaling_from_norms({64: norms[64][:1], 128: norms[128][:1]}, lambda N: _meso(N, 0.15))
    with pytest.raises(ValueError):
        sconv_scaling_from_norms({64: norms[64]}, lambda N: _meso(N, 0.15))
    zero = {N: np.zeros((3, 2)) for N in Ns}
    assert sconv_scaling_from_norms(zero, lambda N: _meso(N, 0.15))[0].verdict is Verdict.DEGENERATE


# ---------------------------------------------------------------------------
# error series


@pytest.fixture(scope="module")
def small_run():
    g = GridSpec(2, 4.0, 64)
    params = LJParams(0.05, 1.0, 0.8, 0.4, 2)
    sol = mild_march(gaussian_density(g, 0.25), PDEConfig(params, g, 0.04, 0.01, 11.0, 1.105))
    table = build_mollified_kernel(params, SPEC2, 200, 0.2)
    traj = simulate(SimulationConfig(table, 200, 0.01, 4, GaussianU0(2, 0.25), record_stride=2),
                    3, record_wiener=True)
    return g, sol, traj


def test_error_series_injection(small_run):
    g, sol, traj = small_run
    meso = _meso(200, 0.2)
    exact = error_series(traj, sol, meso, SPEC2, g, density_fn=lambda k: sol.at(traj.times[k]))
    assert np.all(exact.values == 0) and exact.sup == 0
    real = error_series(traj, sol, meso, SPEC2, g)
    assert np.all(np.isfinite(real.values)) and np.all(real.values > 0)
    assert real.sup == real.values.max() and real.N == 200 and real.seed == 3
    u0N = empirical_density(traj.positions[0], meso, SPEC2, g)
    assert real.values[0] == pytest.approx(norm_intersection(u0N - sol.fields[0], 11.0))
    bump = gaussian_density(g, 0.1, center=(0.5, 0.5)) - gaussian_density(g, 0.1)
    delta = 0.3
    shifted = error_series(traj, sol, meso, SPEC2, g, density_fn=lambda k: empirical_density(
        traj.positions[k], meso, SPEC2, g) + delta * bump)
    assert np.all(shifted.values <= real.values + delta * norm_intersection(bump, 11.0) + 1e-12)


def test_error_series_time_guard(small_run):
    g, sol, traj = small_run
    short = mild_march(sol.fields[0], PDEConfig(sol.config.params, g, 0.02, 0.01, 11.0, 1.105))
    with pytest.raises(ValueError):
        error_series(traj, short, _meso(200, 0.2), SPEC2, g)


# ---------------------------------------------------------------------------
# stochastic convolution


def test_sconv_zero_and_single_step(small_run):
    g, _, traj = small_run
    meso = _meso(200, 0.2)
    zero_traj = type(traj)(traj.times, traj.positions, traj.seed, traj.config_hash, traj.labels,
                           np.zeros_like(traj.wiener), traj.step_positions, None, traj.dt)
    assert np.all(stochastic_convolution(zero_traj, meso, SPEC2, g, 0.04).values == 0)
    assert np.all(stochastic_convolution(traj, meso, SPEC2, g, 0.0).values == 0)
    with pytest.raises(ValueError):
        stochastic_convolution(traj, meso, SPEC2, g, 0.015)
    with pytest.raises(ValueError):
        stochastic_convolution(traj, meso, SPEC2, g, 0.05)


def test_sconv_single_particle_single_step():
    # one step, t = s_1: the field is -(1/N) grad V_N(. - X) . dW with no smoothing
    g = GridSpec(2, 4.0, 128)
    X = np.array([[0.1, -0.2]])
    dW = np.array([[0.3, -0.7]])
    from ljmeso.particles import Trajectory
    traj = Trajectory(np.array([0.0, 0.01]), np.stack([X, X]), 0, "x", np.arange(1, dtype=np.uint64),
                      dW[None], X[None], None, 0.01)
    meso = _meso(1, 0.5)
    fast = stochastic_convolution(traj, meso, SPEC2, g, 0.01)
    slow = stochastic_convolution(traj, meso, SPEC2, g, 0.01, method="numpy")
    assert np.allclose(fast.values, slow.values, rtol=0, atol=1e-10 * np.abs(slow.values).max())
    from ljmeso.kernel import mollifier_grad
    Xg, Yg = np.meshgrid(g.axis, g.axis, indexing="ij")
    z = np.stack([Xg - X[0, 0], Yg - X[0, 1]], axis=-1)
    expected = -np.einsum("...k,k->...", mollifier_grad(SPEC2, 1, 0.5, z), dW[0])
    # spectral round trip of a compactly supported field
    assert np.allclose(fast.values, expected, rtol=0, atol=1e-10 * np.abs(expected).max())


def test_sconv_backends_and_norms(small_run):
    g, _, traj = small_run
    meso = _meso(200, 0.2)
    fast = stochastic_convolution(traj, meso, SPEC2, g, 0.04)
    slow = stochastic_convolution(traj, meso, SPEC2, g, 0.04, method="numpy")
    assert np.allclose(fast.values, slow.values, rtol=0, atol=1e-10 * np.abs(slow.values).max())
    # zero mean up to the Riemann error of a few-cell gradient bump
    assert abs(fast.integral()) < 0.01 * float(np.abs(fast.values).sum()) * g.cell_volume
    nz, nb = sconv_sup_norms(traj, meso, SPEC2, g)
    assert nz == nb > 0
    l2 = math.sqrt(float(np.sum(fast.values ** 2)) * g.cell_volume)
    assert nz >= l2 * (1 - 1e-12)
    nz3, _ = sconv_sup_norms(traj, meso, SPEC2, g, z=3.0)
    _, nb1 = sconv_sup_norms(traj, meso, SPEC2, g, beta=1.0)
    assert nz3 > 0 and nb1 > nz


def test_sconv_recursion_matches_direct_sum(small_run):
    # direct heat propagation of each step's deposit against the recursive form
    from ljmeso.meso import _gradient_deposit, _stencil
    g, _, traj = small_run
    meso = _meso(200, 0.2)
    _, offs = _stencil(SPEC2, 200, 0.2, g)
    total = np.zeros(g.shape)
    steps = traj.wiener.shape[0]
    for n in range(steps):
        dep = _gradient_deposit(traj.step_positions[n], traj.wiener[n], meso, SPEC2, g, offs, "numpy")
        total -= heat_propagate(ScalarField(g, dep / 200), (steps - 1 - n) * traj.dt).values
    rec = stochastic_convolution(traj, meso, SPEC2, g, steps * traj.dt)
    assert np.allclose(rec.values, total, rtol=0, atol=1e-10 * np.abs(total).max())


def test_sconv_scaling_small():
    g = GridSpec(2, 4.0, 64)
    params = LJParams(0.0, 1.0, 0.8, 0.4, 2)
    trajs = {}
    for N in (32, 128):
        table = build_mollified_kernel(params, SPEC2, N, 0.2)
        cfg = SimulationConfig(table, N, 0.01, 5, GaussianU0(2, 0.25))
        trajs[N] = [simulate(cfg, s, record_wiener=True) for s in range(4)]
    fz, fb, rows = sconv_norm_scaling(trajs, lambda N: _meso(N, 0.2), SPEC2, g)
    assert fz.slope < 0 and rows[0]["seed_count"] == 4
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert fz.theory["exponent"] == pytest.approx(-(1 - 0.2 * 2) / 2)
