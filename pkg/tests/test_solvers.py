import math

import numpy as np
import pytest

from manl import (
    AnnihilationKernel,
    DiracMu,
    DomainPair,
    FieldPair,
    ObservablePair,
    SolverConfig,
    act_U,
    duhamel_path,
    duhamel_path_backward,
    hydro_mass_balance,
    mart_cov,
    ou_cov,
    q_form,
    solve_Q,
    solve_QN,
    solve_fN,
    solve_hydro,
)
from manl.solvers import _etd_coeffs, obs_to_grids

COARSE = SolverConfig(n_space=96, n_time=24, theta_nodes=24)


def _const(x):
    return np.ones_like(np.asarray(x), dtype=float)


def test_etd_coeffs_match_quadrature():
    h = 0.3
    for lam in (0.0, 1e-6, 2.0, 50.0):
        a, b = _etd_coeffs(np.array([lam]), h)
        s = np.linspace(0.0, h, 20001)
        w = np.exp(-lam * (h - s))
        ia = np.trapezoid(w * (1.0 - s / h), s)
        ib = np.trapezoid(w * (s / h), s)
        assert abs(a[0] - ia) < 1e-9
        assert abs(b[0] - ib) < 1e-9


def test_duhamel_path_constant_source():
    # dI/dt = -lam I + S with S constant: I(t) = (S/lam)(1 - e^{-lam t}).
    lam = np.array([3.0])
    h = 0.05
    K = 40
    S = np.full((K + 1, 1), 2.0)
    out = duhamel_path(lam, S, h)
    t = np.arange(K + 1) * h
    exact = (2.0 / 3.0) * (1.0 - np.exp(-3.0 * t))
    assert np.max(np.abs(out[:, 0] - exact)) < 1e-12


def test_duhamel_path_linear_source_exact():
    # The coefficients integrate piecewise-linear sources exactly, so a
    # globally linear source is reproduced to round-off.
    lam = np.array([1.7])
    h = 0.02
    K = 50
    t = np.arange(K + 1) * h
    S = (0.5 + 3.0 * t)[:, None]
    out = duhamel_path(lam, S, h)
    # exact: int_0^t e^{-lam(t-s)} (a0 + a1 s) ds
    a0, a1, L = 0.5, 3.0, 1.7
    exact = (a0 / L) * (1 - np.exp(-L * t)) + (a1 / L**2) * (L * t - 1 + np.exp(-L * t))
    assert np.max(np.abs(out[:, 0] - exact)) < 1e-12


def test_duhamel_backward_mirrors_forward():
    lam = np.array([2.2, 0.0])
    h = 0.04
    K = 30
    rng = np.random.default_rng(1)
    S = rng.normal(size=(K + 1, 2))
    fwd = duhamel_path(lam, S, h)
    bwd = duhamel_path_backward(lam, S[::-1], h)
    assert np.max(np.abs(bwd[::-1] - fwd)) < 1e-12


def test_solve_fN_lam_zero_is_free_heat_flow(domain1):
    kern = AnnihilationKernel(domain1, 0.1, lam_hat=0.0)
    f, diag = solve_fN(domain1, kern, _const, _const, 0.1, COARSE)
    assert diag.converged
    # with no annihilation, constant initial data stays constant
    assert np.max(np.abs(f.values_plus[-1] - 1.0)) < 1e-10
    assert np.max(np.abs(f.values_minus[-1] - 1.0)) < 1e-10


def test_solve_fN_symmetric_initial_data(domain1):
    # symmetric setup: f+ and f- are mirror images at all times
    kern = AnnihilationKernel(domain1, 0.1)
    f, diag = solve_fN(domain1, kern, _const, _const, 0.1, COARSE)
    assert diag.converged
    assert np.max(np.abs(f.values_plus - f.values_minus[:, ::-1])) < 1e-9
    # annihilation destroys mass monotonically
    masses = [f.grid_plus.integrate(v) for v in f.values_plus]
    assert all(m2 < m1 + 1e-12 for m1, m2 in zip(masses, masses[1:]))
    assert masses[-1] < masses[0] - 1e-4


def test_hydro_mass_balance(domain1):
    u, diag = solve_hydro(domain1, 0.25, _const, _const, 0.2, COARSE)
    assert diag.converged
    assert hydro_mass_balance(u, 0.25) < 5e-4


def test_hydro_symmetry_and_positivity(domain1):
    u, _ = solve_hydro(domain1, 0.25, _const, _const, 0.2, COARSE)
    assert np.max(np.abs(u.values_plus - u.values_minus[:, ::-1])) < 1e-9
    assert np.min(u.values_plus) > 0.0
    assert np.max(u.values_plus) <= 1.0 + 1e-9


def test_solve_QN_terminal_condition(domain1):
    kern = AnnihilationKernel(domain1, 0.1)
    f, _ = solve_fN(domain1, kern, _const, _const, 0.08, COARSE)
    ob = ObservablePair(domain1, kp=(1,), km=(2,))
    php_f, phm_f = obs_to_grids(ob, f.grid_plus, f.grid_minus)
    bw, diag = solve_QN(domain1, kern, f, 0.0, 0.08, php_f, phm_f, COARSE)
    assert diag.converged
    php = ob.phi_plus(bw.grid_plus.axis_nodes(0)[:, None])
    phm = ob.phi_minus(bw.grid_minus.axis_nodes(0)[:, None])
    assert np.max(np.abs(bw.values_plus[-1] - php)) < 1e-10
    assert np.max(np.abs(bw.values_minus[-1] - phm)) < 1e-10


def test_QN_converges_to_Q(domain1):
    # The finite-range backward flow approaches the hydrodynamic backward
    # flow as delta -> 0, monotonically over the probed deltas.
    T = 0.08
    lam_eff = 0.25
    u, _ = solve_hydro(domain1, lam_eff, _const, _const, T, COARSE)
    ob = ObservablePair(domain1, kp=(1,), km=(2,))
    php, phm = obs_to_grids(ob, u.grid_plus, u.grid_minus)
    bq, _ = solve_Q(domain1, lam_eff, u, 0.0, T, php, phm, COARSE)
    gaps = []
    for delta in (0.2, 0.1):
        kern = AnnihilationKernel(domain1, delta)
        f, _ = solve_fN(domain1, kern, _const, _const, T, COARSE)
        bn, _ = solve_QN(domain1, kern, f, 0.0, T, php, phm, COARSE)
        gaps.append(float(np.max(np.abs(bn.values_plus[0] - bq.values_plus[0]))))
    assert gaps[1] < gaps[0]
    assert gaps[1] < 0.02


def test_act_U_dirac(domain1):
    u, _ = solve_hydro(domain1, 0.25, _const, _const, 0.05, COARSE)
    ob = ObservablePair(domain1, kp=(0,), km=(0,))
    php, phm = obs_to_grids(ob, u.grid_plus, u.grid_minus)
    phm = 0.0 * phm  # only the plus species observable is active
    bw, _ = solve_Q(domain1, 0.25, u, 0.0, 0.05, php, phm, COARSE)
    mu = DiracMu(species="plus", x=0.5)
    v = act_U(mu, bw)
    # backward flow of phi+ = 1 at a point: close to survival probability <= 1
    assert 0.0 < v <= 1.0 + 1e-9


def test_ou_cov_lambda_off_exact(domain1):
    # With annihilation off, the hydrodynamic limit is free heat flow and
    # the limiting variance of the pairing with (cos k pi x) modes is
    # exactly 1/2 per active species with k >= 1, and 0 for k = 0
    # (particle counts are deterministic).
    u, _ = solve_hydro(domain1, 0.0, _const, _const, 0.1, COARSE)
    ob12 = ObservablePair(domain1, kp=(1,), km=(2,))
    v = ou_cov(domain1, u, _const, _const, 0.0, ob12, 0.1, ob12, 0.1, COARSE)
    assert abs(v - 1.0) < 5e-3
    ob00 = ObservablePair(domain1, kp=(0,), km=(0,))
    v0 = ou_cov(domain1, u, _const, _const, 0.0, ob00, 0.1, ob00, 0.1, COARSE)
    assert abs(v0) < 5e-3


def test_ou_cov_symmetric_in_arguments(domain1):
    u, _ = solve_hydro(domain1, 0.25, _const, _const, 0.08, COARSE)
    o1 = ObservablePair(domain1, kp=(1,), km=(1,))
    o2 = ObservablePair(domain1, kp=(2,), km=(1,))
    a = ou_cov(domain1, u, _const, _const, 0.25, o1, 0.08, o2, 0.08, COARSE)
    b = ou_cov(domain1, u, _const, _const, 0.25, o2, 0.08, o1, 0.08, COARSE)
    assert abs(a - b) < 1e-8


def test_mart_cov_positive_variance(domain1):
    u, _ = solve_hydro(domain1, 0.25, _const, _const, 0.08, COARSE)
    ob = ObservablePair(domain1, kp=(1,), km=(1,))
    v = mart_cov(u, ob, ob, 0.25, 0.08)
    assert v > 0.0


def test_horizon_guard(domain1):
    kern = AnnihilationKernel(domain1, 0.1)
    with pytest.raises(ValueError):
        solve_fN(domain1, kern, _const, _const, 10.0, COARSE)
