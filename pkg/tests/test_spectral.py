import math

import numpy as np
import pytest

from manl import (
    Grid,
    KernelConfig,
    KernelMode,
    eigen_eval,
    kernel_eval,
    kernel_eval_1d,
    surface_op,
    weyl_count,
)

SPECTRAL = KernelConfig(mode=KernelMode.SPECTRAL)
IMAGES = KernelConfig(mode=KernelMode.IMAGES)


def _quad_nodes(n=4001):
    u = np.linspace(0.0, 1.0, n)
    w = np.full(n, 1.0 / (n - 1))
    w[0] *= 0.5
    w[-1] *= 0.5
    return u, w


@pytest.mark.parametrize("t", [1e-4, 1e-2, 0.3])
@pytest.mark.parametrize("u0", [0.0, 0.31, 0.97])
def test_kernel_mass_conservation(t, u0):
    v, w = _quad_nodes()
    p = kernel_eval_1d(t, u0, v, 0.0, 1.0)
    assert abs(np.sum(p * w) - 1.0) < 1e-9
    assert np.all(p >= -1e-12)


def test_kernel_symmetry():
    t = 0.05
    assert abs(kernel_eval_1d(t, 0.2, 0.7, 0.0, 1.0)
               - kernel_eval_1d(t, 0.7, 0.2, 0.0, 1.0)) < 1e-12


def test_chapman_kolmogorov():
    s, t = 0.013, 0.021
    w_nodes, w = _quad_nodes()
    u0, v0 = 0.3, 0.8
    lhs = kernel_eval_1d(s + t, u0, v0, 0.0, 1.0)
    pw = kernel_eval_1d(s, u0, w_nodes, 0.0, 1.0)
    wv = kernel_eval_1d(t, w_nodes, v0, 0.0, 1.0)
    rhs = float(np.sum(pw * wv * w))
    assert abs(lhs - rhs) < 1e-7


@pytest.mark.parametrize("t", [1e-4, 1e-3, 1e-2, 0.1])
def test_images_vs_spectral(t):
    u = np.linspace(0.0, 1.0, 31)
    for u0 in (0.0, 0.4, 1.0):
        a = kernel_eval_1d(t, u0, u, 0.0, 1.0, IMAGES)
        b = kernel_eval_1d(t, u0, u, 0.0, 1.0, SPECTRAL)
        assert np.max(np.abs(a - b)) < 1e-10


def test_kernel_eval_product_structure(domain2):
    t = 0.02
    box = domain2.box_minus
    x = np.array([0.3, -0.2])
    y = np.array([0.6, -0.9])
    expect = (kernel_eval_1d(t, 0.3, 0.6, 0.0, 1.0)
              * kernel_eval_1d(t, -0.2, -0.9, -1.0, 0.0))
    assert abs(kernel_eval(t, x, y, box) - expect) < 1e-12


def test_grid_semigroup_eigenmode(domain1):
    g = Grid(domain1.box_plus, (96,))
    t = 0.07
    k = 3
    vals = g.sample(lambda x: np.cos(k * math.pi * x))
    out = g.apply_semigroup(t, vals)
    lam = 0.5 * (k * math.pi) ** 2
    assert np.max(np.abs(out - math.exp(-lam * t) * vals)) < 1e-10


def test_grid_semigroup_mass(domain1):
    g = Grid(domain1.box_plus, (128,))
    vals = g.sample(lambda x: 1.0 + 0.5 * np.cos(math.pi * x) + 0.2 * np.cos(4 * math.pi * x))
    m0 = g.integrate(vals)
    m1 = g.integrate(g.apply_semigroup(0.4, vals))
    assert abs(m1 - m0) < 1e-12


def test_coeff_roundtrip_bandlimited(domain1, rng):
    # The transform pair is exact on cosine polynomials below the grid's
    # Nyquist mode (the property the spectral solvers rely on).
    g = Grid(domain1.box_plus, (64,))
    x = g.axis_nodes(0)
    vals = sum(rng.normal() * np.cos(k * math.pi * x) for k in range(32))
    back = g.from_coeffs(g.to_coeffs(vals))
    assert np.max(np.abs(back - vals)) < 1e-10


def test_eigen_decay():
    # The adaptive spectral cutoff keeps the truncated eigenvalue tail
    # below 1e-8 of the total kernel mass.
    from manl.spectral import _spectral_cutoff

    cfg = KernelConfig()
    for t in (1e-4, 1e-3, 1e-2):
        kmax = _spectral_cutoff(t, 1.0, cfg)
        lam = 0.5 * (np.pi * np.arange(1, 8 * kmax + 1)) ** 2
        w = np.exp(-lam * t)
        tail = np.sum(w[kmax - 1:]) / (1.0 + np.sum(w))
        assert tail < 1e-8


def test_eigen_eval_orthonormal(domain1):
    g = Grid(domain1.box_plus, (256,))
    x = g.axis_nodes(0)
    w = g.weights()
    e2 = eigen_eval((2,), (x,), domain1.box_plus)
    e3 = eigen_eval((3,), (x,), domain1.box_plus)
    assert abs(np.sum(e2 * e2 * w) - 1.0) < 1e-10
    assert abs(np.sum(e2 * e3 * w)) < 1e-10


def test_weyl_count_small_oracles():
    # Brute-force counts of eigenvalues 0.5|pi k|^2 <= x on the unit square.
    def brute(x, d):
        kmax = int(math.isqrt(int(2 * x / math.pi**2))) + 2
        cnt = 0
        for k in np.ndindex(*([kmax + 1] * d)):
            if 0.5 * math.pi**2 * sum(ki * ki for ki in k) <= x:
                cnt += 1
        return cnt

    for x in (10.0, 57.3, 200.0):
        for d in (1, 2):
            assert weyl_count(x, d) == brute(x, d)


def test_weyl_asymptotics_d2():
    # Counting function for -(1/2)Laplacian on the unit square:
    # N(x) ~ |D| omega_2 (2x) / (2 pi)^2 = x / (2 pi).
    x = 4000.0
    n = weyl_count(x, 2)
    assert abs(n / (x / (2 * math.pi)) - 1.0) < 0.1


def test_surface_op_interface_value(domain1):
    # At the interface the reflected kernel equals twice the free Gaussian,
    # so the surface operator acting on g = 1 returns 2/sqrt(2 pi theta).
    theta = 0.01
    val = surface_op(theta, lambda y: 1.0, np.array([0.0]),
                     domain1.box_plus, interface_hi=False)
    assert abs(val - 2.0 / math.sqrt(2 * math.pi * theta)) < 1e-6
