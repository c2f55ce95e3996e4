import math

import numpy as np
import pytest

from manl import (
    AnnihilationKernel,
    DomainPair,
    calibrate_kappa,
    ell_eval,
    interface_dist_sq,
    minkowski_ratio,
    pair_kernel_integral,
    unit_ball_volume,
)


def test_unit_ball_volume_oracles():
    assert abs(unit_ball_volume(1) - 2.0) < 1e-14
    assert abs(unit_ball_volume(2) - math.pi) < 1e-14
    assert abs(unit_ball_volume(3) - 4.0 * math.pi / 3.0) < 1e-14


def test_ell_indicator_structure(domain2):
    delta = 0.3
    kern = AnnihilationKernel(domain2, delta)
    x, y = (0.2, 0.3), (0.6, -0.4)  # interface_dist_sq = 0.33 > delta^2
    assert ell_eval(kern, x, y) == 0.0
    x2, y2 = (0.5, 0.1), (0.5, -0.1)  # dist^2 = 0.02 < delta^2
    expect = 1.0 / (unit_ball_volume(3) * delta**3)
    assert abs(ell_eval(kern, x2, y2) - expect) < 1e-12
    assert interface_dist_sq(x2, y2, domain2) < delta**2


def test_ell_scaling_in_lam_hat(domain1):
    k1 = AnnihilationKernel(domain1, 0.2, lam_hat=1.0)
    k2 = AnnihilationKernel(domain1, 0.2, lam_hat=2.5)
    x, y = (0.05,), (-0.05,)
    assert abs(ell_eval(k2, x, y) - 2.5 * ell_eval(k1, x, y)) < 1e-12


def test_lam_hat_zero_allowed_negative_rejected(domain1):
    kern = AnnihilationKernel(domain1, 0.1, lam_hat=0.0)
    assert kern.amplitude == 0.0
    with pytest.raises(ValueError):
        AnnihilationKernel(domain1, 0.1, lam_hat=-1.0)
    with pytest.raises(ValueError):
        AnnihilationKernel(domain1, 0.0)


def test_pair_kernel_integral_is_half_disc_area(domain1):
    # In d = 1 the zone {x^2 + y^2 < delta^2, x > 0 > -y} is a quarter
    # disc; with the normalized kernel amplitude 1/(pi delta^2) the
    # integral of ell over it against f = 1 equals 1/4.
    kern = AnnihilationKernel(domain1, 0.1)
    val = pair_kernel_integral(kern, lambda x, y: np.ones(x.shape[:-1]),
                               n_cells=4096)
    assert abs(val - 0.25) < 1e-3


def test_minkowski_ratio_d1_exact(domain1):
    for delta in (0.1, 0.05):
        r = minkowski_ratio(domain1, delta, n_cells=4096)
        assert abs(r - 0.25) < 5e-3


def test_calibrate_kappa_d1(domain1):
    cal = calibrate_kappa(domain1, [0.1, 0.05, 0.025], n_cells=2048)
    assert cal.converged
    assert abs(cal.kappa - 0.25) < 5e-3
    assert all(i < 0.02 for i in cal.increments[1:])


def test_minkowski_ratio_d2_toward_root2_over_4(domain2):
    # The d = 2 normal-plane reduction converges to sqrt(2)/4; at
    # moderate delta the ratio is already within a few percent.
    r = minkowski_ratio(domain2, 0.04, n_cells=256)
    assert abs(r - math.sqrt(2.0) / 4.0) < 0.02
