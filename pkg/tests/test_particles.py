import itertools
import math

import numpy as np
import pytest

from manl import (
    DomainPair,
    ObservablePair,
    SimConfig,
    candidate_pairs,
    corr_estimate,
    distinct_product_sum,
    distinct_product_sum_brute,
    falling_factorial,
    fluctuation_field,
    init_system,
    load_snapshot,
    martingale_path,
    observe,
    run_ensemble,
    save_snapshot,
    step,
)


def _cfg(N=200, seed=7, **kw):
    return SimConfig(N=N, d=1, c_delta=4.0, seed=seed, **kw)


def test_init_deterministic_and_replica_distinct(domain1):
    cfg = _cfg()
    a = init_system(cfg, domain1, replica=0)
    b = init_system(cfg, domain1, replica=0)
    c = init_system(cfg, domain1, replica=1)
    assert np.array_equal(a.pos_plus, b.pos_plus)
    assert np.array_equal(a.pos_minus, b.pos_minus)
    assert not np.array_equal(a.pos_plus, c.pos_plus)
    assert domain1.box_plus.contains(a.pos_plus[0])
    assert domain1.box_minus.contains(a.pos_minus[0])


def test_run_ensemble_bit_identical(domain1):
    cfg = _cfg(N=150)
    kw = dict(n_steps=40, replicas=3, snapshot_steps=(40,),
              observables=[ObservablePair(domain1, kp=(1,), km=(1,))],
              obs_stride=10)
    r1 = run_ensemble(cfg, domain1, **kw)
    r2 = run_ensemble(cfg, domain1, **kw)
    assert np.array_equal(r1.pair_plus, r2.pair_plus)
    assert np.array_equal(r1.pair_product, r2.pair_product)
    s1, s2 = r1.snapshots[0], r2.snapshots[0]
    for a, b in zip(s1[1:], s2[1:]):
        assert np.array_equal(a, b)


def test_pair_count_conservation(domain1):
    cfg = _cfg(N=300, seed=11)
    res = run_ensemble(cfg, domain1, n_steps=60, replicas=4,
                       observables=[ObservablePair(domain1, kp=(0,), km=(0,))],
                       obs_stride=5)
    ap, am = res.alive_plus, res.alive_minus
    assert np.array_equal(ap, am)                    # equal counts always
    assert np.all(np.diff(ap, axis=1) <= 0)          # never increase
    assert np.any(ap[:, -1] < cfg.N)                 # some annihilation happened


def test_candidate_pairs_binned_equals_brute(domain1):
    cfg = _cfg(N=400, seed=3)
    sys = init_system(cfg, domain1, replica=2)
    sys = step(sys, n_steps=5)
    assert candidate_pairs(sys) == candidate_pairs(sys, brute=True)


def test_observe_matches_recorded_channels(domain1):
    cfg = _cfg(N=250, seed=5)
    ob = ObservablePair(domain1, kp=(2,), km=(1,))
    res = run_ensemble(cfg, domain1, n_steps=8, replicas=1,
                       observables=[ob], obs_stride=8, snapshot_steps=(8,))
    t, pp, pm, ap, am = res.snapshots[0]
    from manl.particles import ParticleEnsemble
    sys = ParticleEnsemble(domain=domain1, cfg=cfg, replica=0,
                           pos_plus=pp[0], pos_minus=pm[0],
                           alive_plus=ap[0], alive_minus=am[0], time=t)
    o = observe(sys, ob)
    assert abs(res.pair_plus[0, -1, 0] - o.pair_plus) < 1e-12
    assert abs(res.pair_minus[0, -1, 0] - o.pair_minus) < 1e-12
    assert abs(res.pair_product[0, -1, 0] - o.pair_product) < 1e-9
    assert res.alive_plus[0, -1] == o.alive_plus


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_distinct_product_sum_vs_brute(k, rng):
    vals = rng.normal(size=(k, 7))
    a = distinct_product_sum(vals)
    b = distinct_product_sum_brute(vals)
    assert abs(a - b) < 1e-10 * max(1.0, abs(b))


def test_falling_factorial():
    assert falling_factorial(10, 3) == 720.0
    assert falling_factorial(5, 0) == 1.0


def test_corr_estimate_matches_enumeration(rng):
    # N = 6 toy: compare the partition-formula estimator against direct
    # enumeration over distinct index tuples.
    N, M = 6, 3
    pos_p = rng.uniform(0.0, 1.0, size=(M, N, 1))
    pos_m = rng.uniform(-1.0, 0.0, size=(M, N, 1))
    alive_p = np.ones((M, N), dtype=np.int64)
    alive_m = np.ones((M, N), dtype=np.int64)
    alive_p[1, :2] = 0
    alive_m[1, :2] = 0
    f1 = lambda x: np.cos(math.pi * x[:, 0])
    f2 = lambda x: np.cos(2 * math.pi * x[:, 0])
    g1 = lambda y: np.cos(math.pi * (y[:, 0] + 1.0))
    est = corr_estimate(pos_p, alive_p, pos_m, alive_m, [f1, f2], [g1], N)
    for r in range(M):
        xs = pos_p[r][alive_p[r].astype(bool)]
        ys = pos_m[r][alive_m[r].astype(bool)]
        sp = sum(f1(xs[[i]]).item() * f2(xs[[j]]).item()
                 for i, j in itertools.permutations(range(len(xs)), 2))
        sm = sum(g1(ys[[i]]).item() for i in range(len(ys)))
        expect = sp * sm / (falling_factorial(N, 2) * falling_factorial(N, 1))
        assert abs(est[r] - expect) < 1e-12


def test_fluctuation_field_ensemble_centering(rng):
    vals = rng.normal(size=50)
    y = fluctuation_field(vals, N=100, centering="ensemble")
    assert abs(y.mean()) < 1e-12
    # leave-one-out centering is a fixed multiple of plain centering
    M = vals.size
    assert np.allclose(y, math.sqrt(100) * (vals - vals.mean()) * M / (M - 1))
    z = fluctuation_field(vals, N=100, centering="solver", center=0.25)
    assert np.allclose(z, 10.0 * (vals - 0.25))


def test_martingale_path_shapes(domain1):
    cfg = _cfg(N=120, seed=9)
    ob = ObservablePair(domain1, kp=(1,), km=(2,))
    res = run_ensemble(cfg, domain1, n_steps=30, replicas=2,
                       observables=[ob], obs_stride=5)
    times, mart, qv = martingale_path(res, obs_index=0)
    assert times.shape == (7,)
    assert mart.shape == (2, 7) and qv.shape == (2, 7)
    assert np.allclose(mart[:, 0], 0.0) and np.allclose(qv[:, 0], 0.0)
    assert np.all(np.diff(qv, axis=1) >= -1e-15)


def test_snapshot_roundtrip(tmp_path, domain1):
    cfg = _cfg(N=80, seed=13)
    sys = step(init_system(cfg, domain1, replica=1), n_steps=12)
    p = str(tmp_path / "snap.npz")
    save_snapshot(p, sys)
    back = load_snapshot(p, cfg, domain1, replica=1)
    assert np.array_equal(back.pos_plus, sys.pos_plus)
    assert np.array_equal(back.alive_minus, sys.alive_minus)
    # continuing from the snapshot matches continuing the original
    a = step(sys, n_steps=5)
    b = step(back, n_steps=5)
    assert np.array_equal(a.pos_plus, b.pos_plus)
    assert np.array_equal(a.alive_plus, b.alive_plus)
