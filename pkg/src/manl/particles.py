"""Interacting particle system: N reflected diffusions per species with
pairwise annihilation at rate ell_delta/N across the interface.

Time stepping: exact reflected Gaussian increments (folding), then an
exponential clock tau ~ Exp(ell(x_i,y_j)/N) for every in-zone pair at the
post-move positions; clocks that ring within dt are processed in
increasing order, each killing both partners unless one is already dead.

All heavy loops live in ``_kernels`` (numba); this module owns
configuration, initialization, observables and estimators.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels as K
from .annihilation import AnnihilationKernel
from .geometry import Box, DomainPair
from .spectral import Grid

def _ramp_density(pts, box: Box):
    d = box.d
    t = (pts[..., d - 1] - box.lo[d - 1]) / (box.hi[d - 1] - box.lo[d - 1])
    return 2.0 * t


def set_threads(n: int | None = None) -> int:
    """Set numba's thread count; MANL_THREADS wins over the default."""
    import numba

    env = os.environ.get("MANL_THREADS")
    if n is None and env is not None:
        n = int(env)
    if n is not None:
        limit = numba.config.NUMBA_NUM_THREADS
        numba.set_num_threads(min(limit, max(1, int(n))))
    return numba.get_num_threads()


@dataclass(frozen=True)
class SimConfig:
    """Scale parameters of one particle system."""

    N: int
    d: int = 1
    c_delta: float = 1.0
    dt: float | None = None
    seed: int = 0
    init_plus: str = "uniform"
    init_minus: str = "uniform"
    lam_hat: float = 1.0
    mollified: bool = False
    ramp_start: float = 0.9
    binning: bool = True

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.c_delta <= 0:
            raise ValueError("c_delta must be positive")
        if self.delta >= 0.5:
            raise ValueError(f"delta_N = {self.delta:.4g} too large; increase N or decrease c_delta")
        if self.dt is not None and self.dt > self.dt_max * (1 + 1e-12):
            raise ValueError(f"dt = {self.dt:.4g} exceeds the guard delta^2/16 = {self.dt_max:.4g}")

    @property
    def delta(self) -> float:
        return (self.c_delta / self.N) ** (1.0 / (2.0 * self.d))

    @property
    def dt_max(self) -> float:
        return self.delta**2 / 16.0

    @property
    def dt_eff(self) -> float:
        return self.dt if self.dt is not None else self.dt_max

    def kernel(self, domain: DomainPair) -> AnnihilationKernel:
        return AnnihilationKernel(domain, self.delta, lam_hat=self.lam_hat,
                                  mollified=self.mollified, ramp_start=self.ramp_start)


@dataclass
class ParticleEnsemble:
    """State of one replica."""

    domain: DomainPair
    cfg: SimConfig
    replica: int
    pos_plus: np.ndarray   # (N, d)
    pos_minus: np.ndarray  # (N, d)
    alive_plus: np.ndarray   # (N,) uint8
    alive_minus: np.ndarray  # (N,) uint8
    time: float = 0.0
    step_index: int = 0

    @property
    def stream(self) -> np.uint64:
        return np.uint64(K.stream_root(self.cfg.seed, self.replica))

    @property
    def n_alive(self) -> tuple:
        return int(self.alive_plus.sum()), int(self.alive_minus.sum())


def _resolve_density(name_or_fn, box: Box):
    if callable(name_or_fn):
        raise TypeError("pass a registered density name; custom callables go "
                        "through register_density()")
    if name_or_fn == "uniform":
        return (lambda pts: np.ones(pts.shape[:-1])), 1.0
    if name_or_fn == "ramp":
        return (lambda pts: _ramp_density(pts, box)), 2.0
    raise ValueError(f"unknown initial density {name_or_fn!r}")


def _check_density_mass(density, box: Box):
    n = 2048 if box.d == 1 else 256
    grid = Grid(box, (n,) * box.d)
    pts = np.stack(grid.meshgrid(), axis=-1)
    mass = grid.integrate(density(pts))
    if abs(mass - 1.0) > 1e-5:
        raise ValueError(f"initial density integrates to {mass:.6g}, not 1")


def _sample_density(rng: np.random.Generator, density, bound: float, box: Box,
                    n: int) -> np.ndarray:
    """Vectorized rejection sampling with an efficiency guard."""
    out = np.empty((n, box.d))
    got = 0
    proposed = 0
    lo = np.asarray(box.lo)
    hi = np.asarray(box.hi)
    while got < n:
        batch = max(2 * (n - got), 1024)
        pts = rng.uniform(lo, hi, size=(batch, box.d))
        u = rng.uniform(0.0, bound, size=batch)
        vals = np.asarray(density(pts), dtype=float)
        if np.any(vals > bound * (1 + 1e-12)):
            raise ValueError("density exceeds its declared bound")
        acc = pts[u < vals]
        take = min(acc.shape[0], n - got)
        out[got:got + take] = acc[:take]
        got += take
        proposed += batch
        if proposed > 64 * n and got < 0.01 * proposed:
            raise RuntimeError("rejection sampling efficiency below 1%")
    return out


def init_system(cfg: SimConfig, domain: DomainPair, replica: int) -> ParticleEnsemble:
    """Draw N i.i.d. particles per species from the initial densities.

    Deterministic per (seed, replica): each species gets its own PCG64
    stream keyed by (seed, replica, species).
    """
    if domain.d != cfg.d:
        raise ValueError("domain dimension does not match config")
    poss = []
    for sp, (box, name) in enumerate([(domain.box_plus, cfg.init_plus),
                                      (domain.box_minus, cfg.init_minus)]):
        density, bound = _resolve_density(name, box)
        _check_density_mass(density, box)
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence(entropy=cfg.seed, spawn_key=(replica, sp))))
        poss.append(_sample_density(rng, density, bound, box, cfg.N))
    alive = np.ones(cfg.N, dtype=np.uint8)
    return ParticleEnsemble(domain=domain, cfg=cfg, replica=replica,
                            pos_plus=poss[0], pos_minus=poss[1],
                            alive_plus=alive.copy(), alive_minus=alive.copy())


# ---------------------------------------------------------------------------
# Observables


@dataclass(frozen=True)
class ObservablePair:
    """A test-function pair (phi+, phi-), each a cosine eigenmode or zero.

    ``kp`` / ``km`` are mode multi-indices; None disables the species.
    These are unnormalized modes: phi(x) = prod_c cos(k_c pi x'_c).
    """

    domain: DomainPair
    kp: tuple | None = None
    km: tuple | None = None

    def __post_init__(self):
        for k in (self.kp, self.km):
            if k is not None and len(k) != self.domain.d:
                raise ValueError("mode multi-index must match dimension")
        if self.kp is None and self.km is None:
            raise ValueError("at least one species must be active")

    def _eval(self, pts, k, box: Box):
        if k is None:
            return np.zeros(np.asarray(pts).shape[:-1])
        pts = np.asarray(pts, dtype=float)
        v = np.ones(pts.shape[:-1])
        for c, kc in enumerate(k):
            xp = (pts[..., c] - box.lo[c]) / (box.hi[c] - box.lo[c])
            v = v * np.cos(kc * math.pi * xp)
        return v

    def phi_plus(self, pts):
        return self._eval(pts, self.kp, self.domain.box_plus)

    def phi_minus(self, pts):
        return self._eval(pts, self.km, self.domain.box_minus)

    def grad_sq(self, pts, species: str):
        k = self.kp if species == "plus" else self.km
        box = self.domain.box_plus if species == "plus" else self.domain.box_minus
        pts = np.asarray(pts, dtype=float)
        if k is None:
            return np.zeros(pts.shape[:-1])
        cosv = []
        sinv = []
        for c, kc in enumerate(k):
            xp = (pts[..., c] - box.lo[c]) / (box.hi[c] - box.lo[c])
            cosv.append(np.cos(kc * math.pi * xp))
            sinv.append(np.sin(kc * math.pi * xp))
        total = np.zeros(pts.shape[:-1])
        for c, kc in enumerate(k):
            term = kc * math.pi / (box.hi[c] - box.lo[c]) * sinv[c]
            for c2 in range(len(k)):
                if c2 != c:
                    term = term * cosv[c2]
            total = total + term**2
        return total

    @property
    def lam_plus(self) -> float:
        """Eigenvalue of -(1/2)Laplacian on phi+ (0 if inactive)."""
        return 0.0 if self.kp is None else 0.5 * math.pi**2 * sum(k * k for k in self.kp)

    @property
    def lam_minus(self) -> float:
        return 0.0 if self.km is None else 0.5 * math.pi**2 * sum(k * k for k in self.km)

    def mode_arrays(self):
        d = self.domain.d
        kp = np.zeros(d) if self.kp is None else np.asarray(self.kp, dtype=float)
        km = np.zeros(d) if self.km is None else np.asarray(self.km, dtype=float)
        return kp, (0.0 if self.kp is None else 1.0), km, (0.0 if self.km is None else 1.0)


@dataclass(frozen=True)
class Observation:
    pair_plus: float
    pair_minus: float
    pair_product: float
    qv_rate: float
    alive_plus: int
    alive_minus: int


def observe(sys: ParticleEnsemble, obs: ObservablePair) -> Observation:
    """Reference (numpy, brute-force) observation of one replica."""
    cfg = sys.cfg
    kern = cfg.kernel(sys.domain)
    ap = sys.alive_plus.astype(bool)
    am = sys.alive_minus.astype(bool)
    xs = sys.pos_plus[ap]
    ys = sys.pos_minus[am]
    fp = obs.phi_plus(xs)
    fm = obs.phi_minus(ys)
    pair_plus = float(fp.sum()) / cfg.N
    pair_minus = float(fm.sum()) / cfg.N
    gsq = float(obs.grad_sq(xs, "plus").sum() + obs.grad_sq(ys, "minus").sum()) / cfg.N
    # brute-force pair terms, chunked over the plus side
    d = sys.domain.d
    pp = 0.0
    ppsq = 0.0
    for i0 in range(0, xs.shape[0], 512):
        xc = xs[i0:i0 + 512]
        dsq = xc[:, None, d - 1] ** 2 + ys[None, :, d - 1] ** 2
        for c in range(d - 1):
            m = np.clip(0.5 * (xc[:, None, c] + ys[None, :, c]), 0.0, 1.0)
            dsq = dsq + (xc[:, None, c] - m) ** 2 + (ys[None, :, c] - m) ** 2
        prof = kern.profile(dsq)
        val = fp[i0:i0 + 512, None] + fm[None, :]
        pp += float(np.sum(prof * val))
        ppsq += float(np.sum(prof * val * val))
    amp = kern.amplitude
    pair_product = amp * pp / cfg.N**2
    pair_sq = amp * ppsq / cfg.N**2
    qv_rate = (gsq + pair_sq) / cfg.N
    return Observation(pair_plus=pair_plus, pair_minus=pair_minus,
                       pair_product=pair_product, qv_rate=qv_rate,
                       alive_plus=int(ap.sum()), alive_minus=int(am.sum()))


# ---------------------------------------------------------------------------
# Stepping


def _box_arrays(domain: DomainPair):
    bp, bm = domain.box_plus, domain.box_minus
    return (np.asarray(bp.lo), np.asarray(bp.hi),
            np.asarray(bm.lo), np.asarray(bm.hi))


def step(sys: ParticleEnsemble, dt: float | None = None, n_steps: int = 1) -> ParticleEnsemble:
    """Advance one replica; returns a new ensemble (inputs untouched)."""
    cfg = sys.cfg
    dt = cfg.dt_eff if dt is None else dt
    if dt > cfg.dt_max * (1 + 1e-12):
        raise ValueError("dt exceeds the guard delta^2/16")
    kern = cfg.kernel(sys.domain)
    lo_p, hi_p, lo_m, hi_m = _box_arrays(sys.domain)
    pos_p = sys.pos_plus.copy()
    pos_m = sys.pos_minus.copy()
    al_p = sys.alive_plus.copy()
    al_m = sys.alive_minus.copy()
    empty_rec = np.zeros((0, 0, 6))
    empty_cnt = np.zeros((0, 2), dtype=np.int64)
    empty_bg = np.zeros((0, 2))
    no_snap = np.zeros(0, dtype=np.int64)
    zd = np.zeros((0, cfg.N, sys.domain.d))
    za = np.zeros((0, cfg.N), dtype=np.uint8)
    K.simulate_one(sys.stream, sys.step_index, n_steps, dt, sys.domain.d,
                   pos_p, pos_m, al_p, al_m,
                   lo_p, hi_p, lo_m, hi_m,
                   cfg.delta, kern.amplitude / cfg.N, cfg.mollified, cfg.ramp_start,
                   cfg.binning, 0,
                   np.zeros((0, sys.domain.d)), np.zeros(0),
                   np.zeros((0, sys.domain.d)), np.zeros(0),
                   empty_rec, empty_cnt,
                   np.zeros((0, 2)), np.zeros((0, 2)), empty_bg,
                   no_snap, zd, zd, za, za)
    return replace(sys, pos_plus=pos_p, pos_minus=pos_m,
                   alive_plus=al_p, alive_minus=al_m,
                   time=sys.time + n_steps * dt, step_index=sys.step_index + n_steps)


def candidate_pairs(sys: ParticleEnsemble, brute: bool = False) -> set:
    """The in-zone alive pair set at the current state (for testing)."""
    cfg = sys.cfg
    N = cfg.N
    buf_p = np.empty(N, dtype=np.int64)
    buf_m = np.empty(N, dtype=np.int64)
    out_i = np.empty(16 * N + 1024, dtype=np.int64)
    out_j = np.empty(16 * N + 1024, dtype=np.int64)
    cnt = K.zone_pairs(sys.pos_plus, sys.pos_minus, sys.alive_plus, sys.alive_minus,
                       sys.domain.d, cfg.delta, not brute, buf_p, buf_m, out_i, out_j)
    if cnt > out_i.shape[0]:
        raise RuntimeError("candidate buffer overflow")
    return set(zip(out_i[:cnt].tolist(), out_j[:cnt].tolist()))


# ---------------------------------------------------------------------------
# Ensemble runs


@dataclass
class EnsembleResult:
    cfg: SimConfig
    domain: DomainPair
    observables: list
    times: np.ndarray            # (n_rec,)
    pair_plus: np.ndarray        # (M, n_rec, n_obs)
    pair_minus: np.ndarray
    grad_sq_plus: np.ndarray
    grad_sq_minus: np.ndarray
    pair_product: np.ndarray
    pair_sq: np.ndarray
    alive_plus: np.ndarray       # (M, n_rec)
    alive_minus: np.ndarray
    bg: np.ndarray | None        # (M, n_rec, 2) or None
    snapshots: list              # [(time, pos_p, pos_m, alive_p, alive_m)]

    @property
    def qv_rate(self) -> np.ndarray:
        return (self.grad_sq_plus + self.grad_sq_minus + self.pair_sq) / self.cfg.N

    @property
    def n_replicas(self) -> int:
        return self.pair_plus.shape[0]


def run_ensemble(cfg: SimConfig, domain: DomainPair, n_steps: int,
                 observables: list | None = None, obs_stride: int = 0,
                 replicas: int = 1, snapshot_steps: tuple = (),
                 bg_grids: tuple | None = None, threads: int | None = None,
                 replica_offset: int = 0) -> EnsembleResult:
    """Simulate `replicas` independent copies in parallel.

    ``bg_grids = (a, b)`` optionally supplies per-recording-time grid
    functions (n_rec, nodes) whose empirical pairings with X+ / X- are
    recorded (d = 1 only).
    """
    set_threads(threads)
    observables = observables or []
    if obs_stride > 0 and n_steps % obs_stride != 0:
        raise ValueError("n_steps must be a multiple of obs_stride")
    M = replicas
    N = cfg.N
    d = domain.d
    n_obs = len(observables)
    n_rec = (n_steps // obs_stride + 1) if obs_stride > 0 else 0
    kern = cfg.kernel(domain)
    lo_p, hi_p, lo_m, hi_m = _box_arrays(domain)

    POS_P = np.empty((M, N, d))
    POS_M = np.empty((M, N, d))
    AL_P = np.empty((M, N), dtype=np.uint8)
    AL_M = np.empty((M, N), dtype=np.uint8)
    streams = np.empty(M, dtype=np.uint64)
    for r in range(M):
        sysr = init_system(cfg, domain, replica_offset + r)
        POS_P[r] = sysr.pos_plus
        POS_M[r] = sysr.pos_minus
        AL_P[r] = sysr.alive_plus
        AL_M[r] = sysr.alive_minus
        streams[r] = sysr.stream

    if n_obs > 0:
        kp = np.zeros((n_obs, d))
        ap = np.zeros(n_obs)
        km = np.zeros((n_obs, d))
        am = np.zeros(n_obs)
        for o, obs in enumerate(observables):
            kp[o], ap[o], km[o], am[o] = obs.mode_arrays()
    else:
        kp = np.zeros((0, d))
        ap = np.zeros(0)
        km = np.zeros((0, d))
        am = np.zeros(0)
    REC = np.zeros((M, n_rec, max(n_obs, 0), 6))
    COUNTS = np.zeros((M, n_rec, 2), dtype=np.int64)
    if bg_grids is not None:
        if d != 1:
            raise NotImplementedError("bg recording implemented for d = 1")
        bg_a, bg_b = (np.ascontiguousarray(g, dtype=float) for g in bg_grids)
        if bg_a.shape[0] != n_rec or bg_b.shape[0] != n_rec:
            raise ValueError("bg grids must have one row per recording time")
        BG_REC = np.zeros((M, n_rec, 2))
    else:
        bg_a = np.zeros((0, 2))
        bg_b = np.zeros((0, 2))
        BG_REC = np.zeros((M, 0, 2))
    snap_steps = np.asarray(sorted(snapshot_steps), dtype=np.int64)
    n_snap = snap_steps.size
    SNAP_P = np.zeros((M, n_snap, N, d))
    SNAP_M = np.zeros((M, n_snap, N, d))
    SNAP_AP = np.zeros((M, n_snap, N), dtype=np.uint8)
    SNAP_AM = np.zeros((M, n_snap, N), dtype=np.uint8)

    K.simulate_ensemble(streams, 0, n_steps, cfg.dt_eff, d,
                        POS_P, POS_M, AL_P, AL_M,
                        lo_p, hi_p, lo_m, hi_m,
                        cfg.delta, kern.amplitude / N, cfg.mollified, cfg.ramp_start,
                        cfg.binning, obs_stride,
                        kp, ap, km, am,
                        REC, COUNTS,
                        bg_a, bg_b, BG_REC,
                        snap_steps, SNAP_P, SNAP_M, SNAP_AP, SNAP_AM)

    if n_rec > 0 and not np.array_equal(COUNTS[:, :, 0], COUNTS[:, :, 1]):
        raise AssertionError("paired-count invariant violated: alive+ != alive-")
    dt = cfg.dt_eff
    times = (np.arange(n_rec) * obs_stride * dt) if n_rec else np.zeros(0)
    amp = kern.amplitude
    snaps = [(float(s * dt), SNAP_P[:, q], SNAP_M[:, q], SNAP_AP[:, q], SNAP_AM[:, q])
             for q, s in enumerate(snap_steps)]
    return EnsembleResult(
        cfg=cfg, domain=domain, observables=list(observables), times=times,
        pair_plus=REC[..., 0] / N, pair_minus=REC[..., 1] / N,
        grad_sq_plus=REC[..., 2] / N, grad_sq_minus=REC[..., 3] / N,
        pair_product=amp * REC[..., 4] / N**2, pair_sq=amp * REC[..., 5] / N**2,
        alive_plus=COUNTS[..., 0] if n_rec else np.zeros((M, 0), dtype=np.int64),
        alive_minus=COUNTS[..., 1] if n_rec else np.zeros((M, 0), dtype=np.int64),
        bg=BG_REC if bg_grids is not None else None,
        snapshots=snaps)


def _cumtrapz(y: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Cumulative trapezoid along the last axis, starting at 0."""
    dx = np.diff(x)
    avg = 0.5 * (y[..., 1:] + y[..., :-1]) * dx
    out = np.zeros_like(y)
    out[..., 1:] = np.cumsum(avg, axis=-1)
    return out


def martingale_path(result: EnsembleResult, obs_index: int = 0):
    """The CLT-normalized martingale and its quadratic variation.

    Returns (times, M, QV) with M, QV of shape (replicas, n_rec):
    M_t = sqrt(N) [pairing_t - pairing_0 - int_0^t drift ds], where
    drift = <(1/2)Lap phi+, X+> + <(1/2)Lap phi-, X-> - pair_product,
    and QV_t = N * int_0^t qv_rate ds.
    """
    obs = result.observables[obs_index]
    N = result.cfg.N
    t = result.times
    pp = result.pair_plus[:, :, obs_index]
    pm = result.pair_minus[:, :, obs_index]
    prod = result.pair_product[:, :, obs_index]
    drift = -obs.lam_plus * pp - obs.lam_minus * pm - prod
    pairing = pp + pm
    mart = math.sqrt(N) * (pairing - pairing[:, :1] - _cumtrapz(drift, t))
    qvr = (result.grad_sq_plus[:, :, obs_index] + result.grad_sq_minus[:, :, obs_index]
           + result.pair_sq[:, :, obs_index]) / N
    qv = N * _cumtrapz(qvr, t)
    return t, mart, qv


def fluctuation_field(values: np.ndarray, N: int, centering: str = "ensemble",
                      center: float | None = None) -> np.ndarray:
    """sqrt(N)-normalized fluctuations of per-replica pairings.

    ``ensemble`` centering uses the leave-one-out ensemble mean;
    ``solver`` centering subtracts the supplied deterministic value.
    """
    v = np.asarray(values, dtype=float)
    if centering == "ensemble":
        M = v.size
        if M < 2:
            raise ValueError("ensemble centering needs at least 2 replicas")
        loo = (v.sum() - v) / (M - 1)
        return math.sqrt(N) * (v - loo)
    if centering == "solver":
        if center is None:
            raise ValueError("solver centering needs a center value")
        return math.sqrt(N) * (v - center)
    raise ValueError(f"unknown centering {centering!r}")


# ---------------------------------------------------------------------------
# Correlation-function estimators


def _set_partitions(k: int):
    if k == 0:
        return [[]]
    smaller = _set_partitions(k - 1)
    out = []
    for part in smaller:
        for b in range(len(part)):
            out.append([blk + ([k - 1] if i == b else []) for i, blk in enumerate(part)])
        out.append(part + [[k - 1]])
    return out


def distinct_product_sum(values: np.ndarray) -> float:
    """Sum over injective index tuples of prod_k values[k, i_k].

    Uses the set-partition (inclusion-exclusion) identity over power
    sums: no O(n_alive^k) enumeration.  ``values`` has shape
    (k_factors, n_alive).
    """
    k = values.shape[0]
    if k == 0:
        return 1.0
    if k > 4:
        raise NotImplementedError("factor counts above 4 not supported")
    total = 0.0
    for part in _set_partitions(k):
        term = 1.0
        for blk in part:
            term *= math.factorial(len(blk) - 1) * float(np.prod(values[blk], axis=0).sum())
            term *= (-1.0) ** (len(blk) - 1)
        total += term
    return total


def distinct_product_sum_brute(values: np.ndarray) -> float:
    """O(n^k) oracle for distinct_product_sum."""
    k, n = values.shape
    import itertools

    total = 0.0
    for idx in itertools.permutations(range(n), k):
        p = 1.0
        for a, i in enumerate(idx):
            p *= values[a, i]
        total += p
    return total


def falling_factorial(N: int, k: int) -> float:
    out = 1.0
    for i in range(k):
        out *= N - i
    return out


def corr_estimate(pos_p: np.ndarray, alive_p: np.ndarray,
                  pos_m: np.ndarray, alive_m: np.ndarray,
                  plus_factors: list, minus_factors: list, N: int) -> np.ndarray:
    """Per-replica estimates of int Phi F^{(n,m)} dx dy.

    Phi is the tensor product of the given factor callables (each maps a
    (n_pts, d) array to values).  Inputs are (M, N, d) stacks; returns an
    (M,) array.  Normalization uses the falling factorials of the fixed
    initial count N, matching the correlation-function definition.
    """
    M = pos_p.shape[0]
    n, m = len(plus_factors), len(minus_factors)
    if n + m > 4:
        raise NotImplementedError("n + m > 4 not supported")
    if M < 1:
        raise ValueError("need at least one replica")
    norm = falling_factorial(N, n) * falling_factorial(N, m)
    out = np.empty(M)
    for r in range(M):
        xs = pos_p[r][alive_p[r].astype(bool)]
        ys = pos_m[r][alive_m[r].astype(bool)]
        sp = 1.0
        if n > 0:
            vp = np.stack([np.asarray(f(xs), dtype=float) for f in plus_factors])
            sp = distinct_product_sum(vp) if xs.shape[0] >= n else 0.0
        sm = 1.0
        if m > 0:
            vm = np.stack([np.asarray(f(ys), dtype=float) for f in minus_factors])
            sm = distinct_product_sum(vm) if ys.shape[0] >= m else 0.0
        out[r] = sp * sm / norm
    return out


def corr_estimate_two_time(snap1, snap2, plus1, minus1, plus2, minus2, N: int) -> np.ndarray:
    """Two-time product estimator: Phi at snapshot 1 times Psi at snapshot 2."""
    e1 = corr_estimate(snap1[1], snap1[3], snap1[2], snap1[4], plus1, minus1, N)
    e2 = corr_estimate(snap2[1], snap2[3], snap2[2], snap2[4], plus2, minus2, N)
    return e1 * e2


def bg_residual(times: np.ndarray, bz_raw: np.ndarray, k_raw: np.ndarray, N: int,
                t_index: int | None = None):
    """Residual E|int_0^t (B Z - K) ds|^2 for the fluctuation generator.

    ``bz_raw`` is the per-replica pairing <a_s, X+> + <b_s, X->;
    ``k_raw`` the per-replica pair_product.  Both are centered by the
    ensemble mean (the definition of Z and K subtracts expectations),
    scaled by sqrt(N), integrated, and the squared integral is averaged
    over replicas.  Returns (residual, standard_error) at t_index
    (default: the final time).
    """
    g = np.asarray(bz_raw) - np.asarray(k_raw)
    g = g - g.mean(axis=0, keepdims=True)
    integ = _cumtrapz(math.sqrt(N) * g, times)
    ti = -1 if t_index is None else t_index
    sq = integ[:, ti] ** 2
    return float(sq.mean()), float(sq.std(ddof=1) / math.sqrt(sq.size))


# ---------------------------------------------------------------------------
# Snapshot I/O

_MAGIC = b"MANL1"


def save_snapshot(path: str, sys: ParticleEnsemble) -> None:
    """Versioned little-endian binary state dump."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<HIIdqQ", 1, sys.domain.d, sys.cfg.N, sys.time,
                             sys.step_index, int(sys.stream)))
        for arr in (sys.pos_plus, sys.pos_minus):
            fh.write(arr.astype("<f8").tobytes())
        for arr in (sys.alive_plus, sys.alive_minus):
            fh.write(arr.astype(np.uint8).tobytes())


def load_snapshot(path: str, cfg: SimConfig, domain: DomainPair,
                  replica: int = 0) -> ParticleEnsemble:
    with open(path, "rb") as fh:
        magic = fh.read(5)
        if magic != _MAGIC:
            raise ValueError("not a MANL1 snapshot")
        fmt = "<HIIdqQ"
        version, d, N, time, step_index, _stream = struct.unpack(fmt, fh.read(struct.calcsize(fmt)))
        if version != 1:
            raise ValueError(f"unsupported snapshot version {version}")
        if d != domain.d or N != cfg.N:
            raise ValueError("snapshot shape does not match config")
        pos_p = np.frombuffer(fh.read(8 * N * d), dtype="<f8").reshape(N, d).copy()
        pos_m = np.frombuffer(fh.read(8 * N * d), dtype="<f8").reshape(N, d).copy()
        al_p = np.frombuffer(fh.read(N), dtype=np.uint8).copy()
        al_m = np.frombuffer(fh.read(N), dtype=np.uint8).copy()
    return ParticleEnsemble(domain=domain, cfg=cfg, replica=replica,
                            pos_plus=pos_p, pos_minus=pos_m,
                            alive_plus=al_p, alive_minus=al_m,
                            time=time, step_index=step_index)
