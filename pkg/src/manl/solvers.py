"""Deterministic limit objects: coupled mean-field system, hydrodynamic
pair, backward two-point systems, and the OU covariance calculus (d = 1).

All equations are Volterra integral equations of Duhamel type solved by
Picard iteration on uniform time grids, with the Neumann semigroup
applied exactly in cosine coordinates.  The interface operator
``G_theta`` has a theta^(-1/2) kernel singularity, handled by the exact
substitution theta = tau^2 (a graded mesh of exponent 2): the
transformed integrand is bounded, so plain trapezoid quadrature applies.

Prefactor convention: the backward Duhamel terms are applied with
``BACKWARD_DUHAMEL_PREFACTOR = 1.0``.  Published displays of the
backward systems carry a 1/2 there, but that normalization is
inconsistent with the forward mean-field equation and with the
microscopic mass balance; the particle-level CLT acceptance test is the
arbiter, and it selects 1.  The constant is exposed so either
convention can be run.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .annihilation import AnnihilationKernel
from .geometry import DomainPair
from .spectral import DEFAULT_KERNEL_CONFIG, Grid, KernelConfig, kernel_eval_1d

BACKWARD_DUHAMEL_PREFACTOR = 1.0


@dataclass(frozen=True)
class SolverConfig:
    n_space: int = 256
    n_time: int = 64
    theta_nodes: int = 48
    picard_tol: float = 1e-9
    max_iter: int = 200
    guard: float = 0.25
    allow_beyond_guard: bool = False
    backward_prefactor: float = BACKWARD_DUHAMEL_PREFACTOR
    kernel_cfg: KernelConfig = DEFAULT_KERNEL_CONFIG

    def __post_init__(self):
        if self.n_space < 8 or self.n_time < 4 or self.theta_nodes < 4:
            raise ValueError("resolution too small")
        if self.picard_tol <= 0 or self.max_iter < 1:
            raise ValueError("bad Picard parameters")


def effective_horizon(T: float, c0: float, cfg: SolverConfig) -> float:
    """T0 = min(T, guard / C0^2), the contraction horizon."""
    if c0 <= 0.0:
        return T
    return min(T, cfg.guard / c0**2)


def _check_horizon(T: float, c0: float, cfg: SolverConfig):
    t0 = effective_horizon(T, c0, cfg)
    if T > t0 * (1 + 1e-12) and not cfg.allow_beyond_guard:
        raise ValueError(
            f"requested horizon {T:.4g} exceeds the contraction guard "
            f"T0 = {t0:.4g}; set allow_beyond_guard to override")


@dataclass
class FieldPair:
    """A pair of time-indexed fields on the two boxes (d = 1 grids)."""

    domain: DomainPair
    times: np.ndarray          # (K+1,)
    grid_plus: Grid
    grid_minus: Grid
    values_plus: np.ndarray    # (K+1, n+1)
    values_minus: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def at_time(self, t: float):
        """Linear-in-time interpolation; returns (plus, minus) node arrays."""
        vp = _interp_time(self.times, self.values_plus, t)
        vm = _interp_time(self.times, self.values_minus, t)
        return vp, vm

    def interface_plus(self) -> np.ndarray:
        """u+(t, 0) along the time grid (node x = 0 is the first node)."""
        return self.values_plus[:, 0]

    def interface_minus(self) -> np.ndarray:
        return self.values_minus[:, -1]

    def mass(self, which: str = "plus") -> np.ndarray:
        grid = self.grid_plus if which == "plus" else self.grid_minus
        vals = self.values_plus if which == "plus" else self.values_minus
        w = grid.weights()
        return vals @ w

    def export_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["time", "box", "node", "coordinate", "value"])
            for box, grid, vals in (("plus", self.grid_plus, self.values_plus),
                                    ("minus", self.grid_minus, self.values_minus)):
                xs = grid.axis_nodes(0)
                for k, t in enumerate(self.times):
                    for j, x in enumerate(xs):
                        wr.writerow([f"{t:.17g}", box, j, f"{x:.17g}",
                                     f"{vals[k, j]:.17g}"])

    def export_json(self, path: str) -> None:
        payload = {"times": self.times.tolist(),
                   "n_space": int(self.grid_plus.n[0]),
                   "meta": {k: v for k, v in self.meta.items()},
                   "sup_plus": float(np.abs(self.values_plus).max()),
                   "sup_minus": float(np.abs(self.values_minus).max())}
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=1, sort_keys=True)


def _interp_time(times: np.ndarray, values: np.ndarray, t: float) -> np.ndarray:
    if t <= times[0]:
        return values[0].copy()
    if t >= times[-1]:
        return values[-1].copy()
    k = int(np.searchsorted(times, t) - 1)
    w = (t - times[k]) / (times[k + 1] - times[k])
    return (1 - w) * values[k] + w * values[k + 1]


def _grids(domain: DomainPair, cfg: SolverConfig):
    if domain.d != 1:
        raise NotImplementedError("limit solvers are implemented for d = 1")
    gp = Grid(domain.box_plus, (cfg.n_space,))
    gm = Grid(domain.box_minus, (cfg.n_space,))
    return gp, gm


def _sample(grid: Grid, f) -> np.ndarray:
    if callable(f):
        return np.asarray(f(grid.axis_nodes(0)), dtype=float)
    arr = np.asarray(f, dtype=float)
    if arr.shape != grid.shape:
        raise ValueError("initial data shape does not match the grid")
    return arr.copy()


# ---------------------------------------------------------------------------
# ell-coupling quadrature (d = 1)


def _hat_matrix(nodes: np.ndarray, fine: np.ndarray) -> np.ndarray:
    """Piecewise-linear hat basis evaluated at fine points: (nfine, nnode)."""
    n = nodes.size
    out = np.zeros((fine.size, n))
    idx = np.clip(np.searchsorted(nodes, fine) - 1, 0, n - 2)
    frac = (fine - nodes[idx]) / (nodes[idx + 1] - nodes[idx])
    rows = np.arange(fine.size)
    out[rows, idx] = 1.0 - frac
    out[rows, idx + 1] = frac
    return out


def ell_row_matrix(kern: AnnihilationKernel, x_nodes: np.ndarray,
                   y_grid: Grid, sub: int = 16) -> np.ndarray:
    """W with W[i, :] f(y nodes) ~= int ell(x_i, y) f(y) dy (d = 1).

    Exact for piecewise-linear f: each row integrates ell(x_i, .) against
    the hat basis of y_grid by fine midpoint quadrature restricted to the
    zone support.
    """
    y_nodes = y_grid.axis_nodes(0)
    n = y_nodes.size
    delta = kern.delta
    W = np.zeros((x_nodes.size, n))
    lo, hi = y_grid.box.lo[0], y_grid.box.hi[0]
    # support of ell in y: |y| < delta (interface at whichever end is 0)
    ylo = max(lo, -delta)
    yhi = min(hi, delta)
    if yhi <= ylo:
        return W
    h = y_nodes[1] - y_nodes[0]
    nfine = max(int(math.ceil((yhi - ylo) / h)) * sub, sub)
    yf = ylo + (np.arange(nfine) + 0.5) * (yhi - ylo) / nfine
    wf = (yhi - ylo) / nfine
    H = _hat_matrix(y_nodes, yf) * wf
    amp = kern.amplitude
    for i, x in enumerate(x_nodes):
        if abs(x) >= delta:
            continue
        prof = kern.profile(x * x + yf * yf)
        if not np.any(prof):
            continue
        W[i] = amp * (prof @ H)
    return W


def ell_node_matrix(kern: AnnihilationKernel, gp: Grid, gm: Grid,
                    sub: int = 8) -> np.ndarray:
    """Hat-averaged nodal values of ell on the product grid (d = 1).

    Lbar[i, j] = int int hat_i(x) hat_j(y) ell(x,y) dx dy / (w_i w_j), so
    trapezoid sums against Lbar approximate weak integrals of ell to
    O(h^2) despite the indicator discontinuity.
    """
    xs = gp.axis_nodes(0)
    ys = gm.axis_nodes(0)
    delta = kern.delta
    hx = xs[1] - xs[0]
    nfx = max(int(math.ceil(min(delta, 1.0) / hx)) * sub, sub)
    xf = (np.arange(nfx) + 0.5) * min(delta, 1.0) / nfx
    wfx = min(delta, 1.0) / nfx
    yf = -xf[::-1]
    Hx = _hat_matrix(xs, xf) * wfx
    Hy = _hat_matrix(ys, yf) * wfx
    prof = kern.profile(xf[:, None] ** 2 + yf[None, :] ** 2)
    L = Hx.T @ prof @ Hy
    wx = gp.weights()
    wy = gm.weights()
    return kern.amplitude * L / np.outer(wx, wy)


# ---------------------------------------------------------------------------
# Forward solvers


@dataclass
class PicardDiagnostics:
    iterations: int
    residual: float
    converged: bool


def _etd_coeffs(lam: np.ndarray, h: float):
    """Exact integration of the semigroup against a linear-in-time source.

    For one step, int_0^h e^{-lam (h - s)} [(1 - s/h) S0 + (s/h) S1] ds
    = a * S0 + b * S1.  Closed forms with z = lam h, series for small z;
    unlike a plain trapezoid these stay accurate when lam h >> 1, which
    matters for interface-concentrated sources with slowly decaying
    high-frequency content.
    """
    z = np.asarray(lam, dtype=float) * h
    a = np.empty_like(z)
    b = np.empty_like(z)
    small = z < 1e-4
    zs = z[small]
    a[small] = h * (0.5 - zs / 3.0 + zs ** 2 / 8.0 - zs ** 3 / 30.0)
    b[small] = h * (1.0 - zs / 2.0 + zs ** 2 / 6.0 - zs ** 3 / 24.0) - a[small]
    zl = z[~small]
    e = np.exp(-zl)
    al = h * (1.0 - (1.0 + zl) * e) / zl ** 2
    a[~small] = al
    b[~small] = h * (1.0 - e) / zl - al
    return a, b


def duhamel_path(lams: np.ndarray, S_hat: np.ndarray, h: float) -> np.ndarray:
    """I_k = int_0^{t_k} e^{-lam (t_k - r)} S(r) dr for all k, in mode space.

    ``S_hat`` has shape (K+1, *modes); the source is interpolated linearly
    between time nodes and each interval is integrated exactly via
    ``_etd_coeffs``, accumulated with the semigroup recursion
    I_k = e^{-lam h} I_{k-1} + (a S_{k-1} + b S_k).
    """
    K = S_hat.shape[0] - 1
    a, b = _etd_coeffs(lams, h)
    dec = np.exp(-lams * h)
    out = np.zeros_like(S_hat)
    for k in range(1, K + 1):
        out[k] = dec * out[k - 1] + a * S_hat[k - 1] + b * S_hat[k]
    return out


def duhamel_path_backward(lams: np.ndarray, S_hat: np.ndarray, h: float) -> np.ndarray:
    """J_i = int_{t_i}^{t_K} e^{-lam (r - t_i)} S(r) dr for all i, in mode space."""
    K = S_hat.shape[0] - 1
    a, b = _etd_coeffs(lams, h)
    dec = np.exp(-lams * h)
    out = np.zeros_like(S_hat)
    for i in range(K - 1, -1, -1):
        out[i] = dec * out[i + 1] + b * S_hat[i] + a * S_hat[i + 1]
    return out


def solve_fN(domain: DomainPair, kern: AnnihilationKernel, u0_plus, u0_minus,
             T: float, cfg: SolverConfig = SolverConfig()):
    """The coupled mean-field system at interaction range delta.

    f+_t = P+_t u0+ - int_0^t P+_{t-r} [ f+_r * int ell(., y) f-_r(y) dy ] dr
    and the mirrored equation for f-.  Returns (FieldPair, diagnostics).
    """
    gp, gm = _grids(domain, cfg)
    u0p = _sample(gp, u0_plus)
    u0m = _sample(gm, u0_minus)
    c0 = max(u0p.max(), u0m.max(), 0.0)
    _check_horizon(T, c0, cfg)
    K = cfg.n_time
    times = np.linspace(0.0, T, K + 1)
    Wpm = ell_row_matrix(kern, gp.axis_nodes(0), gm)   # k+(x) = Wpm @ f-
    Wmp = ell_row_matrix(kern, gm.axis_nodes(0), gp)   # k-(y) = Wmp @ f+
    lam_p = gp.lambdas()
    lam_m = gm.lambdas()
    c0p = gp.to_coeffs(u0p)
    c0m = gm.to_coeffs(u0m)
    free_p = np.stack([gp.from_coeffs(c0p * np.exp(-lam_p * t)) for t in times])
    free_m = np.stack([gm.from_coeffs(c0m * np.exp(-lam_m * t)) for t in times])
    fp = free_p.copy()
    fm = free_m.copy()
    h = T / K
    diag = None
    for it in range(cfg.max_iter):
        Sp = fp * (fm @ Wpm.T)
        Sm = fm * (fp @ Wmp.T)
        Sp_hat = np.stack([gp.to_coeffs(Sp[r]) for r in range(K + 1)])
        Sm_hat = np.stack([gm.to_coeffs(Sm[r]) for r in range(K + 1)])
        Ip = duhamel_path(lam_p, Sp_hat, h)
        Im = duhamel_path(lam_m, Sm_hat, h)
        new_p = free_p - np.stack([gp.from_coeffs(Ip[k]) for k in range(K + 1)])
        new_m = free_m - np.stack([gm.from_coeffs(Im[k]) for k in range(K + 1)])
        res = max(np.abs(new_p - fp).max(), np.abs(new_m - fm).max())
        fp, fm = new_p, new_m
        if res < cfg.picard_tol:
            diag = PicardDiagnostics(it + 1, res, True)
            break
    if diag is None:
        diag = PicardDiagnostics(cfg.max_iter, res, False)
    field_pair = FieldPair(domain=domain, times=times, grid_plus=gp, grid_minus=gm,
                           values_plus=fp, values_minus=fm,
                           meta={"kind": "fN", "delta": kern.delta})
    return field_pair, diag


def _surface_kernel_column(theta: float, grid: Grid, interface_hi: bool,
                           cfg: KernelConfig) -> np.ndarray:
    """p(theta, x_nodes, interface) on a 1-d grid."""
    lo, hi = grid.box.lo[0], grid.box.hi[0]
    iface = hi if interface_hi else lo
    return np.asarray(kernel_eval_1d(theta, grid.axis_nodes(0), iface, lo, hi, cfg),
                      dtype=float)


def _graded_surface_integral(t_target: float, grid: Grid, interface_hi: bool,
                             source_at, n_tau: int, kcfg: KernelConfig) -> np.ndarray:
    """int_0^t p(theta, x, iface) c(theta) dtheta with theta = tau^2 grading.

    ``source_at(theta)`` returns the scalar c; the integrand
    2 tau p(tau^2, x, iface) c is bounded (limit 4/sqrt(2 pi) * c at the
    interface node, 0 elsewhere), so trapezoid in tau converges cleanly.
    """
    n1 = grid.shape[0]
    if t_target <= 0:
        return np.zeros(n1)
    tau_max = math.sqrt(t_target)
    taus = np.linspace(0.0, tau_max, n_tau + 1)
    vals = np.zeros((n_tau + 1, n1))
    iface_idx = n1 - 1 if interface_hi else 0
    lim = np.zeros(n1)
    lim[iface_idx] = 4.0 / math.sqrt(2.0 * math.pi)
    vals[0] = lim * source_at(0.0)
    for q in range(1, n_tau + 1):
        th = taus[q] ** 2
        vals[q] = 2.0 * taus[q] * _surface_kernel_column(th, grid, interface_hi, kcfg) \
            * source_at(th)
    return np.trapezoid(vals, taus, axis=0)


def solve_hydro(domain: DomainPair, lambda_eff: float, u0_plus, u0_minus,
                T: float, cfg: SolverConfig = SolverConfig()):
    """The hydrodynamic pair with interface-localized annihilation.

    u+(t) = P+_t u0+ - int_0^t G+_{t-r} ( lambda_eff u+ u- (r) ) dr and the
    mirror equation, where G_theta is the interface surface operator.
    The product u+ u- is evaluated on the interface (d = 1: at 0).
    """
    gp, gm = _grids(domain, cfg)
    u0p = _sample(gp, u0_plus)
    u0m = _sample(gm, u0_minus)
    c0 = max(u0p.max(), u0m.max(), 0.0)
    _check_horizon(T, c0, cfg)
    K = cfg.n_time
    times = np.linspace(0.0, T, K + 1)
    lam_p = gp.lambdas()
    lam_m = gm.lambdas()
    c0p = gp.to_coeffs(u0p)
    c0m = gm.to_coeffs(u0m)
    free_p = np.stack([gp.from_coeffs(c0p * np.exp(-lam_p * t)) for t in times])
    free_m = np.stack([gm.from_coeffs(c0m * np.exp(-lam_m * t)) for t in times])
    up = free_p.copy()
    um = free_m.copy()
    diag = None
    for it in range(cfg.max_iter):
        iface = lambda_eff * up[:, 0] * um[:, -1]  # u+ u- at the interface

        def c_at(tk):
            def src(theta):
                return float(np.interp(tk - theta, times, iface))
            return src

        new_p = free_p.copy()
        new_m = free_m.copy()
        for k in range(1, K + 1):
            src = c_at(times[k])
            new_p[k] -= _graded_surface_integral(times[k], gp, False, src,
                                                 cfg.theta_nodes, cfg.kernel_cfg)
            new_m[k] -= _graded_surface_integral(times[k], gm, True, src,
                                                 cfg.theta_nodes, cfg.kernel_cfg)
        res = max(np.abs(new_p - up).max(), np.abs(new_m - um).max())
        up, um = new_p, new_m
        if res < cfg.picard_tol:
            diag = PicardDiagnostics(it + 1, res, True)
            break
    if diag is None:
        diag = PicardDiagnostics(cfg.max_iter, res, False)
    field_pair = FieldPair(domain=domain, times=times, grid_plus=gp, grid_minus=gm,
                           values_plus=up, values_minus=um,
                           meta={"kind": "hydro", "lambda_eff": lambda_eff})
    return field_pair, diag


def hydro_mass_balance(u: FieldPair, lambda_eff: float) -> float:
    """Max deviation of mass(t) from mass(0) - lambda_eff int u+ u- at I."""
    iface = u.interface_plus() * u.interface_minus()
    dt = np.diff(u.times)
    loss = np.concatenate([[0.0], np.cumsum(0.5 * (iface[1:] + iface[:-1]) * dt)])
    err = 0.0
    for which in ("plus", "minus"):
        m = u.mass(which)
        err = max(err, float(np.abs(m - (m[0] - lambda_eff * loss)).max()))
    return err


# ---------------------------------------------------------------------------
# Backward two-point systems


def obs_to_grids(obs, gp: Grid, gm: Grid):
    """Sample an observable pair (duck-typed: phi_plus / phi_minus on
    stacked points) on solver grids."""
    pts_p = gp.axis_nodes(0)[:, None]
    pts_m = gm.axis_nodes(0)[:, None]
    return (np.asarray(obs.phi_plus(pts_p), dtype=float),
            np.asarray(obs.phi_minus(pts_m), dtype=float))


def solve_QN(domain: DomainPair, kern: AnnihilationKernel, fN: FieldPair,
             s: float, t: float, phi_plus, phi_minus,
             cfg: SolverConfig = SolverConfig()):
    """Backward system for the delta-range evolution family Q^N_{s,t}.

    v+(r) = P+_{t-r} phi+ - pref * int_0^{t-r} P+_theta [ k+ v+ + h+ ](r+theta) dtheta,
    with k+ = <ell, f->_-, h+ = <ell v-, f->_-, and the mirror for v-.
    Returns (FieldPair on [s, t], diagnostics); index 0 is Q_{s,t}phi.
    """
    if not (0.0 <= s <= t <= fN.T + 1e-12):
        raise ValueError("need 0 <= s <= t <= fN horizon")
    gp, gm = fN.grid_plus, fN.grid_minus
    php = _sample(gp, phi_plus)
    phm = _sample(gm, phi_minus)
    c0 = max(float(np.abs(fN.values_plus).max()), float(np.abs(fN.values_minus).max()))
    _check_horizon(t - s if t > s else 0.0, max(c0, 1e-12), cfg)
    K = cfg.n_time
    times = np.linspace(s, t, K + 1)
    h = (t - s) / K if K else 0.0
    lam_p = gp.lambdas()
    lam_m = gm.lambdas()
    Wpm = ell_row_matrix(kern, gp.axis_nodes(0), gm)
    Wmp = ell_row_matrix(kern, gm.axis_nodes(0), gp)
    fpv = np.stack([_interp_time(fN.times, fN.values_plus, r) for r in times])
    fmv = np.stack([_interp_time(fN.times, fN.values_minus, r) for r in times])
    kp = fmv @ Wpm.T   # (K+1, n+1): k+ at each backward node
    km = fpv @ Wmp.T
    cp = gp.to_coeffs(php)
    cm = gm.to_coeffs(phm)
    free_p = np.stack([gp.from_coeffs(cp * np.exp(-lam_p * (t - r))) for r in times])
    free_m = np.stack([gm.from_coeffs(cm * np.exp(-lam_m * (t - r))) for r in times])
    vp = free_p.copy()
    vm = free_m.copy()
    pref = cfg.backward_prefactor
    diag = None
    for it in range(cfg.max_iter):
        Sp = kp * vp + (vm * fmv) @ Wpm.T
        Sm = km * vm + (vp * fpv) @ Wmp.T
        Sp_hat = np.stack([gp.to_coeffs(Sp[r]) for r in range(K + 1)])
        Sm_hat = np.stack([gm.to_coeffs(Sm[r]) for r in range(K + 1)])
        Jp = duhamel_path_backward(lam_p, Sp_hat, h) if K else np.zeros_like(Sp_hat)
        Jm = duhamel_path_backward(lam_m, Sm_hat, h) if K else np.zeros_like(Sm_hat)
        new_p = free_p - pref * np.stack([gp.from_coeffs(Jp[i]) for i in range(K + 1)])
        new_m = free_m - pref * np.stack([gm.from_coeffs(Jm[i]) for i in range(K + 1)])
        res = max(np.abs(new_p - vp).max(), np.abs(new_m - vm).max())
        vp, vm = new_p, new_m
        if res < cfg.picard_tol:
            diag = PicardDiagnostics(it + 1, res, True)
            break
    if diag is None:
        diag = PicardDiagnostics(cfg.max_iter, res, False)
    out = FieldPair(domain=domain, times=times, grid_plus=gp, grid_minus=gm,
                    values_plus=vp, values_minus=vm,
                    meta={"kind": "QN", "delta": kern.delta, "s": s, "t": t})
    return out, diag


def solve_Q(domain: DomainPair, lambda_eff: float, hydro: FieldPair,
            s: float, t: float, phi_plus, phi_minus,
            cfg: SolverConfig = SolverConfig()):
    """Backward system for the limit evolution family Q_{s,t}.

    v+(r) = P+_{t-r} phi+ - pref * int_0^{t-r} G+_theta([v+ + v-] u-)(r+theta) dtheta
    and the mirror with u+; sources live on the interface.
    """
    if not (0.0 <= s <= t <= hydro.T + 1e-12):
        raise ValueError("need 0 <= s <= t <= hydro horizon")
    gp, gm = hydro.grid_plus, hydro.grid_minus
    php = _sample(gp, phi_plus)
    phm = _sample(gm, phi_minus)
    c0 = max(float(np.abs(hydro.values_plus).max()),
             float(np.abs(hydro.values_minus).max()))
    _check_horizon(t - s if t > s else 0.0, max(c0, 1e-12), cfg)
    K = cfg.n_time
    times = np.linspace(s, t, K + 1)
    lam_p = gp.lambdas()
    lam_m = gm.lambdas()
    cp = gp.to_coeffs(php)
    cm = gm.to_coeffs(phm)
    free_p = np.stack([gp.from_coeffs(cp * np.exp(-lam_p * (t - r))) for r in times])
    free_m = np.stack([gm.from_coeffs(cm * np.exp(-lam_m * (t - r))) for r in times])
    up_if = np.interp(times, hydro.times, hydro.interface_plus())
    um_if = np.interp(times, hydro.times, hydro.interface_minus())
    vp = free_p.copy()
    vm = free_m.copy()
    pref = cfg.backward_prefactor
    diag = None
    for it in range(cfg.max_iter):
        vsum = vp[:, 0] + vm[:, -1]
        src_p_series = lambda_eff * vsum * um_if
        src_m_series = lambda_eff * vsum * up_if
        new_p = free_p.copy()
        new_m = free_m.copy()
        for i in range(K):
            rem = t - times[i]

            def mk(series):
                def srcf(theta):
                    return float(np.interp(times[i] + theta, times, series))
                return srcf

            new_p[i] -= pref * _graded_surface_integral(
                rem, gp, False, mk(src_p_series), cfg.theta_nodes, cfg.kernel_cfg)
            new_m[i] -= pref * _graded_surface_integral(
                rem, gm, True, mk(src_m_series), cfg.theta_nodes, cfg.kernel_cfg)
        res = max(np.abs(new_p - vp).max(), np.abs(new_m - vm).max())
        vp, vm = new_p, new_m
        if res < cfg.picard_tol:
            diag = PicardDiagnostics(it + 1, res, True)
            break
    if diag is None:
        diag = PicardDiagnostics(cfg.max_iter, res, False)
    out = FieldPair(domain=domain, times=times, grid_plus=gp, grid_minus=gm,
                    values_plus=vp, values_minus=vm,
                    meta={"kind": "Q", "lambda_eff": lambda_eff, "s": s, "t": t})
    return out, diag


# ---------------------------------------------------------------------------
# Dual transport and covariance calculus


@dataclass(frozen=True)
class DiracMu:
    """A point mass on one box, acting on backward solutions."""

    species: str
    x: float

    def pair(self, vp: np.ndarray, vm: np.ndarray, gp: Grid, gm: Grid) -> float:
        if self.species == "plus":
            return float(np.interp(self.x, gp.axis_nodes(0), vp))
        return float(np.interp(self.x, gm.axis_nodes(0), vm))


@dataclass(frozen=True)
class DensityMu:
    """A density pair acting by integration."""

    dens_plus: np.ndarray
    dens_minus: np.ndarray

    def pair(self, vp: np.ndarray, vm: np.ndarray, gp: Grid, gm: Grid) -> float:
        return float(np.sum(vp * self.dens_plus * gp.weights())
                     + np.sum(vm * self.dens_minus * gm.weights()))


def act_U(mu, backward: FieldPair) -> float:
    """Apply the transported functional: (U_{(s,t)} mu)(phi) = mu(Q_{s,t} phi)."""
    return mu.pair(backward.values_plus[0], backward.values_minus[0],
                   backward.grid_plus, backward.grid_minus)


def _obs_fields(obs, gp: Grid, gm: Grid):
    vp, vm = obs_to_grids(obs, gp, gm)
    return vp, vm


def mart_cov(hydro: FieldPair, obs1, obs2, lambda_eff: float, t: float) -> float:
    """Polarized martingale covariance along the hydrodynamic flow:

    int_0^t [ <grad phi+. grad psi+, u+> + <grad phi-. grad psi-, u->
              + lambda_eff (phi+ + phi-)(psi+ + psi-) u+ u- at I ] ds
    """
    gp, gm = hydro.grid_plus, hydro.grid_minus
    p1, m1 = _obs_fields(obs1, gp, gm)
    p2, m2 = _obs_fields(obs2, gp, gm)
    return _mart_cov_fields(hydro, (p1, m1), (p2, m2), lambda_eff, t)


def _mart_cov_fields(hydro: FieldPair, f1, f2, lambda_eff: float, t: float) -> float:
    gp, gm = hydro.grid_plus, hydro.grid_minus
    gp_w, gm_w = gp.weights(), gm.weights()
    g1p = gp.gradient(f1[0])[0]
    g1m = gm.gradient(f1[1])[0]
    g2p = gp.gradient(f2[0])[0]
    g2m = gm.gradient(f2[1])[0]
    if1 = f1[0][0] + f1[1][-1]
    if2 = f2[0][0] + f2[1][-1]
    mask = hydro.times <= t + 1e-15
    ts = hydro.times[mask]
    vals = np.empty(ts.size)
    for k, _ in enumerate(ts):
        up = hydro.values_plus[k]
        um = hydro.values_minus[k]
        vals[k] = (np.sum(g1p * g2p * up * gp_w) + np.sum(g1m * g2m * um * gm_w)
                   + lambda_eff * if1 * if2 * up[0] * um[-1])
    return float(np.trapezoid(vals, ts))


def q_form(hydro_plus: np.ndarray, hydro_minus: np.ndarray, gp: Grid, gm: Grid,
           f1, f2, lambda_eff: float) -> float:
    """The instantaneous martingale form q_r(a, b) at one time slice."""
    g1p = gp.gradient(f1[0])[0]
    g1m = gm.gradient(f1[1])[0]
    g2p = gp.gradient(f2[0])[0]
    g2m = gm.gradient(f2[1])[0]
    return float(np.sum(g1p * g2p * hydro_plus * gp.weights())
                 + np.sum(g1m * g2m * hydro_minus * gm.weights())
                 + lambda_eff * (f1[0][0] + f1[1][-1]) * (f2[0][0] + f2[1][-1])
                 * hydro_plus[0] * hydro_minus[-1])


def ou_cov(domain: DomainPair, hydro: FieldPair, u0_plus, u0_minus,
           lambda_eff: float, obs1, s: float, obs2, t: float,
           cfg: SolverConfig = SolverConfig()) -> float:
    """Covariance of the limiting OU fluctuation field:

    Cov(Z_s(phi), Z_t(psi)) = Cov_0(Q_{0,s}phi, Q_{0,t}psi)
        + int_0^{s^t} q_r(Q_{r,s}phi, Q_{r,t}psi) dr,
    with Cov_0 the i.i.d.-sampling covariance under u0.
    """
    gp, gm = hydro.grid_plus, hydro.grid_minus
    u0p = _sample(gp, u0_plus)
    u0m = _sample(gm, u0_minus)
    php1, phm1 = _obs_fields(obs1, gp, gm)
    php2, phm2 = _obs_fields(obs2, gp, gm)
    bw1, d1 = solve_Q(domain, lambda_eff, hydro, 0.0, s, php1, phm1, cfg)
    bw2, d2 = solve_Q(domain, lambda_eff, hydro, 0.0, t, php2, phm2, cfg)
    if not (d1.converged and d2.converged):
        raise RuntimeError("backward Picard iteration did not converge")
    a0p, a0m = bw1.values_plus[0], bw1.values_minus[0]
    b0p, b0m = bw2.values_plus[0], bw2.values_minus[0]
    wp, wm = gp.weights(), gm.weights()
    cov0 = (np.sum(a0p * b0p * u0p * wp) - np.sum(a0p * u0p * wp) * np.sum(b0p * u0p * wp)
            + np.sum(a0m * b0m * u0m * wm) - np.sum(a0m * u0m * wm) * np.sum(b0m * u0m * wm))
    smin = min(s, t)
    K = cfg.n_time
    rs = np.linspace(0.0, smin, K + 1)
    vals = np.empty(K + 1)
    for k, r in enumerate(rs):
        a = (_interp_time(bw1.times, bw1.values_plus, r),
             _interp_time(bw1.times, bw1.values_minus, r))
        b = (_interp_time(bw2.times, bw2.values_plus, r),
             _interp_time(bw2.times, bw2.values_minus, r))
        upr = _interp_time(hydro.times, hydro.values_plus, r)
        umr = _interp_time(hydro.times, hydro.values_minus, r)
        vals[k] = q_form(upr, umr, gp, gm, a, b, lambda_eff)
    mart = float(np.trapezoid(vals, rs))
    return float(cov0 + mart)
