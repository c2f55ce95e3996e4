"""First-order correlation hierarchy: the five coupled pair-correlation
kernels (G on D+ x D-, G++ and G-- on the same-species products, g+ and
g-) and the 1/N expansion terms A, B they generate (d = 1).

All five solve Duhamel-type Volterra equations with zero initial data,
driven by the mean-field solution f^N; they are solved jointly by Picard
iteration with exact product-semigroup application in cosine coordinates.

Sign structure (constant initial data, small t): the G source carries
the non-negative creation term +f+ f- ell, so G >= 0, while the four
remaining kernels are <= 0 at leading order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .annihilation import AnnihilationKernel
from .geometry import DomainPair
from .solvers import (FieldPair, PicardDiagnostics, _interp_time, duhamel_path,
                      ell_node_matrix, ell_row_matrix)
from .spectral import Grid


@dataclass(frozen=True)
class HierarchyConfig:
    n_space: int = 96
    n_time: int = 32
    picard_tol: float = 1e-8
    max_iter: int = 120

    def __post_init__(self):
        if self.n_space < 8 or self.n_time < 4:
            raise ValueError("resolution too small")


@dataclass
class HierarchySolution:
    domain: DomainPair
    times: np.ndarray
    grid_plus: Grid
    grid_minus: Grid
    G: np.ndarray      # (K+1, np, nm) mixed-pair kernel
    Gpp: np.ndarray    # (K+1, np, np) symmetric
    Gmm: np.ndarray    # (K+1, nm, nm) symmetric
    g_plus: np.ndarray   # (K+1, np)
    g_minus: np.ndarray  # (K+1, nm)
    fN: FieldPair
    kern: AnnihilationKernel
    diagnostics: PicardDiagnostics = None

    def at_time(self, t: float):
        return {name: _interp_time(self.times, arr, t)
                for name, arr in (("G", self.G), ("Gpp", self.Gpp),
                                  ("Gmm", self.Gmm), ("g_plus", self.g_plus),
                                  ("g_minus", self.g_minus))}

    def ell_weighted_G_l1(self) -> np.ndarray:
        """int ell(x~,y)|G_t(x,y)| d(x,x~,y) + int ell(x,y~)|G_t| d(x,y~,y).

        The extra tilde variable is integrated out of ell first, leaving a
        near-interface column-mass weight on one argument of |G|.
        """
        Wpm = ell_row_matrix(self.kern, self.grid_plus.axis_nodes(0), self.grid_minus)
        Wmp = ell_row_matrix(self.kern, self.grid_minus.axis_nodes(0), self.grid_plus)
        mass_y = Wmp.sum(axis=1)   # int ell(x~, y) dx~ as a function of y
        mass_x = Wpm.sum(axis=1)   # int ell(x, y~) dy~ as a function of x
        wp = self.grid_plus.weights()
        wm = self.grid_minus.weights()
        out = np.empty(len(self.times))
        for k, Gt in enumerate(np.abs(self.G)):
            out[k] = float(wp @ Gt @ (mass_y * wm) + (mass_x * wp) @ Gt @ wm)
        return out

    def G_l1(self) -> np.ndarray:
        """int int |G_t| dx dy along the time grid."""
        w = np.outer(self.grid_plus.weights(), self.grid_minus.weights())
        return np.array([float(np.sum(w * np.abs(Gt))) for Gt in self.G])

    def scaling_slopes(self, t_lo_frac: float = 1.0 / 16.0):
        """Log-log slopes of the two G scaling functionals over [T0/16, T0].

        The short-time theory gives int ell |G| ~ sqrt(t) (slope 1/2) and
        int |G| ~ t (slope 1).
        """
        t = self.times
        keep = (t >= t_lo_frac * t[-1] - 1e-15) & (t > 0)
        lt = np.log(t[keep])
        out = {}
        for name, series in (("ell_G", self.ell_weighted_G_l1()),
                             ("G", self.G_l1())):
            y = series[keep]
            if np.any(y <= 0):
                out[name] = float("nan")
                continue
            ly = np.log(y)
            out[name] = float(np.polyfit(lt, ly, 1)[0])
        return out

    def extrema(self):
        return {"G_min": float(self.G.min()), "G_max": float(self.G.max()),
                "Gpp_max": float(self.Gpp.max()), "Gmm_max": float(self.Gmm.max()),
                "g_plus_max": float(self.g_plus.max()),
                "g_minus_max": float(self.g_minus.max())}


def solve_hierarchy(domain: DomainPair, kern: AnnihilationKernel, fN: FieldPair,
                    T: float, cfg: HierarchyConfig = HierarchyConfig()) -> HierarchySolution:
    """Solve the five coupled pair-correlation equations on [0, T]."""
    if domain.d != 1:
        raise NotImplementedError("hierarchy implemented for d = 1")
    if T > fN.T + 1e-12:
        raise ValueError("hierarchy horizon exceeds the mean-field horizon")
    n = cfg.n_space
    gp = Grid(domain.box_plus, (n,))
    gm = Grid(domain.box_minus, (n,))
    K = cfg.n_time
    times = np.linspace(0.0, T, K + 1)
    h = T / K
    xs = gp.axis_nodes(0)
    ys = gm.axis_nodes(0)
    # mean-field fields restricted to the hierarchy grid and time nodes
    def restrict(values, src_grid, dst_nodes):
        in_space = np.stack([np.interp(dst_nodes, src_grid.axis_nodes(0), row)
                             for row in values])
        return np.stack([np.interp(times, fN.times, col)
                         for col in in_space.T]).T

    fp = restrict(fN.values_plus, fN.grid_plus, xs)
    fm = restrict(fN.values_minus, fN.grid_minus, ys)
    Wpm = ell_row_matrix(kern, xs, gm)   # rows: x in D+, integrates over y
    Wmp = ell_row_matrix(kern, ys, gp)   # rows: y in D-, integrates over x
    Lbar = ell_node_matrix(kern, gp, gm)
    kp = fm @ Wpm.T    # (K+1, np) k+ = <ell, f->
    km = fp @ Wmp.T
    lam_p = gp.lambdas()
    lam_m = gm.lambdas()
    lam_pm = lam_p[:, None] + lam_m[None, :]
    lam_pp = lam_p[:, None] + lam_p[None, :]
    lam_mm = lam_m[:, None] + lam_m[None, :]

    def c2(arr, ga, gb):
        from .spectral import _dct1_coeffs
        la = ga.box.hi[0] - ga.box.lo[0]
        lb = gb.box.hi[0] - gb.box.lo[0]
        return _dct1_coeffs(_dct1_coeffs(arr, 0, la), 1, lb)

    def s2(arr, ga, gb):
        from .spectral import _dct1_synth
        la = ga.box.hi[0] - ga.box.lo[0]
        lb = gb.box.hi[0] - gb.box.lo[0]
        return _dct1_synth(_dct1_synth(arr, 0, la), 1, lb)

    G = np.zeros((K + 1, n + 1, n + 1))
    Gpp = np.zeros_like(G)
    Gmm = np.zeros_like(G)
    gP = np.zeros((K + 1, n + 1))
    gM = np.zeros((K + 1, n + 1))
    diag = None
    res = float("inf")
    for it in range(cfg.max_iter):
        # sources at every time node
        SG = np.empty_like(G)
        SPP = np.empty_like(G)
        SMM = np.empty_like(G)
        SgP = np.empty_like(gP)
        SgM = np.empty_like(gM)
        for r in range(K + 1):
            M = G[r] @ Wpm.T                       # M[i,i'] = int ell(x_i', w) G(x_i, w) dw
            Mm = Wmp @ G[r]                        # Mm[j,j'] = int ell(z, y_j) G(z, y_j') dz
            SG[r] = (G[r] * (kp[r][:, None] + km[r][None, :])
                     + fm[r][None, :] * (Gpp[r] @ Wmp.T)
                     + fp[r][:, None] * (Wpm @ Gmm[r].T)
                     - np.outer(fp[r], fm[r]) * Lbar)
            SPP[r] = (Gpp[r] * (kp[r][:, None] + kp[r][None, :])
                      + fp[r][:, None] * M.T + fp[r][None, :] * M)
            SMM[r] = (Gmm[r] * (km[r][:, None] + km[r][None, :])
                      + fm[r][:, None] * Mm + fm[r][None, :] * Mm.T)
            SgP[r] = (gP[r] * kp[r] + fp[r] * (Wpm @ gM[r])
                      + np.einsum("iw,iw->i", Wpm, G[r]))
            SgM[r] = (gM[r] * km[r] + fm[r] * (Wmp @ gP[r])
                      + np.einsum("jz,zj->j", Wmp, G[r]))
        SG_hat = np.stack([c2(SG[r], gp, gm) for r in range(K + 1)])
        SPP_hat = np.stack([c2(SPP[r], gp, gp) for r in range(K + 1)])
        SMM_hat = np.stack([c2(SMM[r], gm, gm) for r in range(K + 1)])
        SgP_hat = np.stack([gp.to_coeffs(SgP[r]) for r in range(K + 1)])
        SgM_hat = np.stack([gm.to_coeffs(SgM[r]) for r in range(K + 1)])
        IG = duhamel_path(lam_pm, SG_hat, h)
        IPP = duhamel_path(lam_pp, SPP_hat, h)
        IMM = duhamel_path(lam_mm, SMM_hat, h)
        IgP = duhamel_path(lam_p, SgP_hat, h)
        IgM = duhamel_path(lam_m, SgM_hat, h)
        newG = -np.stack([s2(IG[k], gp, gm) for k in range(K + 1)])
        newPP = -np.stack([s2(IPP[k], gp, gp) for k in range(K + 1)])
        newMM = -np.stack([s2(IMM[k], gm, gm) for k in range(K + 1)])
        newgP = -np.stack([gp.from_coeffs(IgP[k]) for k in range(K + 1)])
        newgM = -np.stack([gm.from_coeffs(IgM[k]) for k in range(K + 1)])
        newPP = 0.5 * (newPP + np.transpose(newPP, (0, 2, 1)))
        newMM = 0.5 * (newMM + np.transpose(newMM, (0, 2, 1)))
        res = max(np.abs(newG - G).max(), np.abs(newPP - Gpp).max(),
                  np.abs(newMM - Gmm).max(), np.abs(newgP - gP).max(),
                  np.abs(newgM - gM).max())
        G, Gpp, Gmm, gP, gM = newG, newPP, newMM, newgP, newgM
        if res < cfg.picard_tol:
            diag = PicardDiagnostics(it + 1, res, True)
            break
    if diag is None:
        diag = PicardDiagnostics(cfg.max_iter, res, False)
    return HierarchySolution(domain=domain, times=times, grid_plus=gp, grid_minus=gm,
                             G=G, Gpp=Gpp, Gmm=Gmm, g_plus=gP, g_minus=gM,
                             fN=fN, kern=kern, diagnostics=diag)


# ---------------------------------------------------------------------------
# Expansion terms A, B and Monte-Carlo comparison


@dataclass
class ExpansionTerms:
    """A and B of the 1/N expansion F^{(n,m)} ~ A + B/N at a fixed time.

    B is the division-free single-insertion sum: every appearance of one
    mean-field factor replaced by -g (same species) plus every pair of
    factors replaced by the matching -G kernel.
    """

    n: int
    m: int
    t: float
    grid_plus: Grid
    grid_minus: Grid
    fp: np.ndarray
    fm: np.ndarray
    G: np.ndarray
    Gpp: np.ndarray
    Gmm: np.ndarray
    g_plus: np.ndarray
    g_minus: np.ndarray

    def a_grid(self) -> np.ndarray:
        if self.n + self.m > 2:
            raise NotImplementedError("grids provided only for n + m <= 2")
        if (self.n, self.m) == (1, 0):
            return self.fp.copy()
        if (self.n, self.m) == (0, 1):
            return self.fm.copy()
        if (self.n, self.m) == (1, 1):
            return np.outer(self.fp, self.fm)
        if (self.n, self.m) == (2, 0):
            return np.outer(self.fp, self.fp)
        return np.outer(self.fm, self.fm)

    def b_grid(self) -> np.ndarray:
        if self.n + self.m > 2:
            raise NotImplementedError("grids provided only for n + m <= 2")
        if (self.n, self.m) == (1, 0):
            return -self.g_plus.copy()
        if (self.n, self.m) == (0, 1):
            return -self.g_minus.copy()
        if (self.n, self.m) == (1, 1):
            return -(np.outer(self.g_plus, self.fm) + np.outer(self.fp, self.g_minus)
                     + self.G)
        if (self.n, self.m) == (2, 0):
            return -(np.outer(self.g_plus, self.fp) + np.outer(self.fp, self.g_plus)
                     + self.Gpp)
        return -(np.outer(self.g_minus, self.fm) + np.outer(self.fm, self.g_minus)
                 + self.Gmm)

    def _factor_values(self, plus_factors, minus_factors):
        xs = self.grid_plus.axis_nodes(0)[:, None]
        ys = self.grid_minus.axis_nodes(0)[:, None]
        P = [np.asarray(f(xs), dtype=float) for f in plus_factors]
        Q = [np.asarray(f(ys), dtype=float) for f in minus_factors]
        return P, Q

    def integrate_a(self, plus_factors, minus_factors) -> float:
        P, Q = self._factor_values(plus_factors, minus_factors)
        wp = self.grid_plus.weights()
        wm = self.grid_minus.weights()
        out = 1.0
        for p in P:
            out *= float(np.sum(p * self.fp * wp))
        for q in Q:
            out *= float(np.sum(q * self.fm * wm))
        return out

    def integrate_b(self, plus_factors, minus_factors) -> float:
        if self.n != len(plus_factors) or self.m != len(minus_factors):
            raise ValueError("factor counts must match (n, m)")
        if self.n + self.m > 4:
            raise NotImplementedError("n + m > 4 not supported")
        P, Q = self._factor_values(plus_factors, minus_factors)
        wp = self.grid_plus.weights()
        wm = self.grid_minus.weights()
        fP = [float(np.sum(p * self.fp * wp)) for p in P]
        fQ = [float(np.sum(q * self.fm * wm)) for q in Q]
        gPv = [float(np.sum(p * self.g_plus * wp)) for p in P]
        gQv = [float(np.sum(q * self.g_minus * wm)) for q in Q]

        def rest(skip_p=(), skip_q=()):
            out = 1.0
            for i, v in enumerate(fP):
                if i not in skip_p:
                    out *= v
            for j, v in enumerate(fQ):
                if j not in skip_q:
                    out *= v
            return out

        total = 0.0
        for i in range(self.n):
            total += -gPv[i] * rest(skip_p=(i,))
        for j in range(self.m):
            total += -gQv[j] * rest(skip_q=(j,))
        for i in range(self.n):
            for j in range(self.m):
                pair = float(P[i] * wp @ self.G @ (Q[j] * wm))
                total += -pair * rest(skip_p=(i,), skip_q=(j,))
        for i in range(self.n):
            for i2 in range(i + 1, self.n):
                pair = float(P[i] * wp @ self.Gpp @ (P[i2] * wp))
                total += -pair * rest(skip_p=(i, i2))
        for j in range(self.m):
            for j2 in range(j + 1, self.m):
                pair = float(Q[j] * wm @ self.Gmm @ (Q[j2] * wm))
                total += -pair * rest(skip_q=(j, j2))
        return total


def expansion_terms(hier: HierarchySolution, n: int, m: int, t: float) -> ExpansionTerms:
    if n < 0 or m < 0 or n + m < 1 or n + m > 4:
        raise ValueError("need 1 <= n + m <= 4")
    at = hier.at_time(t)
    xs = hier.grid_plus.axis_nodes(0)
    ys = hier.grid_minus.axis_nodes(0)
    fpv, fmv = hier.fN.at_time(t)
    fp = np.interp(xs, hier.fN.grid_plus.axis_nodes(0), fpv)
    fm = np.interp(ys, hier.fN.grid_minus.axis_nodes(0), fmv)
    return ExpansionTerms(n=n, m=m, t=t, grid_plus=hier.grid_plus,
                          grid_minus=hier.grid_minus, fp=fp, fm=fm,
                          G=at["G"], Gpp=at["Gpp"], Gmm=at["Gmm"],
                          g_plus=at["g_plus"], g_minus=at["g_minus"])


def compare_expansion(mc_values: np.ndarray, terms: ExpansionTerms,
                      plus_factors, minus_factors, N: int) -> dict:
    """Compare Monte-Carlo moments against A and A + B/N.

    ``mc_values`` are per-replica estimates of int Phi F^{(n,m)}.
    """
    mc_values = np.asarray(mc_values, dtype=float)
    M = mc_values.size
    mean = float(mc_values.mean())
    se = float(mc_values.std(ddof=1) / math.sqrt(M)) if M > 1 else float("nan")
    ia = terms.integrate_a(plus_factors, minus_factors)
    ib = terms.integrate_b(plus_factors, minus_factors)
    return {"mc_mean": mean, "mc_se": se, "int_A": ia, "int_B": ib,
            "err_A": abs(mean - ia), "err_A_se": se,
            "err_B": abs(N * (mean - ia) - ib), "err_B_se": N * se,
            "N": N, "replicas": M}
