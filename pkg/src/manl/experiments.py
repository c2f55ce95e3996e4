"""Experiment orchestration: config parsing, runs, CSV artifacts, manifests.

Every experiment is deterministic given (config, seed): replica streams are
counter-based, the orchestration layer is sequential, and CSV rows are
formatted with exact 17-significant-digit floats so re-runs are
bit-identical.  All physics defaults live in the tables below.
"""

from __future__ import annotations

import datetime
import hashlib
import json
import math
import os
import tempfile
import time

import numpy as np

from . import __version__
from .annihilation import AnnihilationKernel, calibrate_kappa
from .geometry import DomainPair
from .hierarchy import HierarchyConfig, expansion_terms, solve_hierarchy
from .particles import (ObservablePair, SimConfig, bg_residual, corr_estimate,
                        fluctuation_field, run_ensemble)
from .solvers import (SolverConfig, ell_row_matrix, ou_cov, solve_fN,
                      solve_hydro)
from .spectral import Grid, KernelConfig, KernelMode, kernel_eval_1d, weyl_count
from .geometry import Box, fold_reflect, interface_dist_sq

EXPERIMENTS = ("selftest", "minkowski", "hydro", "clt", "chaos",
               "expansion", "tightness", "bg")

# One table for every tunable default.  c_delta follows the interaction-range
# rule delta_N = (c_delta / N)^(1/(2d)); the dt guard delta^2/16 is enforced
# by SimConfig.  Experiments override c_delta upward to trade interaction
# range for per-step cost at acceptance scale.
COMMON_DEFAULTS = {
    "outputs": None,            # required
    "report_format": "csv",
    "seed": 20260826,
    "threads": None,
    "d": 1,
    "lam_hat": 1.0,
    "mollified": False,
    "n_space": 256,
    "n_time": 48,
    "theta_nodes": 48,
}

EXPERIMENT_DEFAULTS = {
    "selftest": {},
    "minkowski": {
        "deltas": [0.1, 0.05, 0.025],
        "n_cells": 2048,
        "d2_deltas": [0.08, 0.04, 0.02],
        "d2_cells": 512,
    },
    "hydro": {
        "N_list": [250, 1000, 4000],
        "M_list": [2000, 2000, 600],
        "T": 0.25,
        "c_delta": 16.0,
        # Each test function is a cosine mixture: a list of [coef, k_plus,
        # k_minus] terms.  Pairings are linear in phi, so mixture statistics
        # are exact linear combinations of the recorded mode channels.
        "phis": [
            [[1.0, 0, 0], [0.25, 1, 2]],
            [[1.0, 0, 0], [0.25, 2, 1]],
            [[1.0, 0, 0], [0.25, 1, 1]],
        ],
        "n_records": 5,
    },
    "clt": {
        "N": 4000,
        "M": 2000,
        "T": 0.025,
        "c_delta": 8.0,
        "pairs": [[1, 2], [0, 0], [2, 1]],
        "lambda_off": True,
        "lambda_off_M": 800,
    },
    "chaos": {
        "N_list": [250, 1000, 4000],
        "M_list": [2000, 2000, 1000],
        "t": 0.0625,
        "c_delta": 16.0,
        "pairs": [[1, 1], [1, 2], [2, 1], [2, 2], [1, 3], [3, 1]],
    },
    "expansion": {
        "N": 1000,
        "M": 10000,
        "t": 0.0625,
        "c_delta": 16.0,
        "dt_divisor": 32,
        "pairs": [[1, 1], [1, 2], [2, 2]],
    },
    "tightness": {
        "N": 1000,
        "M": 500,
        "t0": 0.05,
        "windows": [0.04, 0.16],
        "c_delta": 4.0,
        "pair": [1, 2],
        "min_exponent": 1.2,
    },
    "bg": {
        "N_list": [250, 1000, 4000],
        "M_list": [800, 400, 100],
        "t": 0.125,
        "c_delta": 4.0,
        "pair": [1, 2],
        "n_records": 64,
    },
}


class ConfigError(ValueError):
    pass


def parse_config(doc: dict) -> dict:
    """Strictly validate a config document against the defaults tables."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    if "experiment" not in doc:
        raise ConfigError("missing required key: experiment")
    exp = doc["experiment"]
    if exp not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment: {exp!r} (choose from {EXPERIMENTS})")
    allowed = {"experiment"} | set(COMMON_DEFAULTS) | set(EXPERIMENT_DEFAULTS[exp])
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    out = dict(COMMON_DEFAULTS)
    out.update(EXPERIMENT_DEFAULTS[exp])
    out.update(doc)
    if out["outputs"] is None:
        raise ConfigError("missing required key: outputs")
    if out["report_format"] not in ("csv", "json"):
        raise ConfigError("report_format must be 'csv' or 'json'")
    return out


def apply_overrides(doc: dict, overrides: list[str]) -> dict:
    out = dict(doc)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must be key=value: {item!r}")
        key, raw = item.split("=", 1)
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _fmt(v) -> str:
    if isinstance(v, float) or isinstance(v, np.floating):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path: str, header: list[str], rows: list[tuple]) -> None:
    """Atomic CSV write with exact float round-tripping."""
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    data = "\n".join(lines) + "\n"
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    with os.fdopen(fd, "w", newline="\n") as fh:
        fh.write(data)
    os.replace(tmp, path)


def write_manifest(outdir: str, cfg: dict, kappa: float, summary: dict,
                   started: float) -> None:
    manifest = {
        "experiment": cfg["experiment"],
        "config": cfg,
        "config_hash": config_hash(cfg),
        "seed": cfg["seed"],
        "code_version": __version__,
        "kappa": kappa,
        "started_utc": datetime.datetime.utcfromtimestamp(started).isoformat(),
        "ended_utc": datetime.datetime.utcnow().isoformat(),
        "summary": summary,
    }
    path = os.path.join(outdir, "manifest.json")
    fd, tmp = tempfile.mkstemp(dir=outdir, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")
    os.replace(tmp, path)


def _measured_kappa(domain: DomainPair) -> float:
    if domain.d == 1:
        return calibrate_kappa(domain, (0.1, 0.05, 0.025), n_cells=2048).kappa
    return calibrate_kappa(domain, (0.08, 0.04, 0.02), n_cells=512).kappa


def _one(x):
    return np.ones_like(np.asarray(x, dtype=float))


def _obs(domain: DomainPair, pair) -> ObservablePair:
    kp, km = int(pair[0]), int(pair[1])
    return ObservablePair(domain, (kp,), (km,))


def _solver_cfg(cfg: dict) -> SolverConfig:
    return SolverConfig(n_space=int(cfg["n_space"]), n_time=int(cfg["n_time"]),
                        theta_nodes=int(cfg["theta_nodes"]))


def _sim_cfg(cfg: dict, N: int, c_delta: float, dt: float | None = None) -> SimConfig:
    return SimConfig(N=N, d=int(cfg["d"]), c_delta=float(c_delta), dt=dt,
                     seed=int(cfg["seed"]), lam_hat=float(cfg["lam_hat"]),
                     mollified=bool(cfg["mollified"]))


def slope_fit(x: np.ndarray, y: np.ndarray):
    """OLS slope of y on x with R^2."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


# ---------------------------------------------------------------------------
# Experiments


def exp_selftest(cfg: dict, outdir: str):
    rows = []

    def check(name, value, threshold):
        ok = bool(value < threshold)
        rows.append((name, value, threshold, "PASS" if ok else "FAIL"))
        return ok

    g = Grid(Box((0.0,), (1.0,)), (512,))
    x = g.axis_nodes(0)
    w = g.axis_weights(0)
    ok = True
    for t in (1e-3, 1e-1, 1.0):
        p = kernel_eval_1d(t, 0.37, x, 0.0, 1.0)
        ok &= check(f"kernel_mass_t{t:g}", abs(float(np.sum(p * w)) - 1.0), 1e-9)
    sym = abs(kernel_eval_1d(0.1, 0.3, 0.7, 0.0, 1.0)
              - kernel_eval_1d(0.1, 0.7, 0.3, 0.0, 1.0))
    ok &= check("kernel_symmetry", float(sym), 1e-14)
    p1 = kernel_eval_1d(0.05, 0.37, x, 0.0, 1.0)
    p2 = kernel_eval_1d(0.07, x, 0.81, 0.0, 1.0)
    ck = abs(float(np.sum(p1 * p2 * w)) - float(kernel_eval_1d(0.12, 0.37, 0.81, 0.0, 1.0)))
    ok &= check("chapman_kolmogorov", ck, 1e-7)
    ci = KernelConfig(mode=KernelMode.IMAGES)
    cs = KernelConfig(mode=KernelMode.SPECTRAL)
    cross = float(np.abs(kernel_eval_1d(0.1, 0.31, x, 0.0, 1.0, ci)
                         - kernel_eval_1d(0.1, 0.31, x, 0.0, 1.0, cs)).max())
    ok &= check("images_vs_spectral", cross, 1e-10)
    for k in (1, 4, 8):
        for t in (0.01, 0.1):
            vals = np.cos(k * math.pi * x)
            ev = g.apply_semigroup(t, vals)
            err = float(np.abs(ev - math.exp(-(k * math.pi) ** 2 * t / 2.0) * vals).max())
            ok &= check(f"eigen_decay_k{k}_t{t:g}", err, 1e-8)
    r1 = weyl_count(2e3, 2) / 2e3
    r2 = weyl_count(8e3, 2) / 8e3
    ok &= check("weyl_constancy_d2", abs(r1 / r2 - 1.0), 0.10)
    fold_err = abs(fold_reflect(2.3, 0.0, 1.0) - 0.3)
    ok &= check("fold_period", float(fold_err), 1e-12)
    ds = interface_dist_sq(np.array([0.2, 0.3]), np.array([0.6, -0.4]), DomainPair(d=2))
    ok &= check("interface_dist_sq_oracle_d2", abs(ds - 0.33), 1e-12)
    write_csv(os.path.join(outdir, "selftest.csv"),
              ["check", "value", "threshold", "status"], rows)
    return {"checks": len(rows), "pass": bool(ok)}, bool(ok)


def exp_minkowski(cfg: dict, outdir: str):
    d = int(cfg["d"])
    domain = DomainPair(d=d)
    deltas = tuple(float(v) for v in (cfg["deltas"] if d == 1 else cfg["d2_deltas"]))
    n_cells = int(cfg["n_cells"] if d == 1 else cfg["d2_cells"])
    cal = calibrate_kappa(domain, deltas, n_cells=n_cells)
    rows = []
    order = sorted(range(len(deltas)), key=lambda i: -deltas[i])
    ratios = list(cal.ratios)
    incs = [float("nan")] + [abs(ratios[i] / ratios[i - 1] - 1.0)
                             for i in range(1, len(ratios))]
    for i in order:
        rows.append((deltas[i], ratios[i], incs[i]))
    rows.sort(key=lambda r: -r[0])
    write_csv(os.path.join(outdir, "minkowski.csv"),
              ["delta", "ratio", "increment"], rows)
    if d == 1:
        ok = abs(cal.kappa - 0.25) <= 0.005
    else:
        ok = bool(cal.converged)
    summary = {"kappa": cal.kappa, "converged": bool(cal.converged),
               "paper_stated_interface_measure": 1.0, "pass": bool(ok)}
    return summary, bool(ok)


def exp_hydro(cfg: dict, outdir: str):
    domain = DomainPair(d=int(cfg["d"]))
    scfg = _solver_cfg(cfg)
    T = float(cfg["T"])
    kappa = _measured_kappa(domain)
    lam_eff = kappa * float(cfg["lam_hat"])
    u, _ = solve_hydro(domain, lam_eff, _one, _one, T, scfg)
    coarse = SolverConfig(n_space=scfg.n_space // 2, n_time=scfg.n_time // 2,
                          theta_nodes=scfg.theta_nodes // 2)
    u2, _ = solve_hydro(domain, lam_eff, _one, _one, T, coarse)
    phis = [[(float(c), int(kp), int(km)) for c, kp, km in phi]
            for phi in cfg["phis"]]
    base = sorted({(kp, km) for phi in phis for _, kp, km in phi})
    base_idx = {p: i for i, p in enumerate(base)}
    observables = [_obs(domain, p) for p in base]

    def base_pairing(field, t, ob):
        vp, vm = field.at_time(float(t))
        sp = ob.phi_plus(field.grid_plus.axis_nodes(0)[:, None])
        sm = ob.phi_minus(field.grid_minus.axis_nodes(0)[:, None])
        return (float(np.sum(sp * vp * field.grid_plus.weights()))
                + float(np.sum(sm * vm * field.grid_minus.weights())))

    def mix_pairing(field, t, phi):
        return sum(c * base_pairing(field, t, observables[base_idx[(kp, km)]])
                   for c, kp, km in phi)

    n_rec = int(cfg["n_records"])
    rows = []
    errors = {}       # phi_id -> {N: (abs_err_of_mean, se)}
    delta_bands = {}  # phi_id -> {N: |<phi, fN - u>| at the compared time}
    bands = {phi_id: abs(mix_pairing(u, T, phi) - mix_pairing(u2, T, phi))
             for phi_id, phi in enumerate(phis)}
    for N, M in zip(cfg["N_list"], cfg["M_list"]):
        sim = _sim_cfg(cfg, int(N), cfg["c_delta"])
        steps = max(1, int(round(T / sim.dt_eff)))
        stride = max(1, steps // (n_rec - 1))
        steps = stride * (n_rec - 1)
        res = run_ensemble(sim, domain, n_steps=steps, observables=observables,
                           obs_stride=stride, replicas=int(M),
                           threads=cfg["threads"])
        pair_path = res.pair_plus + res.pair_minus   # (M, n_rec, n_base)
        t_N = float(res.times[-1])
        kern = AnnihilationKernel(domain, sim.delta,
                                  lam_hat=float(cfg["lam_hat"]),
                                  mollified=bool(cfg["mollified"]))
        fN, _ = solve_fN(domain, kern, _one, _one, t_N, scfg)
        coefs = np.zeros((len(phis), len(base)))
        for phi_id, phi in enumerate(phis):
            for c, kp, km in phi:
                coefs[phi_id, base_idx[(kp, km)]] += c
        mix_path = pair_path @ coefs.T               # (M, n_rec, n_phi)
        for phi_id, phi in enumerate(phis):
            for ti, t in enumerate(res.times):
                sol = mix_pairing(u, t, phi)
                for r in range(int(M)):
                    emp = float(mix_path[r, ti, phi_id])
                    rows.append((int(N), r, float(t), phi_id, emp, sol,
                                 abs(emp - sol)))
            emp_T = mix_path[:, -1, phi_id]
            sol_T = mix_pairing(u, t_N, phi)
            err = abs(float(emp_T.mean()) - sol_T)
            se = float(emp_T.std(ddof=1) / math.sqrt(emp_T.size))
            errors.setdefault(phi_id, {})[int(N)] = (err, se)
            delta_bands.setdefault(phi_id, {})[int(N)] = abs(
                mix_pairing(fN, t_N, phi) - sol_T)
    write_csv(os.path.join(outdir, "hydro.csv"),
              ["N", "replica", "t", "phi_id", "empirical", "solver", "abs_err"],
              rows)
    ok = True
    per_phi = {}
    Ns = [int(n) for n in cfg["N_list"]]
    for phi_id in errors:
        errs = [errors[phi_id][n][0] for n in Ns]
        ses = [errors[phi_id][n][1] for n in Ns]
        dbands = [delta_bands[phi_id][n] for n in Ns]
        mono = all(errs[i + 1] < errs[i] for i in range(len(errs) - 1))
        largest_ok = errs[-1] < 3 * ses[-1] + bands[phi_id] + dbands[-1]
        ok &= mono and largest_ok
        sl, _, r2 = slope_fit(np.log(Ns), np.log(errs))
        per_phi[str(phi_id)] = {"errors": errs, "ses": ses, "monotone": mono,
                                "largest_N_ok": largest_ok, "slope": sl,
                                "richardson_band": bands[phi_id],
                                "delta_bands": dbands, "r2": r2}
    return {"per_phi": per_phi, "lambda_eff": lam_eff, "pass": bool(ok)}, bool(ok)


def exp_clt(cfg: dict, outdir: str):
    domain = DomainPair(d=int(cfg["d"]))
    scfg = _solver_cfg(cfg)
    N, M, T = int(cfg["N"]), int(cfg["M"]), float(cfg["T"])
    kappa = _measured_kappa(domain)
    lam_eff = kappa * float(cfg["lam_hat"])
    observables = [_obs(domain, p) for p in cfg["pairs"]]
    sim = _sim_cfg(cfg, N, cfg["c_delta"])
    steps = max(1, int(round(T / sim.dt_eff)))
    T = steps * sim.dt_eff
    res = run_ensemble(sim, domain, n_steps=steps, observables=observables,
                       obs_stride=steps, replicas=M, threads=cfg["threads"])
    pair_T = res.pair_plus[:, -1, :] + res.pair_minus[:, -1, :]
    u, _ = solve_hydro(domain, lam_eff, _one, _one, T, scfg)
    rows = []
    pred_rows = []
    summary = {"pairs": {}, "lambda_eff": lam_eff}
    ok = True
    Ys = {}
    for i, ob in enumerate(observables):
        Y = fluctuation_field(pair_T[:, i], N, centering="ensemble")
        Ys[i] = Y
        rows.extend((N, r, i, float(Y[r])) for r in range(M))
    for i, obi in enumerate(observables):
        for j, obj in enumerate(observables):
            if j < i:
                continue
            pred = ou_cov(domain, u, _one, _one, lam_eff, obi, T, obj, T, scfg)
            pred_rows.append((i, j, T, T, pred))
            if i == j:
                sv = float(Ys[i].var(ddof=1))
                se = sv * math.sqrt(2.0 / (M - 1))
                good = abs(sv - pred) < 3 * se
                ok &= good
                summary["pairs"][str(i)] = {"sample_var": sv, "predicted": pred,
                                            "se": se, "pass": bool(good)}
    if cfg["lambda_off"]:
        m_off = int(cfg["lambda_off_M"])
        sim0 = SimConfig(N=N, d=int(cfg["d"]), c_delta=float(cfg["c_delta"]),
                         seed=int(cfg["seed"]), lam_hat=0.0,
                         mollified=bool(cfg["mollified"]))
        res0 = run_ensemble(sim0, domain, n_steps=steps, observables=observables,
                            obs_stride=steps, replicas=m_off,
                            threads=cfg["threads"])
        p0 = res0.pair_plus[:, -1, :] + res0.pair_minus[:, -1, :]
        off = {}
        for i, ob in enumerate(observables):
            Y0 = fluctuation_field(p0[:, i], N, centering="ensemble")
            sv = float(Y0.var(ddof=1))
            exact = 0.0
            for ks, lam in ((ob.kp[0], None), (ob.km[0], None)):
                k = int(ks)
                if k == 0:
                    exact += 0.0   # fixed particle number: zero fluctuation
                else:
                    exact += 0.5
            se = sv * math.sqrt(2.0 / (m_off - 1)) if sv > 0 else 1e-12
            good = abs(sv - exact) < 3 * se + 1e-9
            ok &= good
            off[str(i)] = {"sample_var": sv, "exact": exact, "se": se,
                           "pass": bool(good)}
        summary["lambda_off"] = off
    write_csv(os.path.join(outdir, "clt.csv"),
              ["N", "replica", "phi_id", "Y_value"], rows)
    write_csv(os.path.join(outdir, "predicted_cov.csv"),
              ["phi_id", "psi_id", "s", "t", "value"], pred_rows)
    summary["pass"] = bool(ok)
    return summary, bool(ok)


def _corr_values(res, ob, N: int) -> np.ndarray:
    """Per-replica int Phi F-hat^{(1,1)} from the final snapshot."""
    t, pos_p, pos_m, al_p, al_m = res.snapshots[-1]
    fp = lambda x: ob.phi_plus(x)
    fm = lambda y: ob.phi_minus(y)
    return corr_estimate(pos_p, al_p, pos_m, al_m, [fp], [fm], N)


def exp_chaos(cfg: dict, outdir: str):
    domain = DomainPair(d=int(cfg["d"]))
    scfg = _solver_cfg(cfg)
    t = float(cfg["t"])
    observables = [_obs(domain, p) for p in cfg["pairs"]]
    rows = []
    err_by_N = {}
    for N, M in zip(cfg["N_list"], cfg["M_list"]):
        N, M = int(N), int(M)
        sim = _sim_cfg(cfg, N, cfg["c_delta"])
        steps = max(1, int(round(t / sim.dt_eff)))
        t_eff = steps * sim.dt_eff
        kern = AnnihilationKernel(domain, sim.delta, lam_hat=float(cfg["lam_hat"]),
                                  mollified=bool(cfg["mollified"]))
        fN, _ = solve_fN(domain, kern, _one, _one, t_eff, scfg)
        res = run_ensemble(sim, domain, n_steps=steps, replicas=M,
                           snapshot_steps=(steps,), threads=cfg["threads"])
        errs = []
        for i, ob in enumerate(observables):
            vals = _corr_values(res, ob, N)
            xs = fN.grid_plus.axis_nodes(0)[:, None]
            ys = fN.grid_minus.axis_nodes(0)[:, None]
            ref = (float(np.sum(ob.phi_plus(xs).ravel() * fN.values_plus[-1]
                                * fN.grid_plus.weights()))
                   * float(np.sum(ob.phi_minus(ys).ravel() * fN.values_minus[-1]
                                  * fN.grid_minus.weights())))
            err = abs(float(vals.mean()) - ref)
            se = float(vals.std(ddof=1) / math.sqrt(M))
            errs.append(err)
            rows.append((N, i, float(vals.mean()), ref, err, se, M))
        err_by_N[N] = float(np.mean(errs))
    Ns = sorted(err_by_N)
    sl, _, r2 = slope_fit(np.log(Ns), np.log([err_by_N[n] for n in Ns]))
    ok = -1.4 <= sl <= -0.6
    write_csv(os.path.join(outdir, "chaos.csv"),
              ["N", "phi_id", "mc_mean", "reference", "abs_err", "se", "replicas"],
              rows)
    return {"errors": {str(n): err_by_N[n] for n in Ns}, "slope": sl,
            "r2": r2, "pass": bool(ok)}, bool(ok)


def exp_expansion(cfg: dict, outdir: str):
    domain = DomainPair(d=int(cfg["d"]))
    scfg = _solver_cfg(cfg)
    N, M, t = int(cfg["N"]), int(cfg["M"]), float(cfg["t"])
    base = _sim_cfg(cfg, N, cfg["c_delta"])
    dt = base.delta ** 2 / float(cfg["dt_divisor"])
    sim = _sim_cfg(cfg, N, cfg["c_delta"], dt=dt)
    steps = max(1, int(round(t / sim.dt_eff)))
    t_eff = steps * sim.dt_eff
    kern = AnnihilationKernel(domain, sim.delta, lam_hat=float(cfg["lam_hat"]),
                              mollified=bool(cfg["mollified"]))
    fN, _ = solve_fN(domain, kern, _one, _one, t_eff, scfg)
    hier = solve_hierarchy(domain, kern, fN, t_eff, HierarchyConfig())
    terms = expansion_terms(hier, 1, 1, t_eff)
    observables = [_obs(domain, p) for p in cfg["pairs"]]
    res = run_ensemble(sim, domain, n_steps=steps, replicas=M,
                       snapshot_steps=(steps,), threads=cfg["threads"])
    rows = []
    ok = True
    summary = {"pairs": {}}
    for i, ob in enumerate(observables):
        vals = _corr_values(res, ob, N)
        fp = lambda x: ob.phi_plus(np.asarray(x).reshape(-1, 1)).ravel()
        fm = lambda y: ob.phi_minus(np.asarray(y).reshape(-1, 1)).ravel()
        ia = terms.integrate_a([fp], [fm])
        ib = terms.integrate_b([fp], [fm])
        mean = float(vals.mean())
        se = float(vals.std(ddof=1) / math.sqrt(M))
        err_b = abs(N * (mean - ia) - ib)
        good = err_b < 3 * N * se
        ok &= good
        rows.append((i, N, M, mean, se, ia, ib, abs(mean - ia), err_b,
                     3 * N * se, "PASS" if good else "FAIL"))
        summary["pairs"][str(i)] = {"mc_mean": mean, "mc_se": se, "int_A": ia,
                                    "int_B": ib, "err_B": err_b,
                                    "threshold": 3 * N * se, "pass": bool(good)}
    write_csv(os.path.join(outdir, "expansion.csv"),
              ["phi_id", "N", "replicas", "mc_mean", "mc_se", "int_A", "int_B",
               "err_A", "err_B", "threshold", "status"], rows)
    summary["pass"] = bool(ok)
    return summary, bool(ok)


def exp_tightness(cfg: dict, outdir: str):
    domain = DomainPair(d=int(cfg["d"]))
    N, M = int(cfg["N"]), int(cfg["M"])
    t0 = float(cfg["t0"])
    windows = sorted(float(w) for w in cfg["windows"])
    ob = _obs(domain, cfg["pair"])
    sim = _sim_cfg(cfg, N, cfg["c_delta"])
    T = t0 + windows[-1]
    steps = max(1, int(round(T / sim.dt_eff)))
    res = run_ensemble(sim, domain, n_steps=steps, observables=[ob],
                       obs_stride=1, replicas=M, threads=cfg["threads"])
    V = res.pair_product[:, :, 0]       # (M, n_rec) interaction functional
    Vc = V - V.mean(axis=0, keepdims=True)
    times = res.times
    rows = []
    stats = []
    for w in windows:
        sel = (times >= t0 - 1e-12) & (times <= t0 + w + 1e-12)
        tw = times[sel]
        integ = math.sqrt(N) * np.trapezoid(Vc[:, sel], tw, axis=1)
        sq = integ ** 2
        stat = float(sq.mean())
        se = float(sq.std(ddof=1) / math.sqrt(M))
        stats.append(stat)
        rows.append((N, w, stat, se))
    write_csv(os.path.join(outdir, "tightness.csv"),
              ["N", "window", "statistic", "se"], rows)
    expo = math.log(stats[-1] / stats[0]) / math.log(windows[-1] / windows[0])
    ok = expo >= float(cfg["min_exponent"])
    return {"windows": windows, "statistics": stats, "exponent": expo,
            "pass": bool(ok)}, bool(ok)


def exp_bg(cfg: dict, outdir: str):
    domain = DomainPair(d=int(cfg["d"]))
    scfg = _solver_cfg(cfg)
    t_end = float(cfg["t"])
    ob = _obs(domain, cfg["pair"])
    n_rec = int(cfg["n_records"])
    rows = []
    residuals = []
    for N, M in zip(cfg["N_list"], cfg["M_list"]):
        N, M = int(N), int(M)
        sim = _sim_cfg(cfg, N, cfg["c_delta"])
        steps0 = max(n_rec - 1, int(round(t_end / sim.dt_eff)))
        stride = max(1, steps0 // (n_rec - 1))
        steps = stride * (n_rec - 1)
        kern = AnnihilationKernel(domain, sim.delta, lam_hat=float(cfg["lam_hat"]),
                                  mollified=bool(cfg["mollified"]))
        fN, _ = solve_fN(domain, kern, _one, _one, steps * sim.dt_eff, scfg)
        nodes = 129
        xg = np.linspace(0.0, 1.0, nodes)
        yg = np.linspace(-1.0, 0.0, nodes)
        gm = fN.grid_minus
        gp = fN.grid_plus
        Wpm = ell_row_matrix(kern, xg, gm)
        Wmp = ell_row_matrix(kern, yg, gp)
        php_x = ob.phi_plus(xg[:, None]).ravel()
        phm_y = ob.phi_minus(yg[:, None]).ravel()
        php_gp = ob.phi_plus(gp.axis_nodes(0)[:, None]).ravel()
        phm_gm = ob.phi_minus(gm.axis_nodes(0)[:, None]).ravel()
        rec_times = np.arange(n_rec) * stride * sim.dt_eff
        bg_a = np.empty((n_rec, nodes))
        bg_b = np.empty((n_rec, nodes))
        for ri, tr in enumerate(rec_times):
            up, um = fN.at_time(float(tr))
            bg_a[ri] = php_x * (Wpm @ um) + Wpm @ (phm_gm * um)
            bg_b[ri] = phm_y * (Wmp @ up) + Wmp @ (php_gp * up)
        res = run_ensemble(sim, domain, n_steps=steps, observables=[ob],
                           obs_stride=stride, replicas=M,
                           bg_grids=(bg_a, bg_b), threads=cfg["threads"])
        bz = (res.bg[:, :, 0] + res.bg[:, :, 1]) / N
        k_raw = res.pair_product[:, :, 0]
        resid, se = bg_residual(res.times, bz, k_raw, N)
        residuals.append((N, resid, se))
        rows.append((N, float(res.times[-1]), resid, se))
    write_csv(os.path.join(outdir, "bg.csv"), ["N", "t", "residual", "se"], rows)
    # Monotone decrease judged within Monte Carlo error: no adjacent step may
    # increase by more than 3 combined SE, and the trend over the full range
    # must be downward.
    ok = all(residuals[i + 1][1] < residuals[i][1]
             + 3 * math.hypot(residuals[i][2], residuals[i + 1][2])
             for i in range(len(residuals) - 1))
    ok = ok and residuals[-1][1] < residuals[0][1]
    return {"residuals": [(n, r, s) for n, r, s in residuals],
            "pass": bool(ok)}, bool(ok)


RUNNERS = {
    "selftest": exp_selftest,
    "minkowski": exp_minkowski,
    "hydro": exp_hydro,
    "clt": exp_clt,
    "chaos": exp_chaos,
    "expansion": exp_expansion,
    "tightness": exp_tightness,
    "bg": exp_bg,
}


def run_experiment(cfg: dict) -> int:
    """Execute a parsed config; returns process exit code (0/2)."""
    outdir = cfg["outputs"]
    os.makedirs(outdir, exist_ok=True)
    started = time.time()
    domain = DomainPair(d=int(cfg["d"]))
    kappa = _measured_kappa(domain)
    summary, ok = RUNNERS[cfg["experiment"]](cfg, outdir)
    write_manifest(outdir, cfg, kappa, summary, started)
    return 0 if ok else 2


def summarize(results_dir: str) -> str:
    """Consolidated deterministic report over all manifests in a directory."""
    sections = []
    missing = []
    manifests = []
    for root, _dirs, files in sorted(os.walk(results_dir)):
        if "manifest.json" in files:
            with open(os.path.join(root, "manifest.json")) as fh:
                manifests.append((root, json.load(fh)))
    if not manifests:
        return "warning: no manifests found in %s\n" % results_dir
    manifests.sort(key=lambda rm: (rm[1]["experiment"], rm[0]))
    for root, man in manifests:
        lines = [f"== {man['experiment']} ({os.path.relpath(root, results_dir)}) ==",
                 f"config_hash: {man['config_hash']}",
                 f"kappa: {_fmt(man['kappa'])}"]
        summ = man.get("summary", {})
        status = "PASS" if summ.get("pass") else "FAIL"
        for key in sorted(summ):
            if key == "pass":
                continue
            lines.append(f"{key}: {json.dumps(summ[key], sort_keys=True, default=float)}")
        lines.append(f"status: {status}")
        expected = {"selftest": ["selftest.csv"], "minkowski": ["minkowski.csv"],
                    "hydro": ["hydro.csv"], "clt": ["clt.csv", "predicted_cov.csv"],
                    "chaos": ["chaos.csv"], "expansion": ["expansion.csv"],
                    "tightness": ["tightness.csv"], "bg": ["bg.csv"]}
        for f in expected.get(man["experiment"], []):
            if not os.path.exists(os.path.join(root, f)):
                missing.append(os.path.join(root, f))
        sections.append("\n".join(lines))
    report = "\n\n".join(sections) + "\n"
    if missing:
        report += "\nmissing files:\n" + "\n".join(sorted(missing)) + "\n"
    return report
