"""Figure rendering from manl CSV outputs.

Every value plotted comes from the input CSVs; the only derived
quantities are axis transforms, ordinary-least-squares slope fits on
log-transformed columns (reported with R^2), and the aggregations the
documented schemas call for (per-group means, sample variance of the
per-replica fluctuation column for the variance comparison).
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

FIGURE_KINDS = ("convergence", "variance_compare", "ratio_curve", "trend")


class PlotkitError(Exception):
    pass


@dataclass(frozen=True)
class FigureSpec:
    kind: str
    inputs: tuple
    output: str
    x: str | None = None
    y: str | None = None
    se: str | None = None
    group: str | None = None
    title: str | None = None
    xlabel: str | None = None
    ylabel: str | None = None
    logx: bool = False
    logy: bool = False

    def __post_init__(self):
        if self.kind not in FIGURE_KINDS:
            raise PlotkitError(f"unknown figure kind {self.kind!r}; "
                               f"expected one of {', '.join(FIGURE_KINDS)}")
        if not self.inputs:
            raise PlotkitError("at least one input CSV is required")


def read_csv(path: str) -> dict:
    """Parse a CSV into {column: list of strings}."""
    if not os.path.exists(path):
        raise PlotkitError(f"input file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise PlotkitError(f"no header row in {path}")
        cols = {name: [] for name in reader.fieldnames}
        for row in reader:
            for name in cols:
                cols[name].append(row[name])
    return cols


def column(cols: dict, name: str, path: str) -> np.ndarray:
    if name not in cols:
        raise PlotkitError(f"column {name!r} not found in {path} "
                           f"(available: {', '.join(cols)})")
    return np.array(cols[name], dtype=object)


def numeric(cols: dict, name: str, path: str) -> np.ndarray:
    raw = column(cols, name, path)
    try:
        return np.array([float(v) for v in raw])
    except (TypeError, ValueError):
        raise PlotkitError(f"column {name!r} in {path} is not numeric")


def se_values(cols: dict, name: str, path: str) -> np.ndarray | None:
    """Standard-error column: empty entries disable the whiskers."""
    raw = column(cols, name, path)
    if all(str(v).strip() == "" for v in raw):
        return None
    return numeric(cols, name, path)


def slope_fit(x: np.ndarray, y: np.ndarray):
    """OLS slope of y on x with R^2 (same formula the summaries use)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def _group_mean(xs: np.ndarray, ys: np.ndarray):
    ux = np.array(sorted(set(xs.tolist())))
    my = np.array([ys[xs == v].mean() for v in ux])
    return ux, my


@dataclass
class RenderResult:
    output: str
    annotations: dict = field(default_factory=dict)

    def lines(self):
        out = []
        for key in sorted(self.annotations):
            out.append(f"{key}={self.annotations[key]:.6g}")
        return out




def _savefig(fig, output: str) -> None:
    """Save with stable metadata so identical inputs give identical bytes."""
    if output.lower().endswith(".svg"):
        fig.savefig(output, metadata={"Date": None})
    else:
        fig.savefig(output)


# ---------------------------------------------------------------------------
# kinds


def _render_convergence(spec: FigureSpec) -> RenderResult:
    path = spec.inputs[0]
    cols = read_csv(path)
    xname = spec.x or "N"
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    ann = {}
    if spec.y is None and "empirical" in cols and "solver" in cols:
        # hydro.csv layout: per-replica pairings vs solver values; the
        # plotted error is |ensemble mean - solver| at the final time,
        # per observable, matching the run summary.
        t = numeric(cols, "t", path)
        xs = numeric(cols, xname, path)
        emp = numeric(cols, "empirical", path)
        sol = numeric(cols, "solver", path)
        pid = column(cols, "phi_id", path)
        for p in sorted(set(pid.tolist())):
            selp = pid == p
            ux = np.array(sorted(set(xs[selp].tolist())))
            e = np.empty(ux.size)
            for i, v in enumerate(ux):
                # the final recorded time can differ per N (step rounding)
                seln = selp & (xs == v)
                sel = seln & (np.abs(t - t[seln].max()) < 1e-12)
                e[i] = abs(emp[sel].mean() - sol[sel][0])
            ax.loglog(ux, e, "o-", label=f"phi {p}")
            sl, _, r2 = slope_fit(np.log(ux), np.log(e))
            ann[f"slope_phi{p}"] = sl
            ann[f"r2_phi{p}"] = r2
    else:
        yname = spec.y or "abs_err"
        xs = numeric(cols, xname, path)
        ys = numeric(cols, yname, path)
        ux, uy = _group_mean(xs, ys)
        ax.loglog(ux, uy, "o-", color="tab:blue")
        sl, _, r2 = slope_fit(np.log(ux), np.log(uy))
        ann["slope"] = sl
        ann["r2"] = r2
    text = ", ".join(f"{k}={v:.3f}" for k, v in sorted(ann.items())
                     if k.startswith("slope"))
    ax.set_xlabel(spec.xlabel or xname)
    ax.set_ylabel(spec.ylabel or "error")
    ax.set_title(spec.title or f"convergence ({text})")
    if len(ann) > 2:
        ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    _savefig(fig, spec.output)
    plt.close(fig)
    return RenderResult(spec.output, ann)


def _render_variance_compare(spec: FigureSpec) -> RenderResult:
    if len(spec.inputs) < 2:
        raise PlotkitError("variance_compare needs two inputs: "
                           "the per-replica CSV and the prediction CSV")
    samp_path, pred_path = spec.inputs[0], spec.inputs[1]
    samp = read_csv(samp_path)
    pred = read_csv(pred_path)
    pid = column(samp, "phi_id", samp_path)
    yv = numeric(samp, "Y_value", samp_path)
    ppid = column(pred, "phi_id", pred_path)
    qpid = column(pred, "psi_id", pred_path)
    ps = numeric(pred, "s", pred_path)
    pt = numeric(pred, "t", pred_path)
    pv = numeric(pred, "value", pred_path)
    labels, emp, whisk, prd = [], [], [], []
    ann = {}
    for p in sorted(set(pid.tolist())):
        vals = yv[pid == p]
        var = float(vals.var(ddof=1))
        m = vals.size
        sel = (ppid == p) & (qpid == p) & (np.abs(ps - pt) < 1e-12)
        if not np.any(sel):
            raise PlotkitError(f"no equal-time prediction for phi_id {p} "
                               f"in {pred_path}")
        t_eq = pt[sel].max()
        val = float(pv[sel][np.abs(pt[sel] - t_eq) < 1e-12][0])
        labels.append(str(p))
        emp.append(var)
        whisk.append(3.0 * var * math.sqrt(2.0 / (m - 1)))
        prd.append(val)
        ann[f"var_phi{p}"] = var
        ann[f"pred_phi{p}"] = val
    idx = np.arange(len(labels))
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    ax.bar(idx - 0.2, emp, width=0.4, yerr=whisk, capsize=4,
           label="empirical (3 SE)", color="tab:blue")
    ax.bar(idx + 0.2, prd, width=0.4, label="predicted", color="tab:orange")
    ax.set_xticks(idx, labels)
    ax.set_xlabel(spec.xlabel or "observable pair")
    ax.set_ylabel(spec.ylabel or "variance")
    ax.set_title(spec.title or "fluctuation variance vs prediction")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _savefig(fig, spec.output)
    plt.close(fig)
    return RenderResult(spec.output, ann)


def _render_ratio_curve(spec: FigureSpec) -> RenderResult:
    path = spec.inputs[0]
    cols = read_csv(path)
    xname = spec.x or "delta"
    yname = spec.y or "ratio"
    xs = numeric(cols, xname, path)
    ys = numeric(cols, yname, path)
    order = np.argsort(-xs)
    xs, ys = xs[order], ys[order]
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    ax.semilogx(xs, ys, "o-", color="tab:blue")
    ax.invert_xaxis()
    ax.set_xlabel(spec.xlabel or xname)
    ax.set_ylabel(spec.ylabel or yname)
    ann = {"final_ratio": float(ys[-1])}
    ax.axhline(ys[-1], ls="--", lw=0.8, color="gray")
    ax.set_title(spec.title or f"ratio convergence (final {ys[-1]:.4f})")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    _savefig(fig, spec.output)
    plt.close(fig)
    return RenderResult(spec.output, ann)


def _render_trend(spec: FigureSpec) -> RenderResult:
    path = spec.inputs[0]
    cols = read_csv(path)
    names = list(cols)
    xname = spec.x or names[0 if names[0] != "" else 1]
    # schema-aware defaults for the documented files
    if spec.y is None:
        for cand in ("residual", "statistic", "value"):
            if cand in cols:
                yname = cand
                break
        else:
            raise PlotkitError(f"cannot infer y column in {path}; pass --y")
    else:
        yname = spec.y
    if spec.x is None:
        for cand in ("N", "window", "t"):
            if cand in cols and len(set(cols[cand])) > 1:
                xname = cand
                break
    xs = numeric(cols, xname, path)
    ys = numeric(cols, yname, path)
    sename = spec.se if spec.se is not None else ("se" if "se" in cols else None)
    se = se_values(cols, sename, path) if sename else None
    ux, uy = _group_mean(xs, ys)
    use = None
    if se is not None:
        use = np.array([se[xs == v].mean() for v in ux])
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    ann = {}
    logboth = spec.logx or spec.logy or (np.all(ux > 0) and np.all(uy > 0))
    if logboth:
        ax.set_xscale("log")
        ax.set_yscale("log")
        sl, _, r2 = slope_fit(np.log(ux), np.log(uy))
        ann["slope"] = sl
        ann["r2"] = r2
        ax.set_title(spec.title or f"trend (slope {sl:.3f})")
    else:
        ax.set_title(spec.title or "trend")
    ax.errorbar(ux, uy, yerr=3 * use if use is not None else None,
                fmt="o-", capsize=4, color="tab:blue")
    ax.set_xlabel(spec.xlabel or xname)
    ax.set_ylabel(spec.ylabel or yname)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    _savefig(fig, spec.output)
    plt.close(fig)
    return RenderResult(spec.output, ann)


_RENDERERS = {
    "convergence": _render_convergence,
    "variance_compare": _render_variance_compare,
    "ratio_curve": _render_ratio_curve,
    "trend": _render_trend,
}


def render(spec: FigureSpec) -> RenderResult:
    """Render one figure; returns the output path and slope annotations."""
    out_dir = os.path.dirname(os.path.abspath(spec.output))
    if not os.path.isdir(out_dir):
        raise PlotkitError(f"output directory does not exist: {out_dir}")
    return _RENDERERS[spec.kind](spec)
