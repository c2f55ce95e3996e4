"""Acceptance criterion 15: render all figure kinds from a completed
default run; files non-empty; slope annotations match the run
summaries to 3 decimal places.

Requires the completed default acceptance runs of the primary suite
(``acceptance_runs/`` in the repository root, or the directory named by
``MANL_ACCEPTANCE_CACHE``).
"""

import glob
import json
import os

import pytest

from plotkit import FigureSpec, render

ROOT = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
CACHE = os.environ.get("MANL_ACCEPTANCE_CACHE", os.path.join(ROOT, "acceptance_runs"))


def _run_dir(experiment):
    hits = sorted(glob.glob(os.path.join(CACHE, f"{experiment}-*")))
    if not hits:
        pytest.fail(f"no completed default {experiment} run under {CACHE}; "
                    "run the primary acceptance suite first")
    return hits[0]


def _summary(run_dir):
    with open(os.path.join(run_dir, "manifest.json")) as fh:
        return json.load(fh)["summary"]


def test_criterion_15_all_figures(tmp_path):
    figures = []

    chaos = _run_dir("chaos")
    r = render(FigureSpec(kind="convergence",
                          inputs=(os.path.join(chaos, "chaos.csv"),),
                          output=str(tmp_path / "chaos.png")))
    figures.append(r)
    want = _summary(chaos)["slope"]
    assert abs(round(r.annotations["slope"], 3) - round(want, 3)) < 1e-12, \
        f"chaos slope {r.annotations['slope']:.3f} != summary {want:.3f}"

    hydro = _run_dir("hydro")
    r = render(FigureSpec(kind="convergence",
                          inputs=(os.path.join(hydro, "hydro.csv"),),
                          output=str(tmp_path / "hydro.png")))
    figures.append(r)
    per_phi = _summary(hydro)["per_phi"]
    for p, info in per_phi.items():
        got = r.annotations[f"slope_phi{p}"]
        assert abs(round(got, 3) - round(info["slope"], 3)) < 1e-12, \
            f"hydro phi {p}: figure slope {got:.3f} != summary {info['slope']:.3f}"

    clt = _run_dir("clt")
    r = render(FigureSpec(kind="variance_compare",
                          inputs=(os.path.join(clt, "clt.csv"),
                                  os.path.join(clt, "predicted_cov.csv")),
                          output=str(tmp_path / "clt.png")))
    figures.append(r)

    mink = _run_dir("minkowski")
    r = render(FigureSpec(kind="ratio_curve",
                          inputs=(os.path.join(mink, "minkowski.csv"),),
                          output=str(tmp_path / "minkowski.png")))
    figures.append(r)

    bg = _run_dir("bg")
    r = render(FigureSpec(kind="trend",
                          inputs=(os.path.join(bg, "bg.csv"),),
                          output=str(tmp_path / "bg.png")))
    figures.append(r)

    tight = _run_dir("tightness")
    r = render(FigureSpec(kind="trend",
                          inputs=(os.path.join(tight, "tightness.csv"),),
                          output=str(tmp_path / "tightness.png")))
    figures.append(r)
    import math
    stats = _summary(tight)
    expo = stats["exponent"]
    assert abs(round(r.annotations["slope"], 3) - round(expo, 3)) < 1e-12, \
        f"tightness slope {r.annotations['slope']:.3f} != exponent {expo:.3f}"

    for res in figures:
        assert os.path.getsize(res.output) > 0
    print(f"\nACCEPTANCE 15: PASS ({len(figures)} figures rendered; slope "
          "annotations match run summaries to 3 decimals)")
