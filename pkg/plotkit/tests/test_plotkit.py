import os

import pytest

from plotkit import FigureSpec, PlotkitError, render, slope_fit


def _write(path, text):
    with open(path, "w") as fh:
        fh.write(text)
    return str(path)


@pytest.fixture
def trend_csv(tmp_path):
    return _write(tmp_path / "bg.csv",
                  "N,t,residual,se\n"
                  "250,0.1,4.0e-3,1e-4\n"
                  "1000,0.1,1.0e-3,4e-5\n"
                  "4000,0.1,2.5e-4,1e-5\n")


def test_missing_column_names_column_and_file(tmp_path, trend_csv):
    out = str(tmp_path / "f.png")
    spec = FigureSpec(kind="trend", inputs=(trend_csv,), output=out, y="bogus")
    with pytest.raises(PlotkitError) as exc:
        render(spec)
    assert "bogus" in str(exc.value)
    assert "bg.csv" in str(exc.value)


def test_missing_input_file(tmp_path):
    spec = FigureSpec(kind="trend", inputs=(str(tmp_path / "nope.csv"),),
                      output=str(tmp_path / "f.png"))
    with pytest.raises(PlotkitError, match="not found"):
        render(spec)


def test_unknown_kind_rejected(tmp_path, trend_csv):
    with pytest.raises(PlotkitError, match="unknown figure kind"):
        FigureSpec(kind="scatter3d", inputs=(trend_csv,),
                   output=str(tmp_path / "f.png"))


def test_trend_slope_annotation(tmp_path, trend_csv):
    out = str(tmp_path / "f.png")
    res = render(FigureSpec(kind="trend", inputs=(trend_csv,), output=out))
    assert os.path.getsize(out) > 0
    # exactly 1/N decay: slope -1
    assert abs(res.annotations["slope"] - (-1.0)) < 1e-9


def test_empty_se_column_no_whiskers(tmp_path):
    p = _write(tmp_path / "t.csv",
               "N,t,residual,se\n250,0.1,4e-3,\n1000,0.1,1e-3,\n")
    out = str(tmp_path / "f.png")
    res = render(FigureSpec(kind="trend", inputs=(p,), output=out))
    assert os.path.getsize(out) > 0
    assert "slope" in res.annotations


def test_deterministic_png_bytes(tmp_path, trend_csv):
    a = str(tmp_path / "a.png")
    b = str(tmp_path / "b.png")
    render(FigureSpec(kind="trend", inputs=(trend_csv,), output=a))
    render(FigureSpec(kind="trend", inputs=(trend_csv,), output=b))
    with open(a, "rb") as f1, open(b, "rb") as f2:
        assert f1.read() == f2.read()


def test_ratio_curve(tmp_path):
    p = _write(tmp_path / "minkowski.csv",
               "delta,ratio,increment\n0.1,0.251,nan\n0.05,0.2502,0.003\n"
               "0.025,0.25005,0.0006\n")
    out = str(tmp_path / "r.svg")
    res = render(FigureSpec(kind="ratio_curve", inputs=(p,), output=out))
    assert os.path.getsize(out) > 0
    assert abs(res.annotations["final_ratio"] - 0.25005) < 1e-12


def test_variance_compare_needs_two_inputs(tmp_path, trend_csv):
    with pytest.raises(PlotkitError, match="two inputs"):
        render(FigureSpec(kind="variance_compare", inputs=(trend_csv,),
                          output=str(tmp_path / "f.png")))


def test_variance_compare(tmp_path):
    clt = _write(tmp_path / "clt.csv",
                 "N,replica,phi_id,Y_value\n" + "".join(
                     f"100,{r},0,{v}\n" for r, v in
                     enumerate([0.1, -0.2, 0.15, -0.05, 0.0, 0.2, -0.1, 0.05])))
    pred = _write(tmp_path / "predicted_cov.csv",
                  "phi_id,psi_id,s,t,value\n0,0,0.1,0.1,0.02\n")
    out = str(tmp_path / "v.png")
    res = render(FigureSpec(kind="variance_compare", inputs=(clt, pred),
                            output=out))
    assert os.path.getsize(out) > 0
    assert abs(res.annotations["pred_phi0"] - 0.02) < 1e-12
    assert res.annotations["var_phi0"] > 0


def test_convergence_generic(tmp_path):
    p = _write(tmp_path / "chaos.csv",
               "N,phi_id,mc_mean,reference,abs_err,se,replicas\n"
               "250,0,0,0,8e-4,1e-5,100\n250,1,0,0,1.2e-3,1e-5,100\n"
               "1000,0,0,0,2e-4,1e-5,100\n1000,1,0,0,3e-4,1e-5,100\n")
    out = str(tmp_path / "c.png")
    res = render(FigureSpec(kind="convergence", inputs=(p,), output=out))
    assert os.path.getsize(out) > 0
    import math
    expect = (math.log(2.5e-4 / 1e-3)) / math.log(4)
    assert abs(res.annotations["slope"] - expect) < 1e-9


def test_slope_fit_r2_perfect_line():
    import numpy as np
    x = np.array([1.0, 2.0, 3.0])
    sl, ic, r2 = slope_fit(x, 2.0 * x + 1.0)
    assert abs(sl - 2.0) < 1e-12 and abs(r2 - 1.0) < 1e-12
