import json
import os
import subprocess
import sys

import pytest

from manl.experiments import (
    ConfigError,
    apply_overrides,
    config_hash,
    parse_config,
)


def _run(*args, **kw):
    return subprocess.run([sys.executable, "-m", "manl.cli", *args],
                          capture_output=True, text=True, **kw)


def test_parse_config_rejects_unknown_key():
    with pytest.raises(ConfigError, match="unknown"):
        parse_config({"experiment": "minkowski", "outputs": "x", "bogus": 1})


def test_parse_config_requires_outputs():
    with pytest.raises(ConfigError, match="outputs"):
        parse_config({"experiment": "minkowski"})


def test_parse_config_rejects_unknown_experiment():
    with pytest.raises(ConfigError, match="experiment"):
        parse_config({"experiment": "nope", "outputs": "x"})


def test_apply_overrides_json_values():
    cfg = {"experiment": "hydro", "outputs": "x"}
    out = apply_overrides(cfg, ["T=0.1", 'outputs="y"', "N_list=[10,20]"])
    assert out["T"] == 0.1
    assert out["outputs"] == "y"
    assert out["N_list"] == [10, 20]


def test_config_hash_is_order_invariant():
    a = config_hash({"x": 1, "y": [1, 2]})
    b = config_hash({"y": [1, 2], "x": 1})
    assert a == b
    assert a != config_hash({"x": 2, "y": [1, 2]})


def test_cli_unknown_key_exits_1(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"experiment": "minkowski",
                             "outputs": str(tmp_path / "o"), "oops": 3}))
    r = _run("run", "--config", str(p))
    assert r.returncode == 1
    assert "config error" in r.stderr.lower()


def test_cli_missing_config_file_exits_1(tmp_path):
    r = _run("run", "--config", str(tmp_path / "absent.json"))
    assert r.returncode == 1


def test_cli_minkowski_run_and_summarize(tmp_path):
    out = str(tmp_path / "mink")
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"experiment": "minkowski", "outputs": out,
                             "deltas": [0.1, 0.05], "n_cells": 512}))
    r = _run("run", "--config", str(p))
    assert r.returncode == 0, r.stderr
    assert os.path.exists(os.path.join(out, "minkowski.csv"))
    assert os.path.exists(os.path.join(out, "manifest.json"))
    s = _run("summarize", str(tmp_path))
    assert s.returncode == 0
    assert "minkowski" in s.stdout


def test_cli_determinism_byte_identical(tmp_path):
    outs = []
    for name in ("a", "b"):
        out = str(tmp_path / name)
        p = tmp_path / f"{name}.json"
        p.write_text(json.dumps({"experiment": "minkowski", "outputs": out,
                                 "deltas": [0.1, 0.05], "n_cells": 512}))
        r = _run("run", "--config", str(p))
        assert r.returncode == 0, r.stderr
        with open(os.path.join(out, "minkowski.csv"), "rb") as fh:
            outs.append(fh.read())
    assert outs[0] == outs[1]


def test_cli_override_changes_manifest(tmp_path):
    out = str(tmp_path / "m")
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"experiment": "minkowski", "outputs": out,
                             "n_cells": 512}))
    r = _run("run", "--config", str(p), "--override", "deltas=[0.1,0.05]")
    assert r.returncode == 0, r.stderr
    with open(os.path.join(out, "manifest.json")) as fh:
        man = json.load(fh)
    assert man["config"]["deltas"] == [0.1, 0.05]
    assert man["experiment"] == "minkowski"
    assert "config_hash" in man and "kappa" in man
