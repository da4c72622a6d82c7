import json
import subprocess
import sys

import numpy as np
import pytest

from convorder.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_OK, convexity_sweep, frozen_gaussian, main
from convorder.parametrix import Coefficients
from convorder.scenarios import load_config


def write_cfg(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def small_compare():
    cfg = load_config("closed-form-1d")
    cfg["numerics"] = {"n_paths": 4000, "n_steps": 16}
    return cfg


def test_list(capsys):
    assert main(["list"]) == EXIT_OK
    assert "closed-form-1d" in capsys.readouterr().out.split()


def test_compare_writes_report(tmp_path):
    out = tmp_path / "out"
    assert main(["compare", "--config", write_cfg(tmp_path, small_compare()), "--out", str(out)]) == EXIT_OK
    rep = json.loads((out / "report.json").read_text())
    assert rep["verdict"] == "OrderedStrict"
    assert (out / "summary.txt").read_text().startswith("verdict: OrderedStrict")


def test_outputs_are_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path, small_compare())
    main(["compare", "--config", cfg, "--out", str(tmp_path / "a"), "--threads", "1"])
    main(["compare", "--config", cfg, "--out", str(tmp_path / "b"), "--threads", "3"])
    for f in ("report.json", "summary.txt", "config.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    main(["mollify-probe", "--config", "mollify-abs", "--out", str(tmp_path / "c")])
    main(["mollify-probe", "--config", "mollify-abs", "--out", str(tmp_path / "d")])
    assert (tmp_path / "c" / "mollify.csv").read_bytes() == (tmp_path / "d" / "mollify.csv").read_bytes()


def test_seed_override_changes_result(tmp_path):
    cfg = write_cfg(tmp_path, small_compare())
    main(["compare", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["compare", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "5"])
    a = json.loads((tmp_path / "a" / "report.json").read_text())
    b = json.loads((tmp_path / "b" / "report.json").read_text())
    assert b["mc"]["seed"] == 5 and a["mc"]["meanX"] != b["mc"]["meanX"]


def test_unknown_family_exit_64(tmp_path, capsys):
    cfg = small_compare()
    cfg["fieldX"]["family"] = "mystery"
    code = main(["compare", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path / "o")])
    assert code == EXIT_CONFIG
    assert "fieldX.family" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_kind_mismatch_and_unknown_config(tmp_path, capsys):
    assert main(["monotonicity", "--config", "closed-form-1d", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["compare", "--config", "no-such-config", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "no-such-config" in capsys.readouterr().err


def test_threads_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("CONVORDER_THREADS", "2")
    assert main(["compare", "--config", write_cfg(tmp_path, small_compare()), "--out", str(tmp_path / "o")]) == EXIT_OK


def test_kernel_constant_csv_matches_gaussian(tmp_path):
    out = tmp_path / "k"
    assert main(["kernel-probe", "--config", "kernel-constant", "--out", str(out)]) == EXIT_OK
    rows = np.loadtxt(out / "kernel.csv", delimiter=",", skiprows=1)
    header = (out / "kernel.csv").read_text().splitlines()[0].split(",")
    col = {k: rows[:, i] for i, k in enumerate(header)}
    assert len(rows) == 100
    assert np.max(np.abs(col["p"] - col["gauss"])) < 1e-10


def test_frozen_gaussian_reference():
    c = Coefficients.constant_matrix(np.eye(2))
    assert frozen_gaussian(c, 1.0, 0.0, 0.0, 0.0) == pytest.approx(1 / (4 * np.pi))


def test_mollify_probe_outputs(tmp_path):
    out = tmp_path / "m"
    assert main(["mollify-probe", "--config", "mollify-square", "--out", str(out)]) == EXIT_OK
    rows = np.loadtxt(out / "mollify.csv", delimiter=",", skiprows=1)
    assert np.allclose(rows[:, 1], rows[:, 0] ** 2 + 0.5, atol=1e-8)


def test_monotonicity_cli_small(tmp_path):
    cfg = load_config("time-monotonicity")
    cfg["numerics"] = {"n_paths": 20000, "n_steps": 32}
    out = tmp_path / "mono"
    assert main(["monotonicity", "--config", write_cfg(tmp_path, cfg), "--out", str(out)]) == EXIT_OK
    res = json.loads((out / "monotonicity.json").read_text())
    assert res["control"]["verdict"] == "Flat"
    assert (out / "values.csv").read_text().startswith("t,mean,std_error")


def test_x2_dependent_a11_is_flagged_non_convex():
    cfg = load_config("convexity-x2-counterexample")
    cfg["times"] = [0.25]
    res = convexity_sweep(cfg)
    assert not res["convex"]
    rep = res["reports"][0]
    # the defect sits near x2 = pi/2 where a11 = 1 + 0.1 sin x2 is concave
    assert abs(rep["witness"][1] - np.pi / 2) < 0.5
    assert rep["min"] < -1e-3


def test_convexity_cli_exit_codes(tmp_path):
    assert main(["convexity-sweep", "--config", "convexity-concave", "--out", str(tmp_path / "c")]) == EXIT_FAIL
    assert main(["convexity-sweep", "--config", "convexity-heat", "--out", str(tmp_path / "h")]) == EXIT_OK
    rows = (tmp_path / "h" / "convexity.csv").read_text().splitlines()
    assert rows[0] == "t,transform,min_second_difference" and len(rows) == 1 + 3 * 40


def test_console_script_module_entry(tmp_path):
    r = subprocess.run([sys.executable, "-m", "convorder.cli", "list"], capture_output=True, text=True)
    assert r.returncode == 0 and "kernel-constant" in r.stdout
