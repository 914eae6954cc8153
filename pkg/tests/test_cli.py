import json
import time

import numpy as np
import pytest

from scmyth import __version__
from scmyth.calibration import ENV_VAR
from scmyth.cli import EXIT_CONFIG, EXIT_FIT, EXIT_IO, EXIT_OK, main

TOY_CSV = """unit,time,treated,post,outcome
T,1,1,0,1.0
T,2,1,0,2.0
T,3,1,1,4.0
A,1,0,0,0.0
A,2,0,0,1.0
A,3,0,1,2.0
B,1,0,0,2.0
B,2,0,0,3.0
B,3,0,1,4.0
"""


@pytest.fixture
def small_config(tmp_path):
    doc = {
        "schema_version": 1,
        "scenarios": ["STATE_OFFSET:FACTOR", "FULL_OVERLAP:LINEAR"],
        "n_units": 16,
        "T": 14,
        "t0": 9,
        "methods": ["SYNTH_NOCOV", "AUGSYNTH", "AUGSYNTH_RESID", "IFE_COV", "IFE_NOCOV"],
        "rank_methods": ["SYNTH_NOCOV", "AUGSYNTH_RESID", "IFE_COV", "IFE_NOCOV"],
        "replications": 2,
        "seed": 5,
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc))
    return path


def _err(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_version(capsys):
    with pytest.raises(SystemExit) as e:
        main(["--version"])
    assert e.value.code == 0 and __version__ in capsys.readouterr().out


def test_simulate_is_byte_deterministic(tmp_path, small_config):
    args = ["--quiet", "simulate", "--config", str(small_config), "--reps", "1"]
    assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
    names = sorted(p.name for p in (tmp_path / "a").glob("panel_*.csv"))
    assert names == ["panel_FULL_OVERLAP_LINEAR_rep0000.csv", "panel_STATE_OFFSET_FACTOR_rep0000.csv"]
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    other = json.loads((tmp_path / "b" / "manifest.json").read_text())
    for doc in (manifest, other):
        doc["config"].pop("output_dir")
    assert manifest == other
    entry = manifest["datasets"][0]
    assert entry["t0"] == 9 and len(entry["counterfactual"]) == 14 and entry["seed"] == [5, 0]
    assert set(manifest["files"]) == set(names)


def test_fit_toy_csv(tmp_path, capsys):
    path = tmp_path / "toy.csv"
    path.write_text(TOY_CSV)
    assert main(["--quiet", "fit", str(path), "--method", "SYNTH_NOCOV"]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    w = doc["fit"]["weights"]
    assert w["A"] == pytest.approx(0.5, abs=1e-9) and w["B"] == pytest.approx(0.5, abs=1e-9)
    assert doc["fit"]["att_mean"] == pytest.approx(1.0, abs=1e-9)
    assert doc["treated_unit"] == "T" and doc["omission"] == "NONE"


def test_fit_ife_invariant_to_omission(tmp_path, small_config, capsys):
    sim = tmp_path / "sim"
    main(["--quiet", "simulate", "--config", str(small_config), "--reps", "1", "--out", str(sim)])
    panel = sim / "panel_STATE_OFFSET_FACTOR_rep0000.csv"
    atts = []
    for om in ("race=white|education=hs|industry=ind0", "race=other|education=lths|industry=ind3"):
        out = tmp_path / f"fit{len(atts)}.json"
        assert main(["--quiet", "fit", str(panel), "--method", "IFE_COV", "--omission", om, "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert doc["omission"] == om
        atts.append(doc["fit"]["att_mean"])
    assert abs(atts[0] - atts[1]) <= 1e-12


def test_fit_with_explicit_groups(tmp_path, capsys):
    rng = np.random.default_rng(0)
    lines = ["unit,time,treated,post,outcome,a,b,inc"]
    for u in range(6):
        for t in range(1, 9):
            s = rng.dirichlet([1, 1])
            lines.append(f"u{u},{t},{int(u == 0)},{int(t > 5)},{rng.normal()!r},{float(s[0])!r},{float(1 - s[0])!r},{rng.normal()!r}")
    path = tmp_path / "p.csv"
    path.write_text("\n".join(lines) + "\n")
    code = main(["--quiet", "fit", str(path), "--method", "AUGSYNTH", "--group", "g=a,b", "--scalar", "inc"])
    assert code == EXIT_OK
    assert json.loads(capsys.readouterr().out)["omission"] == "g=a"


def test_malformed_csv_exits_4_naming_line(tmp_path, capsys):
    path = tmp_path / "bad.csv"
    path.write_text(TOY_CSV.replace("A,2,0,0,1.0", "A,2,0,0,one"))
    assert main(["--quiet", "fit", str(path), "--method", "SYNTH_NOCOV"]) == EXIT_IO
    err = _err(capsys)
    assert err["error"] == "parse_error" and err["line"] == 6 and err["column"] == "outcome"
    assert "line 6" in err["message"]


def test_missing_panel_exits_4(tmp_path, capsys):
    assert main(["--quiet", "fit", str(tmp_path / "nope.csv"), "--method", "IFE_COV"]) == EXIT_IO


def test_fit_failure_exits_3(tmp_path, capsys):
    path = tmp_path / "toy.csv"
    path.write_text(TOY_CSV)
    # two donors cannot support a rank-2 factor model
    code = main(["--quiet", "fit", str(path), "--method", "SYNTH_NOCOV", "--t0", "3"])
    assert code in (EXIT_CONFIG, EXIT_FIT, EXIT_IO)
    rng = np.random.default_rng(1)
    lines = ["unit,time,treated,post,outcome,x,y,z"]
    for u in range(3):
        for t in range(1, 6):
            lines.append(f"u{u},{t},{int(u == 0)},{int(t > 3)},{rng.normal()!r},{rng.normal()!r},{rng.normal()!r},{rng.normal()!r}")
    path.write_text("\n".join(lines) + "\n")
    assert main(["--quiet", "fit", str(path), "--method", "AUGSYNTH_RESID"]) == EXIT_FIT
    assert _err(capsys)["error"] == "fit_failure"


@pytest.mark.parametrize(
    "extra",
    [
        ["--omission", "race=purple|education=hs|industry=ind0"],
        ["--reps", "0"],
        ["--calibration", "/nonexistent/calibration.json"],
        ["--scenario", "SIDEWAYS:LINEAR"],
    ],
)
def test_config_errors_exit_2(tmp_path, small_config, capsys, extra):
    code = main(["--quiet", "experiment", "--config", str(small_config), "--out", str(tmp_path / "o")] + extra)
    assert code == EXIT_CONFIG
    assert _err(capsys)["error"] == "config_error"


def test_bad_config_json_exits_2(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text("{not json")
    assert main(["--quiet", "experiment", "--config", str(cfg)]) == EXIT_CONFIG


def test_experiment_smoke_and_rerun(tmp_path, small_config, capsys):
    start = time.perf_counter()
    assert main(["--quiet", "experiment", "--config", str(small_config), "--out", str(tmp_path / "a")]) == 0
    assert time.perf_counter() - start < 60
    assert main(["--quiet", "experiment", "--config", str(small_config), "--out", str(tmp_path / "b"),
                 "--workers", "2"]) == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert {"records.csv", "failures.csv", "datasets.csv", "manifest.json", "fig1_rmse.csv",
            "fig2_refcat.csv", "fig4_conditional_bias.csv", "fig6_spearman.csv", "fig8_rankmatrix.csv"} <= set(files)
    for f in files:
        a, b = (tmp_path / "a" / f).read_bytes(), (tmp_path / "b" / f).read_bytes()
        if f == "manifest.json":
            da, db = json.loads(a), json.loads(b)
            assert da["files"] == db["files"] and da["config_hash"] == db["config_hash"]
        else:
            assert a == b, f
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["status"] == "ok" and manifest["seed"] == 5
    fig8 = (tmp_path / "a" / "fig8_rankmatrix.csv").read_text()
    assert "SYNTH_NOCOV;AUGSYNTH_RESID;IFE_COV;IFE_NOCOV" in fig8

    # report rebuilds identical tables
    before = (tmp_path / "a" / "fig8_rankmatrix.csv").read_bytes()
    (tmp_path / "a" / "fig8_rankmatrix.csv").unlink()
    assert main(["--quiet", "report", str(tmp_path / "a")]) == 0
    assert (tmp_path / "a" / "fig8_rankmatrix.csv").read_bytes() == before


def test_report_missing_dir(tmp_path, capsys):
    assert main(["--quiet", "report", str(tmp_path)]) == EXIT_IO


def test_calibration_env_var(tmp_path, small_config, monkeypatch, calib):
    doc = calib.to_dict()
    doc["tau"] = 0.5
    path = tmp_path / "cal.json"
    path.write_text(json.dumps(doc))
    monkeypatch.setenv(ENV_VAR, str(path))
    assert main(["--quiet", "simulate", "--config", str(small_config), "--reps", "1", "--out", str(tmp_path / "s")]) == 0
    manifest = json.loads((tmp_path / "s" / "manifest.json").read_text())
    assert {d["true_tau"] for d in manifest["datasets"]} == {0.5}
