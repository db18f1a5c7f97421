import json
import shutil
import subprocess

import pytest

from stogeo import cli


def write(tmp_path, name, obj):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return str(p)


GEODESIC = {"experiment": "geodesic-check", "manifold": {"type": "sphere", "radius": 1.0}, "T": 6.2832, "dt": 1e-3}


def test_geodesic_check_runs(tmp_path):
    out = tmp_path / "geo"
    assert cli.main(["run", "-c", write(tmp_path, "g.json", GEODESIC), "-o", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["records"]["closure_error"]["estimate"] <= 1e-6
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "ok" and manifest["exit_code"] == 0 and "numpy" in manifest["versions"]
    assert (out / "geodesic.csv").read_text().startswith("# STOGEO1 geodesic config_hash=" + manifest["config_hash"])


def test_unknown_experiment_exits_2_without_outputs(tmp_path, capsys):
    out = tmp_path / "none"
    assert cli.main(["run", "-c", write(tmp_path, "b.json", {"experiment": "nope"}), "-o", str(out)]) == 2
    assert not out.exists()
    assert "experiment" in capsys.readouterr().err


def test_unreadable_config(tmp_path):
    assert cli.main(["run", "-c", str(tmp_path / "missing.json")]) == 2
    (tmp_path / "bad.json").write_text("{not json")
    assert cli.main(["validate", "-c", str(tmp_path / "bad.json")]) == 2


def test_validate_messages(tmp_path, capsys):
    assert cli.main(["validate", "-c", write(tmp_path, "ok.json", {"experiment": "holonomy"})]) == 0
    assert capsys.readouterr().out.startswith("ok")
    assert cli.main(["validate", "-c", write(tmp_path, "neg.json", {"experiment": "criticality", "dt": -1})]) == 2
    assert "dt" in capsys.readouterr().err
    assert cli.main(["validate", "-c", write(tmp_path, "few.json", {"experiment": "criticality", "n_paths": 10})]) == 0
    out = capsys.readouterr().out
    assert "warning: n_paths" in out and "ok" in out
    assert cli.main(["validate", "-c", write(tmp_path, "dt.json", {"experiment": "criticality", "dt": 5.0})]) == 2


def test_non_critical_drift_is_a_finding_not_a_failure(tmp_path, capsys):
    out = tmp_path / "sine"
    cfg = {"experiment": "criticality", "drift": {"type": "sine"}}
    assert cli.main(["run", "-c", write(tmp_path, "s.json", cfg), "-o", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["hypothesis"]["critical"] is False and report["hypothesis"]["max_z"] > 5
    assert not (out / "failure.json").exists()


def test_report_prints_sigma_table(tmp_path, capsys):
    out = tmp_path / "sig"
    assert cli.main(["run", "-c", write(tmp_path, "sig.json", {"experiment": "sigma-limit"}), "-o", str(out)]) == 0
    capsys.readouterr()
    assert cli.main(["report", str(out)]) == 0
    text = capsys.readouterr().out
    assert "σ = 0.03" in text and "fitted log-log slope" in text and "[PASS] monotone decrease" in text
    empty = tmp_path / "empty"
    empty.mkdir()
    assert cli.main(["report", str(empty)]) == 2


def test_rerun_is_byte_identical(tmp_path):
    cfg = write(tmp_path, "h.json", {"experiment": "holonomy", "seed": 4})
    for d in ("a", "b"):
        assert cli.main(["run", "-c", cfg, "-o", str(tmp_path / d)]) == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir() if p.name != "manifest.json")
    assert names == sorted(p.name for p in (tmp_path / "b").iterdir() if p.name != "manifest.json")
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()


@pytest.mark.skipif(shutil.which("stogeo") is None, reason="console script not installed")
def test_console_script(tmp_path):
    res = subprocess.run(["stogeo", "validate", "-c", write(tmp_path, "ok.json", {"experiment": "holonomy"})],
                         capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("ok")
