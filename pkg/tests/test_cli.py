import json
import subprocess
import sys

import pytest

from largesol import storage
from largesol.cli import main
from largesol.config import ExperimentConfig


def write_config(path, **changes):
    cfg = ExperimentConfig(grid={"N": 256, "gamma": 3.0}, out_dir=str(path.parent / "out")).replace(**changes)
    path.write_text(cfg.to_json())
    return cfg


@pytest.fixture(scope="module")
def solved(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg_path = root / "cfg.json"
    cfg = write_config(cfg_path)
    assert main(["solve", "--config", str(cfg_path)]) == 0
    return root, cfg_path, cfg


def test_solve_writes_artifacts(solved):
    root, _, cfg = solved
    out = root / "out"
    for name in ("check.json", "check.txt", "u.csv", "ubar.csv", "trace.json"):
        assert (out / name).is_file()
    trace = storage.read_json(out / "trace.json")
    assert trace["fingerprint"] == cfg.fingerprint()
    assert trace["trace"]["converged"] and trace["trace"]["monotone_flags_ok"]
    assert trace["band_check"]["verdict"] and trace["l1_crosscheck"]["consistent"]
    assert abs(trace["rate"]["beta_ubar"] / (2 / 3) - 1) < 0.05
    fp, cols = storage.read_csv(out / "u.csv", cfg.fingerprint())
    assert list(cols) == list(storage.FIELD_COLUMNS) and cols["u"].size == 256
    assert list(storage.read_csv(out / "ubar.csv")[1]) == list(storage.SUPER_COLUMNS)
    assert not [p for p in out.iterdir() if p.name.startswith(".staging")]


def test_cache_hit_reproduces_outputs(solved, tmp_path):
    root, cfg_path, _ = solved
    out = root / "out"
    assert len(list((out / "cache").glob("op-*.npz"))) == 1
    before = {n: (out / n).read_bytes() for n in ("u.csv", "ubar.csv", "trace.json")}
    assert main(["solve", "--config", str(cfg_path)]) == 0
    assert {n: (out / n).read_bytes() for n in before} == before
    fresh = tmp_path / "fresh"
    assert main(["solve", "--config", str(cfg_path), "--out", str(fresh), "--no-cache"]) == 0
    assert not (fresh / "cache").exists()
    assert (fresh / "u.csv").read_bytes() == before["u.csv"]


def test_rate_and_verify(solved):
    root, cfg_path, _ = solved
    assert main(["rate", "--config", str(cfg_path)]) == 0
    rate = storage.read_json(root / "out" / "rate.json")
    trace = storage.read_json(root / "out" / "trace.json")
    assert rate["beta"] == trace["rate"]["beta"]
    assert main(["verify", "--config", str(cfg_path)]) == 0
    res = storage.read_json(root / "out" / "verify.json")["results"]
    assert len(res) == 7 and all(r["verdict"] for r in res)


def test_tampered_field_fails_green_check(solved, tmp_path):
    root, cfg_path, cfg = solved
    out = tmp_path / "tampered"
    out.mkdir()
    for name in ("u.csv", "ubar.csv", "trace.json"):
        (out / name).write_bytes((root / "out" / name).read_bytes())
    fp, cols = storage.read_csv(out / "u.csv")
    cols["u"][60] *= 1.05
    storage.write_csv(out / "u.csv", storage.FIELD_COLUMNS, cols, fp)
    assert main(["verify", "--config", str(cfg_path), "--out", str(out)]) == 1
    res = {r["name"]: r for r in storage.read_json(out / "verify.json")["results"]}
    assert not res["green_identity"]["verdict"]


def test_fingerprint_mismatch(solved, tmp_path):
    root, _, cfg = solved
    other = tmp_path / "other.json"
    other.write_text(cfg.replace(f={"family": "power", "p": 2.6}).to_json())
    assert main(["rate", "--config", str(other), "--out", str(root / "out")]) == 3
    assert main(["verify", "--config", str(other), "--out", str(root / "out")]) == 3


def test_inadmissible_refuses_before_assembly(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    write_config(cfg_path, f={"family": "power", "p": 1.5})
    assert main(["solve", "--config", str(cfg_path)]) == 1
    assert sorted(p.name for p in (tmp_path / "out").iterdir()) == ["check.json", "check.txt"]
    assert main(["check", "--config", str(cfg_path)]) == 1
    assert json.loads((tmp_path / "out" / "check.json").read_text())["admissible"] is False


@pytest.mark.parametrize("text", ['{"grid": {"N": 64,, "gamma": 2}}', '{"grid": {"N": -1, "gamma": 2}}',
                                  '{"f": {"family": "cubic"}}'])
def test_config_errors_exit_2(tmp_path, text, capsys):
    path = tmp_path / "bad.json"
    path.write_text(text)
    assert main(["check", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "config error" in capsys.readouterr().err


def test_usage_errors_exit_2(tmp_path):
    assert main(["frobnicate"]) == 2
    assert main(["check", "--threads", "0", "--out", str(tmp_path)]) == 2
    assert main(["verify", "--out", str(tmp_path / "empty")]) == 2


def test_report(tmp_path):
    assert main(["report", "--out", str(tmp_path)]) == 0
    assert "35/35" in (tmp_path / "report.txt").read_text()
    rows = storage.read_json(tmp_path / "report.json")["rows"]
    assert len(rows) == 35


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "largesol", "check", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "admissible: yes" in proc.stdout
