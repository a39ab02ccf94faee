import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from largesol import storage
from largesol.config import ConfigError, ExperimentConfig, SolverSettings


def test_default_round_trip():
    cfg = ExperimentConfig()
    again = ExperimentConfig.from_json(cfg.to_json())
    assert again == cfg
    assert again.to_json() == cfg.to_json()
    assert again.fingerprint() == cfg.fingerprint()
    assert len(cfg.fingerprint()) == 64


def test_fingerprint_tracks_content_only():
    cfg = ExperimentConfig()
    assert cfg.replace(out_dir="elsewhere", cache=False).fingerprint() == cfg.fingerprint()
    moved = cfg.replace(f={"family": "power", "p": 2.6})
    assert moved.fingerprint() != cfg.fingerprint()
    assert moved.operator_key() == cfg.operator_key()
    assert cfg.replace(grid={"N": 512, "gamma": 3.0}).operator_key() != cfg.operator_key()


@settings(max_examples=30, deadline=None)
@given(st.floats(min_value=1.01, max_value=10), st.floats(min_value=0.05, max_value=1.95),
       st.sampled_from([64, 128, 1024]), st.floats(min_value=1e-12, max_value=1e-4))
def test_round_trip_is_bit_exact(p, alpha, N, tol):
    cfg = ExperimentConfig(phi={"family": "stable", "params": {"alpha": alpha}}, f={"family": "power", "p": p},
                           grid={"N": N, "gamma": 2.0}, solver=SolverSettings(tol=tol))
    again = ExperimentConfig.from_json(cfg.to_json())
    assert again.f["p"] == p and again.phi["params"]["alpha"] == alpha and again.solver.tol == tol
    assert again.fingerprint() == cfg.fingerprint()


@pytest.mark.parametrize("patch,field", [
    ({"grid": {"N": -4, "gamma": 3.0}}, "grid.N"),
    ({"grid": {"N": 64.5, "gamma": 3.0}}, "grid.N"),
    ({"grid": {"N": 64}}, "grid.gamma"),
    ({"domain": {"d": 2, "R": 0}}, "domain.R"),
    ({"solver": {"base": 1.0}}, "solver.base"),
    ({"solver": {"tol": "small"}}, "solver.tol"),
    ({"solver": {"rate_window": [0.1, 0.01]}}, "solver.rate_window"),
    ({"solver": {"speed": 3}}, "solver"),
    ({"phi": {"params": {}}}, "phi"),
    ({"sweep": {"alphas": [], "ps": [2.0]}}, "sweep.alphas"),
    ({"cache": "yes"}, "cache"),
    ({"colour": "blue"}, "colour"),
])
def test_invalid_fields_are_named(patch, field):
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        ExperimentConfig.from_dict(patch)


def test_malformed_json_reports_position():
    with pytest.raises(ConfigError, match=r"line 2, column \d+"):
        ExperimentConfig.from_json('{"grid":\n  {"N": 64,, "gamma": 2}}')
    with pytest.raises(ConfigError, match="top level"):
        ExperimentConfig.from_json("[1, 2]")


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        ExperimentConfig.load(tmp_path / "nope.json")


def test_power_of_two_warning():
    with pytest.warns(UserWarning, match="power of two"):
        ExperimentConfig(grid={"N": 100, "gamma": 3.0})
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        ExperimentConfig(grid={"N": 128, "gamma": 3.0})


def test_fmt_and_dumps():
    assert storage.fmt(0.1) == "0.10000000000000001"
    assert float(storage.fmt(1 / 3)) == 1 / 3
    assert storage.fmt(float("inf")) == "Infinity"
    text = storage.dumps({"b": [1.5, 2], "a": {"x": True, "y": None}, "c": np.float64(0.25)})
    assert text.index('"a"') < text.index('"b"') < text.index('"c"')
    assert json.loads(text) == {"a": {"x": True, "y": None}, "b": [1.5, 2], "c": 0.25}
    with pytest.raises(TypeError):
        storage.dumps({"x": object()})


@settings(max_examples=50, deadline=None)
@given(st.floats(allow_nan=False, allow_infinity=False))
def test_fmt_round_trips_every_double(x):
    assert float(storage.fmt(x)) == x


def test_csv_format_and_fingerprint(tmp_path):
    path = tmp_path / "u.csv"
    data = {c: np.linspace(0, 1, 5) / 3 + i for i, c in enumerate(storage.FIELD_COLUMNS)}
    storage.write_csv(path, storage.FIELD_COLUMNS, data, "abc123")
    raw = path.read_bytes()
    assert b"\r" not in raw
    lines = raw.decode().splitlines()
    assert lines[0] == "# fingerprint=abc123"
    assert lines[1] == ",".join(storage.FIELD_COLUMNS)
    assert len(lines) == 7
    fp, cols = storage.read_csv(path, "abc123")
    assert fp == "abc123"
    for c in storage.FIELD_COLUMNS:
        np.testing.assert_array_equal(cols[c], data[c])
    with pytest.raises(storage.FingerprintMismatch):
        storage.read_csv(path, "other")


def test_json_fingerprint_check(tmp_path):
    path = tmp_path / "trace.json"
    storage.write_json(path, {"fingerprint": "f1", "x": 1.0})
    storage.check_fingerprint(path, "f1")
    with pytest.raises(storage.FingerprintMismatch):
        storage.check_fingerprint(path, "f2")


def test_staging_dir(tmp_path):
    out = tmp_path / "out"
    with storage.StagingDir(out) as tmp:
        (tmp / "a.txt").write_text("ok")
    assert (out / "a.txt").read_text() == "ok"
    with pytest.raises(RuntimeError):
        with storage.StagingDir(out) as tmp:
            (tmp / "b.txt").write_text("partial")
            raise RuntimeError("boom")
    assert sorted(p.name for p in out.iterdir()) == ["a.txt"]


def test_operator_cache_round_trip(op_cache, tmp_path):
    op = op_cache(1.0, 128, 2.0)
    path = tmp_path / "op.npz"
    storage.save_operator(path, op, "k1")
    back = storage.load_operator(path, "k1")
    np.testing.assert_array_equal(back.A, op.A)
    np.testing.assert_array_equal(back.kappa, op.kappa)
    np.testing.assert_array_equal(back.grid.r, op.grid.r)
    assert back.spec_record == op.spec_record
    assert storage.load_operator(path, "k2") is None
    assert storage.load_operator(tmp_path / "missing.npz", "k1") is None
    (tmp_path / "junk.npz").write_bytes(b"not a zip")
    assert storage.load_operator(tmp_path / "junk.npz", "k1") is None
