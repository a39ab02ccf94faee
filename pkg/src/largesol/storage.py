"""Artifacts on disk: fixed-precision JSON, node CSVs and the operator cache."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .nonlocal_operator import BallDomain, DiscreteOperator, RadialGrid

FIELD_COLUMNS = ("r", "delta", "u", "ubar", "vstar_times_u")
SUPER_COLUMNS = ("r", "delta", "U", "G", "ubar")
CACHE_VERSION = 1


class FingerprintMismatch(RuntimeError):
    """An artifact was produced by a different configuration."""


def fmt(x: float) -> str:
    """Fixed 17 significant digits, locale independent."""
    x = float(x)
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON with every float written to 17 significant digits; keys sorted."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, bool) or obj is None or isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in sorted(obj.items())]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float, np.number)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        items = [pad + dumps(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_text(path: Path, text: str) -> None:
    path.write_bytes(text.encode("utf-8"))


def write_json(path: Path, obj) -> None:
    write_text(path, dumps(obj) + "\n")


def read_json(path: Path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_csv(path: Path, columns, data: dict, fingerprint: str) -> None:
    buf = io.StringIO(newline="")
    buf.write(f"# fingerprint={fingerprint}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    rows = np.column_stack([np.asarray(data[c], dtype=float) for c in columns])
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    write_text(path, buf.getvalue())


def read_csv(path: Path, expected: str | None = None) -> tuple[str, dict]:
    """Returns (fingerprint, columns); raises FingerprintMismatch when ``expected`` differs."""
    text = Path(path).read_text(encoding="utf-8")
    first, _, rest = text.partition("\n")
    if not first.startswith("# fingerprint="):
        raise ValueError(f"{path}: missing fingerprint header")
    fingerprint = first.split("=", 1)[1].strip()
    if expected is not None and fingerprint != expected:
        raise FingerprintMismatch(f"{path} was produced by config {fingerprint[:12]}, expected {expected[:12]}")
    reader = csv.reader(io.StringIO(rest))
    header = next(reader)
    values = np.array([[float(x) for x in row] for row in reader if row])
    return fingerprint, {name: values[:, i] for i, name in enumerate(header)}


def check_fingerprint(path: Path, expected: str) -> None:
    found = read_json(path).get("fingerprint")
    if found != expected:
        raise FingerprintMismatch(f"{path} was produced by config {str(found)[:12]}, expected {expected[:12]}")


class StagingDir:
    """Write artifacts into a temporary sibling directory and move them into place on success."""

    def __init__(self, out: Path):
        self.out = Path(out)

    def __enter__(self) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(prefix=".staging-", dir=self.out))
        return self.tmp

    def __exit__(self, exc_type, exc, tb):
        try:
            if exc_type is None:
                for item in sorted(self.tmp.iterdir()):
                    os.replace(item, self.out / item.name)
        finally:
            for item in self.tmp.iterdir():
                item.unlink()
            self.tmp.rmdir()
        return False


def save_operator(path: Path, op: DiscreteOperator, key: str) -> None:
    header = {"key": key, "version": CACHE_VERSION, "spec": op.spec_record,
              "domain": {"d": op.domain.d, "R": op.domain.R}, "gamma": op.grid.gamma}
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp.npz")
    np.savez(tmp, header=np.array(json.dumps(header, sort_keys=True)), A=op.A, kappa=op.kappa,
             r=op.grid.r, weights=op.grid.weights)
    os.replace(tmp, path)


def load_operator(path: Path, key: str) -> DiscreteOperator | None:
    """The cached operator, or None if absent or stale."""
    if not path.exists():
        return None
    try:
        with np.load(path, allow_pickle=False) as z:
            header = json.loads(str(z["header"]))
            if header.get("key") != key or header.get("version") != CACHE_VERSION:
                return None
            dom = BallDomain(d=int(header["domain"]["d"]), R=float(header["domain"]["R"]))
            grid = RadialGrid(r=z["r"], R=dom.R, gamma=float(header["gamma"]), d=dom.d, weights=z["weights"])
            return DiscreteOperator(grid=grid, domain=dom, A=z["A"], kappa=z["kappa"], spec_record=header["spec"])
    except (OSError, ValueError, KeyError):
        return None
