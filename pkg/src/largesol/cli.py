"""Command line: check, solve, rate, verify and report.

Exit codes: 0 success, 1 negative verdict or failed stage, 2 configuration or
usage error, 3 artifact fingerprint mismatch.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import bernstein as bs
from . import conditions as cond
from . import nonlinearity as nlm
from . import solver as sv
from . import storage as st
from . import verify as vf
from .config import ConfigError, ExperimentConfig
from .nonlocal_operator import BallDomain, DiscreteOperator, Field, assemble, build_grid, green_apply, martin_surrogate

log = logging.getLogger("largesol")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_FINGERPRINT = 0, 1, 2, 3


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: Exception):
        super().__init__(f"stage {stage}: {exc}")
        self.stage = stage


class _Stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        log.info("stage %s", self.name)

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and isinstance(exc, Exception) and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


def _models(cfg: ExperimentConfig):
    try:
        return bs.from_config(cfg.phi), nlm.from_config(cfg.f)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"phi/f: {exc}") from None


def _domain(cfg: ExperimentConfig) -> BallDomain:
    return BallDomain(d=int(cfg.domain["d"]), R=float(cfg.domain["R"]))


def load_operator(cfg: ExperimentConfig, spec, use_cache: bool, threads: int = 1) -> DiscreteOperator:
    """Assemble the operator, going through the on-disk cache when enabled."""
    domain = _domain(cfg)
    key = cfg.operator_key()
    path = Path(cfg.out_dir) / "cache" / f"op-{key}.npz"
    if use_cache:
        op = st.load_operator(path, key)
        if op is not None:
            log.info("operator cache hit %s", path.name)
            return op
    grid = build_grid(domain, int(cfg.grid["N"]), float(cfg.grid["gamma"]))
    op = assemble(spec, domain, grid, threads=threads)
    if use_cache:
        st.save_operator(path, op, key)
    return op


def run_check(cfg: ExperimentConfig) -> tuple[int, cond.ConditionReport]:
    spec, nl = _models(cfg)
    report = cond.full_report(spec, nl, cfg.checks)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = dict(report.to_dict(), fingerprint=cfg.fingerprint())
    st.write_json(out / "check.json", payload)
    st.write_text(out / "check.txt", report.to_table() + "\n")
    print(report.to_table())
    return (EXIT_OK if report.admissible else EXIT_FAIL), report


def _field_columns(grid, domain, spec, u, ubar):
    vstar = martin_surrogate(domain, spec, grid).values
    return {"r": grid.r, "delta": grid.delta, "u": u, "ubar": ubar, "vstar_times_u": vstar * u}


def run_solve(cfg: ExperimentConfig, use_cache: bool = True, threads: int = 1) -> int:
    code, report = run_check(cfg)
    if code != EXIT_OK:
        print("refusing to solve: configuration is not admissible", file=sys.stderr)
        return EXIT_FAIL
    spec, nl = _models(cfg)
    s = cfg.solver
    fp = cfg.fingerprint()
    out = Path(cfg.out_dir)
    with st.StagingDir(out) as tmp:
        with _Stage("assembly"):
            op = load_operator(cfg, spec, use_cache, threads)
        domain, grid = op.domain, op.grid
        with _Stage("supersolution"):
            U = sv.build_U(domain, spec, nl, grid)
            crosscheck = sv.l1_crosscheck(U, bool(report.ko_integral.verdict))
            band = sv.verify_supersolution_band(op, U, nl, s.eta, delta_stop_factor=s.delta_stop)
            if not band.verdict:
                raise ValueError(f"LU/f(U) does not stabilize under refinement: {band.ratios}")
            bundle = sv.build_supersolution(op, U, nl, s.eta, s.delta_stop)
        with _Stage("large solve"):
            martin = sv.martin_field(op, spec, s.delta_stop)
            trace = sv.solve_large(op, nl, bundle, martin, base=s.base, tol=s.tol, newton_tol=s.newton_tol,
                                   delta_stop_factor=s.delta_stop, max_schedule=s.max_schedule,
                                   max_iter=s.max_iter)
        with _Stage("rate fit"):
            beta, rms = sv.fit_blowup_rate(trace.u, s.rate_window)
            beta_bar, rms_bar = sv.fit_blowup_rate(bundle.ubar, s.rate_window)
        st.write_csv(tmp / "u.csv", st.FIELD_COLUMNS,
                     _field_columns(grid, domain, spec, trace.u.values, bundle.ubar.values), fp)
        st.write_csv(tmp / "ubar.csv", st.SUPER_COLUMNS,
                     {"r": grid.r, "delta": grid.delta, "U": U.values, "G": bundle.G.values,
                      "ubar": bundle.ubar.values}, fp)
        st.write_json(tmp / "trace.json", {
            "fingerprint": fp,
            "config": cfg.content(),
            "N": grid.N,
            "gamma": grid.gamma,
            "supersolution": bundle.to_dict(),
            "band_check": band.to_dict(),
            "l1_crosscheck": crosscheck,
            "trace": trace.to_dict(),
            "rate": {"window": list(s.rate_window), "beta": beta, "rms": rms,
                     "beta_ubar": beta_bar, "rms_ubar": rms_bar},
        })
    print(f"beta = {beta:.6f} over delta in [{s.rate_window[0]}, {s.rate_window[1]}]; "
          f"schedule k = {trace.ks[0]:g} .. {trace.ks[-1]:g}; monotone flags ok: {trace.monotone_ok}")
    return EXIT_OK


def run_rate(cfg: ExperimentConfig) -> int:
    out = Path(cfg.out_dir)
    _, cols = st.read_csv(out / "u.csv", cfg.fingerprint())
    delta = cols["delta"]
    R = float(cfg.domain["R"])
    grid = build_grid(_domain(cfg), delta.size, float(cfg.grid["gamma"]))
    if not np.allclose(grid.delta, delta, rtol=1e-12, atol=1e-15 * R):
        raise st.FingerprintMismatch("u.csv nodes do not match the configured grid")
    beta, rms = sv.fit_blowup_rate(Field(grid, cols["u"], "u"), cfg.solver.rate_window)
    payload = {"fingerprint": cfg.fingerprint(), "window": list(cfg.solver.rate_window), "beta": beta, "rms": rms}
    st.write_json(out / "rate.json", payload)
    print(st.dumps(payload))
    return EXIT_OK


def sign_changing_field(op: DiscreteOperator) -> tuple[np.ndarray, np.ndarray]:
    """u = G 1_{r < R/2} - G 1_{r >= R/2}: positive at the centre, negative near the boundary."""
    r = op.grid.r / op.grid.R
    g1 = np.where(r < 0.5, 1.0, 0.0)
    g2 = np.where(r >= 0.5, 1.0, 0.0)
    u = green_apply(op, g1).values - green_apply(op, g2).values
    return u, op.apply(u)


def verify_battery(op: DiscreteOperator, nl: nlm.Nonlinearity, u: np.ndarray, ubar: np.ndarray, moderate,
                   delta_stop: float = 3.0, seed: int = 0, n_bands: int = 100, n_bumps: int = 50) -> list:
    grid = op.grid
    rng = np.random.default_rng(seed)
    interior_stop = int(np.flatnonzero(~sv.layer_mask(grid, delta_stop))[-1]) + 1
    far = np.flatnonzero(grid.delta >= 0.05 * grid.R)
    far_stop = int(far[-1]) + 1 if far.size else interior_stop
    results = []
    G = green_apply(op, np.ones(grid.N)).values
    results.append(vf.check_superharmonic(op, G, vf.random_bands(grid.N, n_bands, rng)))
    bands = vf.random_bands(grid.N, 20, rng, stop=far_stop)
    worst = None
    for field in list(moderate) + [u]:
        res = vf.check_green_identity(op, nl, field, bands, rtol=1e-5)
        if worst is None or res.margin < worst.margin or not res.verdict:
            worst = res
    results.append(worst)
    results.append(vf.check_green_identity(op, nl, ubar, bands, rtol=1e-5, inequality=True))
    interior = (0, interior_stop)
    worst = None
    for field in list(moderate) + [u]:
        res = vf.check_comparison(op, nl, ubar, field, interior)
        if worst is None or not res.verdict or (res.margin < worst.margin):
            worst = res
    results.append(worst)
    xis = vf.random_bumps(grid, n_bumps, rng, interior_stop, max_width=max(1, grid.N // 8))
    synth, F = sign_changing_field(op)
    results.append(vf.check_kato(op, synth, F, xis))
    if len(moderate) >= 2:
        a, b = moderate[0], moderate[-1]
    else:
        a = b = u
    results.append(vf.check_max_subsolution(op, nl, a, b, xis))
    results.append(vf.check_max_subsolution(op, nl, a, b, xis, use_min=True))
    return results


def run_verify(cfg: ExperimentConfig, use_cache: bool = True, threads: int = 1) -> int:
    out = Path(cfg.out_dir)
    fp = cfg.fingerprint()
    for name in ("u.csv", "ubar.csv", "trace.json"):
        if not (out / name).exists():
            print(f"missing artifact {out / name}; run 'solve' first", file=sys.stderr)
            return EXIT_CONFIG
    _, ucols = st.read_csv(out / "u.csv", fp)
    _, bcols = st.read_csv(out / "ubar.csv", fp)
    st.check_fingerprint(out / "trace.json", fp)
    trace = st.read_json(out / "trace.json")
    spec, nl = _models(cfg)
    op = load_operator(cfg, spec, use_cache, threads)
    if ucols["u"].size != op.N or bcols["ubar"].size != op.N:
        raise st.FingerprintMismatch("artifact node count differs from the configured grid")
    moderate = [np.asarray(f, dtype=float) for f in trace["trace"].get("moderate_fields", [])]
    results = verify_battery(op, nl, ucols["u"], bcols["ubar"], moderate, cfg.solver.delta_stop)
    st.write_json(out / "verify.json", {"fingerprint": fp, "note": vf.PAIRING_NOTE,
                                        "results": [r.to_dict() for r in results]})
    table = vf.format_table(results)
    st.write_text(out / "verify.txt", table + "\n")
    print(table)
    return EXIT_OK if all(r.verdict for r in results) else EXIT_FAIL


def run_report(cfg: ExperimentConfig) -> int:
    rows, lines = [], [f"{'alpha':>6} {'p':>6} {'admissible':>11} {'window':>7}  reasons"]
    for alpha in cfg.sweep["alphas"]:
        for p in cfg.sweep["ps"]:
            spec, nl = bs.stable(alpha), nlm.make_power(p)
            rep = cond.full_report(spec, nl, cfg.checks)
            window = bool(1 + alpha < p < (2 + alpha) / (2 - alpha)) if alpha < 2 else None
            rows.append({"alpha": alpha, "p": p, "admissible": rep.admissible, "window": window,
                         "reasons": list(rep.reasons)})
            lines.append(f"{alpha:>6g} {p:>6g} {str(rep.admissible):>11} {str(window):>7}  "
                         + "; ".join(rep.reasons))
    agree = sum(r["admissible"] == r["window"] for r in rows)
    lines.append(f"agreement with 1+alpha < p < (2+alpha)/(2-alpha): {agree}/{len(rows)}")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    st.write_json(out / "report.json", {"fingerprint": cfg.fingerprint(), "rows": rows})
    st.write_text(out / "report.txt", "\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="largesol", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment JSON (defaults are used when omitted)")
    common.add_argument("--out", type=Path, help="output directory (overrides out_dir)")
    common.add_argument("--no-cache", action="store_true", help="ignore and do not write the operator cache")
    common.add_argument("--threads", type=int, default=1, help="worker threads for operator assembly")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("check", parents=[common], help="admissibility conditions for (phi, f)")
    sub.add_parser("solve", parents=[common], help="supersolution, large solution and rate fit")
    sub.add_parser("rate", parents=[common], help="fit the blow-up exponent from a stored u.csv")
    sub.add_parser("verify", parents=[common], help="structural checks on stored fields")
    sub.add_parser("report", parents=[common], help="admissibility table over the (alpha, p) sweep")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        if args.threads < 1:
            raise ConfigError("--threads: expected a positive integer")
        cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
        if args.out is not None:
            cfg = cfg.replace(out_dir=str(args.out))
        use_cache = cfg.cache and not args.no_cache
        if args.command == "check":
            return run_check(cfg)[0]
        if args.command == "solve":
            return run_solve(cfg, use_cache, args.threads)
        if args.command == "rate":
            return run_rate(cfg)
        if args.command == "verify":
            return run_verify(cfg, use_cache, args.threads)
        return run_report(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except st.FingerprintMismatch as exc:
        print(f"fingerprint mismatch: {exc}", file=sys.stderr)
        return EXIT_FINGERPRINT
    except FileNotFoundError as exc:
        print(f"missing file: {exc.filename}", file=sys.stderr)
        return EXIT_CONFIG
    except (StageError, sv.SolverError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
