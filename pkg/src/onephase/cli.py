"""Command-line entry point: ``onephase <command> [options]``.

Exit codes: 0 pass, 1 verification failure, 2 input error, 3 I/O error,
4 configuration invariant violated.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from . import corona, jones, solver, strata, weiss
from .config import RunConfig, load_config
from .errors import AuditFailure, ConfigError, OnePhaseError
from .field import QField, ScalarField, free_boundary_points, load_field, save_field
from .models import GENERATORS, generate

EXIT_OK, EXIT_VERIFY, EXIT_INPUT, EXIT_IO, EXIT_CONFIG = 0, 1, 2, 3, 4
THREADS_ENV = "ONEPHASE_THREADS"
RESIDUAL_TOL = 1e-6

log = logging.getLogger("onephase")


class IOFailure(Exception):
    pass


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _write(path: Path, text: str) -> Path:
    try:
        path.write_text(text)
    except OSError as exc:
        raise IOFailure(f"cannot write {path}: {exc}") from exc
    return path


def _outdir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise IOFailure(f"output directory {out} is not writable: {exc}") from exc
    return out


def _threads(arg) -> int:
    if arg is not None:
        return max(1, int(arg))
    env = os.environ.get(THREADS_ENV, "")
    return max(1, int(env)) if env.strip().isdigit() else 1


# ------------------------------------------------------------------ solve ---

def _boundary(cfg: RunConfig):
    spec = cfg.grid.spec()
    p = cfg.problem
    if p.boundary not in GENERATORS:
        raise ConfigError(f"unknown boundary generator {p.boundary!r}")
    params = dict(p.params)
    if p.boundary.startswith("random") and "seed" not in params:
        params["seed"] = cfg.seed
    data = generate(p.boundary, spec, **params)
    Q = QField.constant(spec, p.q)
    return spec, data, Q


def run_solve(cfg: RunConfig):
    spec, data, Q = _boundary(cfg)
    prob = solver.Problem(spec, Q, ScalarField(spec, data.values), cfg.problem.max_sweeps,
                          cfg.problem.energy_tol)
    u, rep = solver.solve_cascade(prob, cfg.problem.levels)
    return u, Q, rep


def _solve_checks(rep_dict: dict) -> dict:
    return {"energy_monotone": bool(rep_dict["energy_monotone"]),
            "converged": bool(rep_dict["converged"]),
            "harmonic_residual": rep_dict["harmonic_residual"] <= RESIDUAL_TOL}


def _write_solve(out: Path, cfg: RunConfig, u, rep) -> dict:
    try:
        save_field(u, out / "field.bin")
    except OSError as exc:
        raise IOFailure(str(exc)) from exc
    d = rep.to_dict()
    body = {"config_hash": cfg.digest(), "solve": d, "checks": _solve_checks(d)}
    _write(out / "solve_report.json", _dump(body))
    with (out / "energy_history.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sweep", "energy"])
        for i, e in enumerate(rep.energy_history):
            w.writerow([i, repr(e)])
    return body


def cmd_solve(args) -> int:
    cfg = load_config(args.config)
    out = _outdir(args.out or cfg.output)
    if args.verify_only:
        u = load_field(out / "field.bin")
        stored = json.loads((out / "solve_report.json").read_text())
        res = solver.harmonic_residual(u)
        ok = all(stored["checks"].values()) and res <= RESIDUAL_TOL and \
            stored["config_hash"] == cfg.digest()
        print(_dump({"harmonic_residual": res, "stored_checks": stored["checks"], "passed": ok}), end="")
        return EXIT_OK if ok else EXIT_VERIFY
    u, _, rep = run_solve(cfg)
    body = _write_solve(out, cfg, u, rep)
    print(_dump(body["checks"]), end="")
    return EXIT_OK if all(body["checks"].values()) else EXIT_VERIFY


# --------------------------------------------------------------- pipeline ---

def _probe_points(u, cfg: RunConfig) -> np.ndarray:
    fb = free_boundary_points(u)
    center = u.spec.node_coords(np.asarray(u.spec.cells) / 2)
    fb = fb[np.linalg.norm(fb - center, axis=1) <= cfg.weiss.inner + 1e-12]
    m = cfg.weiss.max_points
    if len(fb) > m:
        fb = fb[np.unique(np.linspace(0, len(fb) - 1, m).round().astype(int))]
    return fb


def _weiss_stage(u, Q, pts, cfg: RunConfig):
    h = u.spec.h
    radii = weiss.dyadic_radii(cfg.weiss.r_min_cells * h, cfg.weiss.r_max)
    if len(radii) < 3:
        raise ConfigError("weiss radii ladder needs at least 3 dyadic radii")
    rows, labels, worst = [], Counter(), 0.0
    for y in pts:
        prof = weiss.weiss_profile(u, Q, y, radii)
        pc = weiss.classify_point(u, Q, y, radii, cfg.weiss.eps0)
        labels[pc.label.value] += 1
        scaled = min((d * s / h for d, s in zip(prof.defects, radii)), default=0.0)
        worst = min(worst, scaled)
        rows.append([*map(repr, y.tolist()), pc.label.value, repr(pc.W0_estimate),
                     len(prof.violations), repr(min(prof.defects, default=0.0))])
    summary = {"radii": radii, "points": len(pts),
               "labels": {k.value: labels.get(k.value, 0) for k in weiss.Label},
               "worst_scaled_defect": worst, "mono_c": weiss.MONO_C,
               "violations": sum(r[-2] for r in rows)}
    return summary, rows


def run_pipeline(cfg: RunConfig, out: Path, threads: int = 1) -> dict:
    u, Q, rep = run_solve(cfg)
    solve_body = _write_solve(out, cfg, u, rep)
    pts = _probe_points(u, cfg)
    wsum, wrows = _weiss_stage(u, Q, pts, cfg)
    with (out / "weiss.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i}" for i in range(u.spec.dim)] +
                   ["label", "W0", "violations", "min_defect"])
        w.writerows(wrows)

    k = cfg.strata.k
    records = strata.stratum_scan(u, pts, k, cfg.strata.eps, cfg.strata.r,
                                  cfg.strata.scale_factor, cfg.strata.plane_samples)
    strata.write_scan_csv(records, out / "strata.csv")
    members = np.array([r.point for r in records if r.member]).reshape(-1, u.spec.dim)
    singular = {tuple(map(float, pts[i])) for i, r in enumerate(wrows) if r[u.spec.dim] == "Singular"}

    tcfg = cfg.cover.tree_config(max(k, 1))
    center = np.asarray(cfg.cover.center or u.spec.node_coords(np.asarray(u.spec.cells) / 2), float)
    oracle = corona.FieldDensity(u, Q, members, cfg.cover.policy, threads)
    cover = corona.key_packing_cover(oracle, (center, cfg.cover.radius), tcfg)
    _write(out / "cover.json", _dump(cover.to_dict()))
    refined = None
    if cfg.cover.refine:
        refined = corona.refine_cover(oracle, (center, cfg.cover.radius), tcfg)
        _write(out / "refined_cover.json", _dump(refined.to_dict()))
    covered_singular = sum(1 for p in members if tuple(map(float, p)) in singular)

    checks = dict(solve_body["checks"])
    checks.update({"weiss_monotone": wsum["violations"] == 0,
                   "cover_covering": cover.report.covering,
                   "cover_packing": cover.report.packing,
                   "cover_energy_drop": cover.report.energy_drop})
    if refined is not None:
        checks["refined_all_R"] = refined.summary()["all_radii_R"]
    report = {"config_hash": cfg.digest(), "config": cfg.to_dict(), "checks": checks,
              "passed": all(checks.values()),
              "solve": solve_body["solve"], "weiss": wsum,
              "strata": {"k": k, "points": len(records), "members": int(len(members)),
                         "singular_members_covered": covered_singular},
              "cover": cover.report.to_dict(),
              "refined": refined.summary() if refined is not None else None}
    _write(out / "report.json", _dump(report))
    return report


def cmd_pipeline(args) -> int:
    cfg = load_config(args.config)
    out = _outdir(args.out or cfg.output)
    if args.verify_only:
        return _verify_pipeline(cfg, out, _threads(args.threads))
    report = run_pipeline(cfg, out, _threads(args.threads))
    print(_dump({"checks": report["checks"], "passed": report["passed"],
                 "labels": report["weiss"]["labels"]}), end="")
    return EXIT_OK if report["passed"] else EXIT_VERIFY


def _verify_pipeline(cfg: RunConfig, out: Path, threads: int) -> int:
    """Re-check a stored cover against the stored field without re-solving."""
    u = load_field(out / "field.bin")
    Q = QField.constant(u.spec, cfg.problem.q)
    stored = json.loads((out / "cover.json").read_text())
    balls = [corona.Ball(np.asarray(b["center"]), b["radius"], corona.Kind(b["kind"]))
             for b in stored["balls"]]
    rep = stored["report"]
    tcfg = corona.TreeConfig(**rep["config"])
    pts = [r for r in csv.DictReader((out / "strata.csv").open()) if r["member"] == "1"]
    members = np.array([[float(r[f"x{i}"]) for i in range(u.spec.dim)] for r in pts])
    members = members.reshape(-1, u.spec.dim)
    oracle = corona.FieldDensity(u, Q, members, cfg.cover.policy, threads)
    R_abs = rep["R"]
    res = corona.verify_cover(balls, oracle, (rep["domain"]["center"], rep["domain"]["radius"]),
                              corona.TreeConfig(**{**tcfg.to_dict(), "R": R_abs}), R_abs)
    ok = res["covering"] and res["packing"] and res["energy_drop"]
    print(_dump({"verification": res, "passed": ok}), end="")
    return EXIT_OK if ok else EXIT_VERIFY


# ------------------------------------------------------- standalone tools ---

def _point(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError as exc:
        raise ValueError(f"bad point {text!r}; expected comma-separated numbers") from exc


def cmd_beta(args) -> int:
    mu = jones.DiscreteMeasure.read_csv(args.measure)
    x = _point(args.x)
    res = jones.beta_number(mu, x, args.r, args.k)
    print(_dump(res.to_dict()), end="")
    return EXIT_OK


def cmd_reifenberg(args) -> int:
    balls = jones.read_balls_csv(args.balls)
    rep = jones.discrete_reifenberg_check(balls, args.k, args.delta, args.levels)
    print(_dump(rep.to_dict()), end="")
    return EXIT_OK if rep.satisfied else EXIT_VERIFY


def _field_and_q(args):
    u = load_field(args.field)
    return u, QField.constant(u.spec, args.q)


def cmd_weiss(args) -> int:
    u, Q = _field_and_q(args)
    y = _point(args.x)
    radii = [float(r) for r in args.radii.split(",")]
    prof = weiss.weiss_profile(u, Q, y, radii)
    body = {"profile": prof.to_dict()}
    if len(radii) >= 3:
        body["classification"] = weiss.classify_point(u, Q, y, radii, args.eps0).to_dict()
    print(_dump(body), end="")
    return EXIT_OK if prof.monotone else EXIT_VERIFY


def cmd_strata(args) -> int:
    u, _ = _field_and_q(args)
    rec = strata.stratum_record(u, _point(args.x), args.k, args.eps, args.r)
    print(_dump({"point": list(rec.point), "k": rec.k, "eps": rec.eps, "r": rec.r,
                 "member": rec.member, "best_scale": rec.best_scale,
                 "distance": rec.distance}), end="")
    return EXIT_OK


def cmd_cover(args) -> int:
    u, Q = _field_and_q(args)
    pts = np.loadtxt(args.points, delimiter=",", skiprows=1, ndmin=2) if args.points else \
        free_boundary_points(u)
    center = _point(args.center)
    tcfg = corona.TreeConfig.defaults(R=args.R, k=args.k, density_tol=args.density_tol)
    oracle = corona.FieldDensity(u, Q, pts, args.policy, _threads(args.threads))
    cover = corona.key_packing_cover(oracle, (center, args.radius), tcfg)
    body = cover.to_dict()
    if args.out:
        _write(_outdir(args.out) / "cover.json", _dump(body))
    print(_dump(body["report"]["checks"]), end="")
    return EXIT_OK if cover.report.passed else EXIT_VERIFY


# -------------------------------------------------------------------- main ---

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="onephase", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def run_opts(p):
        p.add_argument("--config", required=True)
        p.add_argument("--out")
        p.add_argument("--verify-only", action="store_true")
        p.add_argument("--threads", type=int)

    p = sub.add_parser("solve", help="minimize the discrete functional")
    run_opts(p)
    p.set_defaults(func=cmd_solve)
    p = sub.add_parser("pipeline", help="solve, densities, strata, cover, refinement")
    run_opts(p)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("beta", help="beta number of a CSV measure")
    p.add_argument("measure")
    p.add_argument("--x", required=True)
    p.add_argument("--r", type=float, required=True)
    p.add_argument("--k", type=int, required=True)
    p.set_defaults(func=cmd_beta)

    p = sub.add_parser("reifenberg", help="Dini check of a CSV ball family")
    p.add_argument("balls")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--levels", type=int, default=6)
    p.set_defaults(func=cmd_reifenberg)

    for name, fn in (("weiss", cmd_weiss), ("strata", cmd_strata), ("cover", cmd_cover)):
        p = sub.add_parser(name)
        p.add_argument("field")
        p.add_argument("--q", type=float, default=1.0)
        p.set_defaults(func=fn)
        if name == "weiss":
            p.add_argument("--x", required=True)
            p.add_argument("--radii", required=True)
            p.add_argument("--eps0", type=float, default=0.05)
        elif name == "strata":
            p.add_argument("--x", required=True)
            p.add_argument("--k", type=int, required=True)
            p.add_argument("--eps", type=float, default=0.05)
            p.add_argument("--r", type=float, required=True)
        else:
            p.add_argument("--points")
            p.add_argument("--center", required=True)
            p.add_argument("--radius", type=float, required=True)
            p.add_argument("--R", type=float, default=0.05)
            p.add_argument("--k", type=int, required=True)
            p.add_argument("--density-tol", type=float, default=0.0)
            p.add_argument("--policy", default="snap")
            p.add_argument("--threads", type=int)
            p.add_argument("--out")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except json.JSONDecodeError as exc:
        print(f"error: malformed JSON: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IOFailure as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except AuditFailure as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (OnePhaseError, ValueError, KeyError, TypeError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
