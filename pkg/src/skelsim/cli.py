"""Command-line front end.

Subcommands: `mech` (mechanism report), `flow` (cumulant flow dump),
`simulate` (path dumps plus a summary), `verify` (test suites) and
`converge` (rescaled-skeleton scan). Data lands as CSV, reports as JSON;
every file embeds the config hash, the seed and the tool version, and
re-running any command with the same spec and seed reproduces the files
byte for byte, serial or parallel.

Exit codes: 0 success, 1 test failure, 2 usage or schema error,
3 inconclusive analysis.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import InconclusiveAnalysis, MechanismError, SchemaError, SkelsimError
from .flow import solve_joint, solve_u
from .joint import Regime, make_joint, offspring_distribution
from .mechanism import (
    BranchingMechanism,
    argmin_location,
    classify,
    is_immortal,
    is_nonexplosive,
    largest_root,
    mechanism_from_json,
)
from .sim import (
    EXPLODED,
    EXTINCT,
    SimConfig,
    make_stream,
    run_batches,
    sample_csbp_path,
    sample_two_type_path,
    two_type_batch,
)
from .verify import SUITES, run_suites


def _load_mechanism(spec: str) -> BranchingMechanism:
    text = spec.strip()
    if not text.startswith("{"):
        path = Path(text)
        if not path.exists():
            raise SchemaError(f"spec file not found: {text}")
        text = path.read_text()
    return mechanism_from_json(text)


def _out_dir(args) -> Path:
    out = args.out or os.environ.get("SKELSIM_OUT") or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _provenance(cfg: SimConfig) -> str:
    return f"config_hash={cfg.config_hash()} seed={cfg.seed} version={__version__}"


def _prov_dict(cfg: SimConfig) -> dict:
    return {"config_hash": cfg.config_hash(), "seed": cfg.seed, "version": __version__}


def _write_json(path: Path, payload: dict):
    path.write_text(json.dumps(payload, sort_keys=True, indent=2, default=float) + "\n")


def cmd_mech(args) -> int:
    m = _load_mechanism(args.spec)
    cfg = SimConfig(seed=args.seed, threads=args.threads)
    report = {
        "provenance": _prov_dict(cfg),
        "mechanism": m.to_json(),
        "largest_root": largest_root(m),
        "argmin_location": argmin_location(m),
        "immortal": is_immortal(m),
        "nonexplosive": is_nonexplosive(m),
    }
    if m.kappa == 0:
        report["criticality"] = classify(m).criticality
    else:
        report["criticality"] = None
    out = _out_dir(args)
    _write_json(out / "mech.json", report)
    if args.q_grid:
        qs = [float(v) for v in args.q_grid.split(",")]
        with open(out / "psi.csv", "w") as fh:
            fh.write(f"# {_provenance(cfg)}\n")
            fh.write("q,psi,psi_prime\n")
            for q in qs:
                fh.write(f"{q!r},{m.psi(q)!r},{m.psi_prime(q)!r}\n")
    print(f"mech report written to {out / 'mech.json'}")
    return 0


def cmd_flow(args) -> int:
    m = _load_mechanism(args.spec)
    cfg = SimConfig(seed=args.seed, threads=args.threads)
    out = _out_dir(args)
    horizon = args.horizon
    grid = np.linspace(0.0, horizon, args.grid) if args.grid else None
    if args.r is not None:
        if args.lam is None:
            raise SchemaError("a joint flow needs --lambda alongside --r")
        j = make_joint(m, args.lam)
        fl = solve_joint(j, args.q, args.r, horizon, tol=args.tol)
        name = "flow_joint.csv"
    else:
        fl = solve_u(m, args.q, horizon, tol=args.tol)
        name = "flow_u.csv"
    if fl.truncated:
        grid = None  # truncated flows dump their own accepted grid
    fl.to_csv(out / name, grid=grid, provenance=_provenance(cfg))
    print(f"flow written to {out / name} (t_end={fl.t_end!r}, boundary={fl.boundary})")
    return 0


def cmd_simulate(args) -> int:
    m = _load_mechanism(args.spec)
    cfg = SimConfig(
        h=args.h, n_paths=args.n_paths, seed=args.seed, threads=args.threads
    )
    out = _out_dir(args)
    n_dump = min(args.n_paths, args.dump_paths)
    q_probe, r_probe = args.q or 1.0, args.r or 0.5

    if args.lam is None:
        ell0 = 0
        with open(out / "paths.csv", "w") as fh:
            fh.write(f"# {_provenance(cfg)}\n")
            fh.write("path,t,x,ell,event_tag\n")
            for i in range(n_dump):
                p = sample_csbp_path(m, args.x0, args.horizon, cfg, make_stream(cfg.seed, i, sub=1))
                for (t, xx, ll, tag) in p.events:
                    fh.write(f"{i},{t!r},{xx!r},{ll},{tag}\n")

        def worker(stream, count, index):
            from .sim import csbp_final_batch

            x, status = csbp_final_batch(m, args.x0, args.horizon, cfg, stream, count)
            return np.stack([x, status.astype(float)])

        blocks = run_batches(args.n_paths, cfg, worker)
        xs = np.concatenate([b[0] for b in blocks])
        status = np.concatenate([b[1] for b in blocks]).astype(int)
        ells = np.zeros_like(xs)
    else:
        j = make_joint(m, args.lam)
        init = "poisson" if args.l0 == "poisson" else int(args.l0)
        with open(out / "paths.csv", "w") as fh:
            fh.write(f"# {_provenance(cfg)}\n")
            fh.write("path,t,x,ell,event_tag\n")
            for i in range(n_dump):
                p = sample_two_type_path(j, args.x0, init, args.horizon, cfg, make_stream(cfg.seed, i, sub=1))
                for (t, xx, ll, tag) in p.events:
                    fh.write(f"{i},{t!r},{xx!r},{ll},{tag}\n")

        def worker(stream, count, index):
            res = two_type_batch(j, args.x0, init, args.horizon, cfg, stream, count)
            return np.stack([res.x, res.ell.astype(float), res.status.astype(float)])

        blocks = run_batches(args.n_paths, cfg, worker)
        xs = np.concatenate([b[0] for b in blocks])
        ells = np.concatenate([b[1] for b in blocks])
        status = np.concatenate([b[2] for b in blocks]).astype(int)

    alive = status != EXPLODED
    with np.errstate(over="ignore"):
        laplace = np.where(alive, np.exp(-q_probe * np.minimum(xs, 1e300)) * r_probe**ells, 0.0)
    finite = xs[np.isfinite(xs)]
    summary = {
        "provenance": _prov_dict(cfg),
        "n_paths": args.n_paths,
        "horizon": args.horizon,
        "lambda": args.lam,
        "x0": args.x0,
        "l0": args.l0 if args.lam is not None else 0,
        "exploded_fraction": float((status == EXPLODED).mean()),
        "extinct_fraction": float((status == EXTINCT).mean()),
        "mean_x_finite": float(finite.mean()) if finite.size else None,
        "laplace": {
            "q": q_probe,
            "r": r_probe,
            "estimate": float(laplace.mean()),
            "stderr": float(laplace.std(ddof=1) / math.sqrt(len(laplace))) if len(laplace) > 1 else None,
        },
    }
    _write_json(out / "summary.json", summary)
    print(f"{args.n_paths} paths simulated; summary at {out / 'summary.json'}")
    return 0


def cmd_verify(args) -> int:
    m = _load_mechanism(args.spec)
    selectors = [s.strip() for s in (args.suite or "").split(",") if s.strip()]
    if not selectors:
        print("no suites selected; choose from: " + ", ".join(sorted(SUITES)) + " or 'all'", file=sys.stderr)
        return 2
    if selectors == ["all"]:
        selectors = sorted(SUITES)
    cfg = SimConfig(h=args.h, seed=args.seed, threads=args.threads)
    reports = run_suites(m, selectors, args.n_paths, args.seed, cfg)
    out = _out_dir(args)
    rows = []
    for i, rep in enumerate(reports):
        payload = rep.to_json_dict()
        payload["provenance"] = _prov_dict(cfg)
        _write_json(out / f"verify_{i:02d}_{rep.name}.json", payload)
        metric = rep.residual if rep.residual is not None else rep.z
        bound = rep.tolerance if rep.residual is not None else rep.level
        rows.append((rep.name, rep.passed, rep.statistic, rep.reference, metric, bound))
    with open(out / "suite.csv", "w") as fh:
        fh.write(f"# {_provenance(cfg)}\n")
        fh.write("name,passed,statistic,reference,metric,bound\n")
        for name, passed, stat, ref, metric, bound in rows:
            fh.write(f"{name},{passed},{stat!r},{ref!r},{metric!r},{bound!r}\n")
    n_fail = sum(1 for r in reports if not r.passed)
    for r in reports:
        marker = "PASS" if r.passed else "FAIL"
        print(f"[{marker}] {r.name}")
    print(f"{len(reports) - n_fail}/{len(reports)} checks passed; artifacts in {out}")
    return 0 if n_fail == 0 else 1


def cmd_converge(args) -> int:
    from .verify import convergence_scan

    m = _load_mechanism(args.spec)
    cfg = SimConfig(h=args.h, seed=args.seed, threads=args.threads)
    lams = [float(v) for v in args.lambdas.split(",")]
    report = convergence_scan(m, args.x0, args.q, args.t, lams, n_mc=args.n_paths, cfg=cfg)
    out = _out_dir(args)
    with open(out / "convergence.csv", "w") as fh:
        fh.write(f"# {_provenance(cfg)}\n")
        fh.write("lambda,error,scaled_error\n")
        for lam, e, se in zip(lams, report.extra["errors"], report.extra["scaled_errors"]):
            fh.write(f"{lam!r},{e!r},{se!r}\n")
    payload = report.to_json_dict()
    payload["provenance"] = _prov_dict(cfg)
    _write_json(out / "convergence.json", payload)
    print(f"convergence scan {'passed' if report.passed else 'FAILED'}; artifacts in {out}")
    return 0 if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skelsim",
        description="Skeleton decompositions of continuous-state branching processes",
    )
    parser.add_argument("--version", action="version", version=f"skelsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, sim=False):
        p.add_argument("--spec", required=True, help="mechanism JSON (inline or file path)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=None, help="output directory (default $SKELSIM_OUT or .)")
        p.add_argument("--threads", type=int, default=1)
        if sim:
            p.add_argument("--n-paths", dest="n_paths", type=int, default=10_000)
            p.add_argument("--h", type=float, default=1e-3, help="time step")

    p = sub.add_parser("mech", help="mechanism report: psi table, roots, classification")
    common(p)
    p.add_argument("--q-grid", default=None, help="comma-separated q values for a psi CSV")
    p.set_defaults(func=cmd_mech)

    p = sub.add_parser("flow", help="cumulant flow dump as CSV")
    common(p)
    p.add_argument("--q", type=float, required=True)
    p.add_argument("--r", type=float, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--T", dest="horizon", type=float, required=True)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--grid", type=int, default=0, help="uniform output grid size (0: solver grid)")
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("simulate", help="simulate paths and write dumps plus a summary")
    common(p, sim=True)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--x0", type=float, default=1.0)
    p.add_argument("--l0", default="poisson", help='initial skeleton count or "poisson"')
    p.add_argument("--T", dest="horizon", type=float, required=True)
    p.add_argument("--q", type=float, default=None)
    p.add_argument("--r", type=float, default=None)
    p.add_argument("--dump-paths", type=int, default=5, help="event-logged paths to write")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="run verification suites")
    common(p, sim=True)
    p.add_argument("--suite", default=None, help="comma-separated suite names or 'all'")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("converge", help="rescaled-skeleton convergence scan")
    common(p, sim=True)
    p.add_argument("--lambdas", default="5,10,20,40,80")
    p.add_argument("--q", type=float, default=1.0)
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--x0", type=float, default=1.0)
    p.set_defaults(func=cmd_converge)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SchemaError, MechanismError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except InconclusiveAnalysis as exc:
        print(f"inconclusive: {exc}", file=sys.stderr)
        return 3
    except SkelsimError as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
