"""
Command-line entry point.

    fisherstefan simulate run.cfg
    fisherstefan sweep sweep.cfg --jobs 4
    fisherstefan phaseplane --c -0.1 -1 -2 -5
    fisherstefan check --json report.json

Outputs go under ``$FISHER_STEFAN_OUT`` (default ``./runs``) unless the
config sets ``output_dir`` or ``--out`` is given.  Exit codes: 0 for a run
that ended cleanly, 2 when the solver failed (Newton or instability),
1 for bad input or an unwritable output directory.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__, phaseplane
from .config import ConfigError, RunSpec, execute, from_mapping, read_config, sweep_from_mapping, to_jsonable
from .output import ensure_writable, write_run

logger = logging.getLogger("fisherstefan")

OUT_ENV = "FISHER_STEFAN_OUT"
EXIT_OK, EXIT_INPUT, EXIT_SOLVER = 0, 1, 2
SOLVER_FAILURES = ("NewtonFailed", "Instability")
AGGREGATE_COLUMNS = ("verdict", "termination", "speed", "t_c", "s_c", "s_e", "t_e")


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def _out_root() -> Path:
    return Path(os.environ.get(OUT_ENV, "runs"))


def _resolve_out(spec: RunSpec, config_path: str, override) -> Path:
    if override:
        return Path(override)
    if spec.output_dir:
        p = Path(spec.output_dir)
        return p if p.is_absolute() else _out_root() / p
    return _out_root() / Path(config_path).stem


def _prepare(out_dir: Path) -> bool:
    try:
        return ensure_writable(out_dir)
    except OSError as exc:
        raise ConfigError(f"output directory {str(out_dir)!r} is not writable: {exc.strerror or exc}")


def _run_and_write(spec: RunSpec, out_dir: Path, created: bool):
    res = execute(spec)
    write_run(res, out_dir, created)
    return res


def cmd_simulate(args) -> int:
    try:
        spec = from_mapping(read_config(args.config))
        out_dir = _resolve_out(spec, args.config, args.out)
        created = _prepare(out_dir)
    except (ConfigError, ValueError) as exc:
        _err(str(exc))
        return EXIT_INPUT
    try:
        res = _run_and_write(spec, out_dir, created)
    except OSError as exc:
        _err(f"writing outputs to {str(out_dir)!r} failed: {exc}")
        return EXIT_INPUT
    cl = res.classification
    ev = res.trace.termination
    print(f"{ev.kind} at t={ev.t:.8g}: {cl.verdict} "
          + " ".join(f"{k}={v:.8g}" for k, v in cl.estimates.items()))
    print(f"outputs in {out_dir}")
    return EXIT_SOLVER if ev.kind in SOLVER_FAILURES else EXIT_OK


def _sweep_one(job):
    spec, out_dir = job
    res = _run_and_write(spec, Path(out_dir), False)
    est = res.classification.estimates
    row = {"verdict": res.classification.verdict, "termination": res.trace.termination.kind}
    for key in AGGREGATE_COLUMNS[2:]:
        row[key] = est.get(key)
    return row


def _sub_name(param: str, value: float) -> str:
    return f"{param.replace('.', '_')}_{value:.12g}"


def cmd_sweep(args) -> int:
    try:
        spec, param, values = sweep_from_mapping(read_config(args.config))
        root = _resolve_out(spec, args.config, args.out)
        created = _prepare(root)
        jobs = [(spec.with_value(param, v), str(root / _sub_name(param, v))) for v in values]
    except (ConfigError, ValueError) as exc:
        _err(str(exc))
        return EXIT_INPUT
    if args.jobs < 1:
        _err("--jobs must be >= 1")
        return EXIT_INPUT

    try:
        if args.jobs == 1 or len(jobs) == 1:
            rows = [_sweep_one(j) for j in jobs]
        else:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                rows = list(pool.map(_sweep_one, jobs))
    except OSError as exc:
        _err(f"writing sweep outputs under {str(root)!r} failed: {exc}")
        return EXIT_INPUT

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow((param,) + AGGREGATE_COLUMNS)
    for v, row in zip(values, rows):
        cells = [row[k] for k in AGGREGATE_COLUMNS]
        w.writerow([format(v, ".17g")] + ["" if c is None else
                                         (format(c, ".17g") if isinstance(c, float) else c)
                                         for c in cells])
    try:
        (root / "aggregate.csv").write_text(buf.getvalue())
    except OSError as exc:
        _err(f"cannot write aggregate: {exc}")
        return EXIT_INPUT
    sys.stdout.write(buf.getvalue())
    failed = any(r["termination"] in SOLVER_FAILURES for r in rows)
    return EXIT_SOLVER if failed else EXIT_OK


def _parse_c(tokens) -> list[float]:
    out = []
    for tok in tokens or []:
        for part in str(tok).replace(",", " ").split():
            out.append(float(part))
    return out


def cmd_phaseplane(args) -> int:
    try:
        grid = _parse_c(args.c)
    except ValueError as exc:
        _err(f"--c: {exc}")
        return EXIT_INPUT
    if not grid:
        _err("--c: empty wave-speed grid")
        return EXIT_INPUT
    if any(not c < 0.0 for c in grid):
        _err("--c: every wave speed must be negative")
        return EXIT_INPUT
    if not 0.0 < args.dz <= 1e-3:
        _err(f"--dz must lie in (0, 1e-3], got {args.dz!r}")
        return EXIT_INPUT

    out = Path(args.out) if args.out else _out_root() / "phaseplane.csv"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("c", "v_star", "kappa", "kappa_asymptotic"))
    trajectories = {}
    for c in grid:
        dz = min(args.dz, 1e-2 / phaseplane.unstable_eigenvalue(c))
        traj = phaseplane.integrate_from_saddle(c, dz)
        v = phaseplane.find_v_star(traj)
        w.writerow([format(x, ".17g") for x in (c, v, -c / v, phaseplane.asymptotic_kappa(c))])
        if args.trajectories:
            trajectories[c] = traj
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(buf.getvalue())
        for c, traj in trajectories.items():
            tb = io.StringIO()
            tb.write("z,U,V\n")
            for z, u, v in zip(traj.z, traj.U, traj.V):
                tb.write(f"{z:.17g},{u:.17g},{v:.17g}\n")
            (out.parent / f"trajectory_c{c:.12g}.csv").write_text(tb.getvalue())
    except OSError as exc:
        _err(f"cannot write {str(out)!r}: {exc}")
        return EXIT_INPUT
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


def cmd_check(args) -> int:
    from .checks import CHECKS, run_checks

    ids = None
    if args.only:
        try:
            ids = sorted({int(t) for t in args.only.split(",")})
        except ValueError:
            _err("--only expects a comma list of criterion numbers")
            return EXIT_INPUT
        known = {c[0] for c in CHECKS}
        if not set(ids) <= known:
            _err(f"--only: unknown criteria {sorted(set(ids) - known)}")
            return EXIT_INPUT
    results = run_checks(ids, fast=args.fast, mutate=args.mutate, echo=print)
    n_ok = sum(r.passed for r in results)
    print(f"{n_ok}/{len(results)} criteria passed")
    if args.json:
        report = {"version": __version__, "fast": args.fast, "mutate": args.mutate,
                  "passed": n_ok == len(results),
                  "criteria": [r.to_dict() for r in results]}
        try:
            Path(args.json).write_text(json.dumps(to_jsonable(report), indent=2) + "\n")
        except OSError as exc:
            _err(f"cannot write report {args.json!r}: {exc}")
            return EXIT_INPUT
    return EXIT_OK if n_ok == len(results) else EXIT_INPUT


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fisherstefan",
                                 description="Fisher-Stefan moving-boundary solver and analysis")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log solver events")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one configuration")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (overrides config and env)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="run a configuration over a parameter list")
    p.add_argument("config")
    p.add_argument("--out", help="output root for the sweep")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("phaseplane", help="V* and kappa for a grid of wave speeds")
    p.add_argument("--c", nargs="*", default=[], help="wave speeds, space or comma separated")
    p.add_argument("--dz", type=float, default=phaseplane.DEFAULT_DZ)
    p.add_argument("--out", help="CSV path (default $%s/phaseplane.csv)" % OUT_ENV)
    p.add_argument("--trajectories", action="store_true", help="also dump z,U,V per speed")
    p.set_defaults(func=cmd_phaseplane)

    p = sub.add_parser("check", help="run the acceptance suite")
    p.add_argument("--json", help="write a machine-readable report here")
    p.add_argument("--fast", action="store_true", help="coarse mesh for the extinction runs")
    p.add_argument("--mutate", action="store_true",
                   help="inject a stencil fault; the conservation check should fail")
    p.add_argument("--only", help="comma list of criterion numbers")
    p.set_defaults(func=cmd_check)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
