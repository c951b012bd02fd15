"""Command-line front end: ``chemostat <command> --model FILE ...``.

Exit status: 0 on success, 1 when ``verify`` finds a hard failure, 2 for bad
arguments or model files, 3 for numeric or domain failures.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
import time
from pathlib import Path

from . import __version__, analysis
from .equilibria import (
    break_even,
    cep_equilibrium,
    coexistence_equilibrium,
    washout_equilibrium,
)
from .errors import ChemostatError, ConfigurationError
from .integrator import IntegratorSettings, fmt, integrate, write_trajectory_csv
from .model import State, load_model
from .stability import classify

EXIT_VERIFY = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


# -- argument helpers --------------------------------------------------------


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _range(text: str) -> tuple[float, float]:
    parts = text.split(":")
    try:
        lo, hi = (float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected A:B, got {text!r}") from None
    return lo, hi


def _grid_spec(text: str) -> tuple[float, float, int]:
    parts = text.split(":")
    try:
        lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
        if len(parts) != 3:
            raise ValueError
    except (ValueError, IndexError):
        raise argparse.ArgumentTypeError(f"expected A:B:N, got {text!r}") from None
    return lo, hi, n


def _resolution(text: str) -> tuple[int, int]:
    parts = text.lower().split("x")
    try:
        vals = [int(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N or NxM, got {text!r}") from None
    if len(vals) == 1:
        vals *= 2
    if len(vals) != 2 or min(vals) < 1:
        raise argparse.ArgumentTypeError(f"expected N or NxM with positive sizes, got {text!r}")
    return vals[0], vals[1]


def _model(args):
    model = load_model(args.model)
    changes = {}
    if getattr(args, "epsilon", None) is not None:
        changes["epsilon"] = args.epsilon
    if getattr(args, "u", None) is not None and not isinstance(args.u, tuple):
        changes["u"] = args.u
    return model.with_params(**changes) if changes else model


def _settings(args) -> IntegratorSettings:
    return IntegratorSettings(rtol=args.rtol, atol=args.atol, t_final=args.tfinal)


def _jobs(args) -> int:
    if args.jobs is not None:
        if args.jobs < 1:
            raise ConfigurationError("--jobs must be >= 1")
        return args.jobs
    return analysis.default_jobs()


def _initial(args, model) -> State | None:
    if args.x0 is None and args.s0 is None:
        return None
    if args.x0 is None or args.s0 is None:
        raise ConfigurationError("--x0 and --s0 must be given together")
    if len(args.x0) != model.n:
        raise ConfigurationError(f"--x0 needs {model.n} values, got {len(args.x0)}")
    return State(args.x0, args.s0).validate(model)


def _json_number(v):
    return None if v is None or not math.isfinite(v) else float(v)


# -- output plumbing ---------------------------------------------------------


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _write_manifest(args, model, outputs, settings=None, seed=0) -> Path:
    out_dir = Path(getattr(args, "out_dir", None) or Path(outputs[0]).parent)
    snapshot = {k: v for k, v in vars(args).items() if k not in ("func", "started")}
    if settings is not None:
        snapshot["integrator"] = settings.to_dict()
    manifest = {
        "command": args.command,
        "version": __version__,
        "model": str(args.model),
        "fingerprint": model.fingerprint(),
        "seed": seed,
        "settings": snapshot,
        "outputs": [str(p) for p in outputs],
        "duration_seconds": time.perf_counter() - args.started,
    }
    path = out_dir / f"{args.command}.manifest.json"
    _write_atomic(path, json.dumps(manifest, indent=2, default=str) + "\n")
    return path


def _out_dir(args) -> Path:
    path = Path(args.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _maybe_gnuplot(args, outputs: dict) -> list:
    if not args.gnuplot:
        return []
    path = _out_dir(args) / f"{args.command}.gp"
    names = {k: Path(v).name for k, v in outputs.items()}
    _write_atomic(path, analysis.gnuplot_script(names))
    return [path]


# -- commands ----------------------------------------------------------------


def cmd_simulate(args) -> int:
    model = _model(args)
    initial = _initial(args, model)
    if initial is None:
        raise ConfigurationError("simulate needs --x0 and --s0")
    settings = IntegratorSettings(rtol=args.rtol, atol=args.atol, t_final=args.tfinal, sample_count=args.samples)
    traj = integrate(model, initial, settings)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        write_trajectory_csv(traj, out)
        args.out_dir = str(out.parent)
        _write_manifest(args, model, [out], settings)
    else:
        sys.stdout.write(traj.to_csv())
    entry = "none" if traj.delta_entry_time is None else fmt(traj.delta_entry_time)
    print(f"final state {traj.final.as_vector().tolist()}; Delta entry time {entry}; "
          f"distance to washout {traj.final_distance_to['washout']:.6g}", file=sys.stderr)
    return 0


def _equilibrium_for(model, kind: str):
    if kind == "washout":
        return model, washout_equilibrium(model)
    if kind == "coexistence":
        return model, coexistence_equilibrium(model)
    if kind.startswith("cep:"):
        try:
            i = int(kind[4:])
        except ValueError:
            raise ConfigurationError(f"bad equilibrium kind {kind!r}") from None
        if not 1 <= i <= model.n:
            raise ConfigurationError(f"species index must be in 1..{model.n}, got {i}")
        m0 = model.with_params(epsilon=0.0)
        return m0, cep_equilibrium(m0, i)
    raise ConfigurationError(f"kind must be washout, cep:i or coexistence, got {kind!r}")


def cmd_equilibrium(args) -> int:
    model, eq = _equilibrium_for(_model(args), args.kind)
    classify(model, eq)
    doc = eq.to_json()
    if eq.notes:
        doc["notes"] = list(eq.notes)
    print(json.dumps(doc, indent=2))
    return 0


def cmd_cep(args) -> int:
    model = _model(args)
    table = break_even(model)
    print(json.dumps({
        "u": model.u,
        "break_even": [_json_number(e) for e in table.entries],
        "phi": _json_number(table.phi),
        "winner": table.winner,
    }, indent=2))
    return 0


def _csv_text(writer, *data) -> str:
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "out.csv"
        writer(*data, path)
        return path.read_text()


def cmd_ucrit(args) -> int:
    model = _model(args)
    lo, hi, n = args.eps_grid
    if lo < 0 or hi < lo:
        raise ConfigurationError("--eps-grid needs 0 <= A <= B")
    curve = analysis.ucrit_curve(model, analysis.grid(lo, hi, n))
    if args.out:
        out = Path(args.out)
        analysis.write_ucrit_csv(curve, out)
        args.out_dir = str(out.parent)
        _write_manifest(args, model, [out])
    else:
        sys.stdout.write(_csv_text(analysis.write_ucrit_csv, curve))
    return 0


def cmd_diagram(args) -> int:
    model = _model(args)
    settings = _settings(args)
    res = analysis.operating_diagram(
        model, args.eps, args.u_range, args.res,
        fixed_initial=_initial(args, model), settings=settings, jobs=_jobs(args),
    )
    out = _out_dir(args)
    paths = {"operating_diagram": out / "operating_diagram.csv", "ucrit_curve": out / "ucrit_curve.csv"}
    analysis.write_sweep_csv(res, paths["operating_diagram"])
    analysis.write_ucrit_csv(res.ucrit, paths["ucrit_curve"])
    extra = _maybe_gnuplot(args, paths)
    _write_manifest(args, model, [*paths.values(), *extra], settings)
    for w in res.warnings:
        print(f"warning: {w}", file=sys.stderr)
    counts = {}
    for row in res.rows:
        counts[row[3]] = counts.get(row[3], 0) + 1
    print(json.dumps({"cells": len(res.rows), "status_counts": counts, "warnings": len(res.warnings)}))
    return 0


def cmd_stability_map(args) -> int:
    model = _model(args)
    res = analysis.stability_map(model, args.eps, args.u_range, args.res, jobs=_jobs(args))
    out = _out_dir(args)
    paths = {"stability_map": out / "stability_map.csv"}
    analysis.write_sweep_csv(res, paths["stability_map"])
    extra = _maybe_gnuplot(args, paths)
    _write_manifest(args, model, [*paths.values(), *extra])
    computed = [r for r in res.rows if not math.isnan(r[2])]
    positive = [r for r in computed if r[2] >= 0]
    for r in positive:
        print(f"counterexample: eps={fmt(r[0])} u={fmt(r[1])} lambda_J={fmt(r[2])} ({r[3]})", file=sys.stderr)
    counts = {}
    for row in res.rows:
        counts[row[3]] = counts.get(row[3], 0) + 1
    print(json.dumps({
        "cells": len(res.rows),
        "status_counts": counts,
        "max_lambda_J": max((r[2] for r in computed), default=None),
        "nonnegative_cells": len(positive),
    }))
    return 0


def cmd_lambda_scan(args) -> int:
    model = _model(args)
    scan = analysis.lambda_scan(model, args.u, args.eps_list, args.s_res)
    out = _out_dir(args)
    paths = {"lambda_scan": out / "lambda_scan.csv"}
    analysis.write_lambda_scan_csv(scan, paths["lambda_scan"])
    extra = _maybe_gnuplot(args, paths)
    _write_manifest(args, model, [*paths.values(), *extra])
    mono = scan.strictly_increasing()
    print(json.dumps({"u": args.u, "strictly_increasing": {fmt(e): bool(ok) for e, ok in zip(scan.eps, mono)}}))
    return 0


def cmd_basin(args) -> int:
    model = _model(args)
    settings = _settings(args)
    region = analysis.BasinRegion.parse(args.region)
    target_model, target = _equilibrium_for(model, args.target)
    if target_model != model:
        raise ConfigurationError("basin targets must be equilibria of the simulated model (use --epsilon 0 for cep)")
    study = analysis.basin_study(model, region, args.count, target, seed=args.seed, settings=settings)
    out = _out_dir(args)
    path = out / "basin.csv"
    header = ["sample", *(f"x{i + 1}" for i in range(model.n)), "s", "distance"]
    lines = [",".join(header)]
    for k, (y, d) in enumerate(zip(study.initials, study.final_distances)):
        lines.append(",".join([str(k), *(fmt(v) for v in y), fmt(d)]))
    _write_atomic(path, "\n".join(lines) + "\n")
    _write_manifest(args, model, [path], settings, seed=args.seed)
    print(json.dumps({"region": study.region, "count": study.count, "seed": study.seed,
                      "target": target.label, "max_distance": study.max_distance}))
    return 0


def cmd_gap(args) -> int:
    model = _model(args)
    settings = _settings(args)
    gaps = analysis.gap_study(model, args.eps_list, count=args.count, seed=args.seed,
                              alpha=args.alpha, species=args.species, settings=settings)
    out = _out_dir(args)
    path = out / "gap.csv"
    lines = ["epsilon,gap", *(f"{fmt(e)},{fmt(g)}" for e, g in zip(args.eps_list, gaps))]
    _write_atomic(path, "\n".join(lines) + "\n")
    _write_manifest(args, model, [path], settings, seed=args.seed)
    print(json.dumps({"epsilon": args.eps_list, "gap": gaps.tolist(), "seed": args.seed}))
    return 0


def cmd_verify(args) -> int:
    from .properties import run_properties

    model = _model(args)
    out = run_properties(model, seed=args.seed, progress=lambda o: print(o.line, flush=True))
    counts = {s: sum(o.status == s for o in out) for s in ("pass", "fail", "warn", "skip")}
    print(f"{counts['pass']} passed, {counts['fail']} failed, {counts['warn']} warnings, {counts['skip']} skipped")
    return EXIT_VERIFY if counts["fail"] else 0


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", required=True, help="model JSON file, or a bundled name such as table1.json")
    common.add_argument("--epsilon", type=float, help="override the model's epsilon")

    integ = argparse.ArgumentParser(add_help=False)
    integ.add_argument("--tfinal", type=float, default=200.0)
    integ.add_argument("--rtol", type=float, default=1e-8)
    integ.add_argument("--atol", type=float, default=1e-10)

    files = argparse.ArgumentParser(add_help=False)
    files.add_argument("--out-dir", default=".", help="directory for CSV outputs and the run manifest")

    sweep = argparse.ArgumentParser(add_help=False)
    sweep.add_argument("--jobs", type=int, default=None,
                       help="worker processes (default: $CHEMOSTAT_JOBS or 1); output does not depend on it")
    sweep.add_argument("--gnuplot", action="store_true", help="also write a gnuplot script for the CSVs")

    initial = argparse.ArgumentParser(add_help=False)
    initial.add_argument("--x0", type=_floats, help="initial species concentrations, comma separated")
    initial.add_argument("--s0", type=float, help="initial substrate concentration")

    parser = argparse.ArgumentParser(prog="chemostat", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, parents, help_text):
        p = sub.add_parser(name, parents=parents, help=help_text)
        p.set_defaults(func=func)
        return p

    p = add("simulate", cmd_simulate, [common, integ, initial], "integrate one trajectory to CSV")
    p.add_argument("--u", type=float, help="override the dilution rate")
    p.add_argument("--samples", type=int, default=400)
    p.add_argument("--out", help="CSV path (default: stdout)")

    p = add("equilibrium", cmd_equilibrium, [common], "compute an equilibrium as JSON")
    p.add_argument("--u", type=float, help="override the dilution rate")
    p.add_argument("--kind", default="coexistence", help="washout, cep:i or coexistence")

    p = add("cep", cmd_cep, [common], "break-even concentrations and the competitive-exclusion winner")
    p.add_argument("--u", type=float, help="override the dilution rate")

    p = add("ucrit", cmd_ucrit, [common], "critical dilution rate on an eps grid")
    p.add_argument("--eps-grid", type=_grid_spec, required=True, metavar="A:B:N")
    p.add_argument("--out", help="CSV path (default: stdout)")

    p = add("diagram", cmd_diagram, [common, integ, initial, files, sweep], "operating diagram over (eps, u)")
    p.add_argument("--eps", type=_range, default=(0.0, 10.0), metavar="A:B")
    p.add_argument("--u", dest="u_range", type=_range, default=(0.0, 0.8), metavar="A:B")
    p.add_argument("--res", type=_resolution, default=(100, 100), metavar="N|NxM")

    p = add("stability-map", cmd_stability_map, [common, files, sweep], "Jacobian spectral abscissa over (eps, u)")
    p.add_argument("--eps", type=_range, default=(0.0, 5.0), metavar="A:B")
    p.add_argument("--u", dest="u_range", type=_range, default=(0.0, 0.7), metavar="A:B")
    p.add_argument("--res", type=_resolution, default=(50, 50), metavar="N|NxM")

    p = add("lambda-scan", cmd_lambda_scan, [common, files, sweep], "lambda(B(s, u, eps)) over s")
    p.add_argument("--u", type=float, required=True)
    p.add_argument("--eps-list", type=_floats, required=True)
    p.add_argument("--s-res", type=int, default=100)

    p = add("basin", cmd_basin, [common, integ, files], "random-initial convergence study")
    p.add_argument("--u", type=float, help="override the dilution rate")
    p.add_argument("--region", required=True, help="full, delta:i:alpha or delta-minus:i:alpha")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--target", default="coexistence", help="washout, cep:i or coexistence")

    p = add("gap", cmd_gap, [common, integ, files], "Malkin-Gorshin gap g(eps) against the eps = 0 flow")
    p.add_argument("--u", type=float, help="override the dilution rate")
    p.add_argument("--eps-list", type=_floats, required=True)
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--species", type=int, help="species i of Delta_{i,alpha} (default: the competitive-exclusion winner)")

    p = add("verify", cmd_verify, [common], "run the invariant suite; nonzero exit on any hard failure")
    p.add_argument("--u", type=float, help="override the dilution rate")
    p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.started = time.perf_counter()
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"chemostat: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ChemostatError as exc:
        print(f"chemostat: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
