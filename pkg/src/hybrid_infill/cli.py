"""Command line entry point: ``hybrid-infill <command> [options]``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure,
4 population extinct.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import fea_quad as fq
from .config import ConfigError, RunConfig, config_from_dict, load_config

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_EXTINCT = 0, 2, 3, 4

log = logging.getLogger("hybrid_infill")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--case", help="benchmark case: smoke, l-bracket or tension-beam")
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="run seed (overrides the config)")
    common.add_argument("--jobs", type=int, help="worker processes for batch runs and evaluations")
    common.add_argument("--resume", action="store_true", help="continue the run stored in --out")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")

    p = argparse.ArgumentParser(prog="hybrid-infill", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("lowfi", parents=[common], help="one low-fidelity optimization")
    s.add_argument("--vb", type=float, help="base volume fraction target (default: lower end of the range)")
    s.add_argument("--baseline", action="store_true", help="single-material mode (xi frozen at 0)")

    s = sub.add_parser("batch", parents=[common], help="low-fidelity batch forming the initial population")
    s.add_argument("--baseline", action="store_true", help="single-material mode (xi frozen at 0)")

    s = sub.add_parser("evolve", parents=[common], help="full evolutionary loop plus reports")
    s.add_argument("--max-generations", type=int, help="generation cap (default from config)")
    s.add_argument("--baseline", action="store_true", help="single-material mode (xi frozen at 0, lattice only)")

    s = sub.add_parser("dehomog", parents=[common], help="realize one candidate as DXF and SVG")
    s.add_argument("population", help="population or candidate .npz file")
    s.add_argument("--id", help="candidate id (default: first member)")
    s.add_argument("--baseline", action="store_true", help="lattice-only realization")

    s = sub.add_parser("evaluate", parents=[common], help="high-fidelity evaluation of one DXF geometry")
    s.add_argument("geometry", help="DXF file written by dehomog")
    s.add_argument("--sizing", help="mesh sizing level (default from the case)")

    s = sub.add_parser("report", parents=[common], help="emit reports for a run directory")
    s.add_argument("run_dir", nargs="?", help="run directory (default: --out)")

    sub.add_parser("config", parents=[common], help="print the full default configuration of a case")
    return p


def _config(args) -> RunConfig:
    if args.config:
        cfg = load_config(args.config)
        if args.case and args.case != cfg.case_key:
            raise ConfigError(f"--case {args.case} conflicts with config case {cfg.case_key}")
    elif args.case:
        cfg = config_from_dict({"case": args.case})
    else:
        raise ConfigError("pass --case or --config")
    kw = {}
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.jobs is not None:
        kw["jobs"] = args.jobs
    if args.out is not None:
        kw["out"] = Path(args.out)
    if args.resume:
        kw["resume"] = True
    if getattr(args, "baseline", False):
        kw["hybrid"] = False
    if getattr(args, "max_generations", None) is not None:
        kw["max_generations"] = args.max_generations
    if getattr(args, "sizing", None) is not None:
        kw["sizing"] = args.sizing
    return cfg.with_(**kw) if kw else cfg


def cmd_lowfi(cfg: RunConfig, args) -> int:
    from .fields import ScalarField
    from .gridio import write_csv
    from .lowfi.optimize import write_history
    from .pipeline import _save_candidate, lowfi_run

    case = cfg.case
    vb = case.V_b_range[0] if args.vb is None else args.vb
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    c, state = lowfi_run(case, vb, f"lowfi-vb{vb:g}", cfg.hybrid)
    write_history(out / "history.csv", state.history)
    _save_candidate(out / f"{c.id}.npz", c)
    for name in ("rho", "xi", "theta"):
        write_csv(ScalarField(case.grid, getattr(c, name)), out / f"{c.id}_{name}.csv")
    print(f"{c.id}: {state.iter} iterations, written to {out}")
    return EXIT_OK


def cmd_batch(cfg: RunConfig, args) -> int:
    from .evo import Population, save_population
    from .pipeline import run_lowfi_batch

    cfg.out.mkdir(parents=True, exist_ok=True)
    members = run_lowfi_batch(cfg.case, cfg.case.m, cfg.out, hybrid=cfg.hybrid, jobs=cfg.jobs)
    save_population(cfg.out / "initial.npz", Population(0, tuple(members), cfg.case.m))
    print(f"{len(members)} of {cfg.case.m} candidates written to {cfg.out / 'initial.npz'}")
    return EXIT_OK


def cmd_evolve(cfg: RunConfig, args) -> int:
    from .pipeline import emit_reports, run_evolutionary_loop

    pop = run_evolutionary_loop(cfg)
    files = emit_reports(cfg.out)
    print(f"generation {pop.generation}: {len(pop.rank1())} Rank-1 candidates; {len(files)} report files in "
          f"{cfg.out / 'reports'}")
    return EXIT_OK


def cmd_dehomog(cfg: RunConfig, args) -> int:
    from .dehomog.export import export_geometry
    from .evo import load_population
    from .pipeline import realize

    try:
        pop = load_population(args.population)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot read population {args.population}: {exc}") from exc
    members = {c.id: c for c in pop}
    if args.id is not None and args.id not in members:
        raise ConfigError(f"no candidate {args.id!r} in {args.population}")
    c = members[args.id] if args.id is not None else pop.members[0]
    contours = realize(c, cfg.case, cfg.hybrid)
    if contours is None or not len(contours):
        print(f"{c.id}: empty geometry", file=sys.stderr)
        return EXIT_NUMERIC
    cfg.out.mkdir(parents=True, exist_ok=True)
    for fmt in ("dxf", "svg"):
        export_geometry(contours, fmt, cfg.out / f"{c.id}.{fmt}")
    print(f"{c.id}: {len(contours)} loops written to {cfg.out}")
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig, args) -> int:
    from .dehomog.export import read_dxf
    from .hifi.evaluate import RESULT_FIELDS, append_results, evaluate_candidate

    try:
        contours = read_dxf(args.geometry)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read geometry {args.geometry}: {exc}") from exc
    res = evaluate_candidate(contours, cfg.case, cfg.sizing, candidate_id=Path(args.geometry).stem)
    cfg.out.mkdir(parents=True, exist_ok=True)
    append_results(cfg.out / "results.csv", [res])
    w = csv.DictWriter(sys.stdout, fieldnames=RESULT_FIELDS, lineterminator="\n")
    w.writeheader()
    w.writerow(res.row())
    return EXIT_NUMERIC if res.anomaly else EXIT_OK


def cmd_report(cfg: RunConfig, args) -> int:
    from .pipeline import emit_reports

    if args.run_dir:
        run = Path(args.run_dir)
    elif args.out:
        run = Path(args.out)
    else:
        raise ConfigError("pass a run directory or --out")
    try:
        files = emit_reports(run)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from exc
    print(f"{len(files)} report files in {run / 'reports'}")
    return EXIT_OK


def cmd_config(cfg: RunConfig, args) -> int:
    import yaml
    sys.stdout.write(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
    return EXIT_OK


COMMANDS = dict(lowfi=cmd_lowfi, batch=cmd_batch, evolve=cmd_evolve, dehomog=cmd_dehomog,
                evaluate=cmd_evaluate, report=cmd_report, config=cmd_config)


def main(argv=None) -> int:
    from .evo import PopulationExtinct
    from .hifi.mesh import MeshError
    from .lowfi.optimize import LowFiError
    from .pipeline import BatchError
    from .vae import VaeTrainingError

    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        needs_config = not (args.command == "report" and not (args.case or args.config))
        cfg = _config(args) if needs_config else None
        return COMMANDS[args.command](cfg, args)
    except PopulationExtinct as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EXTINCT
    except (ConfigError, FileExistsError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (LowFiError, BatchError, VaeTrainingError, fq.SingularSystemError, MeshError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
