"""Command line: cghdg {study,solve,mesh-dump,gamma-sweep} <config>"""
import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

from app.solver.coupled_driver import coupled_system
from app.solver.errors import ConfigError, SolverError
from app.solver.linsys import dump
from app.solver.mesh import write_mesh
from app.solver.problems import get_problem
from app.solver.study import OUTPUT_DIR, read_config, run_case, run_gamma_sweep, run_study

logger = logging.getLogger("app.cli")

EXIT_OK = 0
EXIT_SOLVER_ERROR = 1
EXIT_CONFIG_ERROR = 2


def _out_dir(args, config) -> Path:
    return Path(args.out_dir or config.out_dir or OUTPUT_DIR)


def cmd_study(args) -> int:
    config = read_config(args.config)
    report = run_study(config, _out_dir(args, config))
    for rate in report.rates:
        flag = "  LOCKING" if rate.locking else ""
        final = "-" if rate.final_rate is None else f"{rate.final_rate:.3f}"
        print(f"k={rate.k} {rate.quantity:<6} final rate {final}  fitted {rate.fitted_slope:.3f}{flag}")
    for name, path in report.paths.items():
        print(f"{name}: {path}")
    return EXIT_OK


def cmd_solve(args) -> int:
    config = read_config(args.config)
    k = args.k if args.k is not None else config.degrees[0]
    level = args.level if args.level is not None else config.levels[-1]
    solve_config = config.solve_config(k, level)
    summary = run_case(solve_config)
    print(summary.model_dump_json(indent=2))
    if args.dump_matrix:
        system = coupled_system(solve_config)
        with open(args.dump_matrix, "w") as stream:
            dump(system.matrix, stream)
        logger.info(f"Wrote {system.matrix.nnz} entries of the {system.size}x{system.size} system to {args.dump_matrix}")
    return EXIT_OK


def cmd_mesh_dump(args) -> int:
    config = read_config(args.config)
    level = args.level if args.level is not None else config.levels[-1]
    mesh = get_problem(config.problem, theta=config.theta, nu_hdg=config.nu_hdg).build_mesh(level)
    if args.output:
        with open(args.output, "w") as stream:
            write_mesh(mesh, stream)
        logger.info(f"Wrote {mesh.n_elements} elements to {args.output}")
    else:
        write_mesh(mesh, sys.stdout)
    return EXIT_OK


def cmd_gamma_sweep(args) -> int:
    config = read_config(args.config)
    report = run_gamma_sweep(config, _out_dir(args, config))
    print(report.verdicts.to_string(index=False))
    for name, path in report.paths.items():
        print(f"{name}: {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cghdg", description="Coupled CG-HDG solver and convergence studies")
    sub = parser.add_subparsers(dest="command", required=True)

    study = sub.add_parser("study", help="run a convergence study and write CSV reports")
    study.add_argument("config")
    study.add_argument("--out-dir", help=f"report directory (default: config out_dir or {OUTPUT_DIR})")
    study.set_defaults(func=cmd_study)

    solve = sub.add_parser("solve", help="run a single solve and print its summary")
    solve.add_argument("config")
    solve.add_argument("--k", type=int, help="study degree k (default: first of the config)")
    solve.add_argument("--level", type=int, help="refinement level (default: last of the config)")
    solve.add_argument("--dump-matrix", metavar="PATH", help="also write the global matrix as 'i j value' lines")
    solve.set_defaults(func=cmd_solve)

    mesh_dump = sub.add_parser("mesh-dump", help="write the problem mesh in the plain-text format")
    mesh_dump.add_argument("config")
    mesh_dump.add_argument("--level", type=int)
    mesh_dump.add_argument("-o", "--output")
    mesh_dump.set_defaults(func=cmd_mesh_dump)

    sweep = sub.add_parser("gamma-sweep", help="error against the Nitsche parameter")
    sweep.add_argument("config")
    sweep.add_argument("--out-dir")
    sweep.set_defaults(func=cmd_gamma_sweep)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(
        level=os.getenv("LOG_LEVEL", "INFO").upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        logger.error(f"Invalid config: {e}")
        return EXIT_CONFIG_ERROR
    except SolverError as e:
        logger.error(f"Solve failed: {e}")
        return EXIT_SOLVER_ERROR


if __name__ == "__main__":
    sys.exit(main())
