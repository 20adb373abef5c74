import argparse
import logging
import sys
from typing import Any, Dict, List, Optional

import pandas as pd

from srk.config.constants import (MAX_LEVELS, OUTPUT_FORMATS, PROBLEM_NAMES, STAGE_SOLVERS, WEAK_FUNCTIONALS,
                                  WEAK_ORDERS)
from srk.config.settings import order_config, solver_config, study_config
from srk.core.btree import deterministic_order
from srk.core.driving import derive_seed, generate_path
from srk.core.errors import ValidationError
from srk.core.problems import get_problem
from srk.core.solver import StageSolveConfig, integrate
from srk.core.tableau import ButcherTableau, available_methods, builtin, load_tableau_file
from srk.services.storage import StorageService
from srk.services.study import StudyConfig, invariant_drift_study, mean_square_study, weak_study
from srk.utils.helpers import level_for_step, parse_levels, parse_name_list

logger = logging.getLogger(__name__)

storage = StorageService()


class CliParser(argparse.ArgumentParser):
    """Ошибки разбора превращаются в ValidationError (код выхода 1)"""

    def error(self, message: str):
        raise ValidationError(f"{self.prog}: {message}")


# Общие группы флагов

def _add_problem_flags(parser: argparse.ArgumentParser, default: str = "sinh"):
    parser.add_argument("--problem", default=default, choices=PROBLEM_NAMES, help="Test problem")
    parser.add_argument("--sigma", type=float, help="Noise intensity")
    parser.add_argument("--a", type=float, help="Drift coefficient of the Kubo oscillator")
    parser.add_argument("--T", type=float, help="Final time")


def _add_solver_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--stage-solver", default=solver_config.STAGE_SOLVER, choices=STAGE_SOLVERS,
                        help="Iteration for implicit stages")
    parser.add_argument("--tol", type=float, default=solver_config.STAGE_TOL, help="Stage residual tolerance")
    parser.add_argument("--max-iter", type=int, default=solver_config.STAGE_MAX_ITER,
                        help="Maximum stage iterations per step")


def _add_tableau_flag(parser: argparse.ArgumentParser):
    parser.add_argument("--tableau-file", action="append", default=[],
                        help="JSON/YAML tableau document (repeatable)")


def _add_output_flags(parser: argparse.ArgumentParser, default_format: Optional[str] = "csv"):
    parser.add_argument("--out", help="Output file (default: stdout)")
    parser.add_argument("--format", default=default_format, choices=OUTPUT_FORMATS, help="Output format")


def _add_study_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--method", default="gauss1,gauss2,gauss3", help="Comma-separated method names")
    parser.add_argument("--paths", type=int, default=study_config.N_PATHS, help="Number of Monte Carlo paths")
    parser.add_argument("--seed", type=int, default=study_config.MASTER_SEED, help="Master seed")
    parser.add_argument("--levels", default=None, help="Dyadic levels, e.g. '4-9' or '4,6,8'")
    parser.add_argument("--workers", type=int, default=study_config.WORKERS, help="Worker threads (0 = all cores)")
    parser.add_argument("--block-size", type=int, default=study_config.BLOCK_SIZE, help="Paths per work item")
    parser.add_argument("--error-floor", type=float, default=study_config.ERROR_FLOOR,
                        help="Errors below this value are ignored by the order fit")
    parser.add_argument("--progress", action="store_true", default=study_config.SHOW_PROGRESS,
                        help="Show a progress bar on stderr")


def _problem_params(args: argparse.Namespace) -> Dict[str, Any]:
    params = {"sigma": args.sigma, "a": args.a, "T": args.T}
    return {k: v for k, v in params.items() if v is not None}


def _custom_tableaus(args: argparse.Namespace) -> Dict[str, ButcherTableau]:
    tableaus: Dict[str, ButcherTableau] = {}
    for path in getattr(args, "tableau_file", []):
        tableau = load_tableau_file(path)
        if tableau.name in available_methods():
            raise ValidationError(f"Tableau '{tableau.name}' from {path} conflicts with a builtin method")
        if tableau.name in tableaus:
            raise ValidationError(f"Tableau '{tableau.name}' is defined twice")
        tableaus[tableau.name] = tableau
        logger.info(f"Loaded tableau '{tableau.name}' from {path}")
    return tableaus


def _resolve_methods(text: str, tableaus: Dict[str, ButcherTableau]) -> List[ButcherTableau]:
    """Проверка всех имён до начала вычислений"""
    return [tableaus.get(name) or builtin(name) for name in parse_name_list(text)]


def _stage_solver(args: argparse.Namespace) -> StageSolveConfig:
    return StageSolveConfig(method=args.stage_solver, tol=args.tol, max_iter=args.max_iter)


def _study_config(args: argparse.Namespace, levels: List[int], finest_level: int) -> StudyConfig:
    tableaus = _custom_tableaus(args)
    methods = [t.name for t in _resolve_methods(args.method, tableaus)]
    # имя задачи и параметры проверяются до запуска
    get_problem(args.problem, **_problem_params(args))
    return StudyConfig(
        problem=args.problem,
        problem_params=_problem_params(args),
        methods=methods,
        master_seed=args.seed,
        n_paths=args.paths,
        finest_level=finest_level,
        levels=levels,
        error_floor=args.error_floor,
        reference=getattr(args, "reference", "auto"),
        weak_functional=getattr(args, "functional", "identity"),
        weak_order=getattr(args, "weak_order", 2),
        workers=args.workers,
        block_size=args.block_size,
        show_progress=args.progress,
        stage_solver=_stage_solver(args),
        tableaus=tableaus,
    )


def list_methods(args: argparse.Namespace) -> int:
    tableaus = _custom_tableaus(args)
    names = available_methods() + sorted(tableaus)
    lines = []
    for name in names:
        tableau = tableaus.get(name) or builtin(name)
        kind = "explicit" if tableau.explicit else "implicit"
        lines.append(f"{name}: s={tableau.s}, {kind}")
    storage.write_text("\n".join(lines) + "\n", args.out)
    return 0


def order(args: argparse.Namespace) -> int:
    tableaus = _custom_tableaus(args)
    methods = _resolve_methods(args.method, tableaus)
    checks = [deterministic_order(tableau, max_check=args.max_check) for tableau in methods]

    if args.format is None:
        lines = []
        for check in checks:
            line = f"{check.method}: p_d={check.order}, sde order={check.sde_order}"
            if check.failing_tree is not None:
                line += f", first failing tree {check.failing_tree} (defect {check.defect:.3e})"
            else:
                line += f", all conditions hold up to order {check.max_check}"
            lines.append(line)
        storage.write_text("\n".join(lines) + "\n", args.out)
        return 0

    rows = [{
        "method": check.method,
        "s": tableau.s,
        "p_d": check.order,
        "sde_order": check.sde_order,
        "failing_tree": str(check.failing_tree) if check.failing_tree is not None else None,
        "defect": check.defect,
    } for check, tableau in zip(checks, methods)]
    frame = pd.DataFrame(rows)
    document = {"max_check": args.max_check, "tolerance": order_config.TOLERANCE, "methods": rows}
    storage.save_document(frame, document, args.format, args.out)
    return 0


def _default_finest(args: argparse.Namespace, levels: List[int]) -> int:
    """Опорный уровень самосходимости должен быть мельче всех уровней исследования"""
    problem = get_problem(args.problem, **_problem_params(args))
    reference = getattr(args, "reference", "auto")
    if reference == "finest" or (reference == "auto" and problem.exact is None):
        return min(max(levels) + 2, MAX_LEVELS)
    return max(study_config.FINEST_LEVEL, max(levels))


def converge(args: argparse.Namespace) -> int:
    levels = parse_levels(args.levels) if args.levels else list(study_config.LEVELS)
    finest = args.finest_level if args.finest_level is not None else _default_finest(args, levels)
    cfg = _study_config(args, levels, finest)
    report = mean_square_study(cfg)
    storage.save_report(report, args.format, args.out)
    print(report.summary(), file=sys.stderr)
    return 0


def converge_weak(args: argparse.Namespace) -> int:
    levels = parse_levels(args.levels) if args.levels else list(study_config.LEVELS)
    cfg = _study_config(args, levels, max(levels))
    report = weak_study(cfg)
    storage.save_report(report, args.format, args.out)
    print(report.summary(), file=sys.stderr)
    return 0


def trajectory(args: argparse.Namespace) -> int:
    tableaus = _custom_tableaus(args)
    methods = _resolve_methods(args.method, tableaus)
    if len(methods) != 1:
        raise ValidationError("trajectory takes exactly one method")
    tableau = methods[0]
    problem = get_problem(args.problem, **_problem_params(args))

    level = args.level
    if args.h is not None:
        level_h = level_for_step(problem.spec.length, args.h)
        if level is not None and level != level_h:
            raise ValidationError(f"--level {level} conflicts with --h {args.h} (level {level_h})")
        level = level_h
    finest = args.finest_level if args.finest_level is not None else study_config.FINEST_LEVEL
    if level is None:
        level = finest
    finest = max(finest, level)

    # путь с индексом 0 совпадает с первым путём исследования сходимости
    path = generate_path(problem.spec, finest, derive_seed(args.seed, 0))
    result = integrate(problem, tableau, path, level, _stage_solver(args))
    if args.save_path:
        storage.save_path(path, args.save_path)

    frame = result.to_frame()
    document = {
        "method": tableau.name,
        "problem": problem.describe(),
        "seed": args.seed,
        "level": level,
        "finest_level": finest,
        "h": path.step_size(level),
        "iterations": int(result.iterations.sum()),
        "times": result.times,
        "states": result.states,
    }
    if problem.exact is not None:
        document["exact_final"] = problem.exact(problem.spec.T, path.wiener_total())
    storage.save_document(frame, document, args.format, args.out)
    return 0


def invariants(args: argparse.Namespace) -> int:
    tableaus = _custom_tableaus(args)
    methods = [t.name for t in _resolve_methods(args.method, tableaus)]
    problem = get_problem(args.problem, **_problem_params(args))
    report = invariant_drift_study(problem, methods, args.h, args.horizon, derive_seed(args.seed, 0),
                                   _stage_solver(args), tableaus)
    storage.save_report(report, args.format, args.out)
    for item in report.series:
        drifts = ", ".join(f"{name}={value:.3e}" for name, value in item.max_drift.items())
        print(f"{item.method}: max drift {drifts}", file=sys.stderr)
    return 0


def init_commands(subparsers):
    parser = subparsers.add_parser("list-methods", help="List builtin and loaded tableaus")
    _add_tableau_flag(parser)
    parser.add_argument("--out", help="Output file (default: stdout)")
    parser.set_defaults(handler=list_methods)

    parser = subparsers.add_parser("order", help="Deterministic order p_d and predicted SDE order")
    parser.add_argument("--method", required=True, help="Comma-separated method names")
    parser.add_argument("--max-check", type=int, default=order_config.MAX_CHECK,
                        help="Largest tree order to check")
    _add_tableau_flag(parser)
    _add_output_flags(parser, default_format=None)
    parser.set_defaults(handler=order)

    parser = subparsers.add_parser("converge", help="Mean-square convergence study")
    _add_problem_flags(parser)
    _add_study_flags(parser)
    parser.add_argument("--finest-level", type=int, default=None, help="Level of the generated Wiener paths")
    parser.add_argument("--reference", default="auto", choices=("auto", "exact", "finest"),
                        help="Exact solution or same-method finest-level reference")
    _add_solver_flags(parser)
    _add_tableau_flag(parser)
    _add_output_flags(parser)
    parser.set_defaults(handler=converge)

    parser = subparsers.add_parser("converge-weak", help="Weak convergence study")
    _add_problem_flags(parser)
    _add_study_flags(parser)
    parser.add_argument("--functional", default="identity", choices=WEAK_FUNCTIONALS, help="Weak functional g")
    parser.add_argument("--weak-order", type=int, default=2, choices=WEAK_ORDERS,
                        help="Discrete increment law (1: two-point, 2: three-point)")
    _add_solver_flags(parser)
    _add_tableau_flag(parser)
    _add_output_flags(parser)
    parser.set_defaults(handler=converge_weak)

    parser = subparsers.add_parser("trajectory", help="Solution along one Wiener path")
    _add_problem_flags(parser)
    parser.add_argument("--method", required=True, help="Method name")
    parser.add_argument("--seed", type=int, default=study_config.MASTER_SEED, help="Master seed")
    parser.add_argument("--level", type=int, default=None, help="Integration level")
    parser.add_argument("--h", type=float, default=None, help="Step size (dyadic fraction of T - t0)")
    parser.add_argument("--finest-level", type=int, default=None, help="Level of the generated Wiener path")
    parser.add_argument("--save-path", default=None, help="Also store the Wiener path as .npz")
    _add_solver_flags(parser)
    _add_tableau_flag(parser)
    _add_output_flags(parser)
    parser.set_defaults(handler=trajectory)

    parser = subparsers.add_parser("invariants", help="Drift of first integrals over a long horizon")
    _add_problem_flags(parser, default="kubo")
    parser.add_argument("--method", default="gauss2,radau_iia2,erk5_fehlberg", help="Comma-separated method names")
    parser.add_argument("--h", type=float, default=0.5, help="Step size")
    parser.add_argument("--horizon", type=float, default=1000.0, help="Length of the run")
    parser.add_argument("--seed", type=int, default=study_config.MASTER_SEED, help="Master seed")
    _add_solver_flags(parser)
    _add_tableau_flag(parser)
    _add_output_flags(parser)
    parser.set_defaults(handler=invariants)
