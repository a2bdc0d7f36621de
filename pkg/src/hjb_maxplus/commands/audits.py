from pathlib import Path

from ..config import resolve_seed
from ..exceptions import InvariantViolation
from ..services.audits import check_monotone, check_subhomogeneous
from ..services.decomp import build_decomposition
from ..services.manifest import RunRecorder, output_path
from ..services.problem import load_problem
from ..services.schemes import guaranteed_monotone
from .common import (
    add_engine_arguments,
    add_problem_argument,
    add_scheme_arguments,
    engine_from_args,
    scheme_config,
)


def _write_report(args, report, prob, seed) -> None:
    if not args.out:
        return
    recorder = RunRecorder(args.argv, config=prob.config, seeds={"audit": seed})
    path = output_path(args.out)
    path.write_text(report.model_dump_json(indent=2))
    recorder.finish([path])


def _seed(args, prob):
    return resolve_seed(args.seed if args.seed is not None else prob.seed)


def run_check_monotone(args) -> int:
    prob = load_problem(args.problem)
    decomp = build_decomposition(prob)
    cfg = scheme_config(args)
    seed = _seed(args, prob)
    report = check_monotone(cfg, decomp, args.trials, seed, engine_from_args(args, seed))
    print(f"{report.violations} violations in {report.trials} trials")
    print(f"worst margin: {report.worst_margin:.6e}")
    print(f"negative node weights: {report.negative_weight_nodes} (min {report.min_weight:.6e})")
    for example in report.examples:
        print(f"  trial {example.trial}: x={example.x}, margin {example.margin:.3e}")
    _write_report(args, report, prob, seed)
    if report.violations and report.guaranteed:
        raise InvariantViolation(
            f"{report.violations} monotonicity violations although a_bar ≤ 4k+2 and h ≤ h0"
        )
    return 0


def run_check_subhomogeneous(args) -> int:
    prob = load_problem(args.problem)
    decomp = build_decomposition(prob)
    cfg = scheme_config(args)
    seed = _seed(args, prob)
    report = check_subhomogeneous(cfg, decomp, args.trials, seed, engine_from_args(args, seed))
    print(f"α = {report.alpha:.6g}: {report.violations} violations in {report.trials} trials")
    print(f"worst excess: {report.worst_excess:.6e}")
    if report.pass_through_exact is not None:
        print(f"constants pass through exactly: {report.pass_through_exact}")
    _write_report(args, report, prob, seed)
    if report.violations and guaranteed_monotone(cfg, decomp):
        raise InvariantViolation(f"{report.violations} subhomogeneity violations")
    return 0


def register(subparsers) -> None:
    for name, handler, text in (
        ("check-monotone", run_check_monotone, "randomized monotonicity audit"),
        ("check-subhomogeneous", run_check_subhomogeneous, "additive subhomogeneity audit"),
    ):
        parser = subparsers.add_parser(name, help=text)
        add_problem_argument(parser)
        add_scheme_arguments(parser)
        add_engine_arguments(parser)
        parser.add_argument("--trials", type=int, default=10_000)
        parser.add_argument("--seed", type=int, default=None)
        parser.add_argument("--out", default=None, type=Path, help="JSON report")
        parser.set_defaults(handler=handler)
