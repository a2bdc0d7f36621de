import math

import numpy as np
import pandas as pd
from pydantic import ValidationError

from ..config import resolve_seed
from ..exceptions import ConfigurationError, UnsupportedOracleError
from ..models.schemas import GridSpec, SamplePlan
from ..services.decomp import build_decomposition
from ..services.expect import QuadratureEngine
from ..services.gridsolve import convergence_study, policy_at, solve_grid
from ..services.manifest import RunRecorder, output_path, write_gnuplot, write_table
from ..services.maxplus import MaxPlusValue, bootstrap_sup_error, solve_maxplus
from ..services.problem import load_problem
from .common import (
    add_problem_argument,
    add_scheme_arguments,
    float_list,
    point_list,
    riccati_oracle,
    scheme_config,
)


def _grid_spec(args) -> GridSpec:
    try:
        return GridSpec(
            lo=args.xmin,
            hi=args.xmax,
            points=args.nx,
            padding=args.padding,
            nodes_per_dim=args.nodes,
            allow_high_dim=args.allow_high_dim,
        )
    except ValidationError as e:
        raise ConfigurationError(f"invalid grid: {e}") from e


def _coordinate_names(d: int):
    return [f"x{i + 1}" for i in range(d)]


def grid_frame(vg, d: int) -> pd.DataFrame:
    """Rows (t, x1..xd, v) on the core nodes for every time."""
    mask = vg.core_mask()
    nodes = vg.nodes[mask]
    frames = []
    for i, t in enumerate(vg.times):
        frame = pd.DataFrame(nodes, columns=_coordinate_names(d))
        frame.insert(0, "t", t)
        frame["v"] = vg.values[i].ravel()[mask]
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)


def policy_frame(vg, prob) -> pd.DataFrame:
    mask = vg.core_mask()
    nodes = vg.nodes[mask]
    frames = []
    for i, t in enumerate(vg.times[:-1]):
        modes, controls = policy_at(vg, prob, i)
        frame = pd.DataFrame(nodes, columns=_coordinate_names(prob.dim_x))
        frame.insert(0, "t", t)
        frame["mode"] = np.asarray(modes)[mask]
        for j in range(prob.dim_u):
            frame[f"u{j + 1}"] = controls[mask, j]
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)


def run_solve_grid(args) -> int:
    prob = load_problem(args.problem)
    decomp = build_decomposition(prob)
    cfg = scheme_config(args)
    recorder = RunRecorder(args.argv, config=prob.config)
    vg = solve_grid(prob, decomp, cfg, _grid_spec(args), threads=args.threads)
    frame = grid_frame(vg, prob.dim_x)
    path = write_table(frame, args.out)
    outputs = [path]
    if args.policy_out:
        outputs.append(write_table(policy_frame(vg, prob), args.policy_out))
    if args.emit_gnuplot and prob.dim_x == 1:
        outputs.append(write_gnuplot(path, "x1", ["v"]))
    recorder.finish(outputs)
    print(f"v(0, ·) on {int(vg.core_mask().sum())} nodes written to {path}")
    return 0


def run_convergence(args) -> int:
    prob = load_problem(args.problem)
    decomp = build_decomposition(prob)
    if args.oracle != "riccati":
        raise UnsupportedOracleError(f"unknown oracle {args.oracle!r}")
    h_list = float_list(args.h_list)
    oracle = riccati_oracle(prob, min(h_list))
    spec = _grid_spec(args)
    recorder = RunRecorder(args.argv, config=prob.config)
    report = convergence_study(
        prob,
        decomp,
        h_list,
        oracle,
        spec=spec,
        variant=args.variant,
        k=args.k,
        delta_mode=args.delta_mode,
        dx_ratio=args.dx_ratio,
        engine=QuadratureEngine(spec.nodes_per_dim),
        threads=args.threads,
    )
    frame = pd.DataFrame([row.model_dump() for row in report.rows])
    frame["p_hat"] = math.nan
    frame.loc[frame.index[-1], "p_hat"] = report.p_hat
    print(frame.to_string(index=False))
    print(f"p_hat = {report.p_hat:.4f}, C = {report.constant:.4g}")
    path = write_table(frame, args.out)
    outputs = [path]
    if args.emit_gnuplot:
        outputs.append(write_gnuplot(path, "h", ["sup_error"]))
    recorder.finish(outputs)
    return 0


def run_solve_maxplus(args) -> int:
    prob = load_problem(args.problem)
    decomp = build_decomposition(prob)
    cfg = scheme_config(args)
    seed = resolve_seed(args.seed if args.seed is not None else prob.seed)
    try:
        plan = SamplePlan(
            n_in=args.n_in,
            n_x=args.n_x,
            n_w=args.n_w,
            seed=seed if seed is not None else 0,
            x0_std=args.x0_std,
            target_mode=args.target_mode,
        )
    except ValidationError as e:
        raise ConfigurationError(f"invalid sample plan: {e}") from e
    recorder = RunRecorder(args.argv, config=prob.config, seeds={"sampling": plan.seed})
    engine = QuadratureEngine(args.nodes)
    mpv = solve_maxplus(prob, decomp, cfg, plan, engine=engine, threads=args.threads)
    path = mpv.save(output_path(args.out))
    print(f"|Z_t| per time: {mpv.cardinalities()}")
    if args.oracle == "riccati":
        points = prob.audit_points()
        if args.window:
            lo, hi = float_list(args.window)
            points = points[np.all((points >= lo) & (points <= hi), axis=-1)]
        oracle = riccati_oracle(prob, cfg.h)
        error, stderr = bootstrap_sup_error(mpv, oracle, points, seed=plan.seed)
        print(f"sup error at t=0 against Riccati: {error:.6e} ± {stderr:.2e}")
    recorder.finish([path])
    return 0


def run_eval(args) -> int:
    mpv = MaxPlusValue.load(args.forms)
    d = mpv.layers[-1][0].dim
    points = point_list(args.x, d)
    values = mpv.evaluate(args.t, points)
    for x, v in zip(points, values):
        print(f"{','.join(repr(float(c)) for c in x)}\t{float(v)!r}")
    return 0


def _add_grid_arguments(parser) -> None:
    parser.add_argument("--xmin", type=float, default=-2.0)
    parser.add_argument("--xmax", type=float, default=2.0)
    parser.add_argument("--nx", type=int, default=41)
    parser.add_argument("--padding", type=float, default=None)
    parser.add_argument("--nodes", type=int, default=None, help="Gauss nodes per half axis")
    parser.add_argument("--allow-high-dim", action="store_true")
    parser.add_argument("--emit-gnuplot", action="store_true")


def register(subparsers) -> None:
    parser = subparsers.add_parser("solve-grid", help="reference solution on a grid")
    add_problem_argument(parser)
    add_scheme_arguments(parser)
    _add_grid_arguments(parser)
    parser.add_argument("--out", default="grid.csv")
    parser.add_argument("--policy-out", default=None, help="CSV of the maximizing (mode, u)")
    parser.set_defaults(handler=run_solve_grid)

    parser = subparsers.add_parser("convergence", help="grid solver error against an oracle")
    add_problem_argument(parser)
    add_scheme_arguments(parser, h_required=False)
    _add_grid_arguments(parser)
    parser.add_argument("--h-list", required=True)
    parser.add_argument("--oracle", default="riccati")
    parser.add_argument("--dx-ratio", type=float, default=0.5)
    parser.add_argument("--out", default="conv.csv")
    parser.set_defaults(handler=run_convergence)

    parser = subparsers.add_parser("solve-maxplus", help="probabilistic max-plus solver")
    add_problem_argument(parser)
    add_scheme_arguments(parser)
    parser.add_argument("--n-in", type=int, required=True)
    parser.add_argument("--n-x", type=int, required=True)
    parser.add_argument("--n-w", type=int, required=True)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--x0-std", type=float, default=1.0)
    parser.add_argument("--target-mode", choices=["quadrature", "sample"], default="quadrature")
    parser.add_argument("--nodes", type=int, default=None, help="Gauss nodes per half axis")
    parser.add_argument("--oracle", choices=["riccati"], default=None)
    parser.add_argument("--window", default=None, help="lo,hi of the error window")
    parser.add_argument("--out", default="forms.json")
    parser.set_defaults(handler=run_solve_maxplus)

    parser = subparsers.add_parser("eval", help="evaluate saved max-plus forms")
    parser.add_argument("--forms", required=True)
    parser.add_argument("--t", type=float, required=True)
    parser.add_argument("--x", required=True, help='points "x1,..,xd;x1,..,xd"')
    parser.set_defaults(handler=run_eval)
