import pandas as pd

from ..models.schemas import DecompositionRow
from ..services.decomp import build_decomposition, min_k
from ..services.manifest import RunRecorder, write_table
from ..services.problem import (
    audit_bounds,
    check_terminal_forms,
    control_grid_modulus,
    load_problem,
)
from .common import add_problem_argument


def decomposition_rows(prob, decomp, k=None):
    k_min = min_k(decomp)
    k = k_min if k is None else k
    modulus = control_grid_modulus(prob)
    return [
        DecompositionRow(
            mode=md.name,
            rank=md.rank,
            a_bar=decomp.a_bar,
            min_k=k_min,
            trace_bound_ok=md.trace <= 4 * k + 2,
            control_modulus=modulus[md.name],
        )
        for md in decomp.modes
    ]


def run_decompose(args) -> int:
    prob = load_problem(args.problem)
    decomp = build_decomposition(prob)
    rows = decomposition_rows(prob, decomp, args.k)
    frame = pd.DataFrame([row.model_dump() for row in rows])
    print(frame.to_string(index=False))
    if args.report:
        bounds = audit_bounds(prob)
        print()
        print(f"projection: {decomp.projection}")
        for key, value in bounds.measured.items():
            print(f"{key}: {value:.6g} (declared {bounds.declared.get(key)})")
        print(f"terminal forms deviation: {check_terminal_forms(prob):.3e}")
    if args.out:
        recorder = RunRecorder(args.argv, config=prob.config)
        path = write_table(frame, args.out)
        recorder.finish([path])
    return 0


def register(subparsers) -> None:
    parser = subparsers.add_parser("decompose", help="decomposition of the diffusions per mode")
    add_problem_argument(parser)
    parser.add_argument("--k", type=int, default=None, help="check tr ΣΣᵀ ≤ 4k+2 for this k")
    parser.add_argument("--report", action="store_true", help="also print bounds and audits")
    parser.add_argument("--out", default=None)
    parser.set_defaults(handler=run_decompose)
