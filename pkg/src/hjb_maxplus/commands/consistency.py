import math

import pandas as pd

from ..config import resolve_seed
from ..services.consistency import ESTIMATORS, TEST_FUNCTIONS, consistency_study, dyadic_h_list
from ..services.manifest import RunRecorder, write_gnuplot, write_table
from .common import add_engine_arguments, engine_from_args, float_list


def run_consistency(args) -> int:
    seed = resolve_seed(args.seed)
    h_list = float_list(args.h_list) if args.h_list else dyadic_h_list()
    report = consistency_study(args.estimator, args.testfn, h_list, engine_from_args(args, seed))
    frame = pd.DataFrame([row.model_dump() for row in report.rows])
    frame["p_hat"] = math.nan
    frame.loc[frame.index[-1], "p_hat"] = report.p_hat
    print(frame.to_string(index=False))
    print(f"p_hat = {report.p_hat:.4f} ({report.engine})")
    if args.out:
        recorder = RunRecorder(args.argv, seeds={"engine": seed})
        path = write_table(frame, args.out)
        outputs = [path]
        if args.emit_gnuplot:
            outputs.append(write_gnuplot(path, "h", ["error"]))
        recorder.finish(outputs)
    return 0


def register(subparsers) -> None:
    parser = subparsers.add_parser("consistency", help="error of a derivative estimator along h")
    parser.add_argument("--estimator", choices=ESTIMATORS, required=True)
    parser.add_argument("--testfn", choices=sorted(TEST_FUNCTIONS), default="sin_exp")
    parser.add_argument("--h-list", default=None, help="comma-separated time steps")
    parser.add_argument("--seed", type=int, default=0)
    add_engine_arguments(parser)
    parser.add_argument("--out", default=None)
    parser.add_argument("--emit-gnuplot", action="store_true")
    parser.set_defaults(handler=run_consistency)
