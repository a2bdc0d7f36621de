import pandas as pd

from ..services.manifest import write_table
from ..services.problem import list_problems


def run_list_problems(args) -> int:
    frame = pd.DataFrame(list_problems())
    print(frame.to_string(index=False))
    if args.out:
        write_table(frame, args.out)
    return 0


def register(subparsers) -> None:
    parser = subparsers.add_parser("list-problems", help="list the built-in problems")
    parser.add_argument("--out", default=None, help="optional CSV copy of the table")
    parser.set_defaults(handler=run_list_problems)
