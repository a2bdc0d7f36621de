"""Argument helpers shared by the subcommands."""
import argparse
from typing import Callable, List, Optional

import numpy as np
from pydantic import ValidationError

from ..config import resolve_seed
from ..exceptions import ConfigurationError
from ..models.schemas import SchemeConfig
from ..services.expect import ExpectationEngine, make_engine
from ..services.problem import ControlProblem
from ..services.riccati import riccati_solve


def float_list(text: str) -> List[float]:
    try:
        return [float(item) for item in text.split(",") if item.strip()]
    except ValueError:
        raise ConfigurationError(f"expected comma-separated numbers, got {text!r}") from None


def point_list(text: str, d: int) -> np.ndarray:
    """Points "x1,...,xd;x1,...,xd" as an (n, d) array."""
    points = [float_list(chunk) for chunk in text.split(";") if chunk.strip()]
    if not points or any(len(p) != d for p in points):
        raise ConfigurationError(f"expected points with {d} coordinates, got {text!r}")
    return np.array(points)


def add_problem_argument(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--problem", required=True, help="built-in name or JSON config path")


def add_scheme_arguments(parser: argparse.ArgumentParser, h_required: bool = True) -> None:
    parser.add_argument("--h", type=float, required=h_required, help="time step")
    parser.add_argument("--k", type=int, default=None, help="𝒫² index (default: min_k)")
    parser.add_argument(
        "--variant",
        choices=["new_upwind", "prior_fodjo2", "ftw_baseline"],
        default="new_upwind",
    )
    parser.add_argument(
        "--delta-mode",
        choices=["nonnegative", "lower_bounded", "general_sign"],
        default="lower_bounded",
    )


def add_engine_arguments(parser: argparse.ArgumentParser, default: str = "quad") -> None:
    parser.add_argument(
        "--engine", choices=["quad", "analytic", "mc", "rademacher"], default=default
    )
    parser.add_argument("--nodes", type=int, default=None, help="Gauss nodes per half axis")
    parser.add_argument("--mc-samples", type=int, default=100_000)


def scheme_config(args, h: Optional[float] = None) -> SchemeConfig:
    try:
        return SchemeConfig(
            variant=args.variant,
            k=args.k,
            h=args.h if h is None else h,
            delta_mode=args.delta_mode,
        )
    except ValidationError as e:
        raise ConfigurationError(f"invalid scheme settings: {e}") from e


def engine_from_args(args, seed: Optional[int] = None) -> ExpectationEngine:
    return make_engine(args.engine, args.nodes, args.mc_samples, resolve_seed(seed))


def riccati_oracle(prob: ControlProblem, h: float) -> Callable[[float, np.ndarray], np.ndarray]:
    solution = riccati_solve(prob, h)
    return solution.value
