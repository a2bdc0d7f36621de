"""Artifact writers and run manifests."""
import hashlib
import json
import logging
import time
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import pandas as pd

from ..config import get_settings
from ..models.schemas import RunManifest

logger = logging.getLogger("hjb_maxplus.manifest")

FLOAT_FORMAT = "%.17g"

PathLike = Union[str, Path]


def output_path(path: PathLike) -> Path:
    """Relative paths land in HJB_OUTPUT_DIR."""
    path = Path(path)
    if not path.is_absolute():
        path = Path(get_settings().HJB_OUTPUT_DIR) / path
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def write_table(rows: Union[pd.DataFrame, Iterable[Dict[str, Any]]], path: PathLike) -> Path:
    """CSV with 17 significant digits."""
    frame = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(list(rows))
    path = output_path(path)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return path


def file_digest(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def config_hash(config: Any) -> str:
    """sha256 of the canonical JSON of a config (pydantic model or plain data)."""
    if hasattr(config, "model_dump"):
        config = config.model_dump(mode="json")
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode()).hexdigest()


def write_gnuplot(csv_path: PathLike, x_column: str, y_columns: Sequence[str]) -> Path:
    """Plot script next to a CSV; columns are addressed by header name."""
    csv_path = Path(csv_path)
    script = csv_path.with_suffix(".gp")
    plots = ", ".join(
        f"'{csv_path.name}' using '{x_column}':'{column}' with linespoints title '{column}'"
        for column in y_columns
    )
    script.write_text(
        "set datafile separator ','\n"
        "set key autotitle columnhead\n"
        f"set xlabel '{x_column}'\n"
        f"plot {plots}\n"
    )
    return script


class RunRecorder:
    """Collects what is needed to reproduce a command run and writes its manifest."""

    def __init__(self, command_line: List[str], config: Any = None, seeds=None):
        from .. import __version__

        self.command_line = list(command_line)
        self.config_hash = config_hash(config if config is not None else self.command_line)
        self.seeds: Dict[str, Optional[int]] = dict(seeds or {})
        self.version = __version__
        self._start = time.perf_counter()

    def finish(self, outputs: Sequence[PathLike], manifest_for: Optional[PathLike] = None):
        """Digest the outputs and write `<first output>.manifest.json`."""
        paths = [Path(p) for p in outputs]
        manifest = RunManifest(
            command_line=self.command_line,
            config_hash=self.config_hash,
            seeds=self.seeds,
            library_version=self.version,
            wall_time=time.perf_counter() - self._start,
            outputs={str(p): file_digest(p) for p in paths},
        )
        target = Path(manifest_for) if manifest_for is not None else (paths[0] if paths else None)
        if target is not None:
            manifest_path = target.with_name(target.name + ".manifest.json")
            manifest_path.write_text(manifest.model_dump_json(indent=2))
            logger.info(f"Manifest written to {manifest_path}")
        return manifest
