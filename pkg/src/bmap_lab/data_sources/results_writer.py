"""CSV/JSON result files, run manifests and plot-ready bundles."""

import io
import json
import logging
import math
import subprocess
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import aiofiles
import numpy as np
import pandas as pd

from .. import __version__

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

MANIFEST_NAME = "manifest.json"


def _json_default(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def _finite(value: Any) -> Any:
    """Replace non-finite floats by strings so the output stays strict JSON."""
    if isinstance(value, float) and not math.isfinite(value):
        return "inf" if value > 0 else "-inf" if value < 0 else "nan"
    if isinstance(value, dict):
        return {k: _finite(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_finite(v) for v in value]
    return value


def to_json(data: Any) -> str:
    normalized = json.loads(json.dumps(data, default=_json_default))
    return json.dumps(_finite(normalized), indent=2, sort_keys=True) + "\n"


def git_revision(cwd: Optional[Path] = None) -> str:
    """Current git commit, or ``unknown`` outside a repository."""
    try:
        completed = subprocess.run(
            ["git", "rev-parse", "HEAD"],
            cwd=cwd,
            capture_output=True,
            text=True,
            timeout=5,
            check=True,
        )
        return completed.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


class ResultsWriter:
    """Writes one experiment's artifacts into an output directory."""

    def __init__(self, out_dir: PathLike) -> None:
        self.out_dir = Path(out_dir)
        self.written: List[str] = []

    def _path(self, name: str) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        return self.out_dir / name

    async def write_text(self, name: str, text: str) -> Path:
        path = self._path(name)
        async with aiofiles.open(path, "w", encoding="utf-8", newline="") as f:
            await f.write(text)
        if name not in self.written:
            self.written.append(name)
        logger.debug(f"Wrote {path}")
        return path

    async def write_csv(self, name: str, frame: Union[pd.DataFrame, Sequence[Dict[str, Any]]]) -> Path:
        if not isinstance(frame, pd.DataFrame):
            frame = pd.DataFrame(list(frame))
        return await self.write_text(name, frame.to_csv(index=False, lineterminator="\n"))

    async def write_json(self, name: str, data: Any) -> Path:
        return await self.write_text(name, to_json(data))

    async def write_manifest(
        self,
        command: str,
        inputs: Dict[str, Any],
        model_sha256: str,
        seeds: Dict[str, Any],
        wall_time_s: float,
        extra: Optional[Dict[str, Any]] = None,
    ) -> Path:
        """Manifest with everything needed to rerun the experiment."""
        manifest = {
            "command": command,
            "inputs": inputs,
            "model_sha256": model_sha256,
            "seeds": seeds,
            "git_revision": git_revision(),
            "bmap_lab_version": __version__,
            "wall_time_s": wall_time_s,
            "finished_at": datetime.now(timezone.utc).isoformat(),
            "outputs": sorted(self.written),
        }
        if extra:
            manifest.update(extra)
        return await self.write_text(MANIFEST_NAME, to_json(manifest))


async def _read_csv(path: Path) -> pd.DataFrame:
    async with aiofiles.open(path, "r", encoding="utf-8") as f:
        return pd.read_csv(io.StringIO(await f.read()))


async def emit_plot_data(results_dir: PathLike) -> List[Path]:
    """
    Reshape experiment outputs into long-format CSVs for plotting.

    Raises:
        FileNotFoundError: If the directory holds no recognised results
    """
    results_dir = Path(results_dir)
    if not results_dir.is_dir():
        raise FileNotFoundError(f"Results directory not found: {results_dir}")
    writer = ResultsWriter(results_dir)
    produced: List[Path] = []

    martingales = results_dir / "martingales.csv"
    if martingales.exists():
        frame = await _read_csv(martingales)
        columns = [c for c in ("t", "replica", "W", "Z") if c in frame.columns]
        tidy = frame[columns].sort_values(["t", "replica"], kind="mergesort")
        produced.append(await writer.write_csv("plot_martingales.csv", tidy))

    fronts = results_dir / "fronts.csv"
    if fronts.exists():
        frame = await _read_csv(fronts)
        tidy = frame[["t", "type", "front_x", "fit_line"]]
        produced.append(await writer.write_csv("plot_fronts.csv", tidy))

    wave = results_dir / "wave_compare.csv"
    if wave.exists():
        frame = await _read_csv(wave)
        tidy = frame[["x", "type", "phi_mc", "phi_pde_shifted"]]
        produced.append(await writer.write_csv("plot_wave_profiles.csv", tidy))

    if not produced:
        raise FileNotFoundError(f"No plottable results in {results_dir}")
    logger.info(f"Emitted {len(produced)} plot bundles into {results_dir}")
    return produced
