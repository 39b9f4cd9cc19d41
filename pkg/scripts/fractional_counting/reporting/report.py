"""
Summaries of Monte-Carlo runs: per-method bias, Monte-Carlo standard error,
RMSE and coverage of the variance estimates, and comparisons across runs.
"""

import logging
from pathlib import Path
from typing import Dict, List, Sequence, Union

import numpy as np
import pandas as pd
from scipy import stats

from ..persistence import PersistenceError, read_manifest, read_table

logger = logging.getLogger(__name__)

KEYS = ["method", "locality_id", "epoch"]

REPORT_COLUMNS = [
    "method", "locality_id", "epoch", "replicates", "mean_estimate", "mean_truth", "bias",
    "mc_se", "rmse", "mean_variance", "empirical_variance", "coverage",
]

COMPARE_COLUMNS = ["method", "locality_id", "epoch", "bias", "rmse", "runs"]


class ReportError(Exception):
    """Exception raised when results cannot be summarised or compared."""

    def __init__(self, message: str, paths: Sequence[Union[str, Path]] = ()):
        super().__init__(message)
        self.paths = [str(p) for p in paths]


def _coverage(group: pd.DataFrame, z: float) -> float:
    """Share of replicates whose normal interval from the variance estimate covers the truth."""
    has_variance = group["variance"] > 0
    if not has_variance.any():
        return float("nan")
    g = group[has_variance]
    half_width = z * np.sqrt(g["variance"])
    return float(((g["estimate"] - g["truth"]).abs() <= half_width).mean())


def summarise(counts: pd.DataFrame, level: float = 0.95) -> pd.DataFrame:
    """
    Aggregate per-replicate counts into the report table.

    Args:
        counts: Counts table with replicate, epoch, method, locality_id,
            estimate, variance and truth columns
        level: Nominal coverage of the intervals

    Returns:
        One row per (method, locality, epoch) in REPORT_COLUMNS order
    """
    missing = {"replicate", "estimate", "variance", "truth", *KEYS} - set(counts.columns)
    if missing:
        raise ReportError(f"counts table lacks columns {sorted(missing)}")
    if not 0 < level < 1:
        raise ReportError(f"coverage level must be in (0, 1), got {level}")

    z = float(stats.norm.isf((1.0 - level) / 2.0))
    data = counts.dropna(subset=["truth"]).copy()
    data["error"] = data["estimate"] - data["truth"]

    rows = []
    for (method, locality, epoch), group in data.groupby(KEYS, sort=True):
        n = len(group)
        errors = group["error"].to_numpy()
        rows.append({
            "method": method,
            "locality_id": int(locality),
            "epoch": int(epoch),
            "replicates": n,
            "mean_estimate": float(group["estimate"].mean()),
            "mean_truth": float(group["truth"].mean()),
            "bias": float(errors.mean()),
            "mc_se": float(errors.std(ddof=1) / np.sqrt(n)) if n > 1 else float("nan"),
            "rmse": float(np.sqrt(np.mean(errors ** 2))),
            "mean_variance": float(group["variance"].mean()),
            "empirical_variance": float(group["estimate"].var(ddof=1)) if n > 1 else float("nan"),
            "coverage": _coverage(group, z),
        })
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def load_run(directory: Union[str, Path]) -> Dict[str, object]:
    """Manifest and counts table of one completed run."""
    directory = Path(directory)
    try:
        manifest = read_manifest(directory)
        counts, config_hash = read_table(directory / "counts.csv")
    except PersistenceError as e:
        raise ReportError(f"{directory} is not a completed run: {e}", [directory])
    if config_hash != manifest.config_hash:
        raise ReportError(f"counts.csv in {directory} belongs to another configuration", [directory])
    return {"manifest": manifest, "counts": counts, "label": directory.name}


def compare_methods(directories: Sequence[Union[str, Path]]) -> pd.DataFrame:
    """
    Per-locality bias and RMSE of every method at every epoch, one block per run.

    The ``runs`` column names the run a row comes from, so identical runs
    give identical blocks.

    Raises:
        ReportError: With fewer than two runs or runs of different scenarios
    """
    if len(directories) < 2:
        raise ReportError("compare needs at least two completed runs", directories)
    runs = [load_run(d) for d in directories]
    scenarios = sorted({run["manifest"].scenario for run in runs})
    if len(scenarios) > 1:
        raise ReportError(f"runs come from different scenarios: {scenarios}", directories)

    labels = [str(run["label"]) for run in runs]
    if len(set(labels)) < len(labels):
        labels = [str(Path(d)) for d in directories]

    frames: List[pd.DataFrame] = []
    for run, label in zip(runs, labels):
        summary = summarise(run["counts"])
        summary["runs"] = label
        frames.append(summary[COMPARE_COLUMNS])
    table = pd.concat(frames, ignore_index=True)
    logger.info(f"Compared {len(runs)} runs of scenario '{scenarios[0]}': {len(table)} rows")
    return table.sort_values(KEYS + ["runs"], kind="stable").reset_index(drop=True)
