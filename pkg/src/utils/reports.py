"""Run outputs: per-episode regret CSV, run manifest and counts snapshot."""

import csv
from pathlib import Path
from typing import TYPE_CHECKING, Any, Dict, List, Optional, Union

import numpy as np
import yaml

from src.core.estimation import Counts, save_counts
from src.utils.logger import get_logger

if TYPE_CHECKING:
    from src.core.conrl import EpisodeLog, RegretReport

logger = get_logger(__name__)

CSV_NAME = "regret.csv"
MANIFEST_NAME = "manifest.yaml"
COUNTS_NAME = "counts.txt"


class ReportError(Exception):
    """An output file could not be written."""

    def __init__(self, message: str, path: Union[str, Path]):
        self.path = str(path)
        super().__init__(f"{self.path}: {message}")


def csv_header(num_resources: int) -> List[str]:
    d = range(num_resources)
    return (
        ["episode", "exp_reward"]
        + [f"exp_cons_{i}" for i in d]
        + ["realized_reward"]
        + [f"realized_cons_{i}" for i in d]
        + [f"cum_cons_{i}" for i in d]
        + ["rew_reg", "cons_reg", "planner_status"]
    )


def _real(value: Any) -> str:
    return repr(float(value))


def csv_rows(logs: List["EpisodeLog"], report: "RegretReport") -> List[List[str]]:
    rows = []
    for index, log in enumerate(logs):
        rows.append(
            [str(log.episode), _real(log.exp_reward)]
            + [_real(v) for v in log.exp_consumption]
            + [_real(log.realized_reward)]
            + [_real(v) for v in log.realized_consumption]
            + [_real(v) for v in report.cum_consumption[index]]
            + [_real(report.rew_reg[index]), _real(report.cons_reg[index]), log.planner_status]
        )
    return rows


def write_csv(logs: List["EpisodeLog"], report: "RegretReport", path: Union[str, Path]) -> Path:
    """Write the per-episode table; an empty log list gives a header-only file."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(csv_header(report.budgets.size))
            writer.writerows(csv_rows(logs, report))
    except OSError as e:
        raise ReportError(f"cannot write CSV: {e.strerror or e}", path) from e
    return path


def _plain(value: Any) -> Any:
    """Convert numpy values and tuples into YAML-safe Python values."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, np.generic):
        return value.item()
    return value


def manifest_data(config: Dict[str, Any], report: "RegretReport") -> Dict[str, Any]:
    summary: Dict[str, Any] = {
        "episodes": int(report.rew_reg.size),
        "benchmark_reward": float(report.benchmark_reward),
        "benchmark_consumption": report.benchmark_consumption,
        "budgets": report.budgets,
        "final_rew_reg": float(report.rew_reg[-1]) if report.rew_reg.size else None,
        "final_cons_reg": float(report.cons_reg[-1]) if report.cons_reg.size else None,
        "budget_violated": bool(report.budget_violated),
    }
    if report.convex_rew_reg is not None and report.convex_rew_reg.size:
        summary["final_convex_rew_reg"] = float(report.convex_rew_reg[-1])
        summary["final_convex_cons_reg"] = float(report.convex_cons_reg[-1])
    summary.update(report.info)
    return _plain({"config": config, "results": summary})


def write_manifest(config: Dict[str, Any], report: "RegretReport", path: Union[str, Path]) -> Path:
    """Resolved configuration (seed included) and summary values; no timestamps."""
    path = Path(path)
    text = yaml.safe_dump(manifest_data(config, report), sort_keys=True, default_flow_style=False)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        raise ReportError(f"cannot write manifest: {e.strerror or e}", path) from e
    return path


def write_reports(
    logs: List["EpisodeLog"],
    report: "RegretReport",
    out_dir: Union[str, Path],
    config: Optional[Dict[str, Any]] = None,
    counts: Optional[Counts] = None,
) -> Dict[str, Path]:
    """
    Write ``regret.csv``, ``manifest.yaml`` and (when given) ``counts.txt`` into ``out_dir``.

    Returns:
        Mapping of output kind ("csv", "manifest", "counts") to path

    Raises:
        ReportError: if a file cannot be written
    """
    out_dir = Path(out_dir)
    paths = {
        "csv": write_csv(logs, report, out_dir / CSV_NAME),
        "manifest": write_manifest(config or {}, report, out_dir / MANIFEST_NAME),
    }
    if counts is not None:
        target = out_dir / COUNTS_NAME
        try:
            paths["counts"] = save_counts(counts, target)
        except OSError as e:
            raise ReportError(f"cannot write counts snapshot: {e.strerror or e}", target) from e
    logger.info(f"Wrote reports to {out_dir}")
    return paths
