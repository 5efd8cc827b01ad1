"""Handle artifact files: designs, reports, traces and run metadata"""

import csv
from importlib.metadata import PackageNotFoundError, version
import logging
from pathlib import Path
import platform
from typing import Any, Final, Optional, TypedDict

from graspgen.graph import DesignGraph, ParseError, deserialize, serialize
from graspgen.search import TRACE_COLUMNS, TraceRow
from graspgen.utilities import fmt_float, load_dict_from_json, save_dict_to_json

logger = logging.getLogger(__package__)

DESIGNS_DIR: Final = "designs"
TRACE_FILENAME: Final = "trace.csv"
RUN_META_FILENAME: Final = "run_meta.json"
DESIGN_SUFFIX: Final = ".json"
REPORT_SUFFIX: Final = ".report.json"
VERSIONED_PACKAGES: Final = ("graspgen", "numpy", "networkx", "pydantic", "regex")


class RunMeta(TypedDict):
    """Dictionary saved as run metadata: enough to repeat the run."""

    config: dict[str, Any]
    seed: int
    iterations: int
    versions: dict[str, str]


def design_name(rank: int) -> str:
    """Return the base name of the design file for a rank."""
    return f"design_{rank}"


def design_path(out_dir: str | Path, rank: int) -> Path:
    """Return the path of the design file for a rank."""
    return Path(out_dir) / DESIGNS_DIR / (design_name(rank) + DESIGN_SUFFIX)


def report_path(out_dir: str | Path, rank: int) -> Path:
    """Return the path of the evaluation report for a rank."""
    return Path(out_dir) / DESIGNS_DIR / (design_name(rank) + REPORT_SUFFIX)


def save_design(graph: DesignGraph, path: str | Path) -> None:
    """Save a design graph document.

    Args:
        graph: Design to save.
        path: File to write; parent directories are created.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fp:
        fp.write(serialize(graph) + "\n")
    logger.info(f"Design saved to {path}")


def load_design(path: str | Path) -> DesignGraph:
    """Load a design graph document.

    Raises:
        FileNotFoundError: if the file does not exist.
        ParseError: if the document is malformed.
    """
    try:
        with open(path, "r", encoding="utf-8") as fp:
            text = fp.read()
    except FileNotFoundError:
        logger.error(f"Unable to open {path}")
        raise
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path} is not UTF-8 text") from exc
    return deserialize(text)


def save_report(report: dict[str, Any], path: str | Path) -> None:
    """Save an evaluation report."""
    save_dict_to_json(path, report)
    logger.info(f"Report saved to {path}")


def load_report(path: str | Path) -> Optional[dict[str, Any]]:
    """Load an evaluation report, or None if missing or unreadable."""
    return load_dict_from_json(path)


def write_search_trace(rows: list[TraceRow], path: str | Path) -> None:
    """Write the per-iteration search trace as CSV.

    The test-run column is left empty when the greedy descent did not reach
    a terminal design.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for row in rows:
            test_run = row.test_run_reward
            writer.writerow(
                [
                    row.iteration,
                    fmt_float(row.episode_reward),
                    fmt_float(row.best_reward),
                    fmt_float(row.v_root),
                    fmt_float(row.mean_q),
                    "" if test_run is None else fmt_float(test_run),
                ]
            )
    logger.info(f"Search trace saved to {path}")


def read_search_trace(path: str | Path) -> list[TraceRow]:
    """Read a search trace written by `write_search_trace`."""
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fp:
        for record in csv.DictReader(fp):
            test_run = record["test_run_reward"]
            rows.append(
                TraceRow(
                    int(record["iteration"]),
                    float(record["episode_reward"]),
                    float(record["best_reward"]),
                    float(record["v_root"]),
                    float(record["mean_q"]),
                    float(test_run) if test_run else None,
                )
            )
    return rows


def package_versions() -> dict[str, str]:
    """Versions of Python and the packages results depend on."""
    versions = {"python": platform.python_version()}
    for package in VERSIONED_PACKAGES:
        try:
            versions[package] = version(package)
        except PackageNotFoundError:
            versions[package] = "unknown"
    return versions


def write_run_meta(
    path: str | Path, config: dict[str, Any], seed: int, iterations: int
) -> None:
    """Save the configuration snapshot, seed and versions of a run."""
    meta: RunMeta = {
        "config": config,
        "seed": seed,
        "iterations": iterations,
        "versions": package_versions(),
    }
    save_dict_to_json(path, meta)


def load_run_meta(path: str | Path) -> Optional[RunMeta]:
    """Load run metadata, or None if missing or unreadable."""
    loaded = load_dict_from_json(path)
    if loaded is None:
        return None
    if not {"config", "seed", "iterations"} <= loaded.keys():
        logger.error(f"Unable to load {path} -- not a run metadata file")
        return None
    return loaded  # type: ignore[return-value]
