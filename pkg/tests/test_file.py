"""Test artifact file handling"""

from pathlib import Path

import pytest

from graspgen.config import Config, config_from_dict
from graspgen.file import (
    design_path,
    load_design,
    load_report,
    load_run_meta,
    read_search_trace,
    report_path,
    save_design,
    save_report,
    write_run_meta,
    write_search_trace,
)
from graspgen.graph import DesignGraph, ParseError
from graspgen.search import TraceRow


def test_artifact_paths(tmp_path: Path) -> None:
    """Designs and reports of a rank sit side by side"""
    assert design_path(tmp_path, 2) == tmp_path / "designs" / "design_2.json"
    assert report_path(tmp_path, 2) == tmp_path / "designs" / "design_2.report.json"


def test_design_file(tmp_path: Path, two_finger_graph: DesignGraph) -> None:
    """Saved designs load back equal, as newline-terminated text"""
    path = design_path(tmp_path, 1)
    save_design(two_finger_graph, path)
    assert load_design(path) == two_finger_graph
    assert path.read_text(encoding="utf-8").endswith("}\n")


def test_design_file_errors(tmp_path: Path) -> None:
    """Missing files and malformed documents are reported"""
    with pytest.raises(FileNotFoundError):
        load_design(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text('{"version": 2}', encoding="utf-8")
    with pytest.raises(ParseError):
        load_design(bad)
    binary = tmp_path / "binary.json"
    binary.write_bytes(b"\xff\xfe\x00")
    with pytest.raises(ParseError):
        load_design(binary)


def test_report_file(tmp_path: Path) -> None:
    """Reports are written with sorted keys"""
    path = tmp_path / "report.json"
    save_report({"rank": 1, "final": 2.5}, path)
    assert load_report(path) == {"final": 2.5, "rank": 1}
    text = path.read_text(encoding="utf-8")
    assert text.index('"final"') < text.index('"rank"')
    assert load_report(tmp_path / "absent.json") is None


def test_search_trace_file(tmp_path: Path) -> None:
    """Trace rows read back, including missing test runs"""
    rows = [
        TraceRow(1, 0.25, 0.25, 0.25, 0.25, None),
        TraceRow(2, 0.5, 0.5, 0.5, 0.375, 0.5),
    ]
    path = tmp_path / "trace.csv"
    write_search_trace(rows, path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0].split(",") == [
        "iteration",
        "episode_reward",
        "best_reward",
        "v_root",
        "mean_q",
        "test_run_reward",
    ]
    assert lines[1] == "1,0.25,0.25,0.25,0.25,"
    assert read_search_trace(path) == rows


def test_run_meta(tmp_path: Path) -> None:
    """Run metadata holds enough to rebuild the configuration"""
    config = config_from_dict({"search": {"seed": 7}})
    path = tmp_path / "run_meta.json"
    write_run_meta(path, config.model_dump(mode="json"), 7, 12)
    meta = load_run_meta(path)
    assert meta is not None
    assert (meta["seed"], meta["iterations"]) == (7, 12)
    assert {"python", "numpy", "pydantic"} <= meta["versions"].keys()
    assert config_from_dict(meta["config"]) == config
    assert Config.model_validate(meta["config"]).search.seed == 7

    other = tmp_path / "other.json"
    save_report({"final": 1.0}, other)
    assert load_run_meta(other) is None
