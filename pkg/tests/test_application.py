"""Test the command line application"""

import json
from pathlib import Path
from typing import Any

import pytest

from graspgen.application import (
    EXIT_CONFIG,
    EXIT_NOT_TERMINAL,
    EXIT_OK,
    EXIT_RUNTIME,
    main,
    parse_tensions,
)
import graspgen.application
from graspgen.file import load_report, report_path, save_design
from graspgen.grammar import init_graph
from graspgen.graph import DesignGraph
from graspgen.search import SearchResult, run_search
from graspgen.utilities import ConfigError, save_dict_to_json

QUICK_CONFIG = {
    "grammar": {"max_fingers": 2, "max_phalanges": 2, "depth_cap": 12},
    "reward": {
        "objects": [{"name": "disc", "shape": "disc", "radius_m": 0.015}],
        "tension_levels_n": [5.0],
        "orientations_deg": [0.0],
        "workers": 1,
    },
    "sim": {"t_max_s": 0.05},
    "search": {"iterations": 2, "log_every": 0},
}


@pytest.fixture(name="quick_config")
def fixture_quick_config(tmp_path: Path) -> str:
    """Configuration with one object, one tension level and a short horizon."""
    path = tmp_path / "quick.json"
    save_dict_to_json(path, QUICK_CONFIG)
    return str(path)


@pytest.fixture(name="design_file")
def fixture_design_file(tmp_path: Path, two_finger_graph: DesignGraph) -> str:
    """A saved two-finger design."""
    path = tmp_path / "two_finger.json"
    save_design(two_finger_graph, path)
    return str(path)


def test_parse_tensions() -> None:
    """Comma-separated numbers, blanks ignored"""
    assert parse_tensions("5, 10.5,") == [5.0, 10.5]
    with pytest.raises(ConfigError):
        parse_tensions("5,strong")


def test_search_writes_artifacts(quick_config: str, tmp_path: Path) -> None:
    """Search writes its trace, ranked designs with reports and run metadata"""
    out = tmp_path / "run"
    assert main(["search", "--config", quick_config, "--out", str(out)]) == EXIT_OK
    trace = (out / "trace.csv").read_text(encoding="utf-8").splitlines()
    assert len(trace) == 3
    assert (out / "designs" / "design_1.json").is_file()
    report = json.loads(
        (out / "designs" / "design_1.report.json").read_text(encoding="utf-8")
    )
    assert report["rank"] == 1
    assert report["sim_count"] == 1
    assert 0.0 <= report["normalized"] <= 1.0
    meta = json.loads((out / "run_meta.json").read_text(encoding="utf-8"))
    assert (meta["seed"], meta["iterations"]) == (0, 2)
    assert meta["config"]["sim"]["t_max_s"] == 0.05


def test_search_is_reproducible(quick_config: str, tmp_path: Path) -> None:
    """Equal seeds give byte-identical traces and designs"""
    outputs = []
    for name in ("first", "second"):
        out = tmp_path / name
        args = ["search", "--config", quick_config, "--out", str(out), "--seed", "5"]
        assert main(args + ["--iterations", "3"]) == EXIT_OK
        outputs.append(
            (
                (out / "trace.csv").read_bytes(),
                (out / "designs" / "design_1.json").read_bytes(),
            )
        )
    assert outputs[0] == outputs[1]


def test_interrupted_search(
    quick_config: str, tmp_path: Path, monkeypatch: pytest.MonkeyPatch
) -> None:
    """An interrupted search still writes its results but fails"""

    def interrupted(*args: Any) -> SearchResult:
        result = run_search(*args)
        result.interrupted = True
        return result

    monkeypatch.setattr(graspgen.application, "run_search", interrupted)
    out = tmp_path / "partial"
    args = ["search", "--config", quick_config, "--out", str(out)]
    assert main(args) == EXIT_RUNTIME
    assert (out / "trace.csv").is_file()


def test_missing_config(tmp_path: Path) -> None:
    """An unreadable configuration is a configuration error"""
    missing = str(tmp_path / "missing.json")
    assert main(["search", "--config", missing]) == EXIT_CONFIG


def test_evaluate_prints_report(
    quick_config: str, design_file: str, capsys: pytest.CaptureFixture[str]
) -> None:
    """Evaluate prints the report as JSON on standard output"""
    args = ["evaluate", "--design", design_file, "--config", quick_config]
    assert main(args) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["sim_count"] == 1
    assert list(report["objects"]) == ["disc"]
    assert report["objects"]["disc"]["best_controls_n"] == [5.0, 5.0]


def test_evaluate_non_terminal(quick_config: str, tmp_path: Path) -> None:
    """A design with non-terminal nodes cannot be evaluated"""
    path = tmp_path / "start.json"
    save_design(init_graph(), path)
    args = ["evaluate", "--design", str(path), "--config", quick_config]
    assert main(args) == EXIT_NOT_TERMINAL


def test_evaluate_malformed_design(quick_config: str, tmp_path: Path) -> None:
    """A design that does not parse is a runtime error"""
    path = tmp_path / "broken.json"
    path.write_text('{"version": 1, "nodes": [', encoding="utf-8")
    args = ["evaluate", "--design", str(path), "--config", quick_config]
    assert main(args) == EXIT_RUNTIME


def test_render_writes_frames(
    quick_config: str, design_file: str, tmp_path: Path
) -> None:
    """Render writes frames, the force history and the run trace"""
    out = tmp_path / "render"
    args = ["render", "--design", design_file, "--config", quick_config]
    args += ["--object", "disc", "--tension", "5,5", "--out", str(out)]
    assert main(args) == EXIT_OK
    assert sorted(path.name for path in (out / "frames").iterdir())[0] == (
        "frame_0001.svg"
    )
    assert (out / "forces.csv").is_file()
    assert (out / "trace.csv").is_file()


def test_render_fixed_object(
    quick_config: str, design_file: str, tmp_path: Path
) -> None:
    """The press test clamps the object in place"""
    out = tmp_path / "press"
    args = ["render", "--design", design_file, "--config", quick_config]
    args += ["--object", "disc", "--tension", "5,5", "--out", str(out)]
    assert main(args + ["--fixed-object"]) == EXIT_OK
    rows = (out / "trace.csv").read_text(encoding="utf-8").splitlines()[1:]
    assert {tuple(row.split(",")[1:3]) for row in rows} == {("0", "0.06")}


@pytest.mark.parametrize(
    "extra",
    [
        ["--object", "disc", "--tension", "5"],
        ["--object", "banana", "--tension", "5,5"],
        ["--object", "disc", "--tension", "5,x"],
        ["--object", "disc", "--tension", "5,-1"],
    ],
)
def test_render_bad_arguments(
    quick_config: str, design_file: str, tmp_path: Path, extra: list[str]
) -> None:
    """Wrong tension counts, unknown objects and bad numbers are rejected"""
    args = ["render", "--design", design_file, "--config", quick_config]
    args += extra + ["--out", str(tmp_path / "render")]
    assert main(args) == EXIT_CONFIG


@pytest.mark.slow
def test_desk_search(tmp_path: Path) -> None:
    """The desk preset search finds a design that secures most test objects"""
    out = tmp_path / "desk"
    assert main(["search", "--config", "desk", "--out", str(out)]) == EXIT_OK
    assert (out / "designs" / "design_1.json").is_file()
    report = load_report(report_path(out, 1))
    assert report is not None
    breakdowns = [obj["breakdown"] for obj in report["objects"].values()]
    assert len(breakdowns) == 3
    assert sum(item["r1"] == pytest.approx(1.0) for item in breakdowns) >= 2
    assert any(item["r6"] > 0.5 for item in breakdowns)
