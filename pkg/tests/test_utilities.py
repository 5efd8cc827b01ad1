"""Test utility functions"""

from pathlib import Path

import pytest

from graspgen.utilities import (
    THREADS_ENV_VAR,
    dumps_stable,
    fmt_float,
    load_dict_from_json,
    new_rng,
    save_dict_to_json,
    sing_plur,
    worker_count,
)


def test_sing_plur() -> None:
    """Test singular/plural phrases"""
    assert sing_plur(1, "finger") == "1 finger"
    assert sing_plur(0, "design") == "0 designs"
    assert sing_plur(3, "phalanx", "phalanges") == "3 phalanges"


def test_dumps_stable() -> None:
    """Equal data gives identical text whatever the key order"""
    first = dumps_stable({"b": 1, "a": [1.5, "x"]})
    second = dumps_stable({"a": [1.5, "x"], "b": 1})
    assert first == second
    assert first.endswith("}\n")


def test_json_files(tmp_path: Path) -> None:
    """Dictionaries round trip; anything else loads as None"""
    path = tmp_path / "sub" / "data.json"
    save_dict_to_json(path, {"seed": 3})
    assert load_dict_from_json(path) == {"seed": 3}
    assert load_dict_from_json(tmp_path / "none.json") is None
    broken = tmp_path / "broken.json"
    broken.write_text("{", encoding="utf-8")
    assert load_dict_from_json(broken) is None
    listed = tmp_path / "list.json"
    listed.write_text("[1]", encoding="utf-8")
    assert load_dict_from_json(listed) is None


def test_new_rng() -> None:
    """Seeded generators repeat their streams"""
    assert new_rng(4).integers(1000, size=5).tolist() == (
        new_rng(4).integers(1000, size=5).tolist()
    )
    assert new_rng(4).random() != new_rng(5).random()


def test_fmt_float() -> None:
    """CSV floats are short and stable"""
    assert fmt_float(0.0) == "0"
    assert fmt_float(0.25) == "0.25"
    assert fmt_float(1.0 / 3.0) == "0.333333333"
    assert fmt_float(1.0 / 3.0, 3) == "0.333"


def test_worker_count(monkeypatch: pytest.MonkeyPatch) -> None:
    """Single worker under pytest, else the environment or the CPU count"""
    assert worker_count() == 1
    monkeypatch.setattr("graspgen.utilities.called_from_test", False)
    monkeypatch.setenv(THREADS_ENV_VAR, "3")
    assert worker_count() == 3
    monkeypatch.setenv(THREADS_ENV_VAR, "0")
    assert worker_count() == 1
    monkeypatch.setenv(THREADS_ENV_VAR, "many")
    assert worker_count() >= 1
