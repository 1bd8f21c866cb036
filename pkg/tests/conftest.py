from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from toolgrpo.core import Query, ToolLibrary, read_dataset
from toolgrpo.environment import Simulator, read_profiles

BUNDLED = Path(str(resources.files("toolgrpo") / "data" / "acceptance"))

_criteria: list[tuple[str, str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion reported in the summary")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    props = dict(report.user_properties)
    if "criterion" in props:
        _criteria.append((props["criterion"], report.outcome, props.get("detail", "")))


def pytest_runtest_setup(item):
    marker = item.get_closest_marker("criterion")
    if marker:
        item.user_properties.append(("criterion", marker.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for label, outcome, detail in _criteria:
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"[{status}] {label}" + (f"  ({detail})" if detail else ""))


@pytest.fixture
def detail(request):
    """Attach a measured-values note to the acceptance summary line."""

    def note(text: str) -> None:
        request.node.user_properties.append(("detail", text))

    return note


@pytest.fixture(scope="session")
def bundled():
    library = ToolLibrary.from_dict(json.loads((BUNDLED / "library.json").read_text()))
    train = read_dataset(BUNDLED / "train.jsonl")
    eval_ = read_dataset(BUNDLED / "eval.jsonl")
    profiles = read_profiles(BUNDLED / "profiles.jsonl")
    return library, train, eval_, profiles


@pytest.fixture(scope="session")
def bundled_env(bundled):
    library, _, _, profiles = bundled
    return Simulator(profiles, library).with_mode(True)


def make_query(features, qid="q", gold="1.0"):
    return Query(qid, "question?", np.asarray(features, dtype=float), gold)
