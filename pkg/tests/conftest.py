from pathlib import Path

import pytest

from rebench.ingest import load_classification_dataset, prepare_document

DATA = Path(__file__).parent / "data"
GOLDEN = DATA / "golden"

_acceptance: dict[int, tuple[str, str]] = {}


@pytest.fixture
def data_dir() -> Path:
    return DATA


@pytest.fixture
def golden_dir() -> Path:
    return GOLDEN


@pytest.fixture(scope="session")
def sample_reqs():
    return load_classification_dataset(DATA / "requirements_sample.csv")


@pytest.fixture(scope="session")
def themas():
    return prepare_document(DATA / "themas.txt")


@pytest.fixture(scope="session")
def qheadache():
    return prepare_document(DATA / "qheadache.txt")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    for mark in getattr(report, "acceptance_marks", ()):
        number, title = mark
        outcome = "PASS" if report.passed else "FAIL"
        prev = _acceptance.get(number)
        if prev is None or prev[1] == "PASS":
            _acceptance[number] = (title, outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    rep.acceptance_marks = [(m.args[0], m.kwargs.get("title", item.name)) for m in item.iter_markers("acceptance")]


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance):
        title, outcome = _acceptance[number]
        terminalreporter.write_line(f"criterion {number}: {outcome}  {title}")
