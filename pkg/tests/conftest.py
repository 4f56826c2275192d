from pathlib import Path

import pytest

from ensemble_codesearch.code_model import parse_source

GOLDEN = Path(__file__).parent / "golden"


def golden(name: str) -> str:
    return (GOLDEN / name).read_text(encoding="utf-8")


def squash(text: str) -> str:
    """Whitespace-insensitive form used for golden comparisons."""
    return "".join(text.split())


@pytest.fixture
def rename_src():
    return golden("rename_before.java")


@pytest.fixture
def permute_src():
    return golden("permute_before.java")


@pytest.fixture
def label_src():
    return golden("field_label.java")


@pytest.fixture
def permute_ast(permute_src):
    return parse_source(permute_src)


# acceptance reporting: one line per criterion in the terminal summary

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, {"title": title, "outcome": "PASS", "detail": ""})
    if call.when == "call" or (call.when == "setup" and call.excinfo is not None):
        if call.excinfo is None:
            entry["detail"] = getattr(item, "criterion_detail", "")
        elif call.excinfo.errisinstance(pytest.skip.Exception):
            entry["outcome"] = "SKIP"
            entry["detail"] = str(call.excinfo.value)
        else:
            entry["outcome"] = "FAIL"
            entry["detail"] = call.excinfo.exconly().splitlines()[0][:160]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        c = _CRITERIA[number]
        line = f"criterion {number:>2} {c['outcome']:<4} {c['title']}"
        if c["detail"]:
            line += f" | {c['detail']}"
        terminalreporter.write_line(line)
