import pytest

from inversor.ngram import toy_model, train_from_corpus

_criteria: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.fixture(scope="session")
def toy():
    return toy_model()


@pytest.fixture(scope="session")
def abc_model():
    """Corpus ["a b", "a b", "a c"], order 2, alpha 1: vocab </s> a b c."""
    return train_from_corpus(["a b", "a b", "a c"], order=2, alpha=1.0)


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            num, title = mark.args
            _criteria.setdefault(num, {"title": title, "items": set(), "failed": False,
                                       "ran": 0})["items"].add(item.nodeid)


def pytest_runtest_logreport(report):
    for entry in _criteria.values():
        if report.nodeid in entry["items"]:
            if report.failed:
                entry["failed"] = True
            if report.when == "call":
                entry["ran"] += 1


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_criteria):
        e = _criteria[num]
        if e["failed"]:
            status = "FAIL"
        elif e["ran"] < len(e["items"]):
            status = "NOT RUN"
        else:
            status = "PASS"
        terminalreporter.write_line(f"criterion {num:2d} {status:7s} {e['title']}")
