import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion check")


@pytest.fixture
def detail(request):
    """Tests append human-readable measurements; shown next to the criterion verdict."""
    notes = []
    request.node._criterion_notes = notes
    return notes


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    entry = _RESULTS.setdefault(number, {"title": title, "ok": True, "notes": [], "ran": False})
    if rep.when == "call":
        entry["ran"] = True
        entry["notes"].extend(getattr(item, "_criterion_notes", []))
    if rep.failed:
        entry["ok"] = False
    if rep.skipped:
        entry["ok"] = False
        entry["notes"].append("skipped")


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        e = _RESULTS[number]
        verdict = "PASS" if e["ok"] and e["ran"] else "FAIL"
        extra = f"  [{'; '.join(e['notes'])}]" if e["notes"] else ""
        terminalreporter.write_line(f"criterion {number}: {verdict}  {e['title']}{extra}")
