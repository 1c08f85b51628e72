"""Collects ``criterion``-marked outcomes and prints one PASS/FAIL line per criterion."""
import pytest

_OUTCOMES: dict[str, list[tuple[bool, str]]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    failed_setup = report.when == "setup" and report.failed
    if report.when == "call" or failed_setup:
        detail = dict(item.user_properties).get("detail", "")
        crash = getattr(report.longrepr, "reprcrash", None)
        if report.failed and crash is not None:
            first = crash.message.splitlines()[0] if crash.message else "failed"
            detail = f"{detail} | {first}" if detail else first
        _OUTCOMES.setdefault(marker.args[0], []).append((report.passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for name, results in _OUTCOMES.items():
        ok = all(p for p, _ in results)
        details = "; ".join(d for _, d in results if d)
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({details})" if details else ""))
