import pytest

_ACCEPTANCE = {}


@pytest.fixture
def measured(request):
    """Attach measured quantities to an acceptance test for the summary line."""
    def add(**kw):
        for k, v in kw.items():
            request.node.user_properties.append((k, v))
    return add


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            item.user_properties.append(("criterion", m.args[0]))


def pytest_runtest_logreport(report):
    crit = dict(report.user_properties).get("criterion")
    if crit is None or report.when not in ("setup", "call"):
        return
    if report.when == "setup" and report.passed:
        return
    if report.skipped and hasattr(report, "wasxfail"):
        status = "FAIL (expected, xfail)"
    elif report.passed and hasattr(report, "wasxfail"):
        status = "PASS (unexpected, xpass)"
    else:
        status = report.outcome.upper().replace("PASSED", "PASS").replace("FAILED", "FAIL")
    details = ", ".join(f"{k}={_fmt(v)}" for k, v in report.user_properties if k != "criterion")
    _ACCEPTANCE.setdefault(crit, []).append((report.nodeid.split("::")[-1], status, details))


def _fmt(v):
    return f"{v:.4g}" if isinstance(v, float) else str(v)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit in sorted(_ACCEPTANCE):
        for name, status, details in _ACCEPTANCE[crit]:
            tr.write_line(f"criterion {crit:>2}: {status:<5} {name}" + (f"  [{details}]" if details else ""))
