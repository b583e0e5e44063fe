_CRITERIA: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    path, _, name = report.nodeid.partition("::")
    if not path.endswith("test_acceptance.py") or not name.startswith("test_c"):
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        detail = dict(report.user_properties).get("detail", "")
        _CRITERIA[name] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_CRITERIA):
        status, detail = _CRITERIA[name]
        number, _, label = name[len("test_c"):].partition("_")
        terminalreporter.write_line(f"C{int(number):<3}{status}  {label.replace('_', ' ')}: {detail}")
