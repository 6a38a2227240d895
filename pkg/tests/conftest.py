import report


def pytest_terminal_summary(terminalreporter):
    if report.LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(report.LINES):
            terminalreporter.write_line(report.LINES[k])
