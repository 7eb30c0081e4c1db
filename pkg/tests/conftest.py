def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance PASS/FAIL lines (printed inside the tests but
    swallowed by output capture on success) into the run summary."""
    try:
        from tests.test_acceptance import REPORT_LINES
    except ImportError:
        from test_acceptance import REPORT_LINES
    if REPORT_LINES:
        terminalreporter.section("acceptance criteria")
        for line in REPORT_LINES:
            terminalreporter.write_line(line)
