import sys


def pytest_terminal_summary(terminalreporter):
    """Print the acceptance lines collected by test_acceptance.py, one per criterion."""
    lines = {}
    for mod in list(sys.modules.values()):
        lines.update(getattr(mod, "ACCEPTANCE_LINES", None) or {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
