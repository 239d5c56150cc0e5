"""Pytest hooks: echo the acceptance criterion verdict lines in the terminal
summary, where output capture cannot hide them."""

criterion_lines: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if criterion_lines:
        terminalreporter.section("acceptance criteria")
        for line in criterion_lines:
            terminalreporter.write_line(line)
