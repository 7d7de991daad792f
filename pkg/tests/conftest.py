"""Shared pytest hooks: collect acceptance verdicts, print one line each."""

_acceptance_lines = []


def record_acceptance(index: int, name: str, ok: bool, detail: str) -> None:
    """Store one pass/fail line for the terminal summary and print it live."""
    verdict = "PASS" if ok else "FAIL"
    line = f"[{index}] {name}: {verdict} ({detail})"
    _acceptance_lines.append((index, line))
    print(line, flush=True)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance_lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_acceptance_lines):
        terminalreporter.write_line(line)
