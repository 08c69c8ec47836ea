ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE_RESULTS):
        ok, title, detail = ACCEPTANCE_RESULTS[num]
        line = f"[{'PASS' if ok else 'FAIL'}] {num:>2}. {title}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)
