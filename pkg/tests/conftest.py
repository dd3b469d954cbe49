"""Collects per-criterion verdicts from the acceptance module and prints them at the end."""

ACCEPTANCE: dict = {}


def record(criterion: str, passed: bool | None, detail: str) -> None:
    """passed=None marks a criterion that was not run (e.g. replaced)."""
    ACCEPTANCE[criterion] = (passed, detail)
    verdict = {True: "PASS", False: "FAIL", None: "N/A"}[passed]
    print(f"[acceptance] criterion {criterion}: {verdict}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k)):
        passed, detail = ACCEPTANCE[key]
        verdict = {True: "PASS", False: "FAIL", None: "N/A "}[passed]
        terminalreporter.write_line(f"criterion {key}: {verdict}  {detail}")
