"""Pass/fail lines of the acceptance criteria, printed at the end of the session."""

RESULTS: dict[int, str] = {}


def record(n: int, ok: bool, detail: str) -> bool:
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)
    return ok
