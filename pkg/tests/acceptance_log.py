"""One PASS/FAIL line per acceptance criterion, printed after the run."""

LINES: list[str] = []


def record(criterion: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'}  criterion {criterion}: {detail}"
    LINES.append(line)
    print(line)
