"""Collects one verdict line per acceptance criterion for the terminal summary."""

LINES: list[str] = []


def record(criterion: str, ok: bool | None, detail: str) -> str:
    verdict = {True: "PASS", False: "FAIL", None: "SKIP"}[ok]
    line = f"{verdict} criterion {criterion}: {detail}"
    LINES.append(line)
    print(line)
    return line
