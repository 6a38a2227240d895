"""Collects one verdict line per acceptance criterion for the terminal summary."""

LINES = {}


def record(number: int, ok: bool, detail: str) -> bool:
    LINES[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(LINES[number])
    return ok
