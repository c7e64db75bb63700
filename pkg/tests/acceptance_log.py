"""Collects one PASS/FAIL line per acceptance criterion for the end-of-session summary."""

LINES: list[str] = []


def record(number: int, title: str, passed: bool, detail: str) -> bool:
    LINES.append(f"{'PASS' if passed else 'FAIL'}  criterion {number}: {title} -- {detail}")
    return passed
