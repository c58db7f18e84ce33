"""Collects the one-line verdicts printed by the acceptance suite."""

LINES = []


def verdict(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    LINES.append(line)
    print(line)
    return ok
