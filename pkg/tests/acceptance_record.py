"""Collects one pass/fail line per acceptance criterion for the terminal summary."""

RESULTS = []


def record(number, title, ok, detail):
    line = f"CRITERION {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    RESULTS.append(line)
    print(line)
    return ok
