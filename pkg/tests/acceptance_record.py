"""Collects one pass/fail line per acceptance criterion for the terminal summary."""

import time
from contextlib import contextmanager

RESULTS: dict[int, str] = {}


@contextmanager
def criterion(number: int, title: str):
    """Record PASS when the block completes, FAIL (and re-raise) otherwise."""
    notes: list[str] = []
    t0 = time.perf_counter()
    try:
        yield notes
    except BaseException as e:
        line = f"criterion {number:2d} FAIL  {title}: {type(e).__name__}: {str(e).splitlines()[0] if str(e) else ''}"
        RESULTS[number] = line
        print(line)
        raise
    detail = "; ".join(notes)
    line = f"criterion {number:2d} PASS  {title} ({time.perf_counter() - t0:.1f} s){': ' + detail if detail else ''}"
    RESULTS[number] = line
    print(line)
