"""Bounded process pool with order-preserving, failure-isolating job execution."""
from __future__ import annotations

import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Sequence

WORKERS_ENV = "SHELLRG_WORKERS"


@dataclass(frozen=True)
class JobFailure:
    """Stand-in result for a job that raised."""

    error: str
    detail: str = ""


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "").strip()
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _guarded(payload):
    fn, job = payload
    try:
        return fn(job)
    except Exception as exc:  # isolate per-job failures
        return JobFailure(f"{type(exc).__name__}: {exc}", traceback.format_exc(limit=4))


def run_jobs(fn: Callable[[Any], Any], jobs: Sequence, workers: int | None = None) -> list:
    """Apply ``fn`` to every job; results come back in job order.

    ``fn`` must be a module-level function when ``workers > 1``. A job that
    raises yields a :class:`JobFailure` in its slot instead of aborting the
    batch.
    """
    workers = default_workers() if workers is None else max(1, int(workers))
    payloads = [(fn, j) for j in jobs]
    if workers == 1 or len(payloads) <= 1:
        return [_guarded(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=min(workers, len(payloads))) as pool:
        return list(pool.map(_guarded, payloads, chunksize=1))
