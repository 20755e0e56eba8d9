"""Deterministic fan-out of per-path work over worker processes.

Paths are cut into fixed-size chunks that do not depend on the worker count,
each chunk is computed identically wherever it runs, and results are
concatenated in path order. Output is therefore independent of ``threads``.
"""

from __future__ import annotations

import multiprocessing as mp
import os
from typing import Callable, Optional

import numpy as np

CHUNK = 2500

_TASK: Optional[Callable] = None


def default_threads() -> int:
    return os.cpu_count() or 1


def _run_chunk(bounds):
    lo, hi = bounds
    return _TASK(lo, hi)


def _as_tuple(x):
    return x if isinstance(x, tuple) else (x,)


def map_paths(fn: Callable[[int, int], object], n: int, threads: Optional[int] = None, chunk: int = CHUNK):
    """Evaluate ``fn(lo, hi)`` on consecutive path ranges and concatenate along axis 0.

    ``fn`` returns an array or a tuple of arrays with one leading entry per path.
    """
    global _TASK
    threads = default_threads() if threads is None else int(threads)
    bounds = [(lo, min(lo + chunk, n)) for lo in range(0, n, chunk)]
    if threads <= 1 or len(bounds) <= 1 or "fork" not in mp.get_all_start_methods():
        parts = [fn(lo, hi) for lo, hi in bounds]
    else:
        _TASK = fn
        try:
            with mp.get_context("fork").Pool(min(threads, len(bounds))) as pool:
                parts = pool.map(_run_chunk, bounds, chunksize=1)
        finally:
            _TASK = None
    parts = [_as_tuple(p) for p in parts]
    out = tuple(np.concatenate([p[k] for p in parts]) for k in range(len(parts[0])))
    return out if len(out) > 1 else out[0]
