"""Deterministic chunked evaluation over points.

Work is cut into fixed-size chunks whose boundaries do not depend on the
thread count, and results are reassembled in chunk order, so output is
byte-identical for any number of threads.  The thread count comes from the
``BILIPEXPAND_THREADS`` environment variable (default 1).
"""
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

CHUNK = 8192
ENV_THREADS = "BILIPEXPAND_THREADS"


def thread_count():
    try:
        return max(1, int(os.environ.get(ENV_THREADS, "1")))
    except ValueError:
        return 1


def chunked(fn, n, chunk=CHUNK):
    """Evaluate ``fn(slice)`` over ``range(n)`` in chunks and concatenate along axis 0."""
    slices = [slice(i, min(i + chunk, n)) for i in range(0, n, chunk)]
    if not slices:
        return fn(slice(0, 0))
    threads = thread_count()
    if threads == 1 or len(slices) == 1:
        parts = [fn(s) for s in slices]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(fn, slices))
    return np.concatenate(parts, axis=0)


def map_points(fn, pts, chunk=CHUNK):
    """Apply a pointwise function to an ``(..., 2)`` array in deterministic chunks."""
    pts = np.asarray(pts, dtype=float)
    lead = pts.shape[:-1]
    flat = pts.reshape(-1, 2)
    out = chunked(lambda s: fn(flat[s]), flat.shape[0], chunk)
    return out.reshape(lead + out.shape[1:])
