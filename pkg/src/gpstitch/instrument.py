"""Lightweight instrumentation of dense factorization sizes.

Every Cholesky routed through _linalg.chol_psd reports its dimension here.
Wrap a computation in MaxDimTracker to assert scalability claims (e.g. that a
likelihood evaluation never factorizes anything larger than a clique block).
"""

from __future__ import annotations

import threading

__all__ = ["note_dim", "MaxDimTracker"]

_lock = threading.Lock()
_trackers = []


def note_dim(dim):
    with _lock:
        for t in _trackers:
            if dim > t.max_dim:
                t.max_dim = dim


class MaxDimTracker:
    """Context manager recording the largest factorized matrix dimension."""

    def __init__(self):
        self.max_dim = 0

    def __enter__(self):
        with _lock:
            _trackers.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        with _lock:
            _trackers.remove(self)
        return False
