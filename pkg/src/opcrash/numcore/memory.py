"""Logical-byte allocation tracking.

Every array owned by a :class:`~opcrash.numcore.tensor.Tensor` (forward values
and gradient buffers) is reported here while a :func:`track_memory` scope is
active. The counter follows live bytes: an array is released when CPython frees
it, so the peak is a deterministic function of the computation, not of the
allocator.
"""
from __future__ import annotations

import threading
import weakref
from collections import defaultdict
from contextlib import contextmanager

import numpy as np

_local = threading.local()


class MemoryScope:
    """Peak/live byte counter for one ``track_memory`` block."""

    def __init__(self, name: str = ""):
        self.name = name
        self.live = 0
        self.peak = 0
        self.allocated = 0
        self.count = 0
        self.by_tag: dict[str, int] = defaultdict(int)
        self.peak_by_tag: dict[str, int] = {}
        self._live_by_tag: dict[str, int] = defaultdict(int)

    def _alloc(self, nbytes: int, tag: str) -> None:
        self.live += nbytes
        self.allocated += nbytes
        self.count += 1
        self.by_tag[tag] += nbytes
        self._live_by_tag[tag] += nbytes
        if self.live > self.peak:
            self.peak = self.live
            self.peak_by_tag = dict(self._live_by_tag)

    def _free(self, nbytes: int, tag: str) -> None:
        self.live -= nbytes
        self._live_by_tag[tag] -= nbytes

    def __repr__(self) -> str:
        return f"MemoryScope({self.name!r}, peak={self.peak}, live={self.live})"


def _stack() -> list[MemoryScope]:
    s = getattr(_local, "stack", None)
    if s is None:
        s = _local.stack = []
    return s


def tracking() -> bool:
    return bool(_stack())


def _release(scopes, nbytes, tag):
    for sc in scopes:
        sc._free(nbytes, tag)


def register(arr: np.ndarray, tag: str) -> None:
    """Report an owned array to every active scope; no-op outside a scope."""
    stack = _stack()
    if not stack or arr.base is not None:
        return
    nbytes = int(arr.nbytes)
    scopes = tuple(stack)
    for sc in scopes:
        sc._alloc(nbytes, tag)
    weakref.finalize(arr, _release, scopes, nbytes, tag)


@contextmanager
def track_memory(name: str = ""):
    """Measure the peak logical bytes allocated inside the block.

    Arrays that exist before entry are not counted; arrays allocated inside
    and still alive at exit keep counting toward ``live`` until freed.
    """
    scope = MemoryScope(name)
    stack = _stack()
    stack.append(scope)
    try:
        yield scope
    finally:
        stack.remove(scope)
