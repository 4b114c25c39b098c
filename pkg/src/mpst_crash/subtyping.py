"""Coinductive subtyping on closed local types.

Internal choices are covariant in their label set (the subtype may offer
fewer sends), external choices contravariant (the subtype may accept more
messages, a crash handler included).
"""
from __future__ import annotations

from functools import lru_cache

from .mpst_core import LEnd, LExt, LInt, LRec, LStop, LVar, show, unfold_once


def check_subtype(a, b):
    """Return ``(True, None)`` or ``(False, path)`` where ``path`` leads to the failing pair."""
    assumed = set()
    todo = [(a, b, ())]
    while todo:
        x, y, path = todo.pop()
        if (x, y) in assumed:
            continue
        assumed.add((x, y))
        if isinstance(x, LRec):
            todo.append((unfold_once(x), y, path))
            continue
        if isinstance(y, LRec):
            todo.append((x, unfold_once(y), path))
            continue
        reason = _mismatch(x, y)
        if reason:
            return False, path + (f"{show(x)}  vs  {show(y)}: {reason}",)
        if isinstance(x, (LInt, LExt)):
            for bx in x.branches:
                by = y.branch(bx.label)
                if by is not None:
                    todo.append((bx.cont, by.cont, path + (f"{x.peer}:{bx.label}",)))
    return True, None


def _mismatch(x, y):
    if isinstance(x, LEnd) and isinstance(y, LEnd):
        return None
    if isinstance(x, LStop) and isinstance(y, LStop):
        return None
    if isinstance(x, LVar) and isinstance(y, LVar) and x.name == y.name:
        return None
    if isinstance(x, LInt) and isinstance(y, LInt):
        if x.peer != y.peer:
            return "different peers"
        if not x.labels() <= y.labels():
            return f"sends {sorted(x.labels() - y.labels())} not offered"
        return _sort_mismatch(x, y)
    if isinstance(x, LExt) and isinstance(y, LExt):
        if x.peer != y.peer:
            return "different peers"
        if not y.labels() <= x.labels():
            return f"does not accept {sorted(y.labels() - x.labels())}"
        return _sort_mismatch(x, y)
    return "shape mismatch"


def _sort_mismatch(x, y):
    for bx in x.branches:
        by = y.branch(bx.label)
        if by is not None and bx.sort != by.sort:
            return f"payload of {bx.label}: {bx.sort} vs {by.sort}"
    return None


@lru_cache(maxsize=500_000)
def is_subtype(a, b) -> bool:
    return check_subtype(a, b)[0]
