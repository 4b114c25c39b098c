"""Projection of global types onto roles, with full merging and channel annotations."""
from __future__ import annotations

from functools import lru_cache
from itertools import count

from .mpst_core import (CRASH, LEND, Branch, GComm, GEnd, GlobalType, GRec, GTransit,
                        GVar, LChoice, LEnd, LExt, LInt, LocalType, LRec, LVar, active_roles,
                        crashed_roles, free_vars, is_contractive, show)


class ProjectionUndefined(Exception):
    def __init__(self, reason, path=()):
        self.reason = reason
        self.path = tuple(path)
        where = f" at {' / '.join(self.path)}" if self.path else ""
        super().__init__(reason + where)


class MergeUndefined(ProjectionUndefined):
    def __init__(self, a, b, path=()):
        self.a = a
        self.b = b
        super().__init__(f"cannot merge {show(a)} with {show(b)}", path)


# ---------------------------------------------------------------- annotations


def _as_set(ann):
    if ann is None:
        return frozenset()
    if isinstance(ann, frozenset):
        return ann
    return frozenset([ann])


def merge_annotations(x, y):
    if x is None and y is None:
        return None
    return _as_set(x) | _as_set(y)


def annotate(g: GlobalType) -> GlobalType:
    """Number every transmission prefix in pre-order, starting from 0."""
    counter = count()

    def go(t):
        if isinstance(t, GComm):
            n = next(counter)
            branches = tuple(Branch(b.label, b.sort, go(b.cont)) for b in t.branches)
            return GComm(t.sender, t.receiver, branches, t.receiver_crashed, n)
        if isinstance(t, GTransit):
            n = next(counter)
            branches = tuple(Branch(b.label, b.sort, go(b.cont)) for b in t.branches)
            return GTransit(t.sender, t.receiver, branches, t.committed, t.sender_crashed, n)
        if isinstance(t, GRec):
            return GRec(t.var, go(t.body))
        return t

    return go(g)


# ---------------------------------------------------------------------- merge


def merge(a: LocalType, b: LocalType, path=()) -> LocalType:
    """Full merge of two local types; raises :class:`MergeUndefined`."""
    if a is b:
        return a
    if isinstance(a, LExt) and isinstance(b, LExt) and a.peer == b.peer:
        out = []
        other = {br.label: br for br in b.branches}
        for br in a.branches:
            if br.label in other:
                ob = other.pop(br.label)
                if br.sort != ob.sort:
                    raise MergeUndefined(a, b, path + (f"{a.peer}&{br.label}",))
                out.append(Branch(br.label, br.sort,
                                  merge(br.cont, ob.cont, path + (f"{a.peer}&{br.label}",))))
            else:
                out.append(br)
        out.extend(ob for ob in b.branches if ob.label in other)
        return LExt(a.peer, tuple(out), merge_annotations(a.ann, b.ann))
    if isinstance(a, LInt) and isinstance(b, LInt) and a.peer == b.peer \
            and a.labels() == b.labels():
        out = []
        for br in a.branches:
            ob = b.branch(br.label)
            if br.sort != ob.sort:
                raise MergeUndefined(a, b, path + (f"{a.peer}(+){br.label}",))
            out.append(Branch(br.label, br.sort,
                              merge(br.cont, ob.cont, path + (f"{a.peer}(+){br.label}",))))
        return LInt(a.peer, tuple(out), merge_annotations(a.ann, b.ann))
    if isinstance(a, LRec) and isinstance(b, LRec) and a.var == b.var:
        return LRec(a.var, merge(a.body, b.body, path + (f"mu {a.var}",)))
    if isinstance(a, LVar) and isinstance(b, LVar) and a.name == b.name:
        return a
    if isinstance(a, LEnd) and isinstance(b, LEnd):
        return a
    raise MergeUndefined(a, b, path)


def merge_all(types, path=()):
    types = list(types)
    out = types[0]
    for t in types[1:]:
        out = merge(out, t, path)
    return out


# ----------------------------------------------------------------- projection


def _proj(g, p, reliable, path, keep_ann):
    if isinstance(g, GEnd):
        return LEND
    if isinstance(g, GVar):
        return LVar(g.name)
    if isinstance(g, GRec):
        body = g.body
        if p in active_roles(body) or p in crashed_roles(body) or free_vars(g):
            res = LRec(g.var, _proj(body, p, reliable, path + (f"mu {g.var}",), keep_ann))
            if not is_contractive(res):
                raise ProjectionUndefined(f"projection onto {p} is not contractive: {show(res)}",
                                          path)
            return res
        return LEND
    ann = g.ann if keep_ann else None
    step = f"{g.sender}->{g.receiver}"

    def sub(b):
        return _proj(b.cont, p, reliable, path + (f"{step}:{b.label}",), keep_ann)

    def receiver_side():
        in_flight = isinstance(g, GTransit) and g.committed != CRASH
        if g.sender not in reliable and not g.has_crash_branch() and not in_flight:
            raise ProjectionUndefined(
                f"{p} receives from unreliable {g.sender} without a crash branch", path + (step,))
        return LExt(g.sender, tuple(Branch(b.label, b.sort, sub(b)) for b in g.branches), ann)

    if isinstance(g, GComm):
        if p == g.sender:
            branches = tuple(Branch(b.label, b.sort, sub(b)) for b in g.branches
                             if b.label != CRASH)
            if not branches:
                raise ProjectionUndefined(f"{p} would send a crash notification", path + (step,))
            return LInt(g.receiver, branches, ann)
        if p == g.receiver:
            return receiver_side()
        return merge_all([sub(b) for b in g.branches], path + (step,))
    if isinstance(g, GTransit):
        if p == g.sender:
            return sub(g.branch(g.committed))
        if p == g.receiver:
            return receiver_side()
        return merge_all([sub(b) for b in g.branches], path + (step,))
    raise TypeError(f"not a global type: {g!r}")


@lru_cache(maxsize=200_000)
def _project_cached(g, p, reliable):
    return _proj(g, p, reliable, (), False)


def project(g: GlobalType, p: str, reliable=frozenset()) -> LocalType:
    """Projection ``g|p`` with respect to the reliable roles; annotations dropped."""
    return _project_cached(g, p, frozenset(reliable))


def try_project(g, p, reliable=frozenset()):
    try:
        return project(g, p, reliable)
    except ProjectionUndefined:
        return None


def project_annotated(g: GlobalType, p: str, reliable=frozenset()) -> LocalType:
    """Projection keeping channel annotations; numbers prefixes first if needed."""
    if not _has_annotations(g):
        g = annotate(g)
    return _proj(g, p, frozenset(reliable), (), True)


def _has_annotations(g):
    while isinstance(g, GRec):
        g = g.body
    return isinstance(g, (GComm, GTransit)) and g.ann is not None


def project_all(g: GlobalType, roles, reliable=frozenset()) -> dict:
    return {r: project(g, r, reliable) for r in roles}
