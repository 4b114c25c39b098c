"""Labelled transition systems of annotated global types and of configurations."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache
from itertools import product
from typing import Optional

from .mpst_core import (CRASH, END, Branch, GComm, GEnd, GlobalType, GRec, GTransit, GVar,
                        LEnd, LExt, LInt, LocalType, LRec, LStop, STOP, active_roles,
                        canonical, free_vars, show, unfold, unfold_once, well_annotated)

# --------------------------------------------------------------------- labels


@dataclass(frozen=True)
class Send:
    p: str
    q: str
    label: str
    sort: Optional[str] = None

    def __str__(self):
        return f"{self.p}!{self.q}:{self.label}" + (f"({self.sort})" if self.sort else "")


@dataclass(frozen=True)
class Recv:
    p: str
    q: str
    label: str
    sort: Optional[str] = None

    def __str__(self):
        return f"{self.p}?{self.q}:{self.label}" + (f"({self.sort})" if self.sort else "")


@dataclass(frozen=True)
class Crash:
    p: str

    def __str__(self):
        return f"{self.p}#"


@dataclass(frozen=True)
class CrashDetect:
    p: str  # the detecting role
    q: str  # the crashed peer

    def __str__(self):
        return f"{self.p}?{self.q}:crash"


Label = (Send, Recv, Crash, CrashDetect)


def subject(label) -> str:
    return label.p


def label_to_json(label) -> dict:
    if isinstance(label, Send):
        return {"kind": "send", "p": label.p, "q": label.q, "label": label.label,
                "sort": label.sort}
    if isinstance(label, Recv):
        return {"kind": "recv", "p": label.p, "q": label.q, "label": label.label,
                "sort": label.sort}
    if isinstance(label, Crash):
        return {"kind": "crash", "p": label.p}
    return {"kind": "detect", "p": label.p, "q": label.q}


def label_from_json(d: dict):
    kind = d["kind"]
    if kind == "send":
        return Send(d["p"], d["q"], d["label"], d.get("sort"))
    if kind == "recv":
        return Recv(d["p"], d["q"], d["label"], d.get("sort"))
    if kind == "crash":
        return Crash(d["p"])
    if kind == "detect":
        return CrashDetect(d["p"], d["q"])
    raise ValueError(f"unknown label kind {kind!r}")


# --------------------------------------------------------------- role removal


class RemovalUndefined(Exception):
    pass


@lru_cache(maxsize=100_000)
def remove_role(g: GlobalType, r: str) -> GlobalType:
    """``g`` after the live role ``r`` crashed."""
    if r not in active_roles(g):
        raise RemovalUndefined(f"{r} is not active in {show(g)}")
    return _remove(g, r)


def _remove_branches(g, r):
    return tuple(Branch(b.label, b.sort, _remove(b.cont, r)) for b in g.branches)


def _remove(g, r):
    if isinstance(g, GComm):
        if not g.receiver_crashed:
            if g.sender == r:
                branches = _remove_branches(g, r)
                if not g.has_crash_branch():
                    # the receiver can only be live here in an ill-formed protocol, and
                    # then it lacks the crash branch and association fails downstream
                    branches += (Branch(CRASH, None, END),)
                return GTransit(g.sender, g.receiver, branches, CRASH, True, g.ann)
            if g.receiver == r:
                return GComm(g.sender, g.receiver, _remove_branches(g, r), True, g.ann)
            return GComm(g.sender, g.receiver, _remove_branches(g, r), False, g.ann)
        if g.sender == r:
            crash = g.branch(CRASH)
            if crash is None:
                return END  # both ends crashed; same outcome as the synthesised branch above
            return _remove(crash.cont, r)
        return GComm(g.sender, g.receiver, _remove_branches(g, r), True, g.ann)
    if isinstance(g, GTransit):
        if g.receiver == r:
            return _remove(g.branch(g.committed).cont, r)
        if g.sender == r and not g.sender_crashed:
            return GTransit(g.sender, g.receiver, _remove_branches(g, r), g.committed, True, g.ann)
        return GTransit(g.sender, g.receiver, _remove_branches(g, r), g.committed,
                        g.sender_crashed, g.ann)
    if isinstance(g, GRec):
        body = _remove(g.body, r)
        if free_vars(g) or active_roles(body):
            return GRec(g.var, body)
        return END
    return g


# ----------------------------------------------------------- global semantics


@dataclass(frozen=True)
class AnnotatedGlobal:
    crashed: frozenset
    gtype: GlobalType

    def __str__(self):
        crashed = ",".join(sorted(self.crashed))
        return f"{{{crashed}}} {show(self.gtype)}"


class FuelExhausted(Exception):
    """Some successor needs more recursion unfoldings than the budget allows.

    ``steps`` holds the successors that stay within budget.
    """

    def __init__(self, steps, vars_):
        self.steps = steps
        self.vars = vars_
        super().__init__(f"unfolding budget exhausted for {sorted(vars_)}")


@dataclass(frozen=True)
class GlobalStep:
    label: object
    target: AnnotatedGlobal
    unfolded: frozenset  # recursion variables unfolded to derive this step


def _steps(g, crashed, reliable, excluded, stack):
    """All derivable ``(label, crashed', g', unfolded)`` with subject outside ``excluded``."""
    if isinstance(g, (GEnd, GVar)):
        return []
    if active_roles(g) <= excluded:
        return []
    key = (g, excluded)
    if key in stack:
        return []  # an infinite derivation is not a derivation
    stack.add(key)
    try:
        if isinstance(g, GRec):
            return [(a, c, t, u | {g.var})
                    for a, c, t, u in _steps(unfold_once(g), crashed, reliable, excluded, stack)]
        out = []
        for p in sorted(active_roles(g) - reliable - excluded):
            out.append((Crash(p), crashed | {p}, remove_role(g, p), frozenset()))
        none = frozenset()
        if isinstance(g, GComm):
            if g.sender not in excluded:
                for b in g.branches:
                    if b.label == CRASH:
                        continue
                    lab = Send(g.sender, g.receiver, b.label, b.sort)
                    if g.receiver_crashed:
                        out.append((lab, crashed, b.cont, none))
                    else:
                        out.append((lab, crashed, GTransit(g.sender, g.receiver, g.branches,
                                                           b.label, False, g.ann), none))
            inner = excluded | {g.sender, g.receiver}
        else:
            j = g.branch(g.committed)
            if g.receiver not in excluded:
                if j.label != CRASH:
                    out.append((Recv(g.receiver, g.sender, j.label, j.sort), crashed, j.cont, none))
                elif g.sender_crashed:
                    out.append((CrashDetect(g.receiver, g.sender), crashed, j.cont, none))
            inner = excluded | {g.receiver}
            if j.label != CRASH and not g.sender_crashed and g.sender not in excluded:
                # the sender already committed to j: its own further actions reduce
                # only that branch, and the transit keeps just that branch
                for a, c, t, u in _steps(j.cont, crashed, reliable, inner, stack):
                    if a.p == g.sender and not isinstance(a, Crash):
                        out.append((a, c, GTransit(g.sender, g.receiver,
                                                   (Branch(j.label, j.sort, t),),
                                                   g.committed, False, g.ann), u))
                inner = inner | {g.sender}
        out.extend(_ctx_steps(g, crashed, reliable, inner, stack))
        return out
    finally:
        stack.discard(key)


def _ctx_steps(g, crashed, reliable, inner, stack):
    per_branch = []
    for b in g.branches:
        by_label = {}
        for a, c, t, u in _steps(b.cont, crashed, reliable, inner, stack):
            by_label.setdefault((a, c), []).append((t, u))
        if not by_label:
            return []
        per_branch.append(by_label)
    common = set(per_branch[0])
    for m in per_branch[1:]:
        common &= set(m)
    out = []
    for key in sorted(common, key=lambda k: str(k[0])):
        a, c = key
        for combo in product(*(m[key] for m in per_branch)):
            conts = tuple(Branch(b.label, b.sort, t) for b, (t, _) in zip(g.branches, combo))
            unfolded = frozenset().union(*(u for _, u in combo))
            if isinstance(g, GComm):
                new = GComm(g.sender, g.receiver, conts, g.receiver_crashed, g.ann)
            else:
                new = GTransit(g.sender, g.receiver, conts, g.committed, g.sender_crashed, g.ann)
            out.append((a, c, new, unfolded))
    return out


@lru_cache(maxsize=200_000)
def _all_global_steps(state: AnnotatedGlobal, reliable: frozenset):
    seen = set()
    out = []
    for a, c, t, u in _steps(state.gtype, state.crashed, reliable, frozenset(), set()):
        key = (a, c, t)
        if key in seen:
            continue
        seen.add(key)
        out.append(GlobalStep(a, AnnotatedGlobal(frozenset(c), t), frozenset(u)))
    return tuple(out)


def global_steps(state: AnnotatedGlobal, reliable=frozenset(), fuel=None, unfolds=None):
    """One-step successors of ``state``.

    ``unfolds`` maps recursion variables to the number of times they were
    already unfolded on the current path; with ``fuel`` set, successors that
    would unfold a variable beyond ``fuel`` are withheld and
    :class:`FuelExhausted` is raised carrying the remaining steps.
    """
    steps = list(_all_global_steps(state, frozenset(reliable)))
    if fuel is None:
        return steps
    unfolds = unfolds or {}
    ok, over = [], set()
    for s in steps:
        spent = {v for v in s.unfolded if unfolds.get(v, 0) >= fuel}
        if spent:
            over |= spent
        else:
            ok.append(s)
    if over:
        raise FuelExhausted(ok, over)
    return ok


def bump_unfolds(unfolds: dict, step: GlobalStep) -> dict:
    if not step.unfolded:
        return unfolds
    out = dict(unfolds)
    for v in step.unfolded:
        out[v] = out.get(v, 0) + 1
    return out


# ------------------------------------------------------------ configurations


class _Unavailable:
    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "UNAVAILABLE"

    def __reduce__(self):
        return (_Unavailable, ())


UNAVAILABLE = _Unavailable()
EMPTY = ()


@dataclass(frozen=True)
class Configuration:
    """Typing context plus peer-to-peer queues.

    ``gamma`` is a sorted tuple of ``(role, local type)``; ``delta`` a sorted
    tuple of ``((sender, receiver), queue)`` for every ordered pair of distinct
    roles, where a queue is a tuple of ``(label, sort)`` or ``UNAVAILABLE``.
    """

    gamma: tuple
    delta: tuple

    @staticmethod
    def make(gamma: dict, delta: Optional[dict] = None) -> "Configuration":
        delta = delta or {}
        roles = sorted(gamma)
        queues = []
        for p in roles:
            for q in roles:
                if p != q:
                    queue = delta.get((p, q), EMPTY)
                    queues.append(((p, q), queue if queue is UNAVAILABLE else tuple(queue)))
        unknown = set(delta) - {k for k, _ in queues}
        if unknown:
            raise ValueError(f"queues for unknown role pairs: {sorted(unknown)}")
        return Configuration(tuple((r, gamma[r]) for r in roles), tuple(queues))

    @property
    def roles(self):
        return [r for r, _ in self.gamma]

    def context(self) -> dict:
        return dict(self.gamma)

    def queues(self) -> dict:
        return dict(self.delta)

    def local(self, role):
        for r, t in self.gamma:
            if r == role:
                return t
        raise KeyError(role)

    def queue(self, p, q):
        for k, v in self.delta:
            if k == (p, q):
                return v
        raise KeyError((p, q))

    def replace(self, gamma_updates=None, delta_updates=None) -> "Configuration":
        gamma = self.gamma
        delta = self.delta
        if gamma_updates:
            gamma = tuple((r, gamma_updates.get(r, t)) for r, t in gamma)
        if delta_updates:
            delta = tuple((k, delta_updates.get(k, v)) for k, v in delta)
        return Configuration(gamma, delta)

    def __str__(self):
        parts = [f"{r}: {show(t)}" for r, t in self.gamma]
        qs = []
        for (p, q), v in self.delta:
            if v is UNAVAILABLE:
                qs.append(f"{p}>{q}=#")
            elif v:
                qs.append(f"{p}>{q}=" + ".".join(lab + (f"({s})" if s else "") for lab, s in v))
        return "; ".join(parts) + (" | " + " ".join(qs) if qs else "")


def _append(queue, msg):
    if queue is UNAVAILABLE:
        return UNAVAILABLE
    return queue + (msg,)


MODES = ("all", "non-crash-of-reliable", "non-crash")


@lru_cache(maxsize=500_000)
def config_steps(c: Configuration, reliable=frozenset(), mode: str = "all"):
    """Successors of ``c``; ``mode`` restricts which crashes may happen."""
    if mode not in MODES:
        raise ValueError(mode)
    reliable = frozenset(reliable)
    gamma = c.context()
    queues = c.queues()
    out = []
    for p, t in c.gamma:
        u = unfold(t)
        if isinstance(u, LInt):
            q = u.peer
            for b in u.branches:
                out.append((Send(p, q, b.label, b.sort),
                            c.replace({p: b.cont}, {(p, q): _append(queues[(p, q)],
                                                                    (b.label, b.sort))})))
        elif isinstance(u, LExt):
            q = u.peer
            queue = queues[(q, p)]
            if queue is not UNAVAILABLE and queue:
                lab, sort = queue[0]
                b = u.branch(lab)
                if b is not None and lab != CRASH and b.sort == sort:
                    out.append((Recv(p, q, lab, sort),
                                c.replace({p: b.cont}, {(q, p): queue[1:]})))
            crash_branch = u.branch(CRASH)
            if crash_branch is not None and isinstance(gamma.get(q), LStop) and queue == EMPTY:
                out.append((CrashDetect(p, q), c.replace({p: crash_branch.cont})))
        if mode == "non-crash" or (mode == "non-crash-of-reliable" and p in reliable):
            continue
        if not isinstance(t, (LEnd, LStop)):
            into = {(r, p): UNAVAILABLE for r in gamma if r != p}
            out.append((Crash(p), c.replace({p: STOP}, into)))
    return tuple(out)


def config_step(c: Configuration, label, reliable=frozenset(), mode="all"):
    for a, c2 in config_steps(c, frozenset(reliable), mode):
        if a == label:
            return c2
    return None


def initial_configuration(g: GlobalType, roles, reliable=frozenset()) -> Configuration:
    from .projection import project
    return Configuration.make({r: project(g, r, reliable) for r in roles})


# -------------------------------------------------------------- state hashes


def state_hash(state) -> str:
    if isinstance(state, AnnotatedGlobal):
        text = ",".join(sorted(state.crashed)) + "|" + show(canonical(state.gtype))
    elif isinstance(state, Configuration):
        text = ";".join(f"{r}:{show(canonical(t))}" for r, t in state.gamma)
        text += "|" + ";".join(f"{k}:{v!r}" for k, v in state.delta)
    else:
        text = repr(state)
    return hashlib.sha1(text.encode()).hexdigest()[:12]


def is_well_annotated(state: AnnotatedGlobal, reliable) -> bool:
    return well_annotated(state.crashed, state.gtype, reliable)
