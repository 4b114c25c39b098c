"""Global and local types with crash annotations.

Both families are immutable trees. Structural equality ignores branch order
and channel annotations, and hashes are cached on first use because the
explorers hash the same (often large) trees many times.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Optional, Union

CRASH = "crash"

Annotation = Union[int, frozenset, None]


class TypeError_(Exception):
    """Raised on malformed type syntax or a violated structural invariant."""


class _Node:
    """Cached hashing/equality on top of a per-class ``_key``."""

    def _key(self):
        raise NotImplementedError

    def _cached_key(self):
        try:
            return self.__dict__["_k"]
        except KeyError:
            k = self._key()
            object.__setattr__(self, "_k", k)
            return k

    def __hash__(self):
        try:
            return self.__dict__["_h"]
        except KeyError:
            h = hash((type(self).__name__, self._cached_key()))
            object.__setattr__(self, "_h", h)
            return h

    def __eq__(self, other):
        if self is other:
            return True
        if type(self) is not type(other) or hash(self) != hash(other):
            return False
        return self._cached_key() == other._cached_key()

    def __ne__(self, other):
        return not self.__eq__(other)

    def __str__(self):
        return show(self)


@dataclass(frozen=True)
class Branch:
    label: str
    sort: Optional[str]
    cont: object


def _branch_key(branches):
    return tuple(sorted((b.label, b.sort or "", b.cont) for b in branches))


# ---------------------------------------------------------------- global types


class GlobalType(_Node):
    pass


@dataclass(frozen=True, eq=False)
class GEnd(GlobalType):
    def _key(self):
        return ()


@dataclass(frozen=True, eq=False)
class GVar(GlobalType):
    name: str

    def _key(self):
        return (self.name,)


@dataclass(frozen=True, eq=False)
class GRec(GlobalType):
    var: str
    body: GlobalType

    def _key(self):
        return (self.var, self.body)


@dataclass(frozen=True, eq=False)
class GComm(GlobalType):
    """Transmission ``p->q{...}``; the receiver may carry a crash annotation."""

    sender: str
    receiver: str
    branches: tuple
    receiver_crashed: bool = False
    ann: Annotation = field(default=None, compare=False)

    def _key(self):
        return (self.sender, self.receiver, self.receiver_crashed, _branch_key(self.branches))

    def branch(self, label):
        for b in self.branches:
            if b.label == label:
                return b
        return None

    def has_crash_branch(self):
        return self.branch(CRASH) is not None


@dataclass(frozen=True, eq=False)
class GTransit(GlobalType):
    """En-route transmission ``p~>q:l{...}``, committed to branch ``committed``."""

    sender: str
    receiver: str
    branches: tuple
    committed: str
    sender_crashed: bool = False
    ann: Annotation = field(default=None, compare=False)

    def _key(self):
        return (self.sender, self.receiver, self.committed, self.sender_crashed,
                _branch_key(self.branches))

    def branch(self, label):
        for b in self.branches:
            if b.label == label:
                return b
        return None

    def has_crash_branch(self):
        return self.branch(CRASH) is not None


# ----------------------------------------------------------------- local types


class LocalType(_Node):
    pass


@dataclass(frozen=True, eq=False)
class LEnd(LocalType):
    def _key(self):
        return ()


@dataclass(frozen=True, eq=False)
class LStop(LocalType):
    def _key(self):
        return ()


@dataclass(frozen=True, eq=False)
class LVar(LocalType):
    name: str

    def _key(self):
        return (self.name,)


@dataclass(frozen=True, eq=False)
class LRec(LocalType):
    var: str
    body: LocalType

    def _key(self):
        return (self.var, self.body)


@dataclass(frozen=True, eq=False)
class LChoice(LocalType):
    peer: str
    branches: tuple
    ann: Annotation = field(default=None, compare=False)

    def _key(self):
        return (self.peer, _branch_key(self.branches))

    def branch(self, label):
        for b in self.branches:
            if b.label == label:
                return b
        return None

    def labels(self):
        return frozenset(b.label for b in self.branches)


@dataclass(frozen=True, eq=False)
class LInt(LChoice):
    """Internal choice ``p(+){...}``: send to ``peer``."""


@dataclass(frozen=True, eq=False)
class LExt(LChoice):
    """External choice ``p&{...}``: receive from ``peer``."""


END = GEnd()
LEND = LEnd()
STOP = LStop()

Prefix = (GComm, GTransit)


# ------------------------------------------------------------------ role sets


@lru_cache(maxsize=None)
def active_roles(g: GlobalType) -> frozenset:
    if isinstance(g, GComm):
        out = {g.sender}
        if not g.receiver_crashed:
            out.add(g.receiver)
        for b in g.branches:
            out |= active_roles(b.cont)
        return frozenset(out)
    if isinstance(g, GTransit):
        out = {g.receiver}
        for b in g.branches:
            out |= active_roles(b.cont)
        return frozenset(out)
    if isinstance(g, GRec):
        return active_roles(g.body)
    return frozenset()


@lru_cache(maxsize=None)
def crashed_roles(g: GlobalType) -> frozenset:
    if isinstance(g, (GComm, GTransit)):
        out = set()
        if isinstance(g, GComm) and g.receiver_crashed:
            out.add(g.receiver)
        for b in g.branches:
            out |= crashed_roles(b.cont)
        return frozenset(out)
    if isinstance(g, GRec):
        return crashed_roles(g.body)
    return frozenset()


def roles_of(g: GlobalType) -> frozenset:
    """Every role name mentioned anywhere in ``g``."""
    out = set()
    for node in walk(g):
        if isinstance(node, (GComm, GTransit)):
            out.add(node.sender)
            out.add(node.receiver)
    return frozenset(out)


def well_annotated(crashed: Iterable[str], g: GlobalType, reliable: Iterable[str]) -> bool:
    crashed = frozenset(crashed)
    reliable = frozenset(reliable)
    cr = crashed_roles(g)
    return not (cr & reliable) and cr <= crashed and not (active_roles(g) & cr)


# ------------------------------------------------------- traversal utilities


def children(t):
    if isinstance(t, (GComm, GTransit, LChoice)):
        return [b.cont for b in t.branches]
    if isinstance(t, (GRec, LRec)):
        return [t.body]
    return []


def walk(t):
    """Pre-order iteration over the nodes of a type (no unfolding)."""
    stack = [t]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(children(node)))


def _rebuild(t, branches=None, body=None):
    if isinstance(t, GComm):
        return GComm(t.sender, t.receiver, branches, t.receiver_crashed, t.ann)
    if isinstance(t, GTransit):
        return GTransit(t.sender, t.receiver, branches, t.committed, t.sender_crashed, t.ann)
    if isinstance(t, LChoice):
        return type(t)(t.peer, branches, t.ann)
    if isinstance(t, GRec):
        return GRec(t.var, body)
    if isinstance(t, LRec):
        return LRec(t.var, body)
    return t


def map_branches(t, fn):
    return tuple(Branch(b.label, b.sort, fn(b.cont)) for b in t.branches)


@lru_cache(maxsize=None)
def free_vars(t) -> frozenset:
    if isinstance(t, (GVar, LVar)):
        return frozenset([t.name])
    if isinstance(t, (GRec, LRec)):
        return free_vars(t.body) - {t.var}
    out = frozenset()
    for c in children(t):
        out |= free_vars(c)
    return out


def substitute(t, var: str, repl):
    """Replace free occurrences of ``var`` in ``t`` by ``repl``.

    ``repl`` is always closed where this is used (unfolding closed terms), so
    no capture can happen.
    """
    if var not in free_vars(t):
        return t
    if isinstance(t, (GVar, LVar)):
        return repl if t.name == var else t
    if isinstance(t, (GRec, LRec)):
        return _rebuild(t, body=substitute(t.body, var, repl))
    return _rebuild(t, branches=map_branches(t, lambda c: substitute(c, var, repl)))


def unfold_once(t):
    if isinstance(t, (GRec, LRec)):
        return substitute(t.body, t.var, t)
    return t


def unfold(t):
    """Unfold until the head is not a recursion binder (needs contractiveness)."""
    seen = 0
    while isinstance(t, (GRec, LRec)):
        t = unfold_once(t)
        seen += 1
        if seen > 10_000:
            raise TypeError_("non-contractive recursion")
    return t


def is_contractive(t) -> bool:
    def unguarded(node, pending):
        if isinstance(node, (GVar, LVar)):
            return node.name in pending
        if isinstance(node, (GRec, LRec)):
            return unguarded(node.body, pending | {node.var})
        return False

    for node in walk(t):
        if isinstance(node, (GRec, LRec)) and unguarded(node.body, frozenset([node.var])):
            return False
    return True


def canonical(t, _env=()):
    """Rename bound variables by binder depth so alpha-equivalent types coincide."""
    if isinstance(t, (GVar, LVar)):
        for depth, name in enumerate(reversed(_env)):
            if name == t.name:
                return type(t)(f"_{len(_env) - 1 - depth}")
        return t
    if isinstance(t, (GRec, LRec)):
        env = _env + (t.var,)
        return type(t)(f"_{len(_env)}", canonical(t.body, env))
    if isinstance(t, (GComm, GTransit, LChoice)):
        return _rebuild(t, branches=map_branches(t, lambda c: canonical(c, _env)))
    return t


def strip_annotations(t):
    if isinstance(t, (GComm, GTransit, LChoice)):
        branches = map_branches(t, strip_annotations)
        if isinstance(t, GComm):
            return GComm(t.sender, t.receiver, branches, t.receiver_crashed)
        if isinstance(t, GTransit):
            return GTransit(t.sender, t.receiver, branches, t.committed, t.sender_crashed)
        return type(t)(t.peer, branches)
    if isinstance(t, (GRec, LRec)):
        return _rebuild(t, body=strip_annotations(t.body))
    return t


def equirec_equal(a, b) -> bool:
    """Bisimilarity of the infinite trees generated by two closed types."""
    assumed = set()
    todo = [(a, b)]
    while todo:
        x, y = todo.pop()
        if (x, y) in assumed:
            continue
        assumed.add((x, y))
        ux, uy = unfold(x), unfold(y)
        if type(ux) is not type(uy):
            return False
        if isinstance(ux, (LChoice,)):
            if ux.peer != uy.peer or ux.labels() != uy.labels():
                return False
            for bx in ux.branches:
                by = uy.branch(bx.label)
                if bx.sort != by.sort:
                    return False
                todo.append((bx.cont, by.cont))
        elif isinstance(ux, (GComm, GTransit)):
            if ux._cached_key()[:-1] != uy._cached_key()[:-1]:
                return False
            if {br.label for br in ux.branches} != {br.label for br in uy.branches}:
                return False
            for bx in ux.branches:
                by = uy.branch(bx.label)
                if bx.sort != by.sort:
                    return False
                todo.append((bx.cont, by.cont))
        elif isinstance(ux, (GVar, LVar)):
            if ux.name != uy.name:
                return False
    return True


def validate_global(g: GlobalType, runtime: bool = True) -> None:
    """Check the structural invariants of a global type; raise on failure."""
    for node in walk(g):
        if isinstance(node, (GComm, GTransit)):
            if node.sender == node.receiver:
                raise TypeError_(f"self-reception {node.sender}->{node.receiver}")
            _check_branches(node.branches, allow_crash_only=True)
            if not runtime and (isinstance(node, GTransit) or node.receiver_crashed):
                raise TypeError_("runtime construct in a design-time global type")
            if isinstance(node, GTransit) and node.branch(node.committed) is None:
                raise TypeError_(f"committed label {node.committed} not among branches")
    if not is_contractive(g):
        raise TypeError_("recursion is not contractive")


def _check_branches(branches, allow_crash_only=False):
    if not branches:
        raise TypeError_("empty choice")
    labels = [b.label for b in branches]
    if len(set(labels)) != len(labels):
        raise TypeError_(f"duplicate labels {labels}")
    if labels == [CRASH] and not allow_crash_only:
        raise TypeError_("crash as sole label")


# ------------------------------------------------------------------ printing


def _show_branch(b):
    payload = f"({b.sort})" if b.sort else ""
    return f"{b.label}{payload}.{show(b.cont)}"


def _show_branches(branches):
    return "{" + ", ".join(_show_branch(b) for b in branches) + "}"


def show(t) -> str:
    """ASCII rendering, re-readable by :func:`parse_type`."""
    if isinstance(t, (GEnd, LEnd)):
        return "end"
    if isinstance(t, LStop):
        return "stop"
    if isinstance(t, (GVar, LVar)):
        return t.name
    if isinstance(t, (GRec, LRec)):
        return f"mu {t.var}.{show(t.body)}"
    if isinstance(t, GComm):
        mark = "#" if t.receiver_crashed else ""
        return f"{t.sender}->{t.receiver}{mark}{_show_branches(t.branches)}"
    if isinstance(t, GTransit):
        mark = "#" if t.sender_crashed else ""
        return f"{t.sender}{mark}~>{t.receiver}:{t.committed}{_show_branches(t.branches)}"
    if isinstance(t, LInt):
        return f"{t.peer}(+){_show_branches(t.branches)}"
    if isinstance(t, LExt):
        return f"{t.peer}&{_show_branches(t.branches)}"
    raise TypeError_(f"not a type: {t!r}")


# ------------------------------------------------------------------- parsing

_TOKEN = re.compile(r"\s*(?:(->|~>|\(\+\)|[{}(),.:&#])|([A-Za-z_][A-Za-z0-9_']*))")


def _tokenize(text):
    pos, out = 0, []
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise TypeError_(f"unexpected character at offset {pos}: {text[pos:pos + 10]!r}")
        out.append(m.group(1) or m.group(2))
        pos = m.end()
    return out


class _TypeParser:
    def __init__(self, text, kind):
        self.toks = _tokenize(text)
        self.i = 0
        self.kind = kind

    def peek(self, k=0):
        j = self.i + k
        return self.toks[j] if j < len(self.toks) else None

    def take(self, expected=None):
        tok = self.peek()
        if tok is None or (expected is not None and tok != expected):
            raise TypeError_(f"expected {expected or 'token'}, got {tok!r}")
        self.i += 1
        return tok

    def ident(self):
        tok = self.take()
        if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_']*", tok):
            raise TypeError_(f"expected identifier, got {tok!r}")
        return tok

    def parse(self):
        t = self.term()
        if self.peek() is not None:
            raise TypeError_(f"trailing input at {self.peek()!r}")
        return t

    def term(self):
        local = self.kind == "local"
        tok = self.ident()
        if tok == "end":
            return LEND if local else END
        if tok == "stop" and local:
            return STOP
        if tok == "mu":
            var = self.ident()
            self.take(".")
            body = self.term()
            return LRec(var, body) if local else GRec(var, body)
        nxt = self.peek()
        if local:
            if nxt == "(+)":
                self.take()
                return LInt(tok, self.branches())
            if nxt == "&":
                self.take()
                return LExt(tok, self.branches())
            return LVar(tok)
        sender_crashed = False
        if nxt == "#":
            self.take()
            sender_crashed = True
            nxt = self.peek()
        if nxt == "->":
            self.take()
            receiver = self.ident()
            crashed = False
            if self.peek() == "#":
                self.take()
                crashed = True
            if sender_crashed:
                raise TypeError_("a transmission cannot have a crashed sender")
            return GComm(tok, receiver, self.branches(), crashed)
        if nxt == "~>":
            self.take()
            receiver = self.ident()
            self.take(":")
            committed = self.ident()
            return GTransit(tok, receiver, self.branches(), committed, sender_crashed)
        if sender_crashed:
            raise TypeError_("dangling crash mark")
        return GVar(tok)

    def branches(self):
        if self.peek() == ":":
            self.take()
            return (self.branch(),)
        self.take("{")
        out = [self.branch()]
        while self.peek() == ",":
            self.take()
            out.append(self.branch())
        self.take("}")
        return tuple(out)

    def branch(self):
        label = self.ident()
        sort = None
        if self.peek() == "(":
            self.take()
            sort = self.ident()
            self.take(")")
        if self.peek() == ".":
            self.take()
            cont = self.term()
        else:
            cont = LEND if self.kind == "local" else END
        return Branch(label, sort, cont)


def parse_type(text: str, kind: str = "local"):
    """Parse the ASCII notation produced by :func:`show`.

    ``kind`` is ``"local"`` or ``"global"``. A branch without a continuation
    (``crash`` alone) stands for ``crash.end``.
    """
    if kind not in ("local", "global"):
        raise ValueError(kind)
    return _TypeParser(text, kind).parse()


def parse_local(text: str) -> LocalType:
    t = parse_type(text, "local")
    validate_local(t)
    return t


def validate_local(t: LocalType) -> None:
    """Internal choices never offer ``crash``; choices are non-empty with distinct labels."""
    for node in walk(t):
        if isinstance(node, LChoice):
            _check_branches(node.branches, allow_crash_only=True)
            if isinstance(node, LInt) and node.branch(CRASH) is not None:
                raise TypeError_(f"internal choice towards {node.peer} offers crash")
    if not is_contractive(t):
        raise TypeError_("recursion is not contractive")


def parse_global(text: str) -> GlobalType:
    return parse_type(text, "global")


# ------------------------------------------------------------- JSON encoding


def to_json(t):
    if isinstance(t, (GEnd, LEnd)):
        return {"kind": "end"}
    if isinstance(t, LStop):
        return {"kind": "stop"}
    if isinstance(t, (GVar, LVar)):
        return {"kind": "var", "name": t.name}
    if isinstance(t, (GRec, LRec)):
        return {"kind": "rec", "var": t.var, "body": to_json(t.body)}
    branches = [{"label": b.label, "sort": b.sort, "cont": to_json(b.cont)} for b in t.branches]
    if isinstance(t, GComm):
        return {"kind": "comm", "sender": t.sender, "receiver": t.receiver,
                "receiver_crashed": t.receiver_crashed, "branches": branches}
    if isinstance(t, GTransit):
        return {"kind": "transit", "sender": t.sender, "receiver": t.receiver,
                "sender_crashed": t.sender_crashed, "committed": t.committed,
                "branches": branches}
    out = {"kind": "internal" if isinstance(t, LInt) else "external", "peer": t.peer,
           "branches": branches}
    if t.ann is not None:
        out["annotation"] = sorted(t.ann) if isinstance(t.ann, frozenset) else t.ann
    return out
