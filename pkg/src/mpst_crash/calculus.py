"""Asynchronous session calculus with crash-stop failures.

Processes live in sessions ``p: P | h`` where ``h`` is p's incoming queue of
``(origin, label, value)`` messages, or ``UNAVAILABLE`` once p has crashed.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

from .mpst_core import (CRASH, LEND, STOP, Branch, LEnd, LExt, LInt, LRec, LStop, LVar,
                        TypeError_, is_contractive, roles_of, show)
from .semantics import (EMPTY, UNAVAILABLE, AnnotatedGlobal, Configuration, Crash, CrashDetect,
                        Recv, Send, global_steps)
from .subtyping import is_subtype
from .verify import check_association


class ProcessTypeError(TypeError_):
    pass


# ---------------------------------------------------------------- expressions


@dataclass(frozen=True)
class Val:
    """A runtime value tagged with its sort (``None`` sort is the unit value)."""

    sort: Optional[str]
    v: object

    def __str__(self):
        if self.sort is None:
            return "()"
        if isinstance(self.v, str):
            return repr(self.v)
        return str(self.v).lower() if isinstance(self.v, bool) else str(self.v)


UNIT = Val(None, None)


@dataclass(frozen=True)
class Lit:
    val: Val


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Not:
    arg: object


_ARITH = {"+": lambda a, b: a + b, "-": lambda a, b: a - b, "*": lambda a, b: a * b}
_CMP = {"<": lambda a, b: a < b, "<=": lambda a, b: a <= b, "==": lambda a, b: a == b,
        "!=": lambda a, b: a != b}
_LOGIC = {"&&": lambda a, b: a and b, "||": lambda a, b: a or b}
_NUMERIC = {"Int", "Real"}


def expr_sort(e, theta) -> Optional[str]:
    """Sort of ``e`` under variable sorts ``theta``; raises :class:`ProcessTypeError`."""
    if isinstance(e, Lit):
        return e.val.sort
    if isinstance(e, Var):
        if e.name not in theta:
            raise ProcessTypeError(f"unbound variable {e.name}")
        return theta[e.name]
    if isinstance(e, Not):
        if expr_sort(e.arg, theta) != "Bool":
            raise ProcessTypeError("negation of a non-boolean")
        return "Bool"
    if isinstance(e, BinOp):
        a, b = expr_sort(e.left, theta), expr_sort(e.right, theta)
        if a != b:
            raise ProcessTypeError(f"operands of {e.op} have sorts {a} and {b}")
        if e.op in _ARITH:
            if a not in _NUMERIC and not (e.op == "+" and a == "String"):
                raise ProcessTypeError(f"{e.op} on {a}")
            return a
        if e.op in _CMP:
            return "Bool"
        if e.op in _LOGIC:
            if a != "Bool":
                raise ProcessTypeError(f"{e.op} on {a}")
            return "Bool"
        raise ProcessTypeError(f"unknown operator {e.op}")
    raise ProcessTypeError(f"not an expression: {e!r}")


def evaluate(e) -> Val:
    """Evaluate a closed expression."""
    if isinstance(e, Lit):
        return e.val
    if isinstance(e, Not):
        return Val("Bool", not evaluate(e.arg).v)
    if isinstance(e, BinOp):
        a, b = evaluate(e.left), evaluate(e.right)
        if e.op in _ARITH:
            return Val(a.sort, _ARITH[e.op](a.v, b.v))
        if e.op in _CMP:
            return Val("Bool", _CMP[e.op](a.v, b.v))
        return Val("Bool", _LOGIC[e.op](a.v, b.v))
    raise ValueError(f"cannot evaluate open expression {e!r}")


def _subst_expr(e, x, val):
    if isinstance(e, Var):
        return Lit(val) if e.name == x else e
    if isinstance(e, BinOp):
        return BinOp(e.op, _subst_expr(e.left, x, val), _subst_expr(e.right, x, val))
    if isinstance(e, Not):
        return Not(_subst_expr(e.arg, x, val))
    return e


def show_expr(e):
    if isinstance(e, Lit):
        return str(e.val)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Not):
        return f"!{show_expr(e.arg)}"
    return f"({show_expr(e.left)} {e.op} {show_expr(e.right)})"


# ------------------------------------------------------------------ processes


@dataclass(frozen=True)
class Inact:
    pass


@dataclass(frozen=True)
class Crashed:
    pass


@dataclass(frozen=True)
class VarP:
    name: str


@dataclass(frozen=True)
class RecP:
    var: str
    body: object


@dataclass(frozen=True)
class Output:
    peer: str
    label: str
    expr: object
    cont: object

    def __post_init__(self):
        if self.label == CRASH:
            raise ProcessTypeError("an output cannot carry the crash label")


@dataclass(frozen=True)
class InBranch:
    label: str
    var: Optional[str]
    sort: Optional[str]
    body: object


@dataclass(frozen=True)
class ExtChoice:
    peer: str
    branches: tuple

    def branch(self, label):
        for b in self.branches:
            if b.label == label:
                return b
        return None


@dataclass(frozen=True)
class If:
    cond: object
    then: object
    else_: object


INACT = Inact()
CRASHED = Crashed()


def subst_value(p, x, val):
    """Replace free occurrences of the expression variable ``x`` by ``val``."""
    if isinstance(p, Output):
        return Output(p.peer, p.label, _subst_expr(p.expr, x, val), subst_value(p.cont, x, val))
    if isinstance(p, ExtChoice):
        return ExtChoice(p.peer, tuple(
            b if b.var == x else InBranch(b.label, b.var, b.sort, subst_value(b.body, x, val))
            for b in p.branches))
    if isinstance(p, If):
        return If(_subst_expr(p.cond, x, val), subst_value(p.then, x, val),
                  subst_value(p.else_, x, val))
    if isinstance(p, RecP):
        return RecP(p.var, subst_value(p.body, x, val))
    return p


def subst_process(p, name, q):
    """Replace the free process variable ``name`` by ``q``."""
    if isinstance(p, VarP):
        return q if p.name == name else p
    if isinstance(p, RecP):
        return p if p.var == name else RecP(p.var, subst_process(p.body, name, q))
    if isinstance(p, Output):
        return Output(p.peer, p.label, p.expr, subst_process(p.cont, name, q))
    if isinstance(p, ExtChoice):
        return ExtChoice(p.peer, tuple(InBranch(b.label, b.var, b.sort,
                                                subst_process(b.body, name, q))
                                       for b in p.branches))
    if isinstance(p, If):
        return If(p.cond, subst_process(p.then, name, q), subst_process(p.else_, name, q))
    return p


def unfold_process(p):
    seen = 0
    while isinstance(p, RecP):
        p = subst_process(p.body, p.var, p)
        seen += 1
        if seen > 1000:
            raise ProcessTypeError("unguarded recursion")
    return p


def show_process(p) -> str:
    if isinstance(p, Inact):
        return "0"
    if isinstance(p, Crashed):
        return "#"
    if isinstance(p, VarP):
        return p.name
    if isinstance(p, RecP):
        return f"mu {p.var}.{show_process(p.body)}"
    if isinstance(p, Output):
        payload = "" if p.expr == Lit(UNIT) else f"({show_expr(p.expr)})"
        return f"{p.peer}!{p.label}{payload}.{show_process(p.cont)}"
    if isinstance(p, ExtChoice):
        parts = []
        for b in p.branches:
            binder = f"({b.var}:{b.sort})" if b.var else ""
            parts.append(f"{p.peer}?{b.label}{binder}.{show_process(b.body)}")
        return "(" + " + ".join(parts) + ")"
    if isinstance(p, If):
        return f"if {show_expr(p.cond)} then {show_process(p.then)} else {show_process(p.else_)}"
    raise TypeError(p)


# ------------------------------------------------------------------- sessions


@dataclass(frozen=True)
class Tau:
    """Internal step of a conditional at role ``p``."""

    p: str

    def __str__(self):
        return f"{self.p}:tau"


@dataclass(frozen=True)
class Session:
    """Sorted tuple of ``(role, process, incoming queue)`` entries."""

    entries: tuple

    @staticmethod
    def make(parts: dict) -> "Session":
        """``parts`` maps role to ``process`` or ``(process, queue)``."""
        entries = []
        for role, v in parts.items():
            proc, queue = v if isinstance(v, tuple) else (v, EMPTY)
            if queue is not UNAVAILABLE:
                queue = tuple(queue)
            entries.append((role, proc, queue))
        roles = [r for r, _, _ in entries]
        if len(set(roles)) != len(roles):
            raise ValueError("duplicate roles in session")
        return Session(tuple(sorted(entries, key=lambda e: e[0])))

    def get(self, role):
        for r, p, h in self.entries:
            if r == role:
                return p, h
        return INACT, EMPTY

    @property
    def roles(self):
        return [r for r, _, _ in self.entries]

    def update(self, changes: dict) -> "Session":
        parts = {r: (p, h) for r, p, h in self.entries}
        parts.update(changes)
        return Session.make(parts)

    def __str__(self):
        out = []
        for r, p, h in self.entries:
            if h is UNAVAILABLE:
                q = "#"
            else:
                q = ".".join(f"({o},{lab}({v}))" for o, lab, v in h) or "e"
            out.append(f"{r}: {show_process(p)} | {q}")
        return " || ".join(out)


def _canon_queue(h):
    if h is UNAVAILABLE:
        return h
    return tuple(sorted(h, key=lambda m: m[0]))  # stable: per-origin order kept


def congruence_normalize(m: Session) -> Session:
    """Canonical representative up to structural congruence."""
    entries = []
    for r, p, h in m.entries:
        h = _canon_queue(h)
        if isinstance(p, Inact) and h == EMPTY:
            continue
        entries.append((r, p, h))
    return Session(tuple(sorted(entries, key=lambda e: e[0])))


def _first_from(h, q):
    for i, (origin, lab, v) in enumerate(h):
        if origin == q:
            return i
    return None


def session_steps(m: Session, reliable=frozenset()):
    """All one-step reductions of ``m`` as ``(label, normalized session)``."""
    return _session_steps(m, frozenset(reliable))


@lru_cache(maxsize=200_000)
def _session_steps(m: Session, reliable: frozenset):
    m = congruence_normalize(m)
    out = []
    for p, proc, h in m.entries:
        body = unfold_process(proc)
        if isinstance(body, Output):
            val = evaluate(body.expr)
            label = Send(p, body.peer, body.label, val.sort)
            qproc, qh = m.get(body.peer)
            if qh is UNAVAILABLE:
                nxt = m.update({p: (body.cont, h)})
            else:
                nxt = m.update({p: (body.cont, h), body.peer: (qproc, qh + ((p, body.label, val),))})
            out.append((label, congruence_normalize(nxt)))
        elif isinstance(body, ExtChoice) and h is not UNAVAILABLE:
            q = body.peer
            i = _first_from(h, q)
            if i is not None:
                _, lab, val = h[i]
                b = body.branch(lab)
                if b is not None and lab != CRASH:
                    cont = subst_value(b.body, b.var, val) if b.var else b.body
                    nxt = m.update({p: (cont, h[:i] + h[i + 1:])})
                    out.append((Recv(p, q, lab, val.sort), congruence_normalize(nxt)))
            else:
                qproc, qh = m.get(q)
                b = body.branch(CRASH)
                if b is not None and isinstance(qproc, Crashed) and qh is UNAVAILABLE:
                    out.append((CrashDetect(p, q), congruence_normalize(m.update({p: (b.body, h)}))))
        elif isinstance(body, If):
            cond = evaluate(body.cond)
            nxt = m.update({p: (body.then if cond.v else body.else_, h)})
            out.append((Tau(p), congruence_normalize(nxt)))
        if p not in reliable and not isinstance(proc, (Inact, Crashed)):
            out.append((Crash(p), congruence_normalize(m.update({p: (CRASHED, UNAVAILABLE)}))))
    return tuple(out)


class ScheduleMismatch(Exception):
    def __init__(self, index, label, enabled):
        self.index = index
        self.label = label
        self.enabled = list(enabled)
        super().__init__(f"step {index}: {label} not enabled; enabled: "
                         f"{', '.join(map(str, self.enabled)) or 'none'}")


def run_schedule(m: Session, reliable, schedule) -> Session:
    m = congruence_normalize(m)
    for i, label in enumerate(schedule):
        steps = session_steps(m, frozenset(reliable))
        for a, nxt in steps:
            if a == label:
                m = nxt
                break
        else:
            raise ScheduleMismatch(i, label, [a for a, _ in steps])
    return m


def is_stuck_ok(m: Session) -> bool:
    """Whether ``m`` is congruent to a parallel of ``(0, e)`` and ``(#, unavailable)`` entries."""
    for _, p, h in congruence_normalize(m).entries:
        if isinstance(p, Inact) and h == EMPTY:
            continue
        if isinstance(p, Crashed) and h is UNAVAILABLE:
            continue
        return False
    return True


# --------------------------------------------------------------------- typing


def _join(a, b):
    """Least common supertype used for the two arms of a conditional."""
    if a == b:
        return a
    if isinstance(a, LInt) and isinstance(b, LInt) and a.peer == b.peer:
        out = {br.label: br for br in a.branches}
        for br in b.branches:
            if br.label in out:
                old = out[br.label]
                if old.sort != br.sort:
                    raise ProcessTypeError(f"payload of {br.label}: {old.sort} vs {br.sort}")
                out[br.label] = Branch(br.label, br.sort, _join(old.cont, br.cont))
            else:
                out[br.label] = br
        return LInt(a.peer, tuple(out.values()))
    if isinstance(a, LExt) and isinstance(b, LExt) and a.peer == b.peer:
        common = [br for br in a.branches if b.branch(br.label) is not None]
        if not common:
            raise ProcessTypeError("conditional arms accept disjoint labels")
        return LExt(a.peer, tuple(Branch(br.label, br.sort, _join(br.cont, b.branch(br.label).cont))
                                  for br in common))
    raise ProcessTypeError(f"conditional arms have incompatible types {show(a)} and {show(b)}")


def _guarded(p, var):
    """Whether every occurrence of ``var`` in ``p`` sits under an input or output."""
    if isinstance(p, VarP):
        return p.name != var
    if isinstance(p, RecP):
        return p.var == var or _guarded(p.body, var)
    if isinstance(p, If):
        return _guarded(p.then, var) and _guarded(p.else_, var)
    return True


def _synth(theta, p):
    if isinstance(p, Inact):
        return LEND
    if isinstance(p, Crashed):
        return STOP
    if isinstance(p, VarP):
        if p.name not in theta:
            raise ProcessTypeError(f"unbound process variable {p.name}")
        return theta[p.name]
    if isinstance(p, RecP):
        if not _guarded(p.body, p.var):
            raise ProcessTypeError(f"unguarded recursion on {p.var}")
        tvar = f"t_{p.var}"
        t = LRec(tvar, _synth({**theta, p.var: LVar(tvar)}, p.body))
        if not is_contractive(t):
            raise ProcessTypeError(f"unguarded recursion on {p.var}")
        return t
    if isinstance(p, Output):
        if p.label == CRASH:
            raise ProcessTypeError("an output cannot carry the crash label")
        sort = expr_sort(p.expr, theta)
        return LInt(p.peer, (Branch(p.label, sort, _synth(theta, p.cont)),))
    if isinstance(p, ExtChoice):
        branches = []
        for b in p.branches:
            inner = {**theta, b.var: b.sort} if b.var else theta
            branches.append(Branch(b.label, b.sort, _synth(inner, b.body)))
        return LExt(p.peer, tuple(branches))
    if isinstance(p, If):
        if expr_sort(p.cond, theta) != "Bool":
            raise ProcessTypeError("condition is not boolean")
        return _join(_synth(theta, p.then), _synth(theta, p.else_))
    raise ProcessTypeError(f"not a process: {p!r}")


@lru_cache(maxsize=200_000)
def _synth_closed(p):
    return _synth({}, p)


def typecheck_process(theta, p):
    """Minimal local type of ``p``; ``theta`` maps variables to sorts or local types."""
    if not theta:
        return _synth_closed(p)
    return _synth(dict(theta), p)


def check_process(p, expected) -> bool:
    """``p`` has type ``expected`` (minimal type plus subsumption)."""
    return is_subtype(typecheck_process({}, p), expected)


@dataclass
class TypingResult:
    ok: bool
    message: str = ""
    config: Optional[Configuration] = None

    def __bool__(self):
        return self.ok


def session_configuration(m: Session, roles=()) -> Configuration:
    """Configuration synthesized from a session (minimal types and queue contents)."""
    parts = {r: (p, h) for r, p, h in m.entries}
    for r in roles:
        parts.setdefault(r, (INACT, EMPTY))
    gamma = {r: typecheck_process({}, p) for r, (p, _) in parts.items()}
    delta = {}
    for q, (_, h) in parts.items():
        for p in parts:
            if p == q:
                continue
            if h is UNAVAILABLE:
                delta[(p, q)] = UNAVAILABLE
            else:
                delta[(p, q)] = tuple((lab, v.sort) for o, lab, v in h if o == p)
    return Configuration.make(gamma, delta)


def typecheck_session(state: AnnotatedGlobal, m: Session, reliable=frozenset()) -> TypingResult:
    roles = set(roles_of(state.gtype)) | set(state.crashed)
    for r, p, _ in m.entries:
        try:
            typecheck_process({}, p)
        except ProcessTypeError as exc:
            return TypingResult(False, f"role {r}: {exc}")
    c = session_configuration(m, roles)
    res = check_association(state, c, frozenset(reliable))
    if not res:
        return TypingResult(False, f"not typable by synthesis: {res.clause} {res.detail}", c)
    return TypingResult(True, "", c)


# ------------------------------------------------------- synthesis from types


def default_value(sort) -> Val:
    if sort is None:
        return UNIT
    defaults = {"Int": 0, "Bool": True, "String": "s", "Real": 0.0}
    return Val(sort, defaults.get(sort, f"{sort.lower()}0"))


def process_from_type(t, rng: Optional[random.Random] = None):
    """A process whose minimal type is ``t``; internal choices become seeded conditionals."""
    rng = rng or random.Random(0)

    def go(t):
        if isinstance(t, LEnd):
            return INACT
        if isinstance(t, LStop):
            return CRASHED
        if isinstance(t, LVar):
            return VarP(t.name.upper())
        if isinstance(t, LRec):
            return RecP(t.var.upper(), go(t.body))
        if isinstance(t, LInt):
            outs = [Output(t.peer, b.label, Lit(default_value(b.sort)), go(b.cont))
                    for b in t.branches]
            proc = outs[-1]
            for o in reversed(outs[:-1]):
                proc = If(Lit(Val("Bool", rng.random() < 0.5)), o, proc)
            return proc
        if isinstance(t, LExt):
            branches = []
            for i, b in enumerate(t.branches):
                var = None if b.sort is None or b.label == CRASH else f"x{i}"
                branches.append(InBranch(b.label, var, b.sort if var else None, go(b.cont)))
            return ExtChoice(t.peer, tuple(branches))
        raise TypeError(t)

    return go(t)


def session_from_global(g, roles, reliable=frozenset(), rng=None) -> Session:
    from .projection import project
    rng = rng or random.Random(0)
    return Session.make({r: process_from_type(project(g, r, reliable), rng) for r in roles})


# ----------------------------------------------------------------- fuzz harness


@dataclass
class FuzzFailure:
    kind: str  # subject-reduction | deadlock
    seed: int
    schedule: list
    session: str
    message: str


@dataclass
class FuzzReport:
    runs: int = 0
    steps: int = 0
    stuck: int = 0
    failures: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.failures


def random_run(g, roles, reliable, seed, crash_rate=0.1, horizon=50, check_types=True,
               max_candidates=64):
    """One seeded random schedule; returns ``(steps, stuck, failure or None)``."""
    reliable = frozenset(reliable)
    rng = random.Random(seed)
    m = congruence_normalize(session_from_global(g, roles, reliable, rng))
    candidates = {AnnotatedGlobal(frozenset(), g)}
    schedule = []
    for step in range(horizon):
        succ = session_steps(m, reliable)
        if not succ:
            if not is_stuck_ok(m):
                return step, True, FuzzFailure("deadlock", seed, schedule, str(m),
                                               "stuck session with live entries")
            return step, True, None
        crashes = [s for s in succ if isinstance(s[0], Crash)]
        others = [s for s in succ if not isinstance(s[0], Crash)]
        chosen = None
        for s in rng.sample(crashes, len(crashes)):
            if rng.random() < crash_rate:
                chosen = s
                break
        if chosen is None:
            chosen = rng.choice(others) if others else rng.choice(crashes)
        label, m = chosen
        schedule.append(label)
        if not isinstance(label, Tau):
            nxt = set()
            for s in candidates:
                for st in global_steps(s, reliable):
                    if st.label == label:
                        nxt.add(st.target)
            candidates = nxt
        if check_types:
            typed = {s for s in candidates if typecheck_session(s, m, reliable)}
            if not typed:
                why = "no global step with this label" if not candidates else \
                    typecheck_session(next(iter(candidates)), m, reliable).message
                return step + 1, False, FuzzFailure("subject-reduction", seed, schedule, str(m),
                                                    f"after {label}: {why}")
            candidates = set(sorted(typed, key=str)[:max_candidates])
    return horizon, False, None


def fuzz(g, roles, reliable=frozenset(), runs=1000, seed=0, crash_rate=0.1, horizon=50,
         check_types=True) -> FuzzReport:
    report = FuzzReport()
    for i in range(runs):
        steps, stuck, failure = random_run(g, roles, reliable, seed * 1_000_003 + i, crash_rate,
                                           horizon, check_types)
        report.runs += 1
        report.steps += steps
        report.stuck += stuck
        if failure:
            report.failures.append(failure)
    return report
