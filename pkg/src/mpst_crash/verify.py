"""Association checking and bounded verification of configurations.

Everything here works on explicit, bounded state spaces: queues are capped at
``queue_bound`` messages (a send beyond the cap marks its source state as a
truncation frontier) and each recursion binder of the global type may be
unfolded at most ``fuel`` times along an exploration path.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import networkx as nx

from .mpst_core import (CRASH, GComm, GEnd, GRec, GTransit, GVar, LEnd, LExt, LInt, LStop,
                        STOP, active_roles, roles_of, show, unfold)
from .projection import ProjectionUndefined, project
from .semantics import (EMPTY, UNAVAILABLE, AnnotatedGlobal, Configuration, Crash,
                        CrashDetect, FuelExhausted, Recv, RemovalUndefined, Send, bump_unfolds,
                        config_step, config_steps, global_steps, is_well_annotated)
from .subtyping import check_subtype, is_subtype


@dataclass(frozen=True)
class Bounds:
    fuel: int = 2
    queue_bound: int = 1
    max_states: int = 500_000


# ---------------------------------------------------------------- association


@dataclass(frozen=True)
class AssociationResult:
    ok: bool
    clause: Optional[str] = None
    detail: str = ""
    live: tuple = ()     # roles typed by projections of the global type
    crashed: tuple = ()  # roles typed stop
    ended: tuple = ()    # remaining roles, typed end

    def __bool__(self):
        return self.ok


def _fail(clause, detail):
    return AssociationResult(False, clause, detail)


@lru_cache(maxsize=500_000)
def check_association(state: AnnotatedGlobal, c: Configuration, reliable=frozenset()):
    """Decide whether ``c`` is associated with ``state``; see :class:`AssociationResult`."""
    reliable = frozenset(reliable)
    g, crashed = state.gtype, state.crashed
    gamma = c.context()
    queues = c.queues()
    act = active_roles(g)
    for p in sorted(act):
        if p not in gamma:
            return _fail("A1", f"active role {p} has no entry in the context")
        try:
            proj = project(g, p, reliable)
        except (ProjectionUndefined, RemovalUndefined) as exc:
            return _fail("A1", f"projection onto {p} undefined: {exc}")
        if not is_subtype(gamma[p], proj):
            _, path = check_subtype(gamma[p], proj)
            return _fail("A1", f"{p}: {show(gamma[p])} is not a subtype of {show(proj)} "
                               f"({'; '.join(path)})")
    for p in sorted(crashed):
        if p not in gamma:
            return _fail("A2", f"crashed role {p} has no entry in the context")
        if not isinstance(gamma[p], LStop):
            return _fail("A2", f"crashed role {p} is typed {show(gamma[p])}, not stop")
    ended = sorted(set(gamma) - act - crashed)
    for p in ended:
        if not isinstance(gamma[p], LEnd):
            return _fail("A3", f"role {p} is neither active nor crashed but typed "
                               f"{show(gamma[p])}")
    for q in gamma:
        into = [queues[(p, q)] for p in gamma if p != q]
        unavailable = all(v is UNAVAILABLE for v in into)
        if (q in crashed) != unavailable and into:
            return _fail("A4(a)", f"queues into {q} unavailable={unavailable} "
                                  f"but crashed={q in crashed}")
    err = _queues_associated(g, c.delta, crashed)
    if err:
        return _fail(*err)
    return AssociationResult(True, live=tuple(sorted(act)), crashed=tuple(sorted(crashed)),
                             ended=tuple(ended))


@lru_cache(maxsize=500_000)
def _queues_associated(g, delta, crashed):
    queues = dict(delta)
    if isinstance(g, (GEnd, GRec, GVar)):
        for (p, q), v in delta:
            if q not in crashed and v != EMPTY:
                return "A4(b)", f"queue {p}->{q} should be empty at {show(g)[:60]}"
        return None
    if isinstance(g, GComm) or (isinstance(g, GTransit) and g.committed == CRASH):
        receiver_live = not (isinstance(g, GComm) and g.receiver_crashed)
        if receiver_live and queues.get((g.sender, g.receiver), EMPTY) != EMPTY:
            return "A4(c)", f"queue {g.sender}->{g.receiver} should be empty"
        for b in g.branches:
            err = _queues_associated(b.cont, delta, crashed)
            if err:
                return err
        return None
    j = g.branch(g.committed)
    key = (g.sender, g.receiver)
    queue = queues.get(key, EMPTY)
    if queue is UNAVAILABLE or not queue or queue[0] != (j.label, j.sort):
        return "A4(d)", f"queue {g.sender}->{g.receiver} should start with {j.label}"
    rest = tuple((k, queue[1:] if k == key else v) for k, v in delta)
    for b in g.branches:
        err = _queues_associated(b.cont, rest, crashed)
        if err:
            return err
    return None


# -------------------------------------------------------------------- reports


@dataclass
class VerificationReport:
    property: str
    verdict: str  # holds | violated | truncated
    trace: list = field(default_factory=list)
    cycle: list = field(default_factory=list)
    explored: int = 0
    frontier: int = 0
    message: str = ""

    @property
    def holds(self):
        return self.verdict == "holds"

    def to_json(self):
        return {
            "property": self.property,
            "verdict": self.verdict,
            "trace": [str(a) for a in self.trace],
            "cycle": [str(a) for a in self.cycle],
            "explored": self.explored,
            "frontier": self.frontier,
            "message": self.message,
        }


def _trace(parents, key):
    out = []
    while parents.get(key) is not None:
        key, label = parents[key]
        out.append(label)
    out.reverse()
    return out


# ----------------------------------------------------------------- exploration


@dataclass
class ConfigGraph:
    """Reachable configurations under crashes of unreliable roles only."""

    states: list
    index: dict
    edges: list        # (src, label, dst)
    parents: dict      # state index -> (parent index, label) or None
    frontier: set      # states with a send cut off by the queue bound
    complete: bool

    def trace_to(self, i):
        return _trace(self.parents, i)


def _over_bound(c: Configuration, label, bound):
    if not isinstance(label, Send):
        return False
    queue = c.queue(label.p, label.q)
    return queue is not UNAVAILABLE and len(queue) >= bound


def explore_configurations(c0: Configuration, reliable=frozenset(), bounds=Bounds()) -> ConfigGraph:
    reliable = frozenset(reliable)
    states = [c0]
    index = {c0: 0}
    parents = {0: None}
    edges = []
    frontier = set()
    todo = deque([0])
    complete = True
    while todo:
        i = todo.popleft()
        c = states[i]
        for label, c2 in config_steps(c, reliable, "non-crash-of-reliable"):
            if _over_bound(c, label, bounds.queue_bound):
                frontier.add(i)
                continue
            j = index.get(c2)
            if j is None:
                if len(states) >= bounds.max_states:
                    complete = False
                    frontier.add(i)
                    continue
                j = len(states)
                states.append(c2)
                index[c2] = j
                parents[j] = (i, label)
                todo.append(j)
            edges.append((i, label, j))
    return ConfigGraph(states, index, edges, parents, frontier, complete)


def _finish(report, graph):
    report.explored = len(graph.states)
    report.frontier = len(graph.frontier)
    if report.verdict == "holds" and not graph.complete:
        report.verdict = "truncated"
        report.message = "state limit reached"
    return report


# --------------------------------------------------------------------- safety


def safety_violation(c: Configuration) -> Optional[str]:
    """Name the first failing safety clause at ``c`` (after unfolding), if any."""
    gamma = c.context()
    for p, t in c.gamma:
        u = unfold(t)
        if not isinstance(u, LExt):
            continue
        q = u.peer
        queue = c.queue(q, p) if q in gamma else EMPTY
        if queue is not UNAVAILABLE and queue:
            lab, sort = queue[0]
            b = u.branch(lab)
            if b is None or lab == CRASH or b.sort != sort:
                return f"S-in: {p} cannot receive {lab} from {q}"
        if q in gamma and isinstance(gamma[q], LStop) and queue == EMPTY \
                and u.branch(CRASH) is None:
            return f"S-crash: {p} waits on crashed {q} without a crash branch"
    return None


def check_safety(c: Configuration, reliable=frozenset(), bounds=Bounds(), graph=None):
    graph = graph or explore_configurations(c, reliable, bounds)
    for i, state in enumerate(graph.states):
        why = safety_violation(state)
        if why:
            return _finish(VerificationReport("safety", "violated", graph.trace_to(i),
                                              message=why), graph)
    return _finish(VerificationReport("safety", "holds"), graph)


# ------------------------------------------------------------ deadlock freedom


def terminal_ok(c: Configuration) -> Optional[str]:
    gamma = c.context()
    for p, t in c.gamma:
        if not isinstance(t, (LEnd, LStop)):
            return f"{p} is stuck at {show(t)}"
    for (p, q), v in c.delta:
        if isinstance(gamma[q], LStop):
            if v is not UNAVAILABLE:
                return f"queue {p}->{q} into crashed {q} is available"
        elif v != EMPTY:
            return f"queue {p}->{q} is not empty"
    return None


def check_deadlock_freedom(c: Configuration, reliable=frozenset(), bounds=Bounds(), graph=None):
    graph = graph or explore_configurations(c, reliable, bounds)
    safety = check_safety(c, reliable, bounds, graph)
    if safety.verdict == "violated":
        safety.property = "deadlock-freedom"
        return safety
    has_succ = {src for src, _, _ in graph.edges}
    for i, state in enumerate(graph.states):
        if i in has_succ or i in graph.frontier:
            continue
        why = terminal_ok(state)
        if why:
            return _finish(VerificationReport("deadlock-freedom", "violated", graph.trace_to(i),
                                              message=why), graph)
    return _finish(VerificationReport("deadlock-freedom", "holds"), graph)


# ------------------------------------------------------------------- liveness


def _action(label):
    """Fairness action key of a non-crash label."""
    if isinstance(label, Send):
        return ("send", label.p, label.q)
    if isinstance(label, Recv):
        return ("recv", label.p, label.q, label.label)
    if isinstance(label, CrashDetect):
        return ("detect", label.p, label.q)
    return None


def obligations(c: Configuration):
    """Pending liveness obligations of ``c``.

    ``("consume", q, p, l)``: the head message ``l`` of queue p->q must be
    received by q. ``("pending", p, q)``: p waits on an external choice from q.
    """
    out = set()
    for (p, q), v in c.delta:
        if v is not UNAVAILABLE and v and v[0][0] != CRASH:
            out.add(("consume", q, p, v[0][0]))
    for p, t in c.gamma:
        u = unfold(t)
        if isinstance(u, LExt):
            out.add(("pending", p, u.peer))
    return out


def _serves(ob, action):
    if action is None:
        return False
    if ob[0] == "consume":
        return action == ("recv", ob[1], ob[2], ob[3])
    return action[0] in ("recv", "detect") and action[1] == ob[1] and action[2] == ob[2]


def _fair_components(nodes, succ, enabled, taken_label):
    """Non-trivial SCCs of the subgraph on ``nodes`` admitting a fair cycle.

    ``enabled[s]`` is the set of fairness actions enabled at ``s``. Each
    action, once enabled, stays enabled until taken, so a cycle is fair iff
    every action enabled somewhere on it is also taken on it.
    """
    work = [set(nodes)]
    found = []
    while work:
        part = work.pop()
        g = nx.DiGraph()
        g.add_nodes_from(part)
        for s in part:
            for label, t in succ[s]:
                if t in part:
                    g.add_edge(s, t)
        for comp in nx.strongly_connected_components(g):
            if len(comp) == 1:
                s = next(iter(comp))
                if not g.has_edge(s, s):
                    continue
            taken = set()
            for s in comp:
                for label, t in succ[s]:
                    if t in comp:
                        taken.add(taken_label(label))
            bad = {s for s in comp if enabled[s] - taken}
            if not bad:
                found.append(comp)
            elif bad != comp:
                work.append(comp - bad)
    return found


def check_liveness(c: Configuration, reliable=frozenset(), bounds=Bounds(), graph=None):
    graph = graph or explore_configurations(c, reliable, bounds)
    safety = check_safety(c, reliable, bounds, graph)
    if safety.verdict == "violated":
        safety.property = "liveness"
        return safety
    n = len(graph.states)
    succ = [[] for _ in range(n)]
    for src, label, dst in graph.edges:
        if not isinstance(label, Crash):
            succ[src].append((label, dst))
    enabled = []
    for i, state in enumerate(graph.states):
        acts = {_action(a) for a, _ in config_steps(state, frozenset(reliable), "non-crash")}
        if i in graph.frontier:
            acts.add(("truncated",))
        enabled.append(acts)
    obs = [obligations(s) for s in graph.states]

    # finite fair paths end where no non-crash move is possible
    for i in range(n):
        if not succ[i] and i not in graph.frontier and obs[i]:
            ob = sorted(obs[i])[0]
            return _finish(VerificationReport(
                "liveness", "violated", graph.trace_to(i),
                message=f"obligation {ob} can never be served (no non-crash move left)"), graph)

    kinds = set().union(*obs) if obs else set()
    for ob in sorted(kinds):
        nodes = [i for i in range(n)
                 if ob in obs[i] and not any(_serves(ob, a) for a in enabled[i])]
        if not nodes:
            continue
        comps = _fair_components(nodes, succ, enabled, _action)
        if comps:
            comp = min(comps, key=min)
            entry = min(comp)
            cycle = _cycle_labels(entry, comp, succ)
            return _finish(VerificationReport(
                "liveness", "violated", graph.trace_to(entry), cycle,
                message=f"fair cycle never serves obligation {ob}"), graph)
    return _finish(VerificationReport("liveness", "holds"), graph)


def _cycle_labels(entry, comp, succ):
    """Labels of some cycle through ``entry`` inside ``comp`` (BFS back to entry)."""
    parents = {}
    todo = deque()
    for label, t in succ[entry]:
        if t in comp and t not in parents:
            parents[t] = (entry, label)
            todo.append(t)
    while todo:
        s = todo.popleft()
        if s == entry:
            break
        for label, t in succ[s]:
            if t in comp and t not in parents:
                parents[t] = (s, label)
                todo.append(t)
    out = []
    s = entry
    while True:
        prev, label = parents[s]
        out.append(label)
        s = prev
        if s == entry:
            break
    out.reverse()
    return out


# -------------------------------------------------------------- correspondence


def check_correspondence(state: AnnotatedGlobal, reliable=frozenset(), bounds=Bounds(),
                         config: Optional[Configuration] = None) -> VerificationReport:
    """Co-explore the global LTS and the configuration LTS from an associated pair.

    Without ``config`` the configuration is the projection of ``state`` onto its roles,
    crashed roles included.
    """
    reliable = frozenset(reliable)
    c0 = config if config is not None else projected_configuration(state, reliable)
    root = check_association(state, c0, reliable)
    if not root:
        return VerificationReport("association", "violated",
                                  message=f"root not associated: {root.clause} {root.detail}")
    start = (state, c0)
    unfolds = {start: {}}
    parents = {start: None}
    todo = deque([start])
    frontier = 0
    complete = True

    def violated(key, msg, label=None):
        trace = _trace(parents, key) + ([label] if label is not None else [])
        return VerificationReport("association", "violated", trace, explored=len(parents),
                                  frontier=frontier, message=msg)

    while todo:
        key = todo.popleft()
        s, c = key
        if not is_well_annotated(s, reliable):
            return violated(key, f"global state not well-annotated: {s}")
        cut = False
        try:
            gsteps = global_steps(s, reliable, bounds.fuel, unfolds[key])
        except FuelExhausted as exc:
            gsteps = exc.steps
            cut = True
        except RemovalUndefined as exc:
            return violated(key, f"role removal undefined: {exc}")
        by_label = {}
        for st in gsteps:
            by_label.setdefault(st.label, []).append(st)
        matched_any = False
        queue_cut = False
        for label, c2 in config_steps(c, reliable, "non-crash-of-reliable"):
            if _over_bound(c, label, bounds.queue_bound):
                queue_cut = True
                continue
            matches = [st for st in by_label.get(label, ())
                       if check_association(st.target, c2, reliable)]
            if not matches:
                if cut:
                    continue
                cands = by_label.get(label, ())
                why = "no global step with this label" if not cands else \
                    "; ".join(f"{check_association(st.target, c2, reliable).clause} "
                              f"{check_association(st.target, c2, reliable).detail}"
                              for st in cands)
                return violated(key, f"completeness: configuration step {label} unmatched ({why})",
                                label)
            matched_any = True
            for st in matches:
                nxt = (st.target, c2)
                if nxt in parents:
                    continue
                if len(parents) >= bounds.max_states:
                    complete = False
                    continue
                parents[nxt] = (key, label)
                unfolds[nxt] = bump_unfolds(unfolds[key], st)
                todo.append(nxt)
        if cut or queue_cut:
            frontier += 1
        if gsteps and not matched_any and not cut and not queue_cut:
            return violated(key, "soundness: the global type can move but no configuration "
                                 "step re-associates")
    verdict = "holds" if complete else "truncated"
    return VerificationReport("association", verdict, explored=len(parents), frontier=frontier,
                              message="" if complete else "state limit reached")


def projected_configuration(state: AnnotatedGlobal, reliable=frozenset()) -> Configuration:
    """Each role gets its projection, crashed roles get ``stop`` with unavailable incoming queues.

    Other queues start empty, so this suits states with no message in transit.
    """
    g = state.gtype
    roles = sorted(roles_of(g) | state.crashed)
    gamma = {r: STOP if r in state.crashed else project(g, r, reliable) for r in roles}
    delta = {}
    for r in state.crashed:
        for p in roles:
            if p != r:
                delta[(p, r)] = UNAVAILABLE
    return Configuration.make(gamma, delta)


# ---------------------------------------------------------------------- replay


def replay(c: Configuration, labels, reliable=frozenset()) -> Configuration:
    """Re-execute a trace from ``c``; raises ``ValueError`` at a disabled label."""
    for i, label in enumerate(labels):
        nxt = config_step(c, label, frozenset(reliable), "all")
        if nxt is None:
            raise ValueError(f"step {i} ({label}) is not enabled")
        c = nxt
    return c


def verify_all(c: Configuration, reliable=frozenset(), bounds=Bounds()):
    graph = explore_configurations(c, reliable, bounds)
    return [check_safety(c, reliable, bounds, graph),
            check_deadlock_freedom(c, reliable, bounds, graph),
            check_liveness(c, reliable, bounds, graph)]
