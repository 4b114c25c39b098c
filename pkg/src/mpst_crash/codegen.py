"""Channel planning and endpoint skeletons from annotated projections.

Every transmission prefix of the global type carries a number; projection
keeps the number on the matching local choice, and merging turns several
numbers into a set. A set stands for one shared channel, so each set gets a
fresh channel id and each number inside a set is rerouted to that id.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from .mpst_core import CRASH, Branch, LEnd, LExt, LInt, LRec, LStop, LVar, walk
from .projection import annotate, project_annotated

BUILTIN_SORTS = {"Int", "String", "Bool", "Real", "Unit"}


class CodegenError(Exception):
    pass


# ------------------------------------------------------------------- channels


@dataclass
class ChannelPlan:
    ann_subst: dict     # set annotation (closed under overlap) -> fresh channel id
    ann_arg: dict       # prefix number -> channel id
    channels: list      # (id, frozenset of payload labels), sorted by id
    per_role_args: dict  # role -> list of (channel id, "in" | "out", frozenset of labels)

    def channel_of(self, ann) -> int:
        if isinstance(ann, frozenset):
            return self.ann_arg[min(ann)]
        return self.ann_arg[ann]

    def to_json(self):
        return {
            "annSubst": [{"set": sorted(k), "id": v} for k, v in
                         sorted(self.ann_subst.items(), key=lambda kv: kv[1])],
            "annArg": {str(k): v for k, v in sorted(self.ann_arg.items())},
            "channels": [{"id": i, "labels": sorted(labels)} for i, labels in self.channels],
            "perRoleArgs": {r: [{"channel": c, "direction": d, "labels": sorted(ls)}
                                for c, d, ls in args]
                            for r, args in self.per_role_args.items()},
        }


def _choices(t):
    """Pre-order list of the choice nodes of a local type."""
    return [n for n in walk(t) if isinstance(n, (LInt, LExt))]


def _ann_parts(ann):
    if ann is None:
        raise CodegenError("projection carries no channel annotation")
    if isinstance(ann, frozenset):
        return ann
    return frozenset([ann])


def plan_channels(projections: dict) -> ChannelPlan:
    """Build the channel plan from annotated projections, one per role."""
    atomics = set()
    sets = set()
    for t in projections.values():
        for node in _choices(t):
            parts = _ann_parts(node.ann)
            atomics |= parts
            if len(parts) > 1:
                sets.add(parts)
    # sets sharing a prefix number must share a channel: close them under overlap
    classes = []
    for s in sorted(sets, key=lambda s: sorted(s)):
        hit = [c for c in classes if c & s]
        merged = frozenset(s).union(*hit)
        classes = [c for c in classes if not (c & s)] + [merged]
    owner = {n: c for c in classes for n in c}
    fresh = max(atomics, default=-1) + 1
    ann_subst = {}
    for c in sorted(classes, key=lambda c: sorted(c)):
        ann_subst[c] = fresh
        fresh += 1
    ann_arg = {n: (ann_subst[owner[n]] if n in owner else n) for n in sorted(atomics)}
    payload = {}
    for t in projections.values():
        for node in _choices(t):
            cid = ann_arg[min(_ann_parts(node.ann))]
            payload.setdefault(cid, set()).update(b.label for b in node.branches
                                                  if b.label != CRASH)
    plan = ChannelPlan(ann_subst, ann_arg,
                       [(cid, frozenset(labels)) for cid, labels in sorted(payload.items())], {})
    for role, t in projections.items():
        args = []
        for node in _choices(t):
            direction = "out" if isinstance(node, LInt) else "in"
            labels = frozenset(b.label for b in node.branches if b.label != CRASH)
            args.append((plan.channel_of(node.ann), direction, labels))
        plan.per_role_args[role] = args
    return plan


def check_plan(plan: ChannelPlan):
    """Return a list of broken channel invariants (empty when the plan is sound).

    A channel that only ever carries crash notifications has a receiving end
    but no sending end: the sender crashed before it could use it.
    """
    problems = []
    ids = [c for c, _ in plan.channels]
    if len(set(plan.ann_subst.values())) != len(plan.ann_subst):
        problems.append("annSubst is not injective")
    surviving = {n for n, c in plan.ann_arg.items() if c == n}
    if set(plan.ann_subst.values()) & surviving:
        problems.append("fresh ids collide with surviving prefix numbers")
    if set(plan.ann_arg.values()) != set(ids):
        problems.append("annArg is not onto the channel ids")
    labels = dict(plan.channels)
    for cid in ids:
        readers = {r for r, args in plan.per_role_args.items() for c, d, _ in args
                   if c == cid and d == "in"}
        writers = {r for r, args in plan.per_role_args.items() for c, d, _ in args
                   if c == cid and d == "out"}
        if len(readers) != 1:
            problems.append(f"channel c{cid} has readers {sorted(readers)}")
        if not writers and labels[cid]:
            problems.append(f"channel c{cid} has no writer")
    return problems


# --------------------------------------------------------------------- skeleton


@dataclass
class Node:
    """Behaviour tree node: send, receive, loop, continue, end or stop."""

    kind: str
    peer: Optional[str] = None
    channel: Optional[int] = None
    branches: list = field(default_factory=list)  # (label, sort, Node)
    handler: Optional["Node"] = None
    var: Optional[str] = None
    body: Optional["Node"] = None

    def to_json(self):
        d = {"kind": self.kind}
        if self.kind in ("send", "receive"):
            d["peer"] = self.peer
            d["channel"] = self.channel
            d["branches"] = [{"label": lab, "payload": sort, "body": n.to_json()}
                             for lab, sort, n in self.branches]
            if self.kind == "receive":
                d["handler"] = self.handler.to_json() if self.handler else None
        elif self.kind in ("loop", "continue"):
            d["var"] = self.var
            if self.kind == "loop":
                d["body"] = self.body.to_json()
        return d


@dataclass
class SkeletonIR:
    protocol: str
    labels: list         # (label, payload sort or None), sorted
    payload_types: list  # non-builtin sorts
    rec_vars: list
    roles: dict          # role -> Node
    plan: ChannelPlan
    reliable: list

    def role_functions(self) -> int:
        """Role functions plus one helper per multi-label receive."""
        helpers = 0
        for tree in self.roles.values():
            for n in _nodes(tree):
                if n.kind == "receive" and len(n.branches) > 1:
                    helpers += 1
        return len(self.roles) + helpers

    def to_json(self):
        return {
            "schema": "mpst-crash/skeleton@1",
            "protocol": self.protocol,
            "reliable": self.reliable,
            "labels": [{"label": lab, "payload": s} for lab, s in self.labels],
            "payloadTypes": self.payload_types,
            "recVars": self.rec_vars,
            "roles": {r: t.to_json() for r, t in self.roles.items()},
            "channels": self.plan.to_json(),
            "entry": {
                "channels": [c for c, _ in self.plan.channels],
                "wiring": {r: [c for c, _, _ in args]
                           for r, args in self.plan.per_role_args.items()},
            },
        }


def _nodes(n):
    yield n
    for _, _, child in n.branches:
        yield from _nodes(child)
    if n.handler:
        yield from _nodes(n.handler)
    if n.body:
        yield from _nodes(n.body)


def _tree(t, plan):
    if isinstance(t, LEnd):
        return Node("end")
    if isinstance(t, LStop):
        return Node("stop")
    if isinstance(t, LVar):
        return Node("continue", var=t.name)
    if isinstance(t, LRec):
        return Node("loop", var=t.var, body=_tree(t.body, plan))
    cid = plan.channel_of(t.ann)
    branches = [(b.label, b.sort, _tree(b.cont, plan)) for b in t.branches if b.label != CRASH]
    if isinstance(t, LInt):
        return Node("send", peer=t.peer, channel=cid, branches=branches)
    crash = t.branch(CRASH)
    return Node("receive", peer=t.peer, channel=cid, branches=branches,
                handler=_tree(crash.cont, plan) if crash else None)


def tree_to_local(n: Node):
    """Erase channels: the local type a behaviour tree implements."""
    if n.kind == "end":
        return LEnd()
    if n.kind == "stop":
        return LStop()
    if n.kind == "continue":
        return LVar(n.var)
    if n.kind == "loop":
        return LRec(n.var, tree_to_local(n.body))
    branches = [Branch(lab, sort, tree_to_local(c)) for lab, sort, c in n.branches]
    if n.kind == "send":
        return LInt(n.peer, tuple(branches))
    if n.handler is not None:
        branches.append(Branch(CRASH, None, tree_to_local(n.handler)))
    return LExt(n.peer, tuple(branches))


def generate_skeleton(g, roles, reliable=frozenset(), name="Protocol") -> SkeletonIR:
    reliable = frozenset(reliable)
    g = annotate(g)
    projections = {r: project_annotated(g, r, reliable) for r in roles}
    plan = plan_channels(projections)
    labels = set()
    rec_vars = set()
    for t in projections.values():
        for n in walk(t):
            if isinstance(n, (LInt, LExt)):
                labels.update((b.label, b.sort) for b in n.branches if b.label != CRASH)
            elif isinstance(n, LRec):
                rec_vars.add(n.var)
    trees = {r: _tree(t, plan) for r, t in projections.items()}
    sorts = sorted({s for _, s in labels if s and s not in BUILTIN_SORTS})
    return SkeletonIR(name, sorted(labels, key=lambda x: (x[0], x[1] or "")), sorts,
                      sorted(rec_vars), trees, plan, sorted(reliable))


# -------------------------------------------------------------------- rendering


def _cap(s):
    return s[:1].upper() + s[1:]


def _chan_type(direction, labels):
    inner = " | ".join(_cap(lab) for lab in sorted(labels)) or "Crash"
    return f"{direction}[{inner}]"


def _render_node(n, ind, lines):
    pad = "  " * ind
    if n.kind == "end":
        lines.append(pad + "nil")
    elif n.kind == "stop":
        lines.append(pad + "crashed")
    elif n.kind == "continue":
        lines.append(pad + f"loop {_cap(n.var)}")
    elif n.kind == "loop":
        lines.append(pad + f"rec {_cap(n.var)} {{")
        _render_node(n.body, ind + 1, lines)
        lines.append(pad + "}")
    elif n.kind == "send":
        if len(n.branches) == 1:
            lab, sort, child = n.branches[0]
            lines.append(pad + f"send c{n.channel} {_cap(lab)}({sort or ''})")
            _render_node(child, ind, lines)
        else:
            lines.append(pad + "choose {")
            for lab, sort, child in n.branches:
                lines.append(pad + f"  case {_cap(lab)}:")
                lines.append(pad + f"    send c{n.channel} {_cap(lab)}({sort or ''})")
                _render_node(child, ind + 2, lines)
            lines.append(pad + "}")
    elif n.kind == "receive":
        lines.append(pad + f"receive c{n.channel} from {n.peer} {{")
        for lab, sort, child in n.branches:
            binder = f"x : {sort}" if sort else ""
            lines.append(pad + f"  on {_cap(lab)}({binder}) =>")
            _render_node(child, ind + 2, lines)
        if n.handler is not None:
            lines.append(pad + "  on crash =>")
            _render_node(n.handler, ind + 2, lines)
        lines.append(pad + "}")


def render_skeleton(ir: SkeletonIR, fmt: str = "text") -> str:
    if fmt == "json":
        return json.dumps(ir.to_json(), indent=2, sort_keys=True) + "\n"
    if fmt != "text":
        raise ValueError(f"unknown format {fmt!r}")
    lines = [f"// protocol {ir.protocol}", "", "// (i) label and payload declarations"]
    for s in ir.payload_types:
        lines.append(f"payload {s}")
    for lab, sort in ir.labels:
        lines.append(f"label {_cap(lab)}({sort or ''})")
    lines += ["", "// (ii) recursion variable declarations"]
    for v in ir.rec_vars:
        lines.append(f"recvar {_cap(v)}")
    lines += ["", "// (iii) local type declarations"]
    for role, args in ir.plan.per_role_args.items():
        params = _params(args)
        lines.append(f"type {_cap(role)}({', '.join(f'c{c} : {_chan_type(d, ls)}' for c, (d, ls) in params.items())})")
    lines += ["", "// (iv) role-implementing functions"]
    for role, tree in ir.roles.items():
        params = _params(ir.plan.per_role_args[role])
        lines.append(f"fn {role}({', '.join(f'c{c}' for c in params)}) : {_cap(role)} {{")
        _render_node(tree, 1, lines)
        lines.append("}")
    lines += ["", "// (v) entry point"]
    lines.append("main {")
    for cid, labels in ir.plan.channels:
        lines.append(f"  c{cid} = channel[{' | '.join(_cap(x) for x in sorted(labels)) or 'Crash'}]")
    calls = [f"{r}({', '.join(f'c{c}' for c, _, _ in args)})"
             for r, args in ir.plan.per_role_args.items()]
    lines.append(f"  par({', '.join(calls)})")
    lines.append("}")
    return "\n".join(lines) + "\n"


def _params(args):
    """Distinct channels of a role in first-use order, with direction and labels."""
    out = {}
    for c, d, ls in args:
        if c in out:
            od, ols = out[c]
            out[c] = (od, ols | ls)
        else:
            out[c] = (d, ls)
    return out


_NODE_SCHEMA = {
    "type": "object",
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["send", "receive", "loop", "continue", "end", "stop"]},
        "peer": {"type": "string"},
        "channel": {"type": "integer"},
        "var": {"type": "string"},
        "branches": {"type": "array", "items": {
            "type": "object",
            "required": ["label", "payload", "body"],
            "properties": {"label": {"type": "string"},
                           "payload": {"type": ["string", "null"]},
                           "body": {"$ref": "#/definitions/node"}}}},
        "handler": {"anyOf": [{"type": "null"}, {"$ref": "#/definitions/node"}]},
        "body": {"$ref": "#/definitions/node"},
    },
}

SKELETON_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "definitions": {"node": _NODE_SCHEMA},
    "type": "object",
    "required": ["schema", "protocol", "labels", "recVars", "roles", "channels", "entry"],
    "properties": {
        "schema": {"const": "mpst-crash/skeleton@1"},
        "protocol": {"type": "string"},
        "reliable": {"type": "array", "items": {"type": "string"}},
        "labels": {"type": "array", "items": {
            "type": "object", "required": ["label", "payload"],
            "properties": {"label": {"type": "string"},
                           "payload": {"type": ["string", "null"]}}}},
        "payloadTypes": {"type": "array", "items": {"type": "string"}},
        "recVars": {"type": "array", "items": {"type": "string"}},
        "roles": {"type": "object", "additionalProperties": {"$ref": "#/definitions/node"}},
        "channels": {
            "type": "object",
            "required": ["annSubst", "annArg", "channels", "perRoleArgs"],
            "properties": {
                "annSubst": {"type": "array", "items": {
                    "type": "object", "required": ["set", "id"],
                    "properties": {"set": {"type": "array", "items": {"type": "integer"}},
                                   "id": {"type": "integer"}}}},
                "annArg": {"type": "object", "additionalProperties": {"type": "integer"}},
                "channels": {"type": "array", "items": {
                    "type": "object", "required": ["id", "labels"],
                    "properties": {"id": {"type": "integer"},
                                   "labels": {"type": "array", "items": {"type": "string"}}}}},
                "perRoleArgs": {"type": "object", "additionalProperties": {
                    "type": "array", "items": {
                        "type": "object", "required": ["channel", "direction", "labels"],
                        "properties": {"channel": {"type": "integer"},
                                       "direction": {"enum": ["in", "out"]},
                                       "labels": {"type": "array",
                                                  "items": {"type": "string"}}}}}},
            },
        },
        "entry": {
            "type": "object", "required": ["channels", "wiring"],
            "properties": {
                "channels": {"type": "array", "items": {"type": "integer"}},
                "wiring": {"type": "object", "additionalProperties": {
                    "type": "array", "items": {"type": "integer"}}},
            },
        },
    },
}
