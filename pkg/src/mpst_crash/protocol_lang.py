"""Parser for the Scribble-style protocol language with crash handling.

Grammar::

    protocol := "global" "protocol" IDENT "(" roleDecl ("," roleDecl)* ")" "{" stmt* "}"
    roleDecl := ["reliable"] "role" IDENT
    stmt     := IDENT ["(" IDENT ")"] "from" IDENT "to" IDENT ";"
              | "choice" "at" IDENT block ("or" block)*
              | "rec" IDENT block
              | "continue" IDENT ";"

A choice branch starting with ``crash from p to q;`` is the handler taken
when ``p`` is detected as crashed. Inside such a handler, a standalone
``crash from p to r;`` forwards the crash notification to another role ``r``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional, Union

from .mpst_core import (CRASH, END, Branch, GComm, GEnd, GlobalType, GRec, GVar,
                        GTransit, is_contractive)

KEYWORDS = {"global", "protocol", "role", "reliable", "from", "to", "choice", "at", "or",
            "rec", "continue"}


class ProtocolError(Exception):
    def __init__(self, message, line=None, col=None):
        self.message = message
        self.line = line
        self.col = col
        where = f"{line}:{col}: " if line is not None else ""
        super().__init__(where + message)


@dataclass(frozen=True)
class Interaction:
    label: str
    sort: Optional[str]
    sender: str
    receiver: str
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Choice:
    at: str
    branches: tuple  # of StatementBlock
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class RecStmt:
    var: str
    body: "StatementBlock"
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Continue:
    var: str
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


Statement = Union[Interaction, Choice, RecStmt, Continue]


@dataclass(frozen=True)
class StatementBlock:
    statements: tuple = ()


@dataclass(frozen=True)
class ProtocolDecl:
    name: str
    roles: tuple  # of (name, reliable)
    body: StatementBlock

    @property
    def role_names(self):
        return [r for r, _ in self.roles]

    @property
    def reliable(self):
        return frozenset(r for r, rel in self.roles if rel)


# ------------------------------------------------------------------- lexing

_LEX = re.compile(r"""
    (?P<ws>\s+)
  | (?P<comment>//[^\n]*|/\*.*?\*/)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>[(){};,])
""", re.VERBOSE | re.DOTALL)


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _lex(source):
    toks = []
    pos, line, line_start = 0, 1, 0
    while pos < len(source):
        m = _LEX.match(source, pos)
        if not m:
            raise ProtocolError(f"unexpected character {source[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        text = m.group()
        if kind in ("ident", "punct"):
            toks.append(_Tok(kind, text, line, pos - line_start + 1))
        newlines = text.count("\n")
        if newlines:
            line += newlines
            line_start = pos + text.rfind("\n") + 1
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, source):
        self.toks = _lex(source)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def error(self, msg, tok=None):
        tok = tok or self.peek()
        return ProtocolError(msg, tok.line, tok.col)

    def expect(self, text):
        tok = self.peek()
        if tok.text != text:
            found = tok.text or "end of input"
            raise self.error(f"expected '{text}', found '{found}'")
        self.i += 1
        return tok

    def ident(self, what="identifier"):
        tok = self.peek()
        if tok.kind != "ident" or tok.text in KEYWORDS:
            found = tok.text or "end of input"
            raise self.error(f"expected {what}, found '{found}'")
        self.i += 1
        return tok

    def protocol(self):
        self.expect("global")
        self.expect("protocol")
        name = self.ident("protocol name").text
        self.expect("(")
        roles = [self.role_decl()]
        while self.peek().text == ",":
            self.i += 1
            roles.append(self.role_decl())
        self.expect(")")
        body = self.block()
        if self.peek().kind != "eof":
            raise self.error(f"unexpected '{self.peek().text}' after protocol body")
        return name, roles, body

    def role_decl(self):
        reliable = False
        if self.peek().text == "reliable":
            self.i += 1
            reliable = True
        self.expect("role")
        tok = self.ident("role name")
        return tok, reliable

    def block(self):
        self.expect("{")
        stmts = []
        while self.peek().text != "}":
            if self.peek().kind == "eof":
                raise self.error("unterminated block")
            stmts.append(self.statement())
        self.expect("}")
        return StatementBlock(tuple(stmts))

    def statement(self):
        tok = self.peek()
        if tok.text == "choice":
            self.i += 1
            self.expect("at")
            at = self.ident("role name").text
            branches = [self.block()]
            while self.peek().text == "or":
                self.i += 1
                branches.append(self.block())
            return Choice(at, tuple(branches), tok.line, tok.col)
        if tok.text == "rec":
            self.i += 1
            var = self.ident("recursion variable").text
            return RecStmt(var, self.block(), tok.line, tok.col)
        if tok.text == "continue":
            self.i += 1
            var = self.ident("recursion variable").text
            self.expect(";")
            return Continue(var, tok.line, tok.col)
        label = self.ident("message label").text
        sort = None
        if self.peek().text == "(":
            self.i += 1
            if self.peek().text != ")":
                sort = self.ident("payload sort").text
            self.expect(")")
        self.expect("from")
        sender = self.ident("role name").text
        self.expect("to")
        receiver = self.ident("role name").text
        self.expect(";")
        return Interaction(label, sort, sender, receiver, tok.line, tok.col)


# --------------------------------------------------------------- validation


def _validate(decl: ProtocolDecl):
    roles = set(decl.role_names)

    def check_block(block, bound, handlers):
        stmts = block.statements
        for idx, st in enumerate(stmts):
            if isinstance(st, Continue):
                if st.var not in bound:
                    raise ProtocolError(f"unbound 'continue {st.var}'", st.line, st.col)
                if idx != len(stmts) - 1:
                    nxt = stmts[idx + 1]
                    raise ProtocolError("unreachable statement after 'continue'", nxt.line, nxt.col)
            elif isinstance(st, RecStmt):
                if st.var in bound:
                    raise ProtocolError(f"recursion variable '{st.var}' shadows an enclosing one",
                                        st.line, st.col)
                check_block(st.body, bound | {st.var}, handlers)
            elif isinstance(st, Interaction):
                check_interaction(st)
                if st.label == CRASH and st.sender not in handlers:
                    raise ProtocolError(
                        f"'crash from {st.sender}' outside a handler for {st.sender}'s crash "
                        "(crash may only start a choice branch or forward a detected crash)",
                        st.line, st.col)
            elif isinstance(st, Choice):
                check_choice(st, bound, handlers)

    def check_interaction(st):
        for r in (st.sender, st.receiver):
            if r not in roles:
                raise ProtocolError(f"undeclared role '{r}'", st.line, st.col)
        if st.sender == st.receiver:
            raise ProtocolError(f"self-reception {st.sender} -> {st.receiver}", st.line, st.col)
        if st.label == CRASH and st.sort is not None:
            raise ProtocolError("'crash' cannot carry a payload", st.line, st.col)

    def check_choice(ch, bound, handlers):
        if ch.at not in roles:
            raise ProtocolError(f"undeclared role '{ch.at}'", ch.line, ch.col)
        firsts = []
        for br in ch.branches:
            if not br.statements:
                raise ProtocolError("empty choice branch", ch.line, ch.col)
            first = br.statements[0]
            if not isinstance(first, Interaction):
                raise ProtocolError("each choice branch must begin with an interaction",
                                    getattr(first, "line", ch.line), getattr(first, "col", ch.col))
            check_interaction(first)
            firsts.append(first)
        senders = {f.sender for f in firsts}
        receivers = {f.receiver for f in firsts}
        if len(senders) > 1:
            raise ProtocolError("mixed senders in choice", ch.line, ch.col)
        if len(receivers) > 1:
            raise ProtocolError("mixed receivers in choice", ch.line, ch.col)
        sender = firsts[0].sender
        if sender != ch.at:
            raise ProtocolError(f"choice at '{ch.at}' but branches are sent by '{sender}'",
                                ch.line, ch.col)
        labels = [f.label for f in firsts]
        for lab in labels:
            if labels.count(lab) > 1:
                raise ProtocolError(f"duplicate label '{lab}' in choice", ch.line, ch.col)
        if labels == [CRASH]:
            raise ProtocolError("crash as sole label of a choice", ch.line, ch.col)
        for br, first in zip(ch.branches, firsts):
            inner = handlers | {sender} if first.label == CRASH else handlers
            check_block(StatementBlock(br.statements[1:]), bound, inner)

    if len(roles) != len(decl.roles):
        seen = set()
        for r, _ in decl.roles:
            if r in seen:
                raise ProtocolError(f"duplicate role '{r}'")
            seen.add(r)
    if len(roles) < 2:
        raise ProtocolError("a protocol needs at least two roles")
    check_block(decl.body, frozenset(), frozenset())


def parse_protocol(source: str) -> ProtocolDecl:
    name, role_toks, body = _Parser(source).protocol()
    seen = set()
    for tok, _ in role_toks:
        if tok.text in seen:
            raise ProtocolError(f"duplicate role '{tok.text}'", tok.line, tok.col)
        seen.add(tok.text)
    decl = ProtocolDecl(name, tuple((t.text, rel) for t, rel in role_toks), body)
    _validate(decl)
    return decl


# -------------------------------------------------------------- translation


def _translate(stmts, k):
    """Global type of a statement list followed by continuation ``k``."""
    if not stmts:
        return k
    st, rest = stmts[0], stmts[1:]
    if isinstance(st, Continue):
        return GVar(st.var)
    if isinstance(st, RecStmt):
        return GRec(st.var, _translate(st.body.statements, _translate(rest, k)))
    if isinstance(st, Interaction):
        return GComm(st.sender, st.receiver, (Branch(st.label, st.sort, _translate(rest, k)),))
    after = _translate(rest, k)
    branches = []
    first = None
    for br in st.branches:
        first = br.statements[0]
        branches.append(Branch(first.label, first.sort, _translate(br.statements[1:], after)))
    return GComm(first.sender, first.receiver, tuple(branches))


def to_global_type(decl: ProtocolDecl):
    """Return ``(global type, reliable roles)`` for a validated declaration."""
    _validate(decl)
    g = _translate(decl.body.statements, END)
    if not is_contractive(g):
        raise ProtocolError("recursion is not guarded by an interaction")
    return g, decl.reliable


def load_protocol(source: str):
    decl = parse_protocol(source)
    g, reliable = to_global_type(decl)
    return decl, g, reliable


# ---------------------------------------------------------- pretty printing


def _payload(b):
    return f"({b.sort})" if b.sort else ""


def _emit(g, indent, out):
    pad = "  " * indent
    if isinstance(g, GEnd):
        return
    if isinstance(g, GVar):
        out.append(f"{pad}continue {g.name};")
        return
    if isinstance(g, GRec):
        out.append(f"{pad}rec {g.var} {{")
        _emit(g.body, indent + 1, out)
        out.append(f"{pad}}}")
        return
    if isinstance(g, GTransit) or (isinstance(g, GComm) and g.receiver_crashed):
        raise ProtocolError("runtime global types have no source syntax")
    if len(g.branches) == 1:
        b = g.branches[0]
        out.append(f"{pad}{b.label}{_payload(b)} from {g.sender} to {g.receiver};")
        _emit(b.cont, indent, out)
        return
    out.append(f"{pad}choice at {g.sender} {{")
    for i, b in enumerate(g.branches):
        if i:
            out.append(f"{pad}}} or {{")
        out.append(f"{pad}  {b.label}{_payload(b)} from {g.sender} to {g.receiver};")
        _emit(b.cont, indent + 1, out)
    out.append(f"{pad}}}")


def format_protocol(name: str, roles, g: GlobalType, reliable=()) -> str:
    """Render a design-time global type back to protocol source."""
    reliable = set(reliable)
    decls = ", ".join(("reliable role " if r in reliable else "role ") + r for r in roles)
    out = [f"global protocol {name}({decls}) {{"]
    _emit(g, 1, out)
    out.append("}")
    return "\n".join(out) + "\n"


# ------------------------------------------------------------------ AST JSON


def ast_to_json(decl: ProtocolDecl) -> dict:
    def stmt(st):
        if isinstance(st, Interaction):
            return {"kind": "interaction", "label": st.label, "sort": st.sort,
                    "from": st.sender, "to": st.receiver, "line": st.line, "col": st.col}
        if isinstance(st, Choice):
            return {"kind": "choice", "at": st.at, "branches": [block(b) for b in st.branches],
                    "line": st.line, "col": st.col}
        if isinstance(st, RecStmt):
            return {"kind": "rec", "var": st.var, "body": block(st.body),
                    "line": st.line, "col": st.col}
        return {"kind": "continue", "var": st.var, "line": st.line, "col": st.col}

    def block(b):
        return [stmt(s) for s in b.statements]

    return {
        "schema": "mpst-crash/ast@1",
        "name": decl.name,
        "roles": [{"name": r, "reliable": rel} for r, rel in decl.roles],
        "body": block(decl.body),
    }
