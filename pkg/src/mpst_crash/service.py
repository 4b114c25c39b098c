"""Service layer: pure request handlers with pydantic models, and an HTTP app over them.

The command line calls these functions in-process; ``create_app`` exposes the
same handlers over HTTP.
"""
from __future__ import annotations

import json
import random
from pathlib import Path
from typing import Optional

from pydantic import BaseModel, Field

from . import corpus
from .calculus import Tau, congruence_normalize, session_from_global, session_steps
from .codegen import CodegenError, generate_skeleton, render_skeleton
from .metrics import global_metrics
from .mpst_core import LExt, LInt, TypeError_, parse_local, show, to_json, walk
from .projection import ProjectionUndefined, project, project_annotated
from .protocol_lang import ProtocolError, ast_to_json, format_protocol, load_protocol
from .semantics import (AnnotatedGlobal, Crash, FuelExhausted, RemovalUndefined, config_steps,
                        global_steps, initial_configuration, label_from_json, label_to_json,
                        state_hash)
from .subtyping import check_subtype
from .verify import (Bounds, check_correspondence, check_deadlock_freedom, check_liveness,
                     check_safety, explore_configurations)


class ServiceError(Exception):
    """Bad input: unreadable file, parse or projection failure, unknown option."""


# --------------------------------------------------------------------- models


class AnalyzeResult(BaseModel):
    protocol: str
    roles: list[str]
    reliable: list[str]
    comms: int
    crash_branches: int
    max_cont_len: int


class ProjectResult(BaseModel):
    protocol: str
    reliable: list[str]
    projections: dict[str, str]
    types: dict[str, dict]


class SubtypeResult(BaseModel):
    subtype: str
    supertype: str
    holds: bool
    path: list[str] = Field(default_factory=list)


class ReportModel(BaseModel):
    property: str
    verdict: str
    trace: list[str] = Field(default_factory=list)
    cycle: list[str] = Field(default_factory=list)
    explored: int = 0
    frontier: int = 0
    message: str = ""


class VerifyResult(BaseModel):
    protocol: str
    fuel: int
    queue_bound: int
    reports: list[ReportModel]

    @property
    def verdict(self) -> str:
        verdicts = {r.verdict for r in self.reports}
        for v in ("violated", "truncated"):
            if v in verdicts:
                return v
        return "holds"


class TraceStep(BaseModel):
    state_hash: str = Field(alias="state-hash")
    label: dict
    successor_hash: str = Field(alias="successor-hash")

    model_config = {"populate_by_name": True}


class SimulateResult(BaseModel):
    protocol: str
    kind: str  # session | global | config
    steps: list[TraceStep]
    final: str
    stopped: str  # horizon | stuck | schedule


class GenerateResult(BaseModel):
    protocol: str
    format: str
    files: dict[str, str]


class ProtocolRequest(BaseModel):
    source: str


class ProjectRequest(ProtocolRequest):
    role: Optional[str] = None
    annotated: bool = False


class SubtypeRequest(BaseModel):
    subtype: str
    supertype: str


class VerifyRequest(ProtocolRequest):
    property: str = "all"
    fuel: int = 2
    queue_bound: int = 1


class SimulateRequest(ProtocolRequest):
    kind: str = "session"
    seed: int = 0
    crash_rate: float = 0.1
    steps: int = 50
    schedule: Optional[list[dict]] = None


class GenerateRequest(ProtocolRequest):
    format: str = "text"


# ------------------------------------------------------------------- handlers


def read_source(path: str) -> str:
    """Read a protocol file; a missing path falls back to the bundled corpus by file name."""
    p = Path(path)
    if p.is_file():
        return p.read_text(encoding="utf-8")
    try:
        return corpus.source(p.name)
    except (FileNotFoundError, OSError):
        raise ServiceError(f"cannot read {path}") from None


def _load(source: str):
    try:
        return load_protocol(source)
    except (ProtocolError, TypeError_) as exc:
        raise ServiceError(str(exc)) from None


class ParseResult(BaseModel):
    protocol: str
    text: str
    ast: dict


def parse(source: str) -> ParseResult:
    """Canonical pretty-printed protocol and its JSON AST."""
    decl, g, reliable = _load(source)
    return ParseResult(protocol=decl.name,
                       text=format_protocol(decl.name, decl.role_names, g, sorted(reliable)),
                       ast=ast_to_json(decl))


def analyze(source: str) -> AnalyzeResult:
    decl, g, reliable = _load(source)
    m = global_metrics(g)
    return AnalyzeResult(protocol=decl.name, roles=list(decl.role_names),
                         reliable=sorted(reliable), comms=m.comms,
                         crash_branches=m.crash_branches, max_cont_len=m.max_cont_len)


def project_protocol(source: str, role: Optional[str] = None,
                     annotated: bool = False) -> ProjectResult:
    decl, g, reliable = _load(source)
    roles = list(decl.role_names)
    if role is not None:
        if role not in roles:
            raise ServiceError(f"unknown role {role}; roles are {', '.join(roles)}")
        roles = [role]
    out, types = {}, {}
    for r in roles:
        try:
            t = project_annotated(g, r, reliable) if annotated else project(g, r, reliable)
        except (ProjectionUndefined, RemovalUndefined) as exc:
            raise ServiceError(f"projection onto {r}: {exc}") from None
        out[r] = _show_annotated(t) if annotated else show(t)
        types[r] = to_json(t)
    return ProjectResult(protocol=decl.name, reliable=sorted(reliable), projections=out,
                         types=types)


def _show_annotated(t):
    text = show(t)
    anns = []
    for n in walk(t):
        if isinstance(n, (LInt, LExt)) and n.ann is not None:
            a = sorted(n.ann) if isinstance(n.ann, frozenset) else n.ann
            anns.append(f"{n.peer}:{a}")
    return text + ("  @ " + " ".join(anns) if anns else "")


def subtype(sub: str, sup: str) -> SubtypeResult:
    try:
        a, b = parse_local(sub), parse_local(sup)
    except TypeError_ as exc:
        raise ServiceError(str(exc)) from None
    holds, path = check_subtype(a, b)
    return SubtypeResult(subtype=show(a), supertype=show(b), holds=holds, path=list(path or ()))


PROPERTIES = ("safety", "df", "liveness", "assoc", "all")


def _report(r) -> ReportModel:
    return ReportModel(**r.to_json())


def verify(source: str, prop: str = "all", fuel: int = 2, queue_bound: int = 1) -> VerifyResult:
    if prop not in PROPERTIES:
        raise ServiceError(f"unknown property {prop!r}; choose from {', '.join(PROPERTIES)}")
    if fuel < 0 or queue_bound < 1:
        raise ServiceError("fuel must be >= 0 and queue bound >= 1")
    decl, g, reliable = _load(source)
    bounds = Bounds(fuel=fuel, queue_bound=queue_bound)
    try:
        c0 = initial_configuration(g, decl.role_names, reliable)
    except (ProjectionUndefined, RemovalUndefined) as exc:
        raise ServiceError(f"projection: {exc}") from None
    reports = []
    graph = None
    if prop in ("safety", "df", "liveness", "all"):
        graph = explore_configurations(c0, reliable, bounds)
    if prop in ("safety", "all"):
        reports.append(check_safety(c0, reliable, bounds, graph))
    if prop in ("df", "all"):
        reports.append(check_deadlock_freedom(c0, reliable, bounds, graph))
    if prop in ("liveness", "all"):
        reports.append(check_liveness(c0, reliable, bounds, graph))
    if prop in ("assoc", "all"):
        reports.append(check_correspondence(AnnotatedGlobal(frozenset(), g), reliable, bounds,
                                            config=c0))
    return VerifyResult(protocol=decl.name, fuel=fuel, queue_bound=queue_bound,
                        reports=[_report(r) for r in reports])


def generate(source: str, fmt: str = "text") -> GenerateResult:
    if fmt not in ("text", "json"):
        raise ServiceError(f"unknown format {fmt!r}")
    decl, g, reliable = _load(source)
    try:
        ir = generate_skeleton(g, decl.role_names, reliable, decl.name)
    except (ProjectionUndefined, CodegenError) as exc:
        raise ServiceError(str(exc)) from None
    ext = "json" if fmt == "json" else "txt"
    files = {f"{decl.name}.{ext}": render_skeleton(ir, fmt)}
    for role, tree in ir.roles.items():
        if fmt == "json":
            body = json.dumps({"role": role, "args": ir.to_json()["channels"]["perRoleArgs"][role],
                               "tree": tree.to_json()}, indent=2, sort_keys=True) + "\n"
        else:
            body = _role_text(ir, role)
        files[f"{role}.{ext}"] = body
    if fmt == "json":
        files[f"main.{ext}"] = json.dumps(ir.to_json()["entry"], indent=2, sort_keys=True) + "\n"
    else:
        full = files[f"{decl.name}.{ext}"]
        files[f"main.{ext}"] = full[full.index("// (v) entry point"):]
    return GenerateResult(protocol=decl.name, format=fmt, files=files)


def _role_text(ir, role):
    full = render_skeleton(ir, "text")
    body = full[full.index("// (iv) role-implementing functions"):full.index("// (v) entry point")]
    lines, keep = [], False
    for line in body.splitlines():
        if line.startswith("fn "):
            keep = line.startswith(f"fn {role}(")
        if keep:
            lines.append(line)
    return "\n".join(lines) + "\n"


def _parse_schedule(schedule):
    out = []
    for entry in schedule:
        # accept bare labels or whole trace steps ({"label": {...}, ...})
        d = entry["label"] if isinstance(entry.get("label"), dict) else entry
        if d.get("kind") == "tau":
            out.append(Tau(d["p"]))
        else:
            try:
                out.append(label_from_json(d))
            except (KeyError, ValueError) as exc:
                raise ServiceError(f"bad schedule entry {entry}: {exc}") from None
    return out


def _label_json(label):
    if isinstance(label, Tau):
        return {"kind": "tau", "p": label.p}
    return label_to_json(label)


def simulate(source: str, kind: str = "session", seed: int = 0, crash_rate: float = 0.1,
             steps: int = 50, schedule=None) -> SimulateResult:
    """Random or scripted run of the session calculus, the global LTS, or the configuration LTS."""
    if kind not in ("session", "global", "config"):
        raise ServiceError(f"unknown simulation kind {kind!r}")
    decl, g, reliable = _load(source)
    rng = random.Random(seed)
    labels = _parse_schedule(schedule) if schedule is not None else None
    try:
        if kind == "session":
            state = congruence_normalize(session_from_global(g, decl.role_names, reliable, rng))

            def succ(s):
                return session_steps(s, reliable)

            def h(s):
                return state_hash(str(s))
        elif kind == "global":
            state = AnnotatedGlobal(frozenset(), g)

            def succ(s):
                return [(st.label, st.target) for st in global_steps(s, reliable)]

            h = state_hash
        else:
            state = initial_configuration(g, decl.role_names, reliable)

            def succ(s):
                return config_steps(s, reliable, "non-crash-of-reliable")

            h = state_hash
    except (ProjectionUndefined, RemovalUndefined) as exc:
        raise ServiceError(str(exc)) from None

    trace = []
    stopped = "horizon"
    if labels is not None:
        for i, label in enumerate(labels):
            options = [nxt for a, nxt in succ(state) if a == label]
            if not options:
                enabled = ", ".join(str(a) for a, _ in succ(state)) or "none"
                raise ServiceError(f"step {i}: {label} not enabled; enabled: {enabled}")
            trace.append(TraceStep(state_hash=h(state), label=_label_json(label),
                                   successor_hash=h(options[0])))
            state = options[0]
        stopped = "schedule"
    else:
        for _ in range(steps):
            options = list(succ(state))
            if not options:
                stopped = "stuck"
                break
            crashes = [o for o in options if isinstance(o[0], Crash)]
            others = [o for o in options if not isinstance(o[0], Crash)]
            if crashes and (not others or rng.random() < crash_rate):
                label, nxt = rng.choice(crashes)
            else:
                label, nxt = rng.choice(others)
            trace.append(TraceStep(state_hash=h(state), label=_label_json(label),
                                   successor_hash=h(nxt)))
            state = nxt
    return SimulateResult(protocol=decl.name, kind=kind, steps=trace, final=str(state),
                          stopped=stopped)


def corpus_table() -> list[dict]:
    rows = []
    for v in corpus.all_variants():
        m = global_metrics(v.gtype)
        rows.append({"id": v.id, "family": v.family, "file": v.file,
                     "reliable": sorted(v.reliable), "provenance": v.provenance,
                     "metrics": m.to_dict(), "expected": v.expected.to_dict(),
                     "match": m == v.expected})
    return rows


# ----------------------------------------------------------------------- http


def create_app():
    from fastapi import FastAPI, HTTPException

    app = FastAPI(title="mpst-crash")

    def guard(fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ServiceError as exc:
            raise HTTPException(status_code=400, detail=str(exc))

    @app.post("/analyze", response_model=AnalyzeResult)
    def analyze_endpoint(req: ProtocolRequest):
        return guard(analyze, req.source)

    @app.post("/project", response_model=ProjectResult)
    def project_endpoint(req: ProjectRequest):
        return guard(project_protocol, req.source, req.role, req.annotated)

    @app.post("/subtype", response_model=SubtypeResult)
    def subtype_endpoint(req: SubtypeRequest):
        return guard(subtype, req.subtype, req.supertype)

    @app.post("/verify", response_model=VerifyResult)
    def verify_endpoint(req: VerifyRequest):
        return guard(verify, req.source, req.property, req.fuel, req.queue_bound)

    @app.post("/simulate", response_model=SimulateResult, response_model_by_alias=True)
    def simulate_endpoint(req: SimulateRequest):
        return guard(simulate, req.source, req.kind, req.seed, req.crash_rate, req.steps,
                     req.schedule)

    @app.post("/generate", response_model=GenerateResult)
    def generate_endpoint(req: GenerateRequest):
        return guard(generate, req.source, req.format)

    @app.get("/corpus")
    def corpus_endpoint():
        return corpus_table()

    return app
