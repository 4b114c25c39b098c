"""Command-line entry point ``mpst``.

Exit codes: 0 success or property holds, 1 usage or input error, 2 property
violated, 3 inconclusive because exploration was truncated.  ``subtype`` exits 1
when the relation does not hold.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import service
from .service import ServiceError

OK, ERROR, VIOLATED, TRUNCATED = 0, 1, 2, 3


def _color(code, text):
    if os.environ.get("MPST_COLOR", "1") == "0" or not sys.stdout.isatty():
        return text
    return f"\033[{code}m{text}\033[0m"


def _dump(obj):
    print(json.dumps(obj, indent=2, sort_keys=True))


def _model(m):
    return m.model_dump(by_alias=True)


def cmd_parse(args):
    res = service.parse(service.read_source(args.file))
    if args.json or args.emit == "ast-json":
        _dump(res.ast)
    else:
        sys.stdout.write(res.text)
    return OK


def cmd_analyze(args):
    res = service.analyze(service.read_source(args.file))
    if args.json:
        _dump(_model(res))
    else:
        print(f"protocol        {res.protocol}")
        print(f"roles           {', '.join(res.roles)}")
        print(f"reliable        {', '.join(res.reliable) or '-'}")
        print(f"comms           {res.comms}")
        print(f"crash branches  {res.crash_branches}")
        print(f"max cont. len   {res.max_cont_len}")
    return OK


def cmd_project(args):
    res = service.project_protocol(service.read_source(args.file), args.role, args.annotated)
    if args.json:
        _dump(_model(res))
    else:
        for role, text in res.projections.items():
            print(f"{role}: {text}")
    return OK


def cmd_subtype(args):
    res = service.subtype(service.read_source(args.sub).strip(),
                          service.read_source(args.sup).strip())
    if args.json:
        _dump(_model(res))
    else:
        print(_color("32", "holds") if res.holds else _color("31", "does not hold"))
        if args.explain and not res.holds:
            for step in res.path:
                print(f"  {step}")
    return OK if res.holds else ERROR


def _print_trace(steps, as_json):
    for st in steps:
        d = st.model_dump(by_alias=True)
        if as_json:
            print(json.dumps(d, sort_keys=True))
        else:
            print(f"{d['state-hash']} --{_label_text(d['label'])}--> {d['successor-hash']}")


def _label_text(d):
    k = d["kind"]
    if k == "send":
        return f"{d['p']}{d['q']}!{d['label']}"
    if k == "recv":
        return f"{d['p']}{d['q']}?{d['label']}"
    if k == "detect":
        return f"{d['p']}{d['q']}?crash"
    if k == "tau":
        return f"{d['p']}:tau"
    return f"{d['p']}:crash"


def _simulate(args, kind):
    schedule = None
    if getattr(args, "schedule", None):
        text = service.read_source(args.schedule)
        try:
            if text.lstrip().startswith("["):
                schedule = json.loads(text)
            else:
                schedule = [json.loads(line) for line in text.splitlines() if line.strip()]
        except json.JSONDecodeError as exc:
            raise ServiceError(f"bad schedule file: {exc}") from None
    res = service.simulate(service.read_source(args.file), kind, args.seed, args.crash_rate,
                           args.steps, schedule)
    _print_trace(res.steps, True)
    if not args.json:
        print(f"# {res.stopped} after {len(res.steps)} steps", file=sys.stderr)
    return OK


def cmd_simulate(args):
    return _simulate(args, "session")


def cmd_simulate_global(args):
    return _simulate(args, "global")


def cmd_simulate_config(args):
    return _simulate(args, "config")


def cmd_verify(args):
    res = service.verify(service.read_source(args.file), args.property, args.fuel,
                         args.queue_bound)
    if args.json:
        d = _model(res)
        d["verdict"] = res.verdict
        _dump(d)
    else:
        for r in res.reports:
            color = {"holds": "32", "violated": "31"}.get(r.verdict, "33")
            print(f"{r.property:<12} {_color(color, r.verdict):<10} explored={r.explored} "
                  f"frontier={r.frontier}")
            if r.message:
                print(f"  {r.message}")
            if r.trace:
                print(f"  trace: {' '.join(r.trace)}")
            if r.cycle:
                print(f"  cycle: {' '.join(r.cycle)}")
    return {"holds": OK, "violated": VIOLATED, "truncated": TRUNCATED}[res.verdict]


def cmd_generate(args):
    res = service.generate(service.read_source(args.file), args.format)
    if args.output:
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        for name, body in res.files.items():
            (out / name).write_text(body, encoding="utf-8")
        if args.json:
            _dump({"protocol": res.protocol, "files": sorted(res.files)})
        else:
            for name in sorted(res.files):
                print(out / name)
    else:
        whole = res.files[f"{res.protocol}.{'json' if args.format == 'json' else 'txt'}"]
        sys.stdout.write(whole)
    return OK


def cmd_corpus(args):
    rows = service.corpus_table()
    if args.json:
        _dump(rows)
        return OK
    print(f"{'id':<3} {'family':<14} {'reliable':<12} {'metrics':<14} {'expected':<14}")
    for r in rows:
        m, e = r["metrics"], r["expected"]
        mt = f"({m['comms']},{m['crash_branches']},{m['max_cont_len']})"
        et = f"({e['comms']},{e['crash_branches']},{e['max_cont_len']})"
        mark = "" if r["match"] else _color("31", " mismatch")
        print(f"{r['id']:<3} {r['family']:<14} {','.join(r['reliable']) or '-':<12} "
              f"{mt:<14} {et:<14}{mark}")
    return OK if all(r["match"] for r in rows) else ERROR


def cmd_serve(args):
    import uvicorn
    uvicorn.run(service.create_app(), host=args.host, port=args.port)
    return OK


def build_parser():
    parser = argparse.ArgumentParser(prog="mpst", description="Crash-stop multiparty session types")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_, file=True):
        p = sub.add_parser(name, help=help_)
        if file:
            p.add_argument("file")
        p.add_argument("--json", action="store_true", help="machine-readable output")
        p.set_defaults(fn=fn)
        return p

    p = add("parse", cmd_parse, "parse and pretty-print a protocol")
    p.add_argument("--emit", choices=["pretty", "ast-json"], default="pretty")
    add("analyze", cmd_analyze, "print Table-style metrics for a protocol")
    p = add("project", cmd_project, "project a protocol onto its roles")
    p.add_argument("--role")
    p.add_argument("--annotated", action="store_true")

    p = sub.add_parser("subtype", help="decide subtyping between two local types")
    p.add_argument("sub")
    p.add_argument("sup")
    p.add_argument("--explain", action="store_true")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_subtype)

    for name, fn in (("simulate", cmd_simulate), ("simulate-global", cmd_simulate_global),
                     ("simulate-config", cmd_simulate_config)):
        p = add(name, fn, f"{name.replace('-', ' ')} run as JSON lines")
        p.add_argument("--schedule", help="JSON array or JSON lines of labels to replay")
        p.add_argument("--random", action="store_true", help="random schedule (the default)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--crash-rate", type=float, default=0.1)
        p.add_argument("--steps", type=int, default=50)

    p = add("verify", cmd_verify, "model-check a protocol's projected configuration")
    p.add_argument("--property", choices=service.PROPERTIES, default="all")
    p.add_argument("--fuel", type=int, default=2)
    p.add_argument("--queue-bound", type=int, default=1)

    p = add("generate", cmd_generate, "generate channel-wired role skeletons")
    p.add_argument("--format", choices=["text", "json"], default="text")
    p.add_argument("-o", "--output")

    add("corpus", cmd_corpus, "list the bundled corpus with metrics", file=False)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(fn=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return OK if exc.code == 0 else ERROR
    try:
        return args.fn(args)
    except ServiceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ERROR


if __name__ == "__main__":
    sys.exit(main())
