import json

import pytest
from fastapi.testclient import TestClient

from mpst_crash import corpus, service
from mpst_crash.cli import ERROR, OK, TRUNCATED, VIOLATED, main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


# ------------------------------------------------------------------------ cli


def test_analyze_example(capsys):
    code, out, _ = run(capsys, "analyze", "examples/pingpong_b.scr")
    assert code == OK
    assert "comms           2" in out and "crash branches  2" in out


@pytest.mark.parametrize("vid,row", [("a", (2, 0, 4)), ("j", (30, 28, 11)), ("f", (18, 6, 12))])
def test_analyze_json(capsys, vid, row):
    code, out, _ = run(capsys, "analyze", corpus.load_variant(vid).file, "--json")
    d = json.loads(out)
    assert code == OK and (d["comms"], d["crash_branches"], d["max_cont_len"]) == row


def test_analyze_is_deterministic(capsys):
    first = run(capsys, "analyze", "oauth_j.scr", "--json")
    assert run(capsys, "analyze", "oauth_j.scr", "--json") == first


def test_missing_file(capsys):
    code, _, err = run(capsys, "project", "missing.scr")
    assert code == ERROR and "cannot read" in err


def test_usage_error(capsys):
    assert main(["verify", "pingpong_a.scr", "--bogus"]) == ERROR
    assert main([]) == ERROR
    capsys.readouterr()


def test_parse_error_is_input_error(tmp_path, capsys):
    bad = tmp_path / "bad.scr"
    bad.write_text("global protocol P(role A { }")
    code, _, err = run(capsys, "analyze", str(bad))
    assert code == ERROR and err.startswith("error:")


def test_project(capsys):
    code, out, _ = run(capsys, "project", "simple_logger.scr", "--role", "U")
    assert code == OK and out.startswith("U: ")
    code, out, _ = run(capsys, "project", "channel_fanout.scr", "--annotated", "--json")
    assert code == OK and "@" in json.loads(out)["projections"]["r"]
    code, _, err = run(capsys, "project", "simple_logger.scr", "--role", "Z")
    assert code == ERROR and "unknown role" in err


def test_subtype(tmp_path, capsys):
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    a.write_text("p&{l.end, crash.end}")
    b.write_text("p&{l.end}")
    assert run(capsys, "subtype", str(a), str(b))[0] == OK
    code, out, _ = run(capsys, "subtype", str(b), str(a), "--explain")
    assert code == ERROR and "crash" in out
    code, out, _ = run(capsys, "subtype", str(b), str(a), "--json")
    assert json.loads(out)["holds"] is False


def test_verify_holds(capsys):
    code, out, _ = run(capsys, "verify", "--property", "all", "pingpong_b.scr", "--json")
    d = json.loads(out)
    assert code == OK and d["verdict"] == "holds"
    assert [r["property"] for r in d["reports"]] == ["safety", "deadlock-freedom", "liveness",
                                                     "association"]
    for r in d["reports"]:
        assert set(r) == {"property", "verdict", "trace", "cycle", "explored", "frontier",
                          "message"}


def test_verify_oauth_j(capsys):
    assert run(capsys, "verify", "--property", "all", "examples/oauth_j.scr")[0] == OK


def test_verify_truncated_exit_code(monkeypatch, capsys):
    real = service.verify

    def tiny(source, prop="all", fuel=2, queue_bound=1):
        res = real(source, prop, fuel, queue_bound)
        for r in res.reports:
            r.verdict = "truncated"
        return res

    monkeypatch.setattr(service, "verify", tiny)
    assert run(capsys, "verify", "pingpong_a.scr")[0] == TRUNCATED


def test_verify_violated_exit_code(monkeypatch, capsys):
    real = service.verify

    def bad(source, prop="all", fuel=2, queue_bound=1):
        res = real(source, prop, fuel, queue_bound)
        res.reports[0].verdict = "violated"
        return res

    monkeypatch.setattr(service, "verify", bad)
    assert run(capsys, "verify", "pingpong_a.scr")[0] == VIOLATED


def test_generate(tmp_path, capsys):
    code, out, _ = run(capsys, "generate", "channel_fanout.scr")
    assert code == OK and "par(p(c0, c3, c3), q(c0), r(c3))" in out
    code, out, _ = run(capsys, "generate", "channel_fanout.scr", "-o", str(tmp_path / "gen"),
                       "--format", "json", "--json")
    files = json.loads(out)["files"]
    assert sorted(files) == ["Fanout.json", "main.json", "p.json", "q.json", "r.json"]
    doc = json.loads((tmp_path / "gen" / "Fanout.json").read_text())
    assert doc["schema"] == "mpst-crash/skeleton@1"


def test_simulate_json_lines(capsys):
    code, out, err = run(capsys, "simulate", "simpler_logging.scr", "--seed", "3",
                         "--crash-rate", "0.5", "--steps", "20")
    assert code == OK and "steps" in err
    lines = [json.loads(x) for x in out.splitlines()]
    assert lines and set(lines[0]) == {"state-hash", "label", "successor-hash"}
    for a, b in zip(lines, lines[1:]):
        assert a["successor-hash"] == b["state-hash"]


def test_simulate_schedule(tmp_path, capsys):
    sched = tmp_path / "s.jsonl"
    sched.write_text("\n".join(json.dumps(x) for x in [
        {"kind": "crash", "p": "C"},
        {"kind": "send", "p": "L", "q": "I", "label": "trigger", "sort": None},
    ]))
    for cmd in ("simulate", "simulate-global", "simulate-config"):
        code, out, _ = run(capsys, cmd, "simpler_logging.scr", "--schedule", str(sched), "--json")
        assert code == OK, cmd
        assert [json.loads(x)["label"]["kind"] for x in out.splitlines()] == ["crash", "send"]
    sched.write_text(json.dumps([{"kind": "recv", "p": "I", "q": "L", "label": "trigger",
                                  "sort": None}]))
    code, _, err = run(capsys, "simulate", "simpler_logging.scr", "--schedule", str(sched))
    assert code == ERROR and "not enabled" in err


def test_parse_emit(capsys):
    code, out, _ = run(capsys, "parse", "pingpong_a.scr", "--emit", "ast-json")
    assert code == OK and json.loads(out)["schema"] == "mpst-crash/ast@1"
    code, out, _ = run(capsys, "parse", "pingpong_a.scr")
    assert code == OK and out.startswith("global protocol")


def test_corpus_command(capsys):
    code, out, _ = run(capsys, "corpus", "--json")
    rows = json.loads(out)
    assert code == OK and len(rows) == 19 and all(r["match"] for r in rows)


def test_no_color_when_disabled(monkeypatch, tmp_path, capsys):
    monkeypatch.setenv("MPST_COLOR", "0")
    a = tmp_path / "a.txt"
    a.write_text("end")
    _, out, _ = run(capsys, "subtype", str(a), str(a))
    assert "\033[" not in out


# -------------------------------------------------------------------- service


@pytest.fixture(scope="module")
def client():
    return TestClient(service.create_app())


def test_http_analyze(client):
    r = client.post("/analyze", json={"source": corpus.source("adder_d.scr")})
    assert r.status_code == 200
    assert (r.json()["comms"], r.json()["crash_branches"], r.json()["max_cont_len"]) == (5, 5, 6)


def test_http_bad_input(client):
    r = client.post("/analyze", json={"source": "global protocol"})
    assert r.status_code == 400 and r.json()["detail"]
    r = client.post("/verify", json={"source": corpus.source("adder_d.scr"), "property": "x"})
    assert r.status_code == 400


def test_http_project_and_subtype(client):
    r = client.post("/project", json={"source": corpus.source("simple_logger.scr"), "role": "L"})
    assert r.status_code == 200 and list(r.json()["projections"]) == ["L"]
    r = client.post("/subtype", json={"subtype": "p&{l.end, crash.end}", "supertype": "p&{l.end}"})
    assert r.json()["holds"] is True


def test_http_verify_simulate_generate(client):
    src = corpus.source("pingpong_b.scr")
    r = client.post("/verify", json={"source": src})
    assert r.status_code == 200 and all(x["verdict"] == "holds" for x in r.json()["reports"])
    r = client.post("/simulate", json={"source": src, "kind": "config", "seed": 1})
    assert r.status_code == 200 and "state-hash" in r.json()["steps"][0]
    r = client.post("/generate", json={"source": src, "format": "json"})
    assert r.status_code == 200 and "main.json" in r.json()["files"]


def test_http_corpus(client):
    r = client.get("/corpus")
    assert r.status_code == 200 and len(r.json()) == 19
