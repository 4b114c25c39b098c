import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpst_crash import corpus
from mpst_crash.calculus import (CRASHED, INACT, BinOp, ExtChoice, If, InBranch, Lit,
                                 Output, ProcessTypeError, RecP, ScheduleMismatch, Session, Tau,
                                 Val, Var, VarP, congruence_normalize, evaluate, fuzz,
                                 is_stuck_ok, process_from_type, run_schedule, session_steps,
                                 session_from_global, typecheck_process, typecheck_session)
from mpst_crash.mpst_core import LEND, STOP, equirec_equal, parse_local
from mpst_crash.semantics import (EMPTY, UNAVAILABLE, AnnotatedGlobal, Crash, CrashDetect, Recv,
                                  Send, remove_role)
from mpst_crash.subtyping import is_subtype

SL_DECL, SL, SL_RELIABLE = corpus.load_extra("simpler_logging")


def two_party_example():
    p = Output("q", "l", Lit(Val("String", "abc")),
               ExtChoice("q", (InBranch("l2", "x", "Int", INACT), InBranch("crash", None, None, INACT))))
    q = ExtChoice("p", (InBranch("l", "x", "String", Output("p", "l2", Lit(Val("Int", 42)), INACT)),
                        InBranch("crash", None, None, INACT)))
    return Session.make({"p": p, "q": q})


# ---------------------------------------------------------------- expressions


def test_evaluate():
    assert evaluate(BinOp("+", Lit(Val("Int", 7)), Lit(Val("Int", 11)))) == Val("Int", 18)
    assert evaluate(BinOp("<", Lit(Val("Int", 1)), Lit(Val("Int", 2)))) == Val("Bool", True)


def test_output_rejects_crash_label():
    with pytest.raises(ProcessTypeError):
        Output("q", "crash", Lit(Val("Int", 1)), INACT)


# ---------------------------------------------------------------- congruence


def test_normalize_drops_idle_entries():
    m = Session.make({"p": INACT, "q": (CRASHED, UNAVAILABLE)})
    assert congruence_normalize(m) == Session.make({"q": (CRASHED, UNAVAILABLE)})


def test_normalize_swaps_cross_origin_messages():
    a, b = ("q1", "a", Val("Int", 2)), ("q2", "b", Val("Int", 1))
    # q1 < q2, so the q1 message moves to the front
    m = Session.make({"p": (INACT, (b, a))})
    assert congruence_normalize(m).get("p")[1] == (a, b)


def test_normalize_keeps_per_origin_order():
    m1, m2 = ("q", "a", Val("Int", 1)), ("q", "b", Val("Int", 2))
    m = Session.make({"p": (INACT, (m1, m2))})
    assert congruence_normalize(m).get("p")[1] == (m1, m2)


@settings(max_examples=1000, deadline=None)
@given(st.integers(0, 2**32))
def test_normalize_idempotent(seed):
    rng = random.Random(seed)
    roles = ["p", "q", "r"]
    parts = {}
    for r in roles:
        if rng.random() < 0.2:
            parts[r] = (CRASHED, UNAVAILABLE)
            continue
        h = tuple((rng.choice([x for x in roles if x != r]), rng.choice("abc"),
                   Val("Int", rng.randrange(5))) for _ in range(rng.randrange(4)))
        parts[r] = (rng.choice([INACT, Output("p", "a", Lit(Val("Int", 0)), INACT)]), h)
    m = congruence_normalize(Session.make(parts))
    assert congruence_normalize(m) == m


# ------------------------------------------------------------------ reduction


def test_two_party_crash_before_send():
    m = two_party_example()
    end = run_schedule(m, frozenset(), [Crash("p"), CrashDetect("q", "p")])
    assert end == Session.make({"p": (CRASHED, UNAVAILABLE)})
    assert is_stuck_ok(end) and session_steps(end, frozenset()) == ()


def test_two_party_happy_path():
    m = two_party_example()
    end = run_schedule(m, {"p", "q"}, [Send("p", "q", "l", "String"), Recv("q", "p", "l", "String"),
                                       Send("q", "p", "l2", "Int"), Recv("p", "q", "l2", "Int")])
    assert end == Session(())


def test_crash_detection_waits_for_queued_messages():
    m = two_party_example()
    m = run_schedule(m, frozenset(), [Send("p", "q", "l", "String"), Crash("p")])
    labels = [a for a, _ in session_steps(m, frozenset())]
    assert Recv("q", "p", "l", "String") in labels
    assert CrashDetect("q", "p") not in labels


def test_send_to_crashed_peer_is_lost():
    m = Session.make({"p": Output("q", "l", Lit(Val("Int", 1)), INACT),
                      "q": (CRASHED, UNAVAILABLE)})
    [(label, nxt)] = [s for s in session_steps(m, {"p"})]
    assert label == Send("p", "q", "l", "Int")
    assert nxt == Session.make({"q": (CRASHED, UNAVAILABLE)})


def test_all_inact_has_no_steps():
    m = Session.make({"p": INACT, "q": INACT})
    assert session_steps(m, frozenset()) == ()


def test_conditional_is_internal():
    m = Session.make({"p": If(Lit(Val("Bool", False)), INACT,
                              Output("q", "b", Lit(Val("Int", 0)), INACT))})
    [(label, nxt)] = session_steps(m, {"p"})
    assert label == Tau("p")
    assert nxt.get("p")[0] == Output("q", "b", Lit(Val("Int", 0)), INACT)


def test_received_value_is_substituted():
    p = ExtChoice("q", (InBranch("a", "x", "Int",
                                 Output("q", "b", BinOp("+", Var("x"), Lit(Val("Int", 1))), INACT)),))
    m = Session.make({"p": (p, (("q", "a", Val("Int", 41)),))})
    m = run_schedule(m, {"p", "q"}, [Recv("p", "q", "a", "Int")])
    assert evaluate(m.get("p")[0].expr) == Val("Int", 42)


def test_initial_successors_simpler_logging():
    m = session_from_global(SL, SL_DECL.role_names, SL_RELIABLE)
    got = sorted(str(a) for a, _ in session_steps(congruence_normalize(m), SL_RELIABLE))
    # independent count: C may send read, L may send trigger, I waits, and only C may crash
    unreliable = [r for r in SL_DECL.role_names if r not in SL_RELIABLE]
    expected = [Send("C", "I", "read", None), Send("L", "I", "trigger", None)]
    expected += [Crash(r) for r in unreliable]
    assert got == sorted(str(a) for a in expected)


def test_empty_schedule_is_identity():
    m = congruence_normalize(two_party_example())
    assert run_schedule(m, frozenset(), []) == m


def test_schedule_mismatch_lists_enabled():
    with pytest.raises(ScheduleMismatch) as info:
        run_schedule(two_party_example(), {"p", "q"}, [Recv("q", "p", "l", "String")])
    assert info.value.index == 0
    assert info.value.enabled == [Send("p", "q", "l", "String")]


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32))
def test_random_schedules_replay(seed):
    rng = random.Random(seed)
    m0 = congruence_normalize(session_from_global(SL, SL_DECL.role_names, SL_RELIABLE, rng))
    m, schedule = m0, []
    for _ in range(20):
        steps = session_steps(m, SL_RELIABLE)
        if not steps:
            break
        label, m = rng.choice(steps)
        schedule.append(label)
    assert run_schedule(m0, SL_RELIABLE, schedule) == m


# --------------------------------------------------------------------- typing


def test_typecheck_constants():
    assert typecheck_process({}, INACT) == LEND
    assert typecheck_process({}, CRASHED) == STOP


def test_typecheck_two_party():
    m = two_party_example()
    assert is_subtype(typecheck_process({}, m.get("p")[0]),
                      parse_local("q(+){l(String).q&{l2(Int).end, crash.end}}"))
    assert is_subtype(typecheck_process({}, m.get("q")[0]),
                      parse_local("p&{l(String).p(+){l2(Int).end}, crash.end}"))


def test_typecheck_recursion_and_errors():
    loop = RecP("X", Output("q", "a", Lit(Val("Int", 1)), VarP("X")))
    assert equirec_equal(typecheck_process({}, loop), parse_local("mu X.q(+){a(Int).X}"))
    with pytest.raises(ProcessTypeError):
        typecheck_process({}, VarP("Y"))
    with pytest.raises(ProcessTypeError):
        typecheck_process({}, RecP("X", VarP("X")))
    bad = Output("q", "a", BinOp("+", Lit(Val("Int", 1)), Lit(Val("String", "s"))), INACT)
    with pytest.raises(ProcessTypeError):
        typecheck_process({}, bad)


def test_typecheck_session_example():
    m = session_from_global(SL, SL_DECL.role_names, SL_RELIABLE)
    state = AnnotatedGlobal(frozenset(), SL)
    assert typecheck_session(state, m, SL_RELIABLE)
    m2 = run_schedule(m, SL_RELIABLE, [Crash("C")])
    assert typecheck_session(AnnotatedGlobal(frozenset({"C"}), remove_role(SL, "C")), m2,
                             SL_RELIABLE)


def test_typecheck_session_rejects_undeclared_label():
    m = session_from_global(SL, SL_DECL.role_names, SL_RELIABLE)
    m = m.update({"C": (Output("I", "gossip", Lit(Val("Int", 0)), INACT), EMPTY)})
    res = typecheck_session(AnnotatedGlobal(frozenset(), SL), m, SL_RELIABLE)
    assert not res and "not typable" in res.message


def test_process_from_type_round_trips():
    v = corpus.load_variant("d")
    from mpst_crash.projection import project
    for r in v.roles:
        t = project(v.gtype, r, v.reliable)
        assert is_subtype(typecheck_process({}, process_from_type(t)), t)


# ----------------------------------------------------------------------- fuzz


@pytest.mark.parametrize("vid", ["b", "d", "j"])
def test_fuzz_smoke(vid):
    v = corpus.load_variant(vid)
    report = fuzz(v.gtype, v.roles, v.reliable, runs=30, seed=1)
    assert report.ok, report.failures[:1]
    assert report.runs == 30 and report.steps > 0


def _consumption_delays(g, roles, reliable, seed, horizon):
    """Fair random run without crashes; returns send steps whose message was never received."""
    rng = random.Random(seed)
    m = congruence_normalize(session_from_global(g, roles, reliable, rng))
    sent, received, pending = {}, {}, []
    for step in range(horizon):
        steps = [s for s in session_steps(m, frozenset(roles)) if not isinstance(s[0], Crash)]
        if not steps:
            break
        label, m = rng.choice(steps)
        if isinstance(label, Send):
            key = (label.p, label.q)
            sent[key] = sent.get(key, 0) + 1
            pending.append((key, sent[key], step))
        elif isinstance(label, Recv):
            key = (label.q, label.p)
            received[key] = received.get(key, 0) + 1
    return [s for key, n, s in pending if received.get(key, 0) < n]


@pytest.mark.parametrize("vid", ["a", "d", "k", "s"])
def test_session_liveness_smoke(vid):
    v = corpus.load_variant(vid)
    horizon = 300
    for seed in range(20):
        late = _consumption_delays(v.gtype, v.roles, v.reliable, seed, horizon)
        # only messages sent near the end of the run may still be in flight
        assert all(s > horizon - 60 for s in late), (seed, late)
