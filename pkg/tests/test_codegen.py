import json

import jsonschema
import networkx as nx
import pytest

from mpst_crash import corpus
from mpst_crash.codegen import (SKELETON_SCHEMA, CodegenError, check_plan, generate_skeleton,
                                plan_channels, render_skeleton, tree_to_local)
from mpst_crash.mpst_core import CRASH, END, GComm, GTransit, LChoice, LExt, equirec_equal, walk
from mpst_crash.projection import annotate, project, project_annotated
from mpst_crash.protocol_lang import load_protocol

# Counts pinned from a corpus run; each is also recomputed below from the projections.
ROLE_FUNCTIONS = dict(zip(corpus.VARIANT_IDS,
                          [2, 2, 3, 3, 4, 7, 5, 6, 7, 8, 5, 5, 5, 5, 8, 8, 11, 13, 13]))
CHANNELS = dict(zip(corpus.VARIANT_IDS,
                    [2, 2, 5, 5, 7, 12, 11, 11, 11, 11, 6, 6, 6, 7, 7, 7, 12, 12, 13]))


def _extra(name):
    decl, g, reliable = corpus.load_extra(name)
    return generate_skeleton(g, decl.role_names, reliable, decl.name)


def _variant_ir(vid):
    v = corpus.load_variant(vid)
    return v, generate_skeleton(v.gtype, v.roles, v.reliable, v.decl.name)


# ----------------------------------------------------------------- channel plan


def test_fanout_plan():
    plan = _extra("channel_fanout").plan
    assert plan.ann_subst == {frozenset({1, 2}): 3}
    assert plan.channels == [(0, frozenset({"v", "w"})), (3, frozenset({"x", "y"}))]
    assert [(c, d) for c, d, _ in plan.per_role_args["p"]] == [(0, "out"), (3, "out"), (3, "out")]
    assert [(c, d) for c, d, _ in plan.per_role_args["q"]] == [(0, "in")]
    assert [(c, d) for c, d, _ in plan.per_role_args["r"]] == [(3, "in")]


def test_single_interaction_has_one_channel():
    decl, g, reliable = load_protocol(
        "global protocol P(reliable role A, reliable role B){ hi from A to B; }")
    ir = generate_skeleton(g, decl.role_names, reliable, decl.name)
    assert [c for c, _ in ir.plan.channels] == [0]


def test_simple_logger_plan():
    ir = _extra("simple_logger")
    assert ir.plan.channels == [(0, frozenset({"write", "read"})), (1, frozenset({"report"}))]
    receive = ir.roles["L"].body
    assert receive.kind == "receive" and receive.peer == "U"
    assert receive.handler is not None and receive.handler.kind == "end"


def test_end_only_protocol():
    ir = generate_skeleton(END, ["p", "q"], {"p", "q"}, "Nothing")
    assert all(t.kind == "end" for t in ir.roles.values())
    assert ir.plan.channels == [] and ir.role_functions() == 2
    assert "par(p(), q())" in render_skeleton(ir)


def test_unannotated_projection_is_rejected():
    t = project(corpus.load_variant("a").gtype, "p", {"p", "q"})
    with pytest.raises(CodegenError):
        plan_channels({"p": t})


def _expected_channels(projections):
    """Every surviving prefix number plus one channel per group of overlapping set annotations.

    When the set annotations are pairwise disjoint this is |surviving| + |sets|.
    """
    sets, atoms = set(), set()
    for t in projections.values():
        for n in walk(t):
            if isinstance(n, LChoice):
                if isinstance(n.ann, frozenset):
                    sets.add(n.ann)
                else:
                    atoms.add(n.ann)
    absorbed = set().union(*sets) if sets else set()
    overlap = nx.Graph()
    overlap.add_nodes_from(sets)
    overlap.add_edges_from((a, b) for a in sets for b in sets if a != b and a & b)
    groups = nx.number_connected_components(overlap)
    if all(not (a & b) for a in sets for b in sets if a != b):
        assert groups == len(sets)
    return len(atoms - absorbed) + groups


def _expected_functions(projections):
    """One function per role plus a helper for each receive with several labels."""
    helpers = sum(1 for t in projections.values() for n in walk(t)
                  if isinstance(n, LExt) and len([b for b in n.branches if b.label != CRASH]) > 1)
    return len(projections) + helpers


@pytest.mark.parametrize("vid", corpus.VARIANT_IDS)
def test_corpus_counts(vid):
    v, ir = _variant_ir(vid)
    g = annotate(v.gtype)
    projections = {r: project_annotated(g, r, v.reliable) for r in v.roles}
    assert len(ir.plan.channels) == _expected_channels(projections) == CHANNELS[vid]
    assert ir.role_functions() == _expected_functions(projections) == ROLE_FUNCTIONS[vid]
    assert check_plan(ir.plan) == []


def test_more_branches_more_functions():
    # crash handling variants of a protocol never need fewer functions
    for family in [("a", "b"), ("c", "d"), ("e", "f"), ("g", "h", "i", "j"), ("k", "l", "m")]:
        counts = [ROLE_FUNCTIONS[x] for x in family]
        assert counts == sorted(counts), family


@pytest.mark.parametrize("vid", corpus.VARIANT_IDS)
def test_sender_and_receiver_share_channels(vid):
    v, ir = _variant_ir(vid)
    plan = ir.plan
    for n in walk(annotate(v.gtype)):
        if not isinstance(n, (GComm, GTransit)) or n.ann is None:
            continue
        cid = plan.ann_arg[n.ann]
        sent = {c for c, d, _ in plan.per_role_args[n.sender] if d == "out"}
        got = {c for c, d, _ in plan.per_role_args[n.receiver] if d == "in"}
        if isinstance(n, GComm) and n.receiver_crashed:
            continue
        if cid in got and not (isinstance(n, GTransit) and n.sender_crashed):
            assert cid in sent, (n.sender, n.receiver, cid)


@pytest.mark.parametrize("vid", corpus.VARIANT_IDS)
def test_trees_erase_to_projections(vid):
    v, ir = _variant_ir(vid)
    for r in v.roles:
        assert equirec_equal(tree_to_local(ir.roles[r]), project(v.gtype, r, v.reliable))


# -------------------------------------------------------------------- rendering


def test_text_sections_and_stability():
    ir = _extra("simple_logger")
    text = render_skeleton(ir)
    for header in ["(i) label and payload", "(ii) recursion variable", "(iii) local type",
                   "(iv) role-implementing", "(v) entry point"]:
        assert f"// {header}" in text
    assert "par(U(c0, c1), L(c0, c1))" in text
    assert render_skeleton(_extra("simple_logger")) == text


def test_fanout_entry_point():
    assert "par(p(c0, c3, c3), q(c0), r(c3))" in render_skeleton(_extra("channel_fanout"))


@pytest.mark.parametrize("vid", corpus.VARIANT_IDS)
def test_json_conforms_to_schema(vid):
    _, ir = _variant_ir(vid)
    doc = json.loads(render_skeleton(ir, "json"))
    jsonschema.validate(doc, SKELETON_SCHEMA)
    assert render_skeleton(ir, "json") == render_skeleton(_variant_ir(vid)[1], "json")


def test_unknown_format():
    with pytest.raises(ValueError):
        render_skeleton(_extra("simple_logger"), "java")
