"""Algebraic laws of the type library, each as a hypothesis test.

Every law runs over the corpus types plus ``LAW_EXAMPLES`` generated inputs.
The acceptance suite calls them all; they can also be run on their own.
"""
from __future__ import annotations

import itertools
import os
import random

from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st

from mpst_crash import corpus
from mpst_crash.calculus import congruence_normalize
from mpst_crash.mpst_core import (active_roles, canonical, equirec_equal, parse_local, show, unfold,
                                  unfold_once)
from mpst_crash.projection import MergeUndefined, merge, merge_all, project
from mpst_crash.semantics import remove_role
from mpst_crash.subtyping import is_subtype

from strategies import ext_variant, global_types, local_types, sessions, widen

LAW_EXAMPLES = int(os.environ.get("MPST_LAW_EXAMPLES", "10000"))

law_settings = settings(max_examples=LAW_EXAMPLES, deadline=None, database=None,
                        derandomize=True,
                        suppress_health_check=[HealthCheck.too_slow, HealthCheck.filter_too_much,
                                               HealthCheck.data_too_large])


def corpus_locals():
    out = []
    for v in corpus.all_variants():
        for r in v.roles:
            out.append(project(v.gtype, r, v.reliable))
    return out


def _try_merge(a, b):
    try:
        return merge(a, b)
    except MergeUndefined:
        return None


# ------------------------------------------------------------------------ merge


def corpus_merge_laws():
    types = corpus_locals()
    for t in types:
        assert equirec_equal(merge(t, parse_local(show(t))), t)
    for a, b in itertools.product(types[:40], repeat=2):
        m1, m2 = _try_merge(a, b), _try_merge(b, a)
        assert (m1 is None) == (m2 is None)
        if m1 is not None:
            assert equirec_equal(m1, m2)
            assert is_subtype(m1, a) and is_subtype(m1, b)


@law_settings
@given(local_types(allow_stop=False))
def law_merge_idempotent(t):
    copy = parse_local(show(t))  # equal but not the same object
    assert equirec_equal(merge(t, copy), t)


@law_settings
@given(local_types(allow_stop=False), st.integers(0, 2**32))
def law_merge_commutative(t, seed):
    rng = random.Random(seed)
    a, b = ext_variant(t, rng), ext_variant(t, rng)
    m1, m2 = _try_merge(a, b), _try_merge(b, a)
    assert (m1 is None) == (m2 is None)
    if m1 is not None:
        assert equirec_equal(m1, m2)


@law_settings
@given(local_types(allow_stop=False), st.integers(0, 2**32))
def law_merge_associative(t, seed):
    rng = random.Random(seed)
    a, b, c = (ext_variant(t, rng) for _ in range(3))
    ab = _try_merge(a, b)
    bc = _try_merge(b, c)
    left = _try_merge(ab, c) if ab is not None else None
    right = _try_merge(a, bc) if bc is not None else None
    if left is not None and right is not None:
        assert equirec_equal(left, right)
    if left is not None:
        assert equirec_equal(left, merge_all([a, b, c]))


@law_settings
@given(local_types(allow_stop=False), st.integers(0, 2**32))
def law_merge_below_operands(t, seed):
    rng = random.Random(seed)
    ops = [ext_variant(t, rng) for _ in range(rng.randint(2, 3))]
    try:
        m = merge_all(ops)
    except MergeUndefined:
        return
    for o in ops:
        assert is_subtype(m, o)


# ------------------------------------------------------------------- subtyping


@law_settings
@given(local_types())
def law_subtype_reflexive(t):
    assert is_subtype(t, t)


@law_settings
@given(local_types(), st.integers(0, 2**32))
def law_subtype_transitive(t, seed):
    """Chains built by the rules are accepted, and acceptance composes."""
    rng = random.Random(seed)
    b = widen(t, rng)
    c = widen(b, rng)
    assert is_subtype(t, b)
    assert is_subtype(b, c)
    assert is_subtype(t, c)


@law_settings
@given(local_types(depth=2), local_types(depth=2), local_types(depth=2))
def law_subtype_transitive_sampled(a, b, c):
    if is_subtype(a, b) and is_subtype(b, c):
        assert is_subtype(a, c)


@law_settings
@given(local_types())
def law_unfold_subtype(t):
    u = unfold_once(t)
    assert is_subtype(u, t) and is_subtype(t, u)
    assert is_subtype(unfold(t), t) and is_subtype(t, unfold(t))


# --------------------------------------------------------------------- removal


@law_settings
@given(global_types(), st.sampled_from(["p", "q", "r"]))
def law_removal_drops_role(g, r):
    assume(r in active_roles(g))
    assert r not in active_roles(remove_role(g, r))


# ------------------------------------------------------------------ congruence


@law_settings
@given(sessions())
def law_normalize_idempotent(m):
    n = congruence_normalize(m)
    assert congruence_normalize(n) == n


# ------------------------------------------------------------------- equirec


@law_settings
@given(local_types(), local_types(), local_types())
def law_equirec_equivalence(a, b, c):
    assert equirec_equal(a, a)
    assert equirec_equal(a, b) == equirec_equal(b, a)
    if equirec_equal(a, b) and equirec_equal(b, c):
        assert equirec_equal(a, c)
    # unfolding and renaming give equal trees; chaining them exercises transitivity
    u, k = unfold_once(a), canonical(a)
    assert equirec_equal(a, u) and equirec_equal(u, k) and equirec_equal(a, k)


LAWS = {
    "merge idempotence": law_merge_idempotent,
    "merge commutativity": law_merge_commutative,
    "merge associativity": law_merge_associative,
    "merge below operands": law_merge_below_operands,
    "subtype reflexivity": law_subtype_reflexive,
    "subtype transitivity (constructed)": law_subtype_transitive,
    "subtype transitivity (sampled)": law_subtype_transitive_sampled,
    "unfold/subtype compatibility": law_unfold_subtype,
    "removal drops the role": law_removal_drops_role,
    "normalization idempotence": law_normalize_idempotent,
    "equirec equivalence": law_equirec_equivalence,
}


def corpus_laws():
    """The same laws on every corpus local type."""
    types = corpus_locals()
    corpus_merge_laws()
    for t in types:
        assert is_subtype(t, t)
        assert is_subtype(unfold(t), t) and is_subtype(t, unfold(t))
        assert equirec_equal(t, unfold_once(t))
    for a, b, c in itertools.islice(itertools.product(types[:25], repeat=3), 5000):
        if is_subtype(a, b) and is_subtype(b, c):
            assert is_subtype(a, c)
    for v in corpus.all_variants():
        for r in active_roles(v.gtype) - v.reliable:
            assert r not in active_roles(remove_role(v.gtype, r))
