import itertools
import random
from dataclasses import dataclass

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import toys
from idmcov.compiler import Situation, compile_context, split_atoms
from idmcov.dataset import DbSnapshot
from idmcov.engine import COVERED, connect, evaluate_coverage, materialize
from idmcov.errors import BudgetError
from idmcov.lang import bind_rules, parse_rules
from idmcov.lang.ast import And, Or
from idmcov.mcdc import (
    ALL_TRUE, BOUNDARY, CONDITION_FLIP, JOIN_VIOLATION, NULL_VALUE, CoverageRule, Requirement,
    boundary_edges, derive_all, derive_condition_variants, derive_coverage_rules,
    filter_with_reasons, is_mcdc_set, parse_bundle, render_bundle,
)
from idmcov.reference import reference_covers
from idmcov.sql import Cond, Join, Query


@dataclass(frozen=True)
class Leaf:
    index: int


def c(i):
    return Leaf(i)


def decide(tree, values):
    if isinstance(tree, And):
        return all(decide(t, values) for t in tree.items)
    if isinstance(tree, Or):
        return any(decide(t, values) for t in tree.items)
    return values[tree.index]


def toggles(tree, a, i):
    b = list(a)
    b[i] = not b[i]
    return decide(tree, a) != decide(tree, b)


def brute_force_mcdc(tree, assignments, n):
    """Every atom has two selected assignments that differ in it and in the outcome,
    with the atom deciding the outcome alone in both (read-once trees)."""
    for i in range(n):
        if not any(a[i] != b[i] and decide(tree, a) != decide(tree, b)
                   and toggles(tree, a, i) and toggles(tree, b, i)
                   for a, b in itertools.combinations(assignments, 2)):
            return False
    return True


def assignments(variants):
    return [v.assignment for v in variants]


T, F = True, False


def test_conjunction_of_two():
    got = assignments(derive_condition_variants(And((c(0), c(1)))))
    assert got == [(T, T), (T, F), (F, T)]


def test_single_atom():
    got = derive_condition_variants(c(0), 1)
    assert assignments(got) == [(T,), (F,)]
    assert [v.outcome for v in got] == [T, F]


def test_and_or_mix():
    tree = Or((And((c(0), c(1))), c(2)))
    got = assignments(derive_condition_variants(tree))
    assert got[0] == (T, T, T)
    assert got == [(T, T, T), (T, T, F), (T, F, T), (T, F, F), (F, T, F)]
    assert brute_force_mcdc(tree, got, 3)
    assert is_mcdc_set(tree, got, 3)


def test_flip_label_is_determining():
    tree = And((c(0), c(1), c(2)))
    for v in derive_condition_variants(tree)[1:]:
        assert v.determines and toggles(tree, v.assignment, v.determines[0])


def test_budget():
    tree = And(tuple(c(i) for i in range(17)))
    with pytest.raises(BudgetError):
        derive_condition_variants(tree)


def test_sixteen_atoms_fit():
    tree = And(tuple(c(i) for i in range(16)))
    got = derive_condition_variants(tree)
    assert len(got) == 17


@st.composite
def read_once_trees(draw):
    counter = itertools.count()

    def build(depth):
        if depth == 0 or draw(st.integers(0, 2)) == 0:
            return c(next(counter))
        kind = draw(st.sampled_from([And, Or]))
        width = draw(st.integers(2, 3))
        return kind(tuple(build(depth - 1) for _ in range(width)))

    tree = build(3)
    return tree, next(counter)


@settings(max_examples=150, deadline=None)
@given(read_once_trees().filter(lambda tn: tn[1] <= 8))
def test_random_trees_yield_masking_sets(tree_n):
    tree, n = tree_n
    variants = derive_condition_variants(tree, n)
    got = assignments(variants)
    assert got[0] == (T,) * n
    assert len(set(got)) == len(got)
    assert brute_force_mcdc(tree, got, n)
    assert is_mcdc_set(tree, got, n)
    for v in variants:
        assert v.outcome == decide(tree, v.assignment)
        for i in v.determines:
            assert toggles(tree, v.assignment, i)
    assert derive_condition_variants(tree, n) == variants


def test_checker_rejects_incomplete_sets():
    tree = And((c(0), c(1)))
    assert not is_mcdc_set(tree, [(T, T), (F, T)], 2)
    assert not brute_force_mcdc(tree, [(T, T), (F, T)], 2)


def kinds(rules):
    return [r.kind for r in rules]


def test_example3_requirements(rule_by_name, schema):
    rules = derive_coverage_rules(rule_by_name["Ex3"], schema)
    assert kinds(rules) == [JOIN_VIOLATION] * 2 + [ALL_TRUE] + [CONDITION_FLIP] * 2 + \
        [NULL_VALUE] * 2
    kept, removed = filter_with_reasons(rules)
    assert kept == rules and removed == []
    flip = next(r for r in rules if r.id == "Ex3.ConditionFlip.1")
    assert flip.req_class == "ConditionFlip(Stock.s_data LIKE '%ORIGINAL%')"
    assert flip.description == (
        "The condition P2.i_data is like '%ORIGINAL%' is true and the condition "
        "P2.s_data is like '%ORIGINAL%' is false; all predicates of P2 are fulfilled")
    assert rules[2].description == ("All predicates of the path P2 are fulfilled and all "
                                    "conditions hold")
    null = next(r for r in rules if r.id == "Ex3.NullValue.1")
    assert null.description.startswith("The path attribute P2.i_data has a missing value and "
                                       "the condition P2.s_data is like '%ORIGINAL%' is true")
    jv = rules[0]
    assert jv.description.startswith("The predicate of P2 that connects UI_OrderLine and Stock "
                                     "is not fulfilled and the other predicates of P2 are "
                                     "fulfilled")


def test_example1_yields_four(rule_by_name, schema):
    rules = derive_coverage_rules(rule_by_name["Ex1"], schema)
    assert kinds(rules) == [ALL_TRUE, CONDITION_FLIP, CONDITION_FLIP, NULL_VALUE]
    assert [r.requirement.situation.truth for r in rules[:3]] == [
        ((0, T), (1, T)), ((0, T), (1, F)), ((0, F), (1, T))]


def test_frame_descriptions_mention_the_frame(rule_by_name, schema):
    rules = derive_coverage_rules(rule_by_name["Ex4"], schema)
    assert all("frame G" in r.description for r in rules if r.kind != JOIN_VIOLATION)


def test_ids_are_unique_and_stable(rules, schema):
    first = derive_all(rules, schema)
    second = derive_all(rules, schema)
    assert render_bundle(first) == render_bundle(second)
    ids = [r.id for r in first]
    assert len(set(ids)) == len(ids)


def test_bundle_round_trip(coverage):
    text = render_bundle(coverage)
    records = parse_bundle(text)
    assert [r["id"] for r in records] == [c.id for c in coverage]
    assert all(list(r) == ["id", "class", "rule", "description", "sql"] for r in records)
    assert records[0]["sql"] == coverage[0].sql
    assert render_bundle([]) == "" and parse_bundle("") == []


def bind(text, schema):
    return bind_rules(parse_rules(text), schema)


def test_three_predicates_three_violations():
    schema = toys.toy_schema()
    (rule,) = bind("Path P is UI_Form[]A[]B[]C\nRule J: Each P.c_m must be at least 1", schema)
    rules = derive_coverage_rules(rule, schema)
    jvs = [r for r in rules if r.kind == JOIN_VIOLATION]
    assert [r.requirement.predicate for r in jvs] == [0, 1, 2]
    full = {"TestCase": [{"tc_id": 1}],
            "UI_Form": [dict(f_tc_id=1, f_ui_id=1, f_n=None, f_m=1, f_t=None, f_link=1)],
            "A": [dict(a_id=1, a_n=None, a_m=1, a_t=None, a_link=1)],
            "B": [dict(b_id=1, b_n=None, b_m=1, b_t=None, b_link=1)],
            "C": [dict(c_id=1, c_n=None, c_m=1, c_t=None, c_link=None)]}
    links = [("UI_Form", "f_link"), ("A", "a_link"), ("B", "b_link")]
    for broken, (entity, attr) in enumerate(links):
        tables = {k: [dict(r) for r in v] for k, v in full.items()}
        tables[entity][0][attr] = 9
        snap = DbSnapshot(tables)
        conn = materialize(schema, snap, connect(":memory:"))
        results = {r.id: r.status for r in evaluate_coverage(jvs, conn)}
        for jv in jvs:
            expected = jv.requirement.predicate == broken
            assert (results[jv.id] == COVERED) is expected
            assert reference_covers(jv, snap, schema) is expected


def test_null_variant_per_attribute():
    schema = toys.toy_schema()
    (rule,) = bind("Rule N: Each UI_Form.f_n must be at least 1 and UI_Form.f_n must be at "
                   "most 2 and UI_Form.f_m must be at least 0", schema)
    nulls = [r for r in derive_coverage_rules(rule, schema) if r.kind == NULL_VALUE]
    assert len(nulls) == 1
    assert nulls[0].requirement.dropped == (0, 1)
    row = dict(f_tc_id=1, f_ui_id=1, f_n=None, f_m=1, f_t=None, f_link=None)
    snap = DbSnapshot({"TestCase": [{"tc_id": 1}], "UI_Form": [row]})
    assert reference_covers(nulls[0], snap, schema)
    (plain,) = bind("Rule M: Each UI_Form.f_m must be at least 0", schema)
    assert not [r for r in derive_coverage_rules(plain, schema) if r.kind == NULL_VALUE]


def test_boundary_mode(schema):
    (rule,) = bind("Rule B: Each Stock.s_quantity must be at least 5", schema)
    assert not [r for r in derive_coverage_rules(rule, schema) if r.kind == BOUNDARY]
    pins = [r.requirement.edge for r in derive_coverage_rules(rule, schema, boundaries=True)
            if r.kind == BOUNDARY]
    assert pins == [5, 4]


def test_count_range_boundaries(rule_by_name, schema):
    rules = derive_coverage_rules(rule_by_name["Ex2"], schema, boundaries=True)
    assert sorted(r.requirement.edge for r in rules if r.kind == BOUNDARY) == [4, 5, 15, 16]


def test_like_has_no_boundaries(rule_by_name, schema):
    ctx = compile_context(rule_by_name["Ex3"], schema)
    assert all(boundary_edges(atom, ctx) == [] for atom in ctx.atoms)


def test_boundary_rules_are_satisfiable(rule_by_name, schema):
    ex2 = rule_by_name["Ex2"]
    rules = [r for r in derive_coverage_rules(ex2, schema, boundaries=True)
             if r.kind == BOUNDARY]
    base = {"TestCase": [{"tc_id": 1}],
            "Customer": [dict(c_w_id=1, c_d_id=1, c_id=1, c_last=None, c_credit=None,
                              c_discount=None)],
            "UI_Order": [dict(o_tc_id=1, o_ui_id=1, o_w_id=1, o_d_id=1, o_c_id=1, o_id=None,
                              o_entry_d=None, status=None)]}
    for rule in rules:
        lines = [dict(ol_tc_id=1, ol_ui_id=1, ol_number=n, ol_i_id=1, ol_supply_w_id=None,
                      ol_quantity=1, ol_amount=None, o_brand=None)
                 for n in range(rule.requirement.edge)]
        snap = DbSnapshot({**base, "UI_OrderLine": lines})
        conn = materialize(schema, snap, connect(":memory:"))
        (res,) = evaluate_coverage([rule], conn)
        assert res.status == COVERED
        assert reference_covers(rule, snap, schema)


def _fake(rule_id, query):
    req = Requirement(ALL_TRUE, Situation())
    return CoverageRule(rule_id, None, req, ALL_TRUE, query.render(), "", query)


def test_dedupe_filter_policy():
    joins = (Join("FROM", "T", "T"),)
    same_a = _fake("a", Query(joins, (Cond("T.x = 1", (("cmp", "T.x", "eq", 1),)),)))
    same_b = _fake("b", Query(joins, (Cond("T.x  =  1", (("cmp", "T.x", "eq", 1),)),)))
    false = _fake("c", Query(joins, (Cond("1 = 0", (("const", False),)),)))
    clash = _fake("d", Query(joins, (Cond("T.x = 1", (("cmp", "T.x", "eq", 1),)),
                                     Cond("T.x = 2", (("cmp", "T.x", "eq", 2),)))))
    null_cmp = _fake("e", Query(joins, (Cond("T.x IS NULL", (("null", "T.x"),)),
                                        Cond("T.x >= 3", (("cmp", "T.x", "ge", 3),)))))
    fine = _fake("f", Query(joins, (Cond("T.x >= 1", (("cmp", "T.x", "ge", 1),)),
                                    Cond("T.x <= 1", (("cmp", "T.x", "le", 1),)))))
    kept, removed = filter_with_reasons([same_a, same_b, false, clash, null_cmp, fine])
    assert [r.id for r in kept] == ["a", "f"]
    reasons = {r.id: why for r, why in removed}
    assert reasons["b"] == "duplicate of a"
    assert reasons["c"].startswith("statically unsatisfiable")
    assert "two different constants" in reasons["d"]
    assert "both null and compared" in reasons["e"]


def test_single_atom_partitions_are_disjoint():
    schema = toys.toy_schema()
    (rule,) = bind("Rule S: Each UI_Form.f_n must be at least 2", schema)
    rules = derive_coverage_rules(rule, schema)
    assert kinds(rules) == [ALL_TRUE, CONDITION_FLIP, NULL_VALUE]
    for value, expected in ((3, ALL_TRUE), (1, CONDITION_FLIP), (None, NULL_VALUE)):
        row = dict(f_tc_id=1, f_ui_id=1, f_n=value, f_m=0, f_t=None, f_link=None)
        snap = DbSnapshot({"TestCase": [{"tc_id": 1}], "UI_Form": [row]})
        conn = materialize(schema, snap, connect(":memory:"))
        covered = [r.id for r in evaluate_coverage(rules, conn) if r.status == COVERED]
        assert covered == [f"S.{expected}.1"]


def test_count_law_on_small_sample():
    rng = random.Random(2)
    for i in range(40):
        schema, _, (rule,), (gen,) = toys.random_rules(rng, 1, prefix=f"L{i}_")
        got = len(filter_with_reasons(derive_coverage_rules(rule, schema))[0])
        assert got == gen.n_predicates + 1 + gen.n_atoms + len(gen.nullable)


def test_split_atoms_keeps_text(rule_by_name):
    _, atoms = split_atoms(rule_by_name["Ex2"])
    assert [a.text for a in atoms] == ["P1.UI_Order has at least 5 P1.UI_OrderLine",
                                       "P1.UI_Order has at most 15 P1.UI_OrderLine"]
