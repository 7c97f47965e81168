import sqlite3
from types import SimpleNamespace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from idmcov.errors import (
    DdlCycleError, ResolveError, SchemaError, SchemaValidationError, SyntaxError_,
)
from idmcov.model import (
    DATABASE, TESTCASE, UI, anchor_routes, ddl_order, emit_ddl, parse_schema, render_schema,
    resolve_attribute, validate_schema,
)

MINIMAL = """
entity TestCase level TestCase { tc_id : integer; key(tc_id) }
entity UI_Form level UI { f_tc_id : integer; f_ui_id : integer; v : integer input; key(f_tc_id, f_ui_id) }
relationship FormOfCase fk from UI_Form(f_tc_id) to TestCase(tc_id)
assignment Form root UI_Form
"""


def diagnostics_for(text):
    return validate_schema(parse_schema(text, validate=False))


def codes(diags):
    return sorted(d.code for d in diags)


def path_of(*steps):
    return SimpleNamespace(name="P", steps=[SimpleNamespace(alias=s, entity=s) for s in steps])


def test_fixture_schema_shape(schema):
    assert [e.name for e in schema.entities] == [
        "TestCase", "Customer", "Item", "Stock", "Order", "UI_Order", "UI_OrderLine"]
    levels = {e.name: e.level for e in schema.entities}
    assert levels["TestCase"] == TESTCASE
    assert levels["UI_Order"] == levels["UI_OrderLine"] == UI
    assert levels["Stock"] == DATABASE
    inter = {(r.from_entity, r.to_entity) for r in schema.relationships if r.kind == "inter_level"}
    assert inter == {("UI_Order", "TestCase"), ("UI_Order", "Customer"), ("UI_Order", "Order"),
                     ("UI_OrderLine", "Stock")}
    assert validate_schema(schema) == []


def test_attribute_roles_and_types(schema):
    ol = schema.entity("ui_orderline")
    assert ol.attribute("OL_QUANTITY").io_role == "input"
    assert ol.attribute("o_brand").io_role == "output"
    assert ol.attribute("ol_quantity").nullable
    assert not ol.attribute("ol_i_id").nullable
    price = schema.entity("Item").attribute("i_price")
    assert (price.kind, price.precision, price.scale) == ("decimal", 5, 2)
    assert schema.entity("Stock").attribute("s_w_id").io_role == "stored"


def test_output_relationship_is_marked(schema):
    stored = next(r for r in schema.relationships if r.name == "OrderStored")
    assert stored.output and stored.declared_as_fk


def test_empty_text_is_rejected():
    with pytest.raises(SchemaError, match="no entities declared"):
        parse_schema("")


def test_syntax_error_reports_position():
    with pytest.raises(SyntaxError_) as err:
        parse_schema("entity A level Database { a integer; key(a) }")
    assert ":1:29:" in str(err.value) and "expected ':'" in str(err.value)


def test_unknown_level_and_duplicate_entity():
    with pytest.raises(SchemaError, match="unknown level"):
        parse_schema("entity A level Warehouse { a : integer; key(a) }")
    with pytest.raises(SchemaError, match="duplicate entity"):
        parse_schema("entity A level Database { a : integer; key(a) }\n"
                     "entity a level Database { a : integer; key(a) }")


def test_minimal_schema_is_valid():
    assert diagnostics_for(MINIMAL) == []


def test_ui_prefix_violation():
    text = MINIMAL.replace("UI_Form", "Form")
    assert "ui-prefix" in codes(diagnostics_for(text))


def test_ui_prefix_reserved_for_ui_level():
    text = MINIMAL + "entity UI_Stock level Database { s : integer; key(s) }\n"
    assert codes(diagnostics_for(text)) == ["ui-prefix"]


def test_testcase_key_must_be_tc_id():
    text = MINIMAL.replace("{ tc_id : integer; key(tc_id) }",
                           "{ tc_id : integer; run : integer; key(tc_id, run) }")
    diags = [str(d) for d in diagnostics_for(text)]
    assert "[testcase-key] TestCase: TestCase key must be tc_id" in diags


def test_ui_entity_without_ui_id():
    text = MINIMAL.replace("f_ui_id : integer; ", "").replace("key(f_tc_id, f_ui_id)",
                                                              "key(f_tc_id)")
    diags = diagnostics_for(text)
    assert codes(diags) == ["ui-key"]
    assert diags[0].element == "UI_Form"


def test_child_ui_entity_must_extend_key():
    child = ("entity UI_Line level UI { l_tc_id : integer; l_ui_id : integer; x : integer input; "
             "key(l_tc_id, l_ui_id) }\n"
             "relationship LineOfForm fk from UI_Line(l_tc_id, l_ui_id) to UI_Form(f_tc_id, f_ui_id)\n")
    assert codes(diagnostics_for(MINIMAL + child)) == ["ui-key"]
    fixed = child.replace("x : integer input; key(l_tc_id, l_ui_id)",
                          "l_no : integer input; key(l_tc_id, l_ui_id, l_no)")
    assert diagnostics_for(MINIMAL + fixed) == []


def test_io_role_only_at_ui_level():
    text = MINIMAL + "entity S level Database { s : integer input; key(s) }\n"
    assert codes(diagnostics_for(text)) == ["io-role"]


def test_nullable_key_attribute():
    text = MINIMAL + "entity S level Database { s : integer null; key(s) }\n"
    assert codes(diagnostics_for(text)) == ["key"]


def test_relationship_kind_must_match_levels():
    text = MINIMAL + ("entity S level Database { s : integer; key(s) }\n"
                      "entity T level Database { t : integer; s_ref : integer; key(t) }\n"
                      "relationship TS fk from T(s_ref) to S(s)\n")
    schema = parse_schema(text)
    assert next(r for r in schema.relationships if r.name == "TS").kind == "intra_level"
    assert next(r for r in schema.relationships if r.name == "FormOfCase").kind == "inter_level"


def test_incompatible_join_kinds():
    text = MINIMAL + ("entity S level Database { s : text(3); key(s) }\n"
                      "entity T level Database { t : integer; key(t) }\n"
                      "relationship TS fk from T(t) to S(s)\n")
    assert codes(diagnostics_for(text)) == ["relationship-attribute"]


def test_missing_anchor_route():
    text = MINIMAL.replace("relationship FormOfCase fk from UI_Form(f_tc_id) to TestCase(tc_id)",
                           "")
    assert codes(diagnostics_for(text)) == ["anchor"]


def test_assignment_root_must_be_ui():
    text = MINIMAL + "assignment Bad root TestCase\n"
    assert codes(diagnostics_for(text)) == ["assignment-root"]


def test_parse_raises_on_validation_failure():
    with pytest.raises(SchemaValidationError) as err:
        parse_schema(MINIMAL.replace("UI_Form", "Form"))
    assert "UI_" in str(err.value)


def test_every_ui_entity_has_one_anchor_route(schema):
    for ent in schema.entities:
        if ent.level == UI:
            routes = anchor_routes(schema, ent.name)
            assert len(routes) == 1
            assert schema.level_of(routes[0][0].parent) == TESTCASE
            assert routes[0][-1].child == ent.name
            assert all(not edge.relationship.output for edge in routes[0])


def test_render_is_a_fixpoint(schema):
    once = render_schema(schema)
    again = parse_schema(once)
    assert again == schema
    assert render_schema(again) == once


def test_ddl_statement_count_and_order(schema):
    ddl = emit_ddl(schema)
    lines = ddl.strip().splitlines()
    assert len(lines) == 7 and all(line.startswith("CREATE TABLE") and line.endswith(";")
                                   for line in lines)
    line = next(x for x in lines if x.startswith("CREATE TABLE UI_OrderLine "))
    assert "FOREIGN KEY (ol_tc_id, ol_ui_id) REFERENCES UI_Order (o_tc_id, o_ui_id)" in line
    assert "REFERENCES Stock" in line
    order = [e.name for e in ddl_order(schema)]
    assert order.index("UI_Order") < order.index("UI_OrderLine")
    assert order.index("Item") < order.index("Stock")


def test_output_link_has_no_foreign_key(schema):
    ui_order = next(x for x in emit_ddl(schema).splitlines() if "TABLE UI_Order " in x)
    assert 'REFERENCES "Order"' not in ui_order


def _catalog(conn):
    out = {}
    for (name,) in conn.execute("SELECT name FROM sqlite_master WHERE type = 'table'"):
        cols = conn.execute(f'PRAGMA table_info("{name}")').fetchall()
        fks = conn.execute(f'PRAGMA foreign_key_list("{name}")').fetchall()
        out[name.lower()] = {
            "columns": [(c[1].lower(), bool(c[3])) for c in cols],
            "key": [c[1].lower() for c in sorted(cols, key=lambda c: c[5]) if c[5]],
            "fks": sorted({f[2].lower() for f in fks}),
        }
    return out


def _expected_catalog(schema):
    out = {}
    for ent in schema.entities:
        fks = {r.to_entity.lower() for r in schema.relationships
               if r.declared_as_fk and not r.output and r.from_entity.lower() == ent.name.lower()}
        out[ent.name.lower()] = {
            "columns": [(a.name.lower(), not a.nullable) for a in ent.attributes],
            "key": [k.lower() for k in ent.primary_key],
            "fks": sorted(fks),
        }
    return out


def test_ddl_introspection_matches_schema(schema):
    conn = sqlite3.connect(":memory:")
    conn.execute("PRAGMA foreign_keys = ON")
    conn.executescript(emit_ddl(schema))
    assert _catalog(conn) == _expected_catalog(schema)


def test_single_entity_ddl():
    schema = parse_schema("entity A level Database { a : integer; key(a) }", validate=False)
    ddl = emit_ddl(schema)
    assert ddl.count("CREATE TABLE") == 1 and "FOREIGN KEY" not in ddl


def test_fk_cycle_is_reported():
    schema = parse_schema(
        "entity A level Database { a : integer; b_ref : integer; key(a) }\n"
        "entity B level Database { b : integer; a_ref : integer; key(b) }\n"
        "relationship AB fk from A(b_ref) to B(b)\n"
        "relationship BA fk from B(a_ref) to A(a)\n", validate=False)
    with pytest.raises(DdlCycleError) as err:
        emit_ddl(schema)
    assert "A" in str(err.value) and "B" in str(err.value)


def test_reserved_word_entity_is_quoted(schema):
    assert 'CREATE TABLE "Order"' in emit_ddl(schema)


def test_resolve_attribute_on_fixture_path(schema):
    p2 = path_of("UI_OrderLine", "Stock", "Item")
    ref = resolve_attribute(schema, p2, "i_data")
    assert (ref.entity, ref.attribute) == ("Item", "i_data")
    ref = resolve_attribute(schema, p2, "s_i_id")
    assert (ref.entity, ref.attribute) == ("Stock", "s_i_id")
    ref = resolve_attribute(schema, p2, "stock.S_DATA")
    assert (ref.entity, ref.attribute) == ("Stock", "s_data")


def test_resolve_attribute_errors(schema):
    p2 = path_of("UI_OrderLine", "Stock", "Item")
    with pytest.raises(ResolveError, match="unknown attribute"):
        resolve_attribute(schema, p2, "c_last")
    with pytest.raises(ResolveError, match="not on path"):
        resolve_attribute(schema, p2, "Customer.c_last")


def test_ambiguous_attribute_lists_candidates():
    schema = parse_schema("entity A level Database { a : integer; name : text(5); key(a) }\n"
                          "entity B level Database { b : integer; name : text(5); key(b) }\n",
                          validate=False)
    with pytest.raises(ResolveError) as err:
        resolve_attribute(schema, path_of("A", "B"), "name")
    assert "A" in str(err.value) and "B" in str(err.value)


identifiers = st.from_regex(r"[a-z][a-z0-9]{0,5}", fullmatch=True).filter(
    lambda s: s not in {"key", "null", "input", "output", "entity", "level"})
types = st.sampled_from(["integer", "text(8)", "decimal(6,2)", "boolean", "datetime"])


@st.composite
def database_entities(draw):
    names = draw(st.lists(identifiers, min_size=1, max_size=4, unique=True))
    blocks = []
    for i, name in enumerate(names):
        attrs = draw(st.lists(identifiers, min_size=1, max_size=4, unique=True))
        cols = [f"k{i}_id : integer"] + [
            f"{a}_{i} : {draw(types)}{' null' if draw(st.booleans()) else ''}" for a in attrs]
        blocks.append(f"entity D{name} level Database {{ {'; '.join(cols)}; key(k{i}_id) }}")
    return MINIMAL + "\n".join(blocks) + "\n"


@settings(max_examples=40, deadline=None)
@given(database_entities())
def test_random_schemas_round_trip(text):
    parsed = parse_schema(text)
    assert parse_schema(render_schema(parsed)) == parsed
    conn = sqlite3.connect(":memory:")
    conn.executescript(emit_ddl(parsed))
    assert _catalog(conn) == _expected_catalog(parsed)
