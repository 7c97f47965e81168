"""Business-rule coverage over an Integrated Data Model (IDM) database.

Typical use::

    schema = parse_schema(text)
    rules = bind_rules(parse_rules(rule_text), schema)
    coverage = derive_all(rules, schema)
    conn = materialize(schema, load_dataset(schema, "dataset/"), ":memory:")
    results = evaluate_coverage(coverage, conn)
"""
from importlib.resources import files

from .compiler import Situation, compile_context
from .dataset import DbSnapshot, load_dataset
from .engine import evaluate_coverage, materialize, read_snapshot
from .errors import IdmcovError
from .lang import bind_rules, classify_rule, parse_rules
from .mcdc import CoverageRule, derive_all, derive_coverage_rules, render_bundle
from .model import IdmSchema, emit_ddl, parse_schema
from .reference import reference_evaluate
from .report import build_report

__all__ = ["CoverageRule", "DbSnapshot", "IdmSchema", "IdmcovError", "Situation",
           "bind_rules", "build_report", "classify_rule", "compile_context", "derive_all",
           "derive_coverage_rules", "emit_ddl", "evaluate_coverage", "fixture_path",
           "load_dataset", "materialize", "parse_rules", "parse_schema", "read_snapshot",
           "reference_evaluate", "render_bundle"]


def fixture_path(name: str = "neworder"):
    """Directory of a bundled fixture (schema.idm, rules.br, dataset/)."""
    return files(__name__) / "fixtures" / name
