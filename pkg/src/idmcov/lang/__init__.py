"""Business-rule language: parsing, binding, classification, rendering."""
from .ast import RULE_KINDS, BusinessRule, FrameExpr, PathExpr, RuleFile
from .binder import bind_rules, classify_rule, kind_tally
from .parser import parse_rules
from .render import render_rules

__all__ = ["RULE_KINDS", "BusinessRule", "FrameExpr", "PathExpr", "RuleFile", "bind_rules",
           "classify_rule", "kind_tally", "parse_rules", "render_rules"]
