"""Rule definition language: parser, formatter, linter and AST."""

from .ast import (
    CALL_SIGNATURES,
    Binary,
    Expr,
    ExprType,
    FeatureRef,
    FlagLit,
    ModelRef,
    NumberLit,
    RuleDef,
    RuleSet,
    RuleSource,
    SourceCall,
    SynergyDef,
    TextLit,
    Unary,
    canonical_text,
)
from .formatter import format_rules
from .linter import Warning, lint_ruleset
from .parser import (
    DEFAULT_RULESET_KIND,
    DEFAULT_TIER_CONTRIBUTIONS,
    ParseError,
    RuleParseError,
    parse_rules,
)

__all__ = [
    "CALL_SIGNATURES",
    "Binary",
    "DEFAULT_RULESET_KIND",
    "DEFAULT_TIER_CONTRIBUTIONS",
    "Expr",
    "ExprType",
    "FeatureRef",
    "FlagLit",
    "ModelRef",
    "NumberLit",
    "ParseError",
    "RuleDef",
    "RuleParseError",
    "RuleSet",
    "RuleSource",
    "SourceCall",
    "SynergyDef",
    "TextLit",
    "Unary",
    "Warning",
    "canonical_text",
    "format_rules",
    "lint_ruleset",
    "parse_rules",
]
