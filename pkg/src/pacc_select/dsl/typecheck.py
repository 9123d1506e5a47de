"""Static checks on a parsed RuleSet.

Everything a rule may reference (features, model ids, source calls,
explanation placeholders) is resolved here, so evaluation never has to
deal with unknown names, only with unavailable values.
"""

from __future__ import annotations

import re
from decimal import Decimal

from ..domain import FeatureSchema, FeatureType
from .ast import (
    CALL_SIGNATURES,
    Binary,
    Expr,
    ExprType,
    FeatureRef,
    FlagLit,
    ModelRef,
    NumberLit,
    RuleSet,
    RuleSource,
    SourceCall,
    TextLit,
    Unary,
)

_FEATURE_TYPE_MAP = {
    FeatureType.NUMBER: ExprType.NUMBER,
    FeatureType.TEXT: ExprType.TEXT,
    FeatureType.FLAG: ExprType.FLAG,
}

PLACEHOLDER_RE = re.compile(r"\{([^{}]*)\}")


def check_ruleset(ruleset: RuleSet, schema: FeatureSchema, model_ids: set[str]):
    from .parser import ParseError  # local import to avoid a cycle

    errors: list[ParseError] = []

    def err(pos: tuple[int, int], message: str) -> None:
        errors.append(ParseError(pos[0], pos[1], message))

    seen_names: set[str] = set()
    for rule in ruleset.rules:
        if rule.name in seen_names:
            err(rule.pos, f"duplicate rule name {rule.name!r}")
        seen_names.add(rule.name)
        if not (Decimal(0) < rule.contribution <= Decimal(1)):
            err(rule.pos, f"rule {rule.name!r}: contribution must be in (0, 1], got {rule.contribution}")
        cond_type = _check_expr(rule.condition, schema, model_ids, err)
        if cond_type is not None and cond_type is not ExprType.FLAG:
            err(rule.pos, f"rule {rule.name!r}: condition must be boolean, got {cond_type.value}")
        if rule.source is RuleSource.EXPERT and not rule.explanation:
            err(rule.pos, f"rule {rule.name!r}: expert rules require an explanation")
        if rule.explanation:
            _check_template(rule.name, rule.explanation, rule.pos, schema, err)
    rule_names = {r.name for r in ruleset.rules}
    for synergy in ruleset.synergies:
        if len(set(synergy.rule_names)) < 2:
            err(synergy.pos, "combo requires at least two distinct rule names")
        for name in synergy.rule_names:
            if name not in rule_names:
                err(synergy.pos, f"combo references unknown rule {name!r}")
        if not (Decimal(0) < synergy.bonus <= Decimal(1)):
            err(synergy.pos, f"combo bonus must be in (0, 1], got {synergy.bonus}")
    return errors


def _check_expr(expr: Expr, schema: FeatureSchema, model_ids: set[str], err) -> ExprType | None:
    """Infer the expression type, reporting every error found. Returns None
    when the type could not be established."""
    if isinstance(expr, NumberLit):
        return ExprType.NUMBER
    if isinstance(expr, TextLit):
        return ExprType.TEXT
    if isinstance(expr, FlagLit):
        return ExprType.FLAG
    if isinstance(expr, FeatureRef):
        ftype = schema.type_of(expr.name)
        if ftype is None:
            err(expr.pos, f"unknown feature {expr.name!r}")
            return None
        return _FEATURE_TYPE_MAP[ftype]
    if isinstance(expr, ModelRef):
        if expr.name not in model_ids:
            err(expr.pos, f"unknown model {expr.name!r}")
            return None
        return ExprType.NUMBER
    if isinstance(expr, SourceCall):
        sig = CALL_SIGNATURES.get(expr.name)
        if sig is None:
            err(expr.pos, f"unknown call {expr.name!r}")
            return None
        arity, result = sig
        if len(expr.args) != arity:
            err(expr.pos, f"{expr.name}() takes {arity} argument(s), got {len(expr.args)}")
            return result
        for arg in expr.args:
            ftype = schema.type_of(arg)
            if ftype is None:
                err(expr.pos, f"{expr.name}(): unknown feature {arg!r}")
            elif ftype is not FeatureType.NUMBER:
                err(expr.pos, f"{expr.name}(): feature {arg!r} must be numeric")
        return result
    if isinstance(expr, Unary):
        inner = _check_expr(expr.operand, schema, model_ids, err)
        if expr.op == "not":
            if inner is not None and inner is not ExprType.FLAG:
                err(expr.pos, f"'not' needs a boolean operand, got {inner.value}")
            return ExprType.FLAG
        if inner is not None and inner is not ExprType.NUMBER:
            err(expr.pos, f"unary '-' needs a numeric operand, got {inner.value}")
        return ExprType.NUMBER
    if isinstance(expr, Binary):
        left = _check_expr(expr.left, schema, model_ids, err)
        right = _check_expr(expr.right, schema, model_ids, err)
        if expr.op in ("and", "or"):
            for side, t in (("left", left), ("right", right)):
                if t is not None and t is not ExprType.FLAG:
                    err(expr.pos, f"'{expr.op}' needs boolean operands, {side} side is {t.value}")
            return ExprType.FLAG
        if expr.op in ("+", "-", "*", "/"):
            for side, t in (("left", left), ("right", right)):
                if t is not None and t is not ExprType.NUMBER:
                    err(expr.pos, f"'{expr.op}' needs numeric operands, {side} side is {t.value}")
            return ExprType.NUMBER
        # comparisons
        if expr.op in ("<", "<=", ">", ">="):
            for side, t in (("left", left), ("right", right)):
                if t is not None and t is not ExprType.NUMBER:
                    err(expr.pos, f"ordering comparison needs numeric operands, {side} side is {t.value}")
            return ExprType.FLAG
        # == / != : both sides must agree; strings never coerce to numbers
        if left is not None and right is not None and left is not right:
            err(expr.pos, f"'{expr.op}' operands must have the same type, got {left.value} and {right.value}")
        return ExprType.FLAG
    raise TypeError(f"unknown expression node {expr!r}")


def _check_template(rule_name: str, template: str, pos, schema: FeatureSchema, err) -> None:
    """Placeholders must be case.<feature> or a registered call; stray
    braces are rejected (there is no brace escaping)."""
    stripped = PLACEHOLDER_RE.sub("", template)
    if "{" in stripped or "}" in stripped:
        err(pos, f"rule {rule_name!r}: unbalanced braces in explanation template")
        return
    for match in PLACEHOLDER_RE.finditer(template):
        key = match.group(1).strip()
        if parse_placeholder(key, schema) is None:
            err(pos, f"rule {rule_name!r}: bad explanation placeholder {{{key}}}")


_CASE_PLACEHOLDER_RE = re.compile(r"^case\.([A-Za-z_][A-Za-z0-9_]*)$")
_CALL_PLACEHOLDER_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\(([^()]*)\)$")


def parse_placeholder(key: str, schema: FeatureSchema) -> FeatureRef | SourceCall | None:
    """Resolve an explanation placeholder to the reference it names."""
    m = _CASE_PLACEHOLDER_RE.match(key)
    if m:
        if schema.type_of(m.group(1)) is None:
            return None
        return FeatureRef(m.group(1))
    m = _CALL_PLACEHOLDER_RE.match(key)
    if m:
        name = m.group(1)
        args = tuple(a.strip() for a in m.group(2).split(",") if a.strip())
        sig = CALL_SIGNATURES.get(name)
        if sig is None or len(args) != sig[0]:
            return None
        for arg in args:
            if schema.type_of(arg) is not FeatureType.NUMBER:
                return None
        return SourceCall(name, args)
    return None
