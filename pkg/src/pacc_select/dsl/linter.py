"""Hygiene checks on a valid RuleSet; warnings, never failures."""

from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal

from .ast import Binary, Expr, FeatureRef, ModelRef, RuleSet, RuleSource, SourceCall, Unary


@dataclass(frozen=True)
class Warning:
    rule_name: str
    code: str
    message: str

    def __str__(self) -> str:
        return f"[{self.code}] {self.rule_name}: {self.message}"


def lint_ruleset(ruleset: RuleSet) -> list[Warning]:
    out: list[Warning] = []
    for rule in ruleset.rules:
        if _is_constant(rule.condition):
            out.append(
                Warning(rule.name, "constant-condition",
                        "condition does not depend on any case, model or source input")
            )
        if rule.contribution == Decimal(1):
            out.append(
                Warning(rule.name, "saturating-contribution",
                        "contribution 1 drives the score to its maximum on its own")
            )
        if rule.source is RuleSource.MODEL_BACKED and not rule.explanation:
            out.append(
                Warning(rule.name, "no-explanation",
                        "model-backed rule without an explanation; auditors will "
                        "only see the limited-explanation notice")
            )
    return out


def _is_constant(expr: Expr) -> bool:
    """True when the condition references no feature, model or source call."""
    if isinstance(expr, (FeatureRef, ModelRef, SourceCall)):
        return False
    if isinstance(expr, Unary):
        return _is_constant(expr.operand)
    if isinstance(expr, Binary):
        return _is_constant(expr.left) and _is_constant(expr.right)
    return True
