"""Canonical text form of a RuleSet; parse(format_rules(rs)) == rs."""

from __future__ import annotations

from ..domain import CaseKind
from ..jsonio import fmt_decimal
from .ast import RuleSet, canonical_text
from .lexer import escape_string
from .parser import DEFAULT_RULESET_KIND


def format_rules(ruleset: RuleSet) -> str:
    """Render the canonical source text. An empty default-kind set renders
    to the empty string, mirroring what parsing "" produces."""
    empty = not ruleset.rules and not ruleset.synergies
    if empty and ruleset.kind is DEFAULT_RULESET_KIND:
        return ""
    blocks: list[str] = [f"ruleset for {ruleset.kind.value}"]
    for rule in ruleset.rules:
        lines = [f"rule {escape_string(rule.name)} {{"]
        lines.append(f"  weight: {rule.tier.name}")
        lines.append(f"  contribution: {fmt_decimal(rule.contribution)}")
        lines.append(f"  when: {canonical_text(rule.condition)}")
        if rule.explanation:
            lines.append(f"  explain: {escape_string(rule.explanation)}")
        lines.append(f"  source: {rule.source.value}")
        lines.append("}")
        blocks.append("\n".join(lines))
    for synergy in ruleset.synergies:
        names = ", ".join(escape_string(n) for n in synergy.rule_names)
        blocks.append(
            "combo {\n"
            f"  rules: [{names}]\n"
            f"  bonus: {fmt_decimal(synergy.bonus)}\n"
            "}"
        )
    return "\n\n".join(blocks) + "\n"
