"""AST for the rule definition language.

Nodes compare structurally; source positions are carried for error
reporting but excluded from equality so parse(format(rs)) == rs holds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal
from enum import Enum
from typing import Union

from ..domain import CaseKind, WeightTier

Pos = tuple[int, int]  # (line, column), 1-based
_NO_POS: Pos = (0, 0)


class ExprType(Enum):
    NUMBER = "number"
    TEXT = "text"
    FLAG = "flag"


@dataclass(frozen=True)
class NumberLit:
    value: Decimal
    pos: Pos = field(default=_NO_POS, compare=False, repr=False)


@dataclass(frozen=True)
class TextLit:
    value: str
    pos: Pos = field(default=_NO_POS, compare=False, repr=False)


@dataclass(frozen=True)
class FlagLit:
    value: bool
    pos: Pos = field(default=_NO_POS, compare=False, repr=False)


@dataclass(frozen=True)
class FeatureRef:
    """`case.<feature>` - a feature value of the case under evaluation."""

    name: str
    pos: Pos = field(default=_NO_POS, compare=False, repr=False)


@dataclass(frozen=True)
class ModelRef:
    """`model.<model_id>` - output of a registered predictive model."""

    name: str
    pos: Pos = field(default=_NO_POS, compare=False, repr=False)


@dataclass(frozen=True)
class SourceCall:
    """A data-source query, e.g. watchlist_links() or peer_zscore(revenue_eur)."""

    name: str
    args: tuple[str, ...] = ()
    pos: Pos = field(default=_NO_POS, compare=False, repr=False)


@dataclass(frozen=True)
class Unary:
    op: str  # "not" | "-"
    operand: "Expr"
    pos: Pos = field(default=_NO_POS, compare=False, repr=False)


@dataclass(frozen=True)
class Binary:
    """Arithmetic (+ - * /), comparison (< <= > >= == !=) or boolean (and, or)."""

    op: str
    left: "Expr"
    right: "Expr"
    pos: Pos = field(default=_NO_POS, compare=False, repr=False)


Expr = Union[NumberLit, TextLit, FlagLit, FeatureRef, ModelRef, SourceCall, Unary, Binary]

ARITH_OPS = {"+", "-", "*", "/"}
COMPARE_OPS = {"<", "<=", ">", ">=", "==", "!="}
BOOL_OPS = {"and", "or"}


class RuleSource(str, Enum):
    EXPERT = "expert"
    MODEL_BACKED = "model"


@dataclass(frozen=True)
class RuleDef:
    name: str
    tier: WeightTier
    contribution: Decimal
    condition: Expr
    explanation: str = ""
    source: RuleSource = RuleSource.EXPERT
    pos: Pos = field(default=_NO_POS, compare=False, repr=False)


@dataclass(frozen=True)
class SynergyDef:
    """Bonus applied when every named rule triggers on the same case."""

    rule_names: tuple[str, ...]
    bonus: Decimal
    pos: Pos = field(default=_NO_POS, compare=False, repr=False)


@dataclass(frozen=True)
class RuleSet:
    kind: CaseKind
    rules: tuple[RuleDef, ...] = ()
    synergies: tuple[SynergyDef, ...] = ()

    def rule_names(self) -> set[str]:
        return {r.name for r in self.rules}


# Registered source calls: name -> (number of feature-name args, result type).
CALL_SIGNATURES: dict[str, tuple[int, ExprType]] = {
    "watchlist_links": (0, ExprType.NUMBER),
    "companies_at_address": (0, ExprType.NUMBER),
    "months_since_last_vat_return": (0, ExprType.NUMBER),
    "peer_ratio": (1, ExprType.NUMBER),
    "peer_zscore": (1, ExprType.NUMBER),
    "uid_invalid_count": (0, ExprType.NUMBER),
}


def canonical_text(expr: Expr) -> str:
    """Canonical single-line rendering, used by the formatter and as the
    key space for input snapshots in score reports."""
    return _render(expr, 0)


# precedence levels: or=1, and=2, not=3, comparison=4, additive=5,
# multiplicative=6, unary minus=7, primary=8
_BIN_PREC = {"or": 1, "and": 2, "<": 4, "<=": 4, ">": 4, ">=": 4, "==": 4, "!=": 4,
             "+": 5, "-": 5, "*": 6, "/": 6}


def _render(expr: Expr, parent_prec: int) -> str:
    if isinstance(expr, NumberLit):
        from ..jsonio import fmt_decimal

        return fmt_decimal(expr.value)
    if isinstance(expr, TextLit):
        from .lexer import escape_string

        return escape_string(expr.value)
    if isinstance(expr, FlagLit):
        return "true" if expr.value else "false"
    if isinstance(expr, FeatureRef):
        return f"case.{expr.name}"
    if isinstance(expr, ModelRef):
        return f"model.{expr.name}"
    if isinstance(expr, SourceCall):
        return f"{expr.name}({', '.join(expr.args)})"
    if isinstance(expr, Unary):
        prec = 3 if expr.op == "not" else 7
        inner = _render(expr.operand, prec)
        text = f"not {inner}" if expr.op == "not" else f"-{inner}"
        return f"({text})" if prec < parent_prec else text
    if isinstance(expr, Binary):
        prec = _BIN_PREC[expr.op]
        if expr.op in COMPARE_OPS:
            # comparisons do not chain; parenthesize comparison operands
            left = _render(expr.left, prec + 1)
            right = _render(expr.right, prec + 1)
        else:
            # left-associative: right child needs a strictly higher level
            left = _render(expr.left, prec)
            right = _render(expr.right, prec + 1)
        text = f"{left} {expr.op} {right}"
        return f"({text})" if prec < parent_prec else text
    raise TypeError(f"unknown expression node {expr!r}")
