"""Recursive-descent parser for .rules files.

Collects every error it can find (lexing, syntax, then type checking) and
raises RuleParseError with line/column positions; a partially valid rule
set never escapes. Grammar reference: docs/rulelang.md.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal, InvalidOperation

from ..domain import CaseKind, FeatureSchema, WeightTier
from .ast import (
    Binary,
    Expr,
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
)
from .lexer import TokKind, Token, tokenize
from .typecheck import check_ruleset

DEFAULT_TIER_CONTRIBUTIONS: dict[WeightTier, Decimal] = {
    WeightTier.LOW: Decimal("0.10"),
    WeightTier.MED: Decimal("0.30"),
    WeightTier.HIGH: Decimal("0.60"),
}

DEFAULT_RULESET_KIND = CaseKind.MISSING_TRADER

_TIERS = {"LOW": WeightTier.LOW, "MED": WeightTier.MED, "HIGH": WeightTier.HIGH}


@dataclass(frozen=True)
class ParseError:
    line: int
    col: int
    message: str

    def __str__(self) -> str:
        return f"{self.line}:{self.col}: {self.message}"


class RuleParseError(Exception):
    """Raised when a rule file cannot be turned into a valid RuleSet."""

    def __init__(self, errors: list[ParseError]):
        self.errors = errors
        super().__init__("; ".join(str(e) for e in errors[:10]))


class _SyntaxBail(Exception):
    """Internal: abort the current block and resynchronize."""


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.i = 0
        self.errors: list[ParseError] = []

    # -- token helpers ------------------------------------------------

    @property
    def cur(self) -> Token:
        return self.tokens[self.i]

    def bump(self) -> Token:
        tok = self.tokens[self.i]
        if tok.kind is not TokKind.EOF:
            self.i += 1
        return tok

    def at_ident(self, word: str) -> bool:
        return self.cur.kind is TokKind.IDENT and self.cur.text == word

    def at_punct(self, text: str) -> bool:
        return self.cur.kind is TokKind.PUNCT and self.cur.text == text

    def error(self, message: str, tok: Token | None = None) -> None:
        tok = tok or self.cur
        self.errors.append(ParseError(tok.line, tok.col, message))

    def bail(self, message: str, tok: Token | None = None) -> "_SyntaxBail":
        self.error(message, tok)
        return _SyntaxBail()

    def expect_punct(self, text: str) -> Token:
        if self.at_punct(text):
            return self.bump()
        raise self.bail(f"expected {text!r}, found {_describe(self.cur)}")

    def expect_ident(self, word: str) -> Token:
        if self.at_ident(word):
            return self.bump()
        raise self.bail(f"expected {word!r}, found {_describe(self.cur)}")

    def expect_string(self, what: str) -> Token:
        if self.cur.kind is TokKind.STRING:
            return self.bump()
        raise self.bail(f"expected {what} string, found {_describe(self.cur)}")

    def synchronize(self) -> None:
        """Skip ahead to the next top-level block keyword."""
        while self.cur.kind is not TokKind.EOF:
            if self.cur.kind is TokKind.IDENT and self.cur.text in ("rule", "combo", "ruleset"):
                return
            self.bump()

    # -- grammar ------------------------------------------------------

    def parse_file(self) -> tuple[CaseKind | None, list[RuleDef], list[SynergyDef]]:
        kind: CaseKind | None = None
        rules: list[RuleDef] = []
        synergies: list[SynergyDef] = []
        while self.cur.kind is not TokKind.EOF:
            try:
                if self.at_ident("ruleset"):
                    tok = self.bump()
                    self.expect_ident("for")
                    kind_tok = self.bump()
                    declared = _parse_kind(kind_tok.text) if kind_tok.kind is TokKind.IDENT else None
                    if declared is None:
                        raise self.bail("expected case kind 'missing_trader' or 'company_audit'", kind_tok)
                    if kind is not None and kind is not declared:
                        self.error("conflicting ruleset kind declarations", tok)
                    kind = declared
                elif self.at_ident("rule"):
                    rules.append(self.parse_rule())
                elif self.at_ident("combo"):
                    synergies.append(self.parse_combo())
                else:
                    raise self.bail(f"expected 'rule', 'combo' or 'ruleset', found {_describe(self.cur)}")
            except _SyntaxBail:
                self.bump()
                self.synchronize()
        return kind, rules, synergies

    def parse_rule(self) -> RuleDef:
        rule_tok = self.expect_ident("rule")
        name_tok = self.expect_string("rule name")
        self.expect_punct("{")
        tier: WeightTier | None = None
        contribution: Decimal | None = None
        condition: Expr | None = None
        explanation: str | None = None
        source: RuleSource | None = None
        seen: set[str] = set()
        while not self.at_punct("}"):
            if self.cur.kind is TokKind.EOF:
                raise self.bail("unterminated rule block (missing '}')", rule_tok)
            field_tok = self.bump()
            if field_tok.kind is not TokKind.IDENT or field_tok.text not in (
                "weight", "contribution", "when", "explain", "source",
            ):
                raise self.bail(f"expected a rule field, found {_describe(field_tok)}", field_tok)
            field = field_tok.text
            if field in seen:
                self.error(f"duplicate field {field!r}", field_tok)
            seen.add(field)
            self.expect_punct(":")
            if field == "weight":
                tok = self.bump()
                if tok.kind is not TokKind.IDENT or tok.text not in _TIERS:
                    raise self.bail("expected weight tier LOW, MED or HIGH", tok)
                tier = _TIERS[tok.text]
            elif field == "contribution":
                contribution = self.parse_decimal("contribution")
            elif field == "when":
                condition = self.parse_expr()
            elif field == "explain":
                explanation = self.expect_string("explanation").text
            elif field == "source":
                tok = self.bump()
                if tok.kind is TokKind.IDENT and tok.text == "expert":
                    source = RuleSource.EXPERT
                elif tok.kind is TokKind.IDENT and tok.text == "model":
                    source = RuleSource.MODEL_BACKED
                else:
                    raise self.bail("expected source 'expert' or 'model'", tok)
        self.expect_punct("}")
        if tier is None:
            self.error(f"rule {name_tok.text!r} is missing its weight", rule_tok)
            tier = WeightTier.LOW
        if condition is None:
            self.error(f"rule {name_tok.text!r} is missing its when condition", rule_tok)
            condition = FlagLit(False, (rule_tok.line, rule_tok.col))
        return RuleDef(
            name=name_tok.text,
            tier=tier,
            # NaN marks an omitted contribution; unreachable from source text
            contribution=contribution if contribution is not None else Decimal("NaN"),
            condition=condition,
            explanation=explanation or "",
            source=source if source is not None else RuleSource.EXPERT,
            pos=(rule_tok.line, rule_tok.col),
        )

    def parse_combo(self) -> SynergyDef:
        combo_tok = self.expect_ident("combo")
        self.expect_punct("{")
        names: list[str] = []
        bonus: Decimal | None = None
        while not self.at_punct("}"):
            if self.cur.kind is TokKind.EOF:
                raise self.bail("unterminated combo block (missing '}')", combo_tok)
            field_tok = self.bump()
            if field_tok.kind is TokKind.IDENT and field_tok.text == "rules":
                self.expect_punct(":")
                self.expect_punct("[")
                while True:
                    names.append(self.expect_string("rule name").text)
                    if self.at_punct(","):
                        self.bump()
                        continue
                    break
                self.expect_punct("]")
            elif field_tok.kind is TokKind.IDENT and field_tok.text == "bonus":
                self.expect_punct(":")
                bonus = self.parse_decimal("bonus")
            else:
                raise self.bail(f"expected 'rules' or 'bonus', found {_describe(field_tok)}", field_tok)
        self.expect_punct("}")
        if bonus is None:
            self.error("combo block is missing its bonus", combo_tok)
            bonus = Decimal("-1")
        if len(names) < 2:
            self.error("combo requires at least two rule names", combo_tok)
        return SynergyDef(rule_names=tuple(names), bonus=bonus, pos=(combo_tok.line, combo_tok.col))

    def parse_decimal(self, what: str) -> Decimal:
        neg = False
        if self.at_punct("-"):
            self.bump()
            neg = True
        tok = self.bump()
        if tok.kind is not TokKind.NUMBER:
            raise self.bail(f"expected a decimal {what}, found {_describe(tok)}", tok)
        try:
            value = Decimal(tok.text)
        except InvalidOperation:
            raise self.bail(f"bad decimal literal {tok.text!r}", tok)
        return -value if neg else value

    # expression precedence: or < and < not < comparison < additive <
    # multiplicative < unary minus < primary
    def parse_expr(self) -> Expr:
        return self.parse_or()

    def parse_or(self) -> Expr:
        left = self.parse_and()
        while self.at_ident("or"):
            tok = self.bump()
            right = self.parse_and()
            left = Binary("or", left, right, (tok.line, tok.col))
        return left

    def parse_and(self) -> Expr:
        left = self.parse_not()
        while self.at_ident("and"):
            tok = self.bump()
            right = self.parse_not()
            left = Binary("and", left, right, (tok.line, tok.col))
        return left

    def parse_not(self) -> Expr:
        if self.at_ident("not"):
            tok = self.bump()
            return Unary("not", self.parse_not(), (tok.line, tok.col))
        return self.parse_comparison()

    def parse_comparison(self) -> Expr:
        left = self.parse_additive()
        if self.cur.kind is TokKind.PUNCT and self.cur.text in ("<", "<=", ">", ">=", "==", "!="):
            tok = self.bump()
            right = self.parse_additive()
            return Binary(tok.text, left, right, (tok.line, tok.col))
        return left

    def parse_additive(self) -> Expr:
        left = self.parse_multiplicative()
        while self.cur.kind is TokKind.PUNCT and self.cur.text in ("+", "-"):
            tok = self.bump()
            right = self.parse_multiplicative()
            left = Binary(tok.text, left, right, (tok.line, tok.col))
        return left

    def parse_multiplicative(self) -> Expr:
        left = self.parse_unary()
        while self.cur.kind is TokKind.PUNCT and self.cur.text in ("*", "/"):
            tok = self.bump()
            right = self.parse_unary()
            left = Binary(tok.text, left, right, (tok.line, tok.col))
        return left

    def parse_unary(self) -> Expr:
        if self.at_punct("-"):
            tok = self.bump()
            return Unary("-", self.parse_unary(), (tok.line, tok.col))
        return self.parse_primary()

    def parse_primary(self) -> Expr:
        tok = self.cur
        if tok.kind is TokKind.NUMBER:
            self.bump()
            try:
                return NumberLit(Decimal(tok.text), (tok.line, tok.col))
            except InvalidOperation:
                raise self.bail(f"bad number literal {tok.text!r}", tok)
        if tok.kind is TokKind.STRING:
            self.bump()
            return TextLit(tok.text, (tok.line, tok.col))
        if tok.kind is TokKind.IDENT:
            if tok.text == "true":
                self.bump()
                return FlagLit(True, (tok.line, tok.col))
            if tok.text == "false":
                self.bump()
                return FlagLit(False, (tok.line, tok.col))
            if tok.text in ("case", "model"):
                self.bump()
                self.expect_punct(".")
                name_tok = self.bump()
                if name_tok.kind is not TokKind.IDENT:
                    raise self.bail(f"expected a name after '{tok.text}.'", name_tok)
                if tok.text == "case":
                    return FeatureRef(name_tok.text, (tok.line, tok.col))
                return ModelRef(name_tok.text, (tok.line, tok.col))
            # source call: ident ( [ident {, ident}] )
            self.bump()
            self.expect_punct("(")
            args: list[str] = []
            if not self.at_punct(")"):
                while True:
                    arg_tok = self.bump()
                    if arg_tok.kind is not TokKind.IDENT:
                        raise self.bail(f"expected a feature name argument, found {_describe(arg_tok)}", arg_tok)
                    args.append(arg_tok.text)
                    if self.at_punct(","):
                        self.bump()
                        continue
                    break
            self.expect_punct(")")
            return SourceCall(tok.text, tuple(args), (tok.line, tok.col))
        if self.at_punct("("):
            self.bump()
            expr = self.parse_expr()
            self.expect_punct(")")
            return expr
        raise self.bail(f"expected an expression, found {_describe(tok)}", tok)


def _describe(tok: Token) -> str:
    if tok.kind is TokKind.EOF:
        return "end of input"
    return f"{tok.kind.value} {tok.text!r}"


def _parse_kind(text: str) -> CaseKind | None:
    try:
        return CaseKind(text)
    except ValueError:
        return None


def parse_rules(
    text: str,
    schema: FeatureSchema,
    model_ids: set[str],
    tier_contributions: dict[WeightTier, Decimal] | None = None,
    default_kind: CaseKind = DEFAULT_RULESET_KIND,
) -> RuleSet:
    """Parse and type-check a rule file into a RuleSet.

    Raises RuleParseError carrying every collected error; never returns a
    partially valid set. Omitted contributions default by tier.
    """
    defaults = tier_contributions or DEFAULT_TIER_CONTRIBUTIONS
    tokens, lex_errors = tokenize(text)
    errors = [ParseError(e.line, e.col, e.message) for e in lex_errors]
    parser = _Parser(tokens)
    kind, rules, synergies = parser.parse_file()
    errors.extend(parser.errors)
    if errors:
        raise RuleParseError(sorted(errors, key=lambda e: (e.line, e.col)))

    resolved: list[RuleDef] = []
    for rule in rules:
        if rule.contribution.is_nan():
            rule = RuleDef(
                name=rule.name,
                tier=rule.tier,
                contribution=defaults[rule.tier],
                condition=rule.condition,
                explanation=rule.explanation,
                source=rule.source,
                pos=rule.pos,
            )
        resolved.append(rule)

    ruleset = RuleSet(
        kind=kind if kind is not None else default_kind,
        rules=tuple(resolved),
        synergies=tuple(synergies),
    )
    type_errors = check_ruleset(ruleset, schema, model_ids)
    if type_errors:
        raise RuleParseError(sorted(type_errors, key=lambda e: (e.line, e.col)))
    return ruleset
