"""Rule evaluation and score combination.

Conditions evaluate under strict tri-state semantics: any sub-expression
that touches a missing feature, an unavailable model output, a legally
barred source or a division by zero poisons the whole rule into
NOT_APPLICABLE. Triggered contributions combine by noisy-OR,
1 - prod(1 - c_i), scaled to the 0..999 integer score.

Rule sets compile once into closures; batches reuse the compiled form,
which keeps large batch scoring inside its time budget.
"""

from __future__ import annotations

import hashlib
import weakref
from dataclasses import dataclass
from decimal import Decimal, localcontext, ROUND_HALF_UP
from enum import Enum
from typing import Callable, Iterable

from .domain import (
    MISSING,
    FraudScore,
    NotApplicable,
    TaxpayerCase,
    WeightTier,
)
from .dsl.ast import (
    Binary,
    Expr,
    FeatureRef,
    FlagLit,
    ModelRef,
    NumberLit,
    RuleDef,
    RuleSet,
    SourceCall,
    SynergyDef,
    TextLit,
    Unary,
    canonical_text,
)
from .dsl.formatter import format_rules
from .dsl.typecheck import PLACEHOLDER_RE
from .jsonio import fmt_decimal
from . import jsonio
from .models import (
    TrainedModels,
    effectiveness_risk,
    models_peer_ratio,
    models_peer_zscore,
    predict_company_fraud,
)
from .sources import SourceHub, SourceSnapshot, months_since_last_vat_return

LIMITED_EXPLANATION_NOTICE = "model-derived indication — limited explanation available"
REGULAR_AUDIT_NOTICE = (
    "NOTICE: conduct a regular audit of the received case; do not limit the "
    "examination to the risk areas raised below."
)


class RuleStatus(Enum):
    TRIGGERED = "triggered"
    NOT_TRIGGERED = "not_triggered"
    NOT_APPLICABLE = "not_applicable"


@dataclass
class TriggeredRule:
    rule_name: str
    tier: WeightTier
    contribution: Decimal
    explanation: str
    inputs_snapshot: dict[str, str]


@dataclass
class EvalResult:
    status: RuleStatus
    triggered: TriggeredRule | None = None
    reason: str | None = None


@dataclass
class ScoreReport:
    case_id: str
    score: FraudScore
    triggered: list[TriggeredRule]
    not_applicable: list[tuple[str, str]]
    deactivated: list[str]
    synergy_bonuses: list[tuple[tuple[str, ...], Decimal]]
    ruleset_digest: str
    scored_at: int


@dataclass
class CaseContext:
    """Everything one case is scored against."""

    case: TaxpayerCase
    models: TrainedModels
    sources: SourceHub | SourceSnapshot
    clock: int = 0
    base_period: str = "2020-01"
    deactivated: frozenset[str] = frozenset()


class _Na(Exception):
    """Internal: a value required by the condition is unavailable."""

    def __init__(self, reason: str):
        self.reason = reason


class _Env:
    """Per-case evaluation state: value memo plus the snapshot sink of the
    rule currently being evaluated."""

    __slots__ = ("case", "features", "models", "snap", "clock", "base_period", "memo", "sink")

    def __init__(self, ctx_case, models, snap, clock, base_period):
        self.case = ctx_case
        self.features = ctx_case.features
        self.models = models
        self.snap = snap
        self.clock = clock
        self.base_period = base_period
        self.memo: dict[str, object] = {}
        self.sink: dict[str, object] = {}

    def model_value(self, name: str) -> object:
        memo = self.memo
        got = memo.get(name)
        if got is None:
            if name == "company_fraud":
                got = predict_company_fraud(self.models, self.case)
            elif name == "effectiveness":
                model = self.models.effectiveness
                if model is None:
                    got = NotApplicable("effectiveness model not trained")
                else:
                    got = effectiveness_risk(model, self.case)
            else:
                got = NotApplicable(f"unknown model {name}")
            memo[name] = got
        return got

    def call_value(self, key: str, fn) -> object:
        memo = self.memo
        got = memo.get(key)
        if got is None:
            got = fn(self)
            memo[key] = got
        return got


_ZERO = Decimal(0)


def _compile_expr(expr: Expr, record: bool = False) -> Callable[[_Env], object]:
    """Compile to a closure tree. The recording variant snapshots every
    leaf value into env.sink; the fast variant skips that and is used for
    the first pass, where most rules do not trigger. All inputs are
    memoized per case, so both variants see identical values."""
    if isinstance(expr, NumberLit):
        value = expr.value
        return lambda env: value
    if isinstance(expr, TextLit):
        value = expr.value
        return lambda env: value
    if isinstance(expr, FlagLit):
        value = expr.value
        return lambda env: value
    if isinstance(expr, FeatureRef):
        name = expr.name
        key = f"case.{name}"

        if record:
            def feature_ref(env: _Env):
                v = env.features.get(name, MISSING)
                if v is MISSING:
                    raise _Na(f"missing feature {name}")
                env.sink[key] = v
                return v
        else:
            def feature_ref(env: _Env):
                v = env.features.get(name, MISSING)
                if v is MISSING:
                    raise _Na(f"missing feature {name}")
                return v

        return feature_ref
    if isinstance(expr, ModelRef):
        name = expr.name
        key = f"model.{name}"

        if record:
            def model_ref(env: _Env):
                v = env.model_value(name)
                if isinstance(v, NotApplicable):
                    raise _Na(f"model {name} not applicable: {v.reason}")
                env.sink[key] = v
                return Decimal(v)
        else:
            def model_ref(env: _Env):
                v = env.model_value(name)
                if isinstance(v, NotApplicable):
                    raise _Na(f"model {name} not applicable: {v.reason}")
                return Decimal(v)

        return model_ref
    if isinstance(expr, SourceCall):
        return _compile_call(expr, record)
    if isinstance(expr, Unary):
        operand = _compile_expr(expr.operand, record)
        if expr.op == "not":
            return lambda env: not operand(env)
        return lambda env: -operand(env)
    if isinstance(expr, Binary):
        left = _compile_expr(expr.left, record)
        right = _compile_expr(expr.right, record)
        op = expr.op
        # strict tri-state: both sides always evaluate, so an unavailable
        # input cannot hide behind short-circuiting
        if op == "and":
            def and_(env: _Env):
                lv = left(env)
                rv = right(env)
                return lv and rv
            return and_
        if op == "or":
            def or_(env: _Env):
                lv = left(env)
                rv = right(env)
                return lv or rv
            return or_
        if op == "+":
            return lambda env: left(env) + right(env)
        if op == "-":
            return lambda env: left(env) - right(env)
        if op == "*":
            return lambda env: left(env) * right(env)
        if op == "/":
            def div(env: _Env):
                rv = right(env)
                if rv == _ZERO:
                    raise _Na("division by zero")
                return left(env) / rv
            return div
        if op == "<":
            return lambda env: left(env) < right(env)
        if op == "<=":
            return lambda env: left(env) <= right(env)
        if op == ">":
            return lambda env: left(env) > right(env)
        if op == ">=":
            return lambda env: left(env) >= right(env)
        if op == "==":
            return lambda env: left(env) == right(env)
        if op == "!=":
            return lambda env: left(env) != right(env)
    raise TypeError(f"unknown expression node {expr!r}")


def _compile_call(expr: SourceCall) -> Callable[[_Env], object]:
    name = expr.name
    key = canonical_text(expr)
    if name == "watchlist_links":
        fn = lambda env: env.snap.watchlist_links(env.case)  # noqa: E731
    elif name == "companies_at_address":
        fn = lambda env: env.snap.companies_at_address(env.case)  # noqa: E731
    elif name == "uid_invalid_count":
        fn = lambda env: env.snap.uid_invalid_count(env.case)  # noqa: E731
    elif name == "months_since_last_vat_return":
        fn = lambda env: months_since_last_vat_return(env.case, env.clock, env.base_period)  # noqa: E731
    elif name == "peer_zscore":
        feat = expr.args[0]
        fn = lambda env: models_peer_zscore(env.models, env.case, feat)  # noqa: E731
    elif name == "peer_ratio":
        feat = expr.args[0]
        fn = lambda env: models_peer_ratio(env.models, env.case, feat)  # noqa: E731
    else:
        raise ValueError(f"unknown source call {name!r}")

    def call(env: _Env):
        v = env.call_value(key, fn)
        if isinstance(v, NotApplicable):
            raise _Na(f"{key} not applicable: {v.reason}")
        env.sink[key] = v
        return Decimal(v) if not isinstance(v, Decimal) else v

    return call


def _compile_template(template: str) -> list[object]:
    """Split an explanation template into literal strings and placeholder
    keys (wrapped in a 1-tuple to distinguish them)."""
    segments: list[object] = []
    pos = 0
    for match in PLACEHOLDER_RE.finditer(template):
        if match.start() > pos:
            segments.append(template[pos : match.start()])
        segments.append((match.group(1).strip(),))
        pos = match.end()
    if pos < len(template):
        segments.append(template[pos:])
    return segments


def fmt_value(value: object) -> str:
    if isinstance(value, Decimal):
        return fmt_decimal(value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".6g")
    return str(value)


@dataclass
class _CompiledRule:
    rule: RuleDef
    condition: Callable[[_Env], object]
    template: list[object]


@dataclass
class CompiledRuleSet:
    ruleset: RuleSet
    digest: str
    rules: list[_CompiledRule]
    synergy_index: list[tuple[SynergyDef, tuple[str, ...]]]


_compile_cache: dict[int, tuple[weakref.ref, CompiledRuleSet]] = {}


def ruleset_digest(ruleset: RuleSet) -> str:
    return hashlib.sha256(format_rules(ruleset).encode("utf-8")).hexdigest()[:16]


def compile_ruleset(ruleset: RuleSet) -> CompiledRuleSet:
    entry = _compile_cache.get(id(ruleset))
    if entry is not None and entry[0]() is ruleset:
        return entry[1]
    compiled = CompiledRuleSet(
        ruleset=ruleset,
        digest=ruleset_digest(ruleset),
        rules=[
            _CompiledRule(
                rule=rule,
                condition=_compile_expr(rule.condition),
                template=_compile_template(rule.explanation) if rule.explanation else [],
            )
            for rule in ruleset.rules
        ],
        synergy_index=[(s, tuple(s.rule_names)) for s in ruleset.synergies],
    )
    key = id(ruleset)
    _compile_cache[key] = (weakref.ref(ruleset, lambda _: _compile_cache.pop(key, None)), compiled)
    return compiled


def _render_template(segments: list[object], env: _Env) -> str:
    parts: list[str] = []
    for seg in segments:
        if isinstance(seg, str):
            parts.append(seg)
            continue
        key = seg[0]
        if key in env.sink:
            parts.append(fmt_value(env.sink[key]))
        elif key.startswith("case."):
            v = env.features.get(key[5:], MISSING)
            parts.append("n/a" if v is MISSING else fmt_value(v))
        else:
            # a call the condition did not touch: observe it now
            try:
                expr = _placeholder_call(key)
                v = _compile_call(expr)(env)
                parts.append(fmt_value(env.sink.get(key, v)))
            except Exception:
                parts.append("n/a")
    return "".join(parts)


def _placeholder_call(key: str) -> SourceCall:
    name, _, rest = key.partition("(")
    args = tuple(a.strip() for a in rest.rstrip(")").split(",") if a.strip())
    return SourceCall(name.strip(), args)


def _evaluate_compiled(entry: _CompiledRule, env: _Env) -> EvalResult:
    env.sink = {}
    try:
        value = bool(entry.condition(env))
    except _Na as na:
        return EvalResult(RuleStatus.NOT_APPLICABLE, reason=na.reason)
    except (TypeError, ArithmeticError) as exc:
        return EvalResult(RuleStatus.NOT_APPLICABLE, reason=f"evaluation error: {exc}")
    if not value:
        return EvalResult(RuleStatus.NOT_TRIGGERED)
    rule = entry.rule
    explanation = _render_template(entry.template, env) if entry.template else ""
    snapshot = {k: fmt_value(v) for k, v in env.sink.items()}
    return EvalResult(
        RuleStatus.TRIGGERED,
        triggered=TriggeredRule(
            rule_name=rule.name,
            tier=rule.tier,
            contribution=rule.contribution,
            explanation=explanation,
            inputs_snapshot=snapshot,
        ),
    )


def evaluate_rule(rule: RuleDef, ctx: CaseContext) -> EvalResult:
    """Evaluate one rule against a case context (tri-state, total)."""
    entry = _CompiledRule(
        rule=rule,
        condition=_compile_expr(rule.condition),
        template=_compile_template(rule.explanation) if rule.explanation else [],
    )
    env = _make_env(ctx)
    return _evaluate_compiled(entry, env)


def _make_env(ctx: CaseContext) -> _Env:
    snap = ctx.sources if isinstance(ctx.sources, SourceSnapshot) else ctx.sources.snapshot()
    return _Env(ctx.case, ctx.models, snap, ctx.clock, ctx.base_period)


def combine_contributions(
    contributions: Iterable[Decimal], bonuses: Iterable[Decimal] = ()
) -> FraudScore:
    """Noisy-OR combination scaled to 0..999 with half-up rounding."""
    with localcontext() as ctx:
        ctx.prec = 50
        remainder = Decimal(1)
        for value in contributions:
            _check_unit_interval(value, "contribution")
            remainder *= Decimal(1) - value
        for value in bonuses:
            _check_unit_interval(value, "bonus")
            remainder *= Decimal(1) - value
        scaled = (Decimal(999) * (Decimal(1) - remainder)).quantize(
            Decimal("1"), rounding=ROUND_HALF_UP
        )
    return FraudScore(min(999, max(0, int(scaled))))


def _check_unit_interval(value: Decimal, what: str) -> None:
    if not (Decimal(0) < value <= Decimal(1)):
        raise ValueError(f"{what} must be in (0, 1], got {value}")


def score_case(
    ruleset: RuleSet | CompiledRuleSet,
    ctx: CaseContext,
) -> ScoreReport:
    """Evaluate every non-deactivated rule and combine the result."""
    compiled = ruleset if isinstance(ruleset, CompiledRuleSet) else compile_ruleset(ruleset)
    if ctx.case.kind is not compiled.ruleset.kind:
        raise ValueError(
            f"case kind {ctx.case.kind.value} does not match ruleset kind {compiled.ruleset.kind.value}"
        )
    unknown = set(ctx.deactivated) - compiled.ruleset.rule_names()
    if unknown:
        raise ValueError(f"unknown deactivated rule name(s): {sorted(unknown)}")
    env = _make_env(ctx)
    return _score_compiled(compiled, env, ctx.deactivated, ctx.clock)


def _score_compiled(
    compiled: CompiledRuleSet,
    env: _Env,
    deactivated: frozenset[str],
    clock: int,
) -> ScoreReport:
    triggered: list[TriggeredRule] = []
    triggered_names: set[str] = set()
    not_applicable: list[tuple[str, str]] = []
    deactivated_list: list[str] = []
    for entry in compiled.rules:
        name = entry.rule.name
        if name in deactivated:
            deactivated_list.append(name)
            continue
        result = _evaluate_compiled(entry, env)
        if result.status is RuleStatus.TRIGGERED:
            triggered.append(result.triggered)
            triggered_names.add(name)
        elif result.status is RuleStatus.NOT_APPLICABLE:
            not_applicable.append((name, result.reason or ""))
    bonuses: list[tuple[tuple[str, ...], Decimal]] = []
    for synergy, names in compiled.synergy_index:
        if all(n in triggered_names for n in names):
            bonuses.append((names, synergy.bonus))
    score = combine_contributions(
        (t.contribution for t in triggered), (b for _, b in bonuses)
    )
    return ScoreReport(
        case_id=env.case.case_id,
        score=score,
        triggered=triggered,
        not_applicable=not_applicable,
        deactivated=deactivated_list,
        synergy_bonuses=bonuses,
        ruleset_digest=compiled.digest,
        scored_at=clock,
    )


def score_batch(
    ruleset: RuleSet,
    cases: list[TaxpayerCase],
    models: TrainedModels,
    sources: SourceHub,
    clock: int = 0,
    base_period: str = "2020-01",
    activation: dict[str, frozenset[str]] | None = None,
    workers: int = 1,
) -> list[ScoreReport]:
    """Score many cases of the ruleset's kind; output order matches input.

    Per-case failures become reports with every rule not-applicable rather
    than aborting the batch. With workers > 1 the batch fans out across
    processes and returns element-wise identical results.
    """
    if workers > 1 and len(cases) > 1:
        return _score_batch_parallel(
            ruleset, cases, models, sources, clock, base_period, activation, workers
        )
    compiled = compile_ruleset(ruleset)
    snap = sources.snapshot()
    out: list[ScoreReport] = []
    for case in cases:
        out.append(
            _score_one(compiled, case, models, snap, clock, base_period, activation)
        )
    return out


def _score_one(compiled, case, models, snap, clock, base_period, activation) -> ScoreReport:
    deact = activation.get(case.case_id, frozenset()) if activation else frozenset()
    try:
        env = _Env(case, models, snap, clock, base_period)
        return _score_compiled(compiled, env, deact, clock)
    except ValueError as exc:
        # a bad case must not abort the batch; report it as fully inapplicable
        return ScoreReport(
            case_id=case.case_id,
            score=FraudScore(0),
            triggered=[],
            not_applicable=[(r.rule.name, f"case error: {exc}") for r in compiled.rules],
            deactivated=[],
            synergy_bonuses=[],
            ruleset_digest=compiled.digest,
            scored_at=clock,
        )


_worker_state: dict = {}


def _init_worker(ruleset, models, sources, clock, base_period, activation):
    _worker_state["compiled"] = compile_ruleset(ruleset)
    _worker_state["models"] = models
    _worker_state["snap"] = sources.snapshot()
    _worker_state["clock"] = clock
    _worker_state["base_period"] = base_period
    _worker_state["activation"] = activation


def _score_chunk(chunk: list[TaxpayerCase]) -> list[ScoreReport]:
    s = _worker_state
    return [
        _score_one(s["compiled"], case, s["models"], s["snap"], s["clock"], s["base_period"], s["activation"])
        for case in chunk
    ]


def _score_batch_parallel(
    ruleset, cases, models, sources, clock, base_period, activation, workers
) -> list[ScoreReport]:
    import multiprocessing as mp

    chunks = [cases[i::workers] for i in range(workers)]
    ctx = mp.get_context("fork")
    with ctx.Pool(
        workers,
        initializer=_init_worker,
        initargs=(ruleset, models, sources, clock, base_period, activation),
    ) as pool:
        results = pool.map(_score_chunk, chunks)
    # interleave back into input order (chunk i holds cases[i::workers])
    out: list[ScoreReport | None] = [None] * len(cases)
    for i, chunk_reports in enumerate(results):
        for j, report in enumerate(chunk_reports):
            out[i + j * workers] = report
    return out  # type: ignore[return-value]


def rank_cases(reports: list[ScoreReport], top_k: int) -> list[str]:
    """Case ids by score descending, ties by case_id ascending."""
    if top_k < 0:
        raise ValueError("top_k must be >= 0")
    ordered = sorted(reports, key=lambda r: (-r.score.value, r.case_id))
    return [r.case_id for r in ordered[:top_k]]


# ---------------------------------------------------------------------------
# Explanation documents and report serialization (docs/reports.md)

def render_explanations(report: ScoreReport) -> str:
    lines = [
        f"Case {report.case_id}: fraudulence score {report.score.value}/999",
        f"(scored at month {report.scored_at}, rule base {report.ruleset_digest})",
        "",
        REGULAR_AUDIT_NOTICE,
        "",
    ]
    if report.triggered:
        lines.append("Triggered rules:")
        for t in report.triggered:
            lines.append(f"  [{t.tier.name}] {t.rule_name} (contribution {fmt_decimal(t.contribution)})")
            explanation = t.explanation if t.explanation else LIMITED_EXPLANATION_NOTICE
            lines.append(f"      {explanation}")
            for key, value in t.inputs_snapshot.items():
                lines.append(f"      input: {key} = {value}")
        lines.append("")
    if report.synergy_bonuses:
        lines.append("Combination bonuses:")
        for names, bonus in report.synergy_bonuses:
            lines.append(f"  {' + '.join(names)}: bonus {fmt_decimal(bonus)}")
        lines.append("")
    if report.not_applicable:
        lines.append("Not applicable:")
        for name, reason in report.not_applicable:
            lines.append(f"  {name}: {reason}")
        lines.append("")
    if report.deactivated:
        lines.append("Deactivated for this case:")
        for name in report.deactivated:
            lines.append(f"  {name}")
        lines.append("")
    return "\n".join(lines).rstrip() + "\n"


def report_to_obj(report: ScoreReport) -> dict:
    return {
        "case_id": report.case_id,
        "score": report.score.value,
        "triggered": [
            {
                "rule_name": t.rule_name,
                "tier": t.tier.name,
                "contribution": t.contribution,
                "explanation": t.explanation,
                "inputs_snapshot": t.inputs_snapshot,
            }
            for t in report.triggered
        ],
        "not_applicable": [[n, r] for n, r in report.not_applicable],
        "deactivated": list(report.deactivated),
        "synergy_bonuses": [[list(names), bonus] for names, bonus in report.synergy_bonuses],
        "ruleset_digest": report.ruleset_digest,
        "scored_at": report.scored_at,
    }


def report_from_obj(obj: dict) -> ScoreReport:
    return ScoreReport(
        case_id=obj["case_id"],
        score=FraudScore(int(obj["score"])),
        triggered=[
            TriggeredRule(
                rule_name=t["rule_name"],
                tier=WeightTier[t["tier"]],
                contribution=t["contribution"] if isinstance(t["contribution"], Decimal) else Decimal(str(t["contribution"])),
                explanation=t["explanation"],
                inputs_snapshot=dict(t["inputs_snapshot"]),
            )
            for t in obj["triggered"]
        ],
        not_applicable=[(n, r) for n, r in obj["not_applicable"]],
        deactivated=list(obj["deactivated"]),
        synergy_bonuses=[
            (tuple(names), bonus if isinstance(bonus, Decimal) else Decimal(str(bonus)))
            for names, bonus in obj["synergy_bonuses"]
        ],
        ruleset_digest=obj["ruleset_digest"],
        scored_at=int(obj["scored_at"]),
    )


def write_reports(path, reports: list[ScoreReport]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for report in reports:
            fh.write(jsonio.dumps(report_to_obj(report)))
            fh.write("\n")


def read_reports(path) -> list[ScoreReport]:
    import json

    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(report_from_obj(json.loads(line, parse_float=Decimal)))
    return out
