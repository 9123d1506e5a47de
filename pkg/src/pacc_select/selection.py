"""Audit case selection strategies and their composition into a plan.

Each decision records which strategy chose the case, so later success
rates can be compared per strategy. Liability comparisons are cent-exact.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from decimal import Decimal, ROUND_HALF_UP
from enum import Enum

from .domain import Corpus, FraudScore, TaxpayerCase
from .jsonio import fmt_decimal
from .scoring import ScoreReport, rank_cases
from .sources import months_since_last_vat_return
from . import jsonio

DEFAULT_LIABILITY_THRESHOLD = Decimal("10000")
NEW_ENTRY_GAP_MONTHS = 24  # "more than two years" without a VAT return


class Strategy(str, Enum):
    TIME = "TIME"
    GROUP_RANDOM = "GROUP_RANDOM"
    INDIVIDUAL = "INDIVIDUAL"
    NEW_ENTRY = "NEW_ENTRY"
    RISK = "RISK"
    RANDOM_CONTROL = "RANDOM_CONTROL"


class SignalKind(str, Enum):
    INCONSISTENCY = "INCONSISTENCY"
    RESTRUCTURING = "RESTRUCTURING"
    COMPLAINT = "COMPLAINT"
    MANDATED = "MANDATED"


@dataclass(frozen=True)
class Signal:
    case_id: str
    kind: SignalKind
    note: str = ""


@dataclass
class SelectionDecision:
    case_id: str
    strategy: Strategy
    rationale: str
    score: FraudScore | None = None
    estimated_liability_eur: Decimal | None = None

    def __post_init__(self) -> None:
        if not self.rationale:
            raise ValueError("rationale must be non-empty")
        if self.strategy is Strategy.RISK and (
            self.score is None or self.estimated_liability_eur is None
        ):
            raise ValueError("RISK decisions carry a score and an estimated liability")


@dataclass
class SelectionPlan:
    counts: dict[Strategy, int] = field(default_factory=dict)
    seed: int = 0
    liability_threshold_eur: Decimal = DEFAULT_LIABILITY_THRESHOLD

    def __post_init__(self) -> None:
        for strategy, n in self.counts.items():
            if n < 0:
                raise ValueError(f"negative count for {strategy}")
        if self.liability_threshold_eur <= 0:
            raise ValueError("liability threshold must be positive")

    def count(self, strategy: Strategy) -> int:
        return self.counts.get(strategy, 0)


def _cents(value: Decimal) -> int:
    return int(value.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP) * 100)


def select_by_time(cases: list[TaxpayerCase], n: int) -> list[SelectionDecision]:
    """The n cases longest un-audited; never-audited cases come first."""
    if n < 0:
        raise ValueError("n must be >= 0")

    def key(case: TaxpayerCase):
        # never-audited sorts before every audited year
        year = case.last_audited_year
        return (0, 0, case.case_id) if year is None else (1, year, case.case_id)

    picked = sorted(cases, key=key)[:n]
    out = []
    for case in picked:
        if case.last_audited_year is None:
            rationale = "never audited"
        else:
            rationale = f"last audited year {case.last_audited_year}"
        out.append(SelectionDecision(case.case_id, Strategy.TIME, rationale))
    return out


def select_group_random(
    cases: list[TaxpayerCase], n: int, seed: int
) -> list[SelectionDecision]:
    """Uniform sample without replacement; deterministic for a seed."""
    if n > len(cases):
        raise ValueError(f"cannot sample {n} of {len(cases)} cases")
    rng = random.Random(seed)
    ordered = sorted(cases, key=lambda c: c.case_id)
    picked = rng.sample(ordered, n)
    return [
        SelectionDecision(c.case_id, Strategy.GROUP_RANDOM, "selected by the random group draw")
        for c in sorted(picked, key=lambda c: c.case_id)
    ]


def select_individual(
    cases: list[TaxpayerCase], signals: list[Signal]
) -> list[SelectionDecision]:
    """One decision per distinct flagged case; the rationale concatenates
    all of its warning signals."""
    known = {c.case_id for c in cases}
    grouped: dict[str, list[Signal]] = {}
    for signal in signals:
        if signal.case_id in known:
            grouped.setdefault(signal.case_id, []).append(signal)
    out = []
    for case_id in sorted(grouped):
        parts = [
            f"{s.kind.value}: {s.note}" if s.note else s.kind.value
            for s in grouped[case_id]
        ]
        out.append(SelectionDecision(case_id, Strategy.INDIVIDUAL, "; ".join(parts)))
    return out


def select_new_entries(corpus: Corpus, cases: list[TaxpayerCase] | None = None) -> list[SelectionDecision]:
    """Missing-trader cases without a VAT return for more than two years."""
    pool = corpus.cases if cases is None else cases
    out = []
    for case in sorted(pool, key=lambda c: c.case_id):
        if case.kind.value != "missing_trader":
            continue
        gap = months_since_last_vat_return(case, corpus.clock, corpus.base_period)
        if isinstance(gap, int) and gap > NEW_ENTRY_GAP_MONTHS:
            out.append(
                SelectionDecision(
                    case.case_id,
                    Strategy.NEW_ENTRY,
                    f"no VAT return for {gap} months",
                )
            )
    return out


def select_by_risk(
    reports: list[ScoreReport],
    liabilities: dict[str, Decimal],
    threshold: Decimal,
    n: int,
) -> list[SelectionDecision]:
    """Top-n by score among cases whose estimated audit liability reaches
    the threshold (cent-exact comparison)."""
    if n < 0:
        raise ValueError("n must be >= 0")
    threshold_cents = _cents(threshold)
    eligible = [
        r
        for r in reports
        if r.case_id in liabilities and _cents(liabilities[r.case_id]) >= threshold_cents
    ]
    chosen = rank_cases(eligible, n)
    by_id = {r.case_id: r for r in eligible}
    out = []
    for case_id in chosen:
        report = by_id[case_id]
        liability = liabilities[case_id]
        out.append(
            SelectionDecision(
                case_id,
                Strategy.RISK,
                f"score {report.score.value} with estimated liability EUR {fmt_decimal(liability)}",
                score=report.score,
                estimated_liability_eur=liability,
            )
        )
    return out


def select_random_control(
    cases: list[TaxpayerCase], n: int, seed: int, exclude: set[str] | None = None
) -> list[SelectionDecision]:
    """Random control sample, disjoint from any excluded (e.g. RISK) picks."""
    pool = [c for c in cases if not exclude or c.case_id not in exclude]
    if n > len(pool):
        raise ValueError(f"cannot sample {n} of {len(pool)} cases")
    rng = random.Random(seed)
    ordered = sorted(pool, key=lambda c: c.case_id)
    picked = rng.sample(ordered, n)
    return [
        SelectionDecision(
            c.case_id, Strategy.RANDOM_CONTROL, "random control of the selection process"
        )
        for c in sorted(picked, key=lambda c: c.case_id)
    ]


STRATEGY_ORDER = (
    Strategy.TIME,
    Strategy.GROUP_RANDOM,
    Strategy.INDIVIDUAL,
    Strategy.NEW_ENTRY,
    Strategy.RISK,
    Strategy.RANDOM_CONTROL,
)


@dataclass
class ComposedSelection:
    decisions: list[SelectionDecision]
    warnings: list[str] = field(default_factory=list)


def compose_plan(
    plan: SelectionPlan,
    corpus: Corpus,
    reports: list[ScoreReport],
    liabilities: dict[str, Decimal],
    signals: list[Signal] | None = None,
) -> ComposedSelection:
    """Apply every strategy in fixed order over the not-yet-selected pool.

    No case is selected twice; a case eligible for several strategies goes
    to the earliest one. Quotas larger than the remaining pool truncate
    with a warning.
    """
    signals = signals or []
    selected: set[str] = set()
    decisions: list[SelectionDecision] = []
    warnings: list[str] = []

    def remaining() -> list[TaxpayerCase]:
        return [c for c in corpus.cases if c.case_id not in selected]

    def take(strategy: Strategy, picks: list[SelectionDecision]) -> None:
        # composed output is strategy order, then case_id within a strategy
        for d in sorted(picks, key=lambda d: d.case_id):
            if d.case_id in selected:
                continue
            selected.add(d.case_id)
            decisions.append(d)

    for strategy in STRATEGY_ORDER:
        quota = plan.count(strategy)
        if quota == 0:
            continue
        pool = remaining()
        if quota > len(pool):
            warnings.append(
                f"{strategy.value}: quota {quota} exceeds the {len(pool)} remaining cases; truncated"
            )
            quota = len(pool)
        if strategy is Strategy.TIME:
            picks = select_by_time(pool, quota)
        elif strategy is Strategy.GROUP_RANDOM:
            picks = select_group_random(pool, quota, plan.seed)
        elif strategy is Strategy.INDIVIDUAL:
            picks = select_individual(pool, signals)[:quota]
        elif strategy is Strategy.NEW_ENTRY:
            picks = select_new_entries(corpus, pool)[:quota]
        elif strategy is Strategy.RISK:
            pool_ids = {c.case_id for c in pool}
            picks = select_by_risk(
                [r for r in reports if r.case_id in pool_ids],
                liabilities,
                plan.liability_threshold_eur,
                quota,
            )
        else:
            picks = select_random_control(pool, quota, plan.seed + 1)
        take(strategy, picks)
    return ComposedSelection(decisions=decisions, warnings=warnings)


# ---------------------------------------------------------------------------
# Serialization

def decision_to_obj(d: SelectionDecision) -> dict:
    return {
        "case_id": d.case_id,
        "strategy": d.strategy.value,
        "rationale": d.rationale,
        "score": d.score.value if d.score is not None else None,
        "estimated_liability_eur": d.estimated_liability_eur,
    }


def decision_from_obj(obj: dict) -> SelectionDecision:
    liability = obj.get("estimated_liability_eur")
    return SelectionDecision(
        case_id=obj["case_id"],
        strategy=Strategy(obj["strategy"]),
        rationale=obj["rationale"],
        score=FraudScore(int(obj["score"])) if obj.get("score") is not None else None,
        estimated_liability_eur=(
            liability if isinstance(liability, Decimal) or liability is None else Decimal(str(liability))
        ),
    )


def write_decisions(path, decisions: list[SelectionDecision]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in decisions:
            fh.write(jsonio.dumps(decision_to_obj(d)))
            fh.write("\n")


def read_decisions(path) -> list[SelectionDecision]:
    import json

    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(decision_from_obj(json.loads(line, parse_float=Decimal)))
    return out


def plan_from_obj(obj: dict) -> SelectionPlan:
    counts = {Strategy(k): int(v) for k, v in obj.get("counts", {}).items()}
    threshold = obj.get("liability_threshold_eur", DEFAULT_LIABILITY_THRESHOLD)
    return SelectionPlan(
        counts=counts,
        seed=int(obj.get("seed", 0)),
        liability_threshold_eur=threshold if isinstance(threshold, Decimal) else Decimal(str(threshold)),
    )


def load_plan(path) -> SelectionPlan:
    import json

    with open(path, "r", encoding="utf-8") as fh:
        return plan_from_obj(json.load(fh, parse_float=Decimal))
