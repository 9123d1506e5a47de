"""Outcome attachment, delayed-feedback success rates and strategy comparison.

Evaluation only reads matured audit outcomes, never the generator's
ground truth; the truth feeds in exactly once, when an audit is
commissioned and its (possibly missed) finding is recorded.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from decimal import Decimal, ROUND_HALF_UP

from .domain import AuditOutcome, Corpus
from .scoring import ScoreReport
from .selection import SelectionDecision, Strategy
from .synth import GroundTruth

DEFAULT_DELAY_MONTHS = 6
DEFAULT_MISS_RATE = 0.1
DEFAULT_JITTER_MONTHS = 2
MATURATION_CAVEAT_THRESHOLD = 0.5


def attach_outcomes(
    corpus: Corpus,
    truth: GroundTruth,
    audited_ids: list[str],
    clock: int,
    delay_months: int = DEFAULT_DELAY_MONTHS,
    miss_rate: float = DEFAULT_MISS_RATE,
    jitter_months: int = DEFAULT_JITTER_MONTHS,
    seed: int = 0,
) -> Corpus:
    """Commission audits: each case gains an outcome that matures after
    delay_months (+/- jitter, only when there is a delay at all). Fraud is
    missed with miss_rate, modelling audits that overlook it."""
    if delay_months < 0:
        raise ValueError("delay_months must be >= 0")
    rng = random.Random(seed)
    for case_id in audited_ids:
        case = corpus.by_id.get(case_id)
        if case is None:
            raise KeyError(f"unknown case {case_id!r}")
        if case.outcome is not None:
            continue  # already audited earlier
        jitter = rng.randint(-jitter_months, jitter_months) if delay_months > 0 else 0
        available_at = clock + max(0, delay_months + jitter)
        is_fraud = truth.is_fraud(case_id)
        found = is_fraud and not (rng.random() < miss_rate)
        base = case.features.get("tax_base_eur", Decimal(0))
        back_tax = (
            (Decimal(base) * Decimal("0.15")).quantize(Decimal("0.01"), ROUND_HALF_UP)
            if found and isinstance(base, Decimal)
            else Decimal(0)
        )
        corpus.update_case(
            case.with_outcome(
                AuditOutcome(
                    audited=True,
                    fraud_found=found,
                    back_tax_eur=back_tax,
                    available_at=available_at,
                )
            )
        )
    return corpus


def estimate_liabilities(corpus: Corpus, reports: list[ScoreReport]) -> dict[str, Decimal]:
    """Estimated audit liability: predicted fraud probability (score/999)
    times the case's reported tax base. Deliberately simple and isolated
    here so a better estimator can replace it in one place."""
    out: dict[str, Decimal] = {}
    for report in reports:
        case = corpus.by_id.get(report.case_id)
        if case is None:
            continue
        base = case.features.get("tax_base_eur")
        if not isinstance(base, Decimal):
            continue
        p = Decimal(report.score.value) / Decimal(999)
        out[report.case_id] = (p * base).quantize(Decimal("0.01"), ROUND_HALF_UP)
    return out


@dataclass
class StrategyStats:
    selected: int = 0
    matured: int = 0
    frauds: int = 0
    immature: bool = False

    @property
    def success_rate(self) -> float:
        return self.frauds / self.matured if self.matured else 0.0


@dataclass
class EvaluationReport:
    per_strategy: dict[Strategy, StrategyStats] = field(default_factory=dict)
    clock: int = 0
    maturation_delay_used: int = DEFAULT_DELAY_MONTHS
    overlap_cases: int = 0
    caveat: str | None = None

    def to_obj(self) -> dict:
        return {
            "clock": self.clock,
            "maturation_delay_used": self.maturation_delay_used,
            "overlap_cases": self.overlap_cases,
            "caveat": self.caveat,
            "strategies": {
                s.value: {
                    "selected": st.selected,
                    "matured": st.matured,
                    "frauds": st.frauds,
                    "success_rate": st.success_rate,
                    "immature": st.immature,
                }
                for s, st in sorted(self.per_strategy.items(), key=lambda kv: kv[0].value)
            },
        }

    def to_text(self) -> str:
        header = f"{'strategy':<16}{'selected':>9}{'matured':>9}{'frauds':>8}{'success':>9}"
        lines = [f"Selection evaluation at month {self.clock}", header, "-" * len(header)]
        for strategy, st in sorted(self.per_strategy.items(), key=lambda kv: kv[0].value):
            flag = " (immature)" if st.immature else ""
            lines.append(
                f"{strategy.value:<16}{st.selected:>9}{st.matured:>9}{st.frauds:>8}"
                f"{st.success_rate:>9.3f}{flag}"
            )
        if self.overlap_cases:
            lines.append(f"cases selected by more than one strategy: {self.overlap_cases}")
        if self.caveat:
            lines.append(f"CAVEAT: {self.caveat}")
        return "\n".join(lines) + "\n"


def success_rate(
    decisions: list[SelectionDecision],
    corpus: Corpus,
    clock: int,
    maturation_delay_used: int = DEFAULT_DELAY_MONTHS,
) -> EvaluationReport:
    """Per-strategy success rates over matured outcomes only."""
    report = EvaluationReport(clock=clock, maturation_delay_used=maturation_delay_used)
    strategies_by_case: dict[str, set[Strategy]] = {}
    total_selected = 0
    total_matured = 0
    for decision in decisions:
        stats = report.per_strategy.setdefault(decision.strategy, StrategyStats())
        stats.selected += 1
        total_selected += 1
        strategies_by_case.setdefault(decision.case_id, set()).add(decision.strategy)
        case = corpus.by_id.get(decision.case_id)
        outcome = case.outcome if case is not None else None
        if outcome is not None and outcome.audited and outcome.available_at <= clock:
            stats.matured += 1
            total_matured += 1
            if outcome.fraud_found:
                stats.frauds += 1
    for stats in report.per_strategy.values():
        stats.immature = stats.matured == 0 and stats.selected > 0
    report.overlap_cases = sum(1 for s in strategies_by_case.values() if len(s) > 1)
    if total_selected and total_matured / total_selected < MATURATION_CAVEAT_THRESHOLD:
        report.caveat = (
            f"only {total_matured} of {total_selected} selected cases have matured "
            "outcomes; rates are provisional"
        )
    return report


@dataclass
class StrategySummary:
    runs: int
    mean: float
    min: float
    max: float


@dataclass
class StrategyComparison:
    per_strategy: dict[Strategy, StrategySummary]

    def to_obj(self) -> dict:
        return {
            s.value: {"runs": v.runs, "mean": v.mean, "min": v.min, "max": v.max}
            for s, v in sorted(self.per_strategy.items(), key=lambda kv: kv[0].value)
        }

    def to_text(self) -> str:
        header = f"{'strategy':<16}{'runs':>6}{'mean':>9}{'min':>9}{'max':>9}"
        lines = ["Success rate by strategy across runs", header, "-" * len(header)]
        for strategy, s in sorted(self.per_strategy.items(), key=lambda kv: kv[0].value):
            lines.append(
                f"{strategy.value:<16}{s.runs:>6}{s.mean:>9.3f}{s.min:>9.3f}{s.max:>9.3f}"
            )
        return "\n".join(lines) + "\n"


def compare_strategies(runs: list[EvaluationReport]) -> StrategyComparison:
    if not runs:
        raise ValueError("need at least one evaluation run")
    rates: dict[Strategy, list[float]] = {}
    for run in runs:
        for strategy, stats in run.per_strategy.items():
            rates.setdefault(strategy, []).append(stats.success_rate)
    return StrategyComparison(
        per_strategy={
            s: StrategySummary(
                runs=len(values),
                mean=sum(values) / len(values),
                min=min(values),
                max=max(values),
            )
            for s, values in rates.items()
        }
    )
