"""Scoring engine: combination oracle, tri-state evaluation, reports."""

import random
from datetime import date
from decimal import Decimal
from fractions import Fraction

import pytest

from pacc_select.domain import CaseKind, FraudScore, NotApplicable
from pacc_select.dsl import RuleSet, parse_rules
from pacc_select.models import REGISTERED_MODEL_IDS, TrainedModels
from pacc_select.scoring import (
    LIMITED_EXPLANATION_NOTICE,
    REGULAR_AUDIT_NOTICE,
    CaseContext,
    RuleStatus,
    combine_contributions,
    evaluate_rule,
    rank_cases,
    read_reports,
    render_explanations,
    report_from_obj,
    report_to_obj,
    score_batch,
    score_case,
    write_reports,
)
from pacc_select.sources import SourceHub
from conftest import make_case


def oracle_score(contributions) -> int:
    """Independent evaluation: round-half-up(999 * (1 - prod(1 - c)))."""
    remaining = Fraction(1)
    for c in contributions:
        remaining *= 1 - Fraction(str(c))
    scaled = 999 * (1 - remaining)
    floor = scaled.numerator // scaled.denominator
    return int(floor + (1 if (scaled - floor) >= Fraction(1, 2) else 0))


def ctx_for(case, hub=None, models=None, deactivated=frozenset(), clock=0):
    return CaseContext(
        case=case,
        models=models or TrainedModels(),
        sources=hub or SourceHub(),
        clock=clock,
        deactivated=frozenset(deactivated),
    )


class TestCombineContributions:
    def test_empty_is_zero(self):
        assert combine_contributions([]).value == 0

    def test_single_point_six(self):
        assert combine_contributions([Decimal("0.6")]).value == 599
        assert oracle_score(["0.6"]) == 599

    def test_pair(self):
        assert combine_contributions([Decimal("0.6"), Decimal("0.3")]).value == 719
        assert oracle_score(["0.6", "0.3"]) == 719

    def test_full_contribution_saturates(self):
        assert combine_contributions([Decimal("1")]).value == 999

    def test_bonuses_fold_in(self):
        engine = combine_contributions([Decimal("0.6")], [Decimal("0.3")]).value
        assert engine == oracle_score(["0.6", "0.3"])

    def test_rejects_out_of_range(self):
        for bad in (Decimal(0), Decimal("-0.1"), Decimal("1.1")):
            with pytest.raises(ValueError):
                combine_contributions([bad])

    def test_matches_oracle_on_random_multisets(self):
        rng = random.Random(3)
        pool = [Decimal("0.1"), Decimal("0.3"), Decimal("0.6"), Decimal("1.0"), Decimal("0.25")]
        for _ in range(500):
            picks = [rng.choice(pool) for _ in range(rng.randint(0, 6))]
            assert combine_contributions(picks).value == oracle_score(picks)


@pytest.fixture
def watch_hub():
    hub = SourceHub()
    hub.watchlist.add_link("W1", "P1")
    for i in range(14):
        hub.registry.add(f"X{i:02d}", "A-SHARED", "AT")
    hub.bump()
    return hub


@pytest.fixture
def pair_ruleset(schema):
    text = (
        'rule "EurofiscPersonLink" { weight: HIGH when: watchlist_links() >= 1 '
        'explain: "The company has one or more persons linked to another company on the Eurofisc watchlist." }\n'
        'rule "FewEmployees" { weight: MED when: case.employee_count < 4 '
        'explain: "The company has fewer than four employees." }'
    )
    return parse_rules(text, schema, REGISTERED_MODEL_IDS)


class TestEvaluateRule:
    def test_triggers_below_four(self, pair_ruleset):
        case = make_case(features={"employee_count": 3})
        result = evaluate_rule(pair_ruleset.rules[1], ctx_for(case))
        assert result.status is RuleStatus.TRIGGERED
        assert result.triggered.inputs_snapshot == {"case.employee_count": "3"}

    def test_boundary_four_does_not_trigger(self, pair_ruleset):
        case = make_case(features={"employee_count": 4})
        assert evaluate_rule(pair_ruleset.rules[1], ctx_for(case)).status is RuleStatus.NOT_TRIGGERED

    def test_missing_feature_not_applicable(self, pair_ruleset):
        result = evaluate_rule(pair_ruleset.rules[1], ctx_for(make_case()))
        assert result.status is RuleStatus.NOT_APPLICABLE
        assert result.reason == "missing feature employee_count"

    def test_division_by_zero_not_applicable(self, schema):
        rs = parse_rules(
            'rule "X" { weight: LOW when: case.revenue_eur / case.employee_count > 10 explain: "x" }',
            schema,
            REGISTERED_MODEL_IDS,
        )
        case = make_case(features={"revenue_eur": 100, "employee_count": 0})
        result = evaluate_rule(rs.rules[0], ctx_for(case))
        assert result.status is RuleStatus.NOT_APPLICABLE
        assert "division by zero" in result.reason

    def test_strictness_na_poisons_through_or(self, schema):
        # rule would be true on the left branch alone; strict tri-state
        # still refuses to answer when the right branch is unavailable
        rs = parse_rules(
            'rule "X" { weight: LOW when: true or case.employee_count < 4 explain: "x" }',
            schema,
            REGISTERED_MODEL_IDS,
        )
        result = evaluate_rule(rs.rules[0], ctx_for(make_case()))
        assert result.status is RuleStatus.NOT_APPLICABLE

    def test_legal_basis_gate(self, schema, pair_ruleset):
        hub = SourceHub(legal_basis={"watchlist": False, "registry": True, "uid": True})
        case = make_case(features={"employee_count": 1}, persons=("P1",))
        result = evaluate_rule(pair_ruleset.rules[0], ctx_for(case, hub=hub))
        assert result.status is RuleStatus.NOT_APPLICABLE
        assert "no legal basis" in result.reason

    def test_model_na_poisons(self, schema):
        rs = parse_rules(
            'rule "X" { weight: LOW when: model.company_fraud > 0.5 source: model }',
            schema,
            REGISTERED_MODEL_IDS,
        )
        result = evaluate_rule(rs.rules[0], ctx_for(make_case()))
        assert result.status is RuleStatus.NOT_APPLICABLE
        assert "company_fraud" in result.reason


class TestScoreCase:
    def test_no_triggered_rules_scores_zero(self, pair_ruleset, watch_hub):
        case = make_case(features={"employee_count": 10})
        report = score_case(pair_ruleset, ctx_for(case))
        assert report.score.value == 0
        assert report.triggered == []

    def test_table1_pair_scores_719(self, pair_ruleset, watch_hub):
        case = make_case(features={"employee_count": 3}, persons=("P1",))
        report = score_case(pair_ruleset, ctx_for(case, hub=watch_hub))
        assert report.score.value == 719
        assert [t.rule_name for t in report.triggered] == ["EurofiscPersonLink", "FewEmployees"]

    def test_deactivation_drops_to_599(self, pair_ruleset, watch_hub):
        case = make_case(features={"employee_count": 3}, persons=("P1",))
        report = score_case(
            pair_ruleset, ctx_for(case, hub=watch_hub, deactivated={"FewEmployees"})
        )
        assert report.score.value == 599
        assert report.deactivated == ["FewEmployees"]

    def test_unknown_deactivated_name_rejected(self, pair_ruleset):
        with pytest.raises(ValueError, match="unknown deactivated"):
            score_case(pair_ruleset, ctx_for(make_case(), deactivated={"Nope"}))

    def test_kind_mismatch_rejected(self, pair_ruleset):
        case = make_case(kind=CaseKind.COMPANY_AUDIT, features={"employee_count": 1})
        with pytest.raises(ValueError, match="kind"):
            score_case(pair_ruleset, ctx_for(case))

    def test_synergy_applies_only_when_all_members_trigger(self, schema, watch_hub):
        text = (
            'rule "A" { weight: MED when: case.employee_count < 4 explain: "a" }\n'
            'rule "B" { weight: MED when: case.director_count < 2 explain: "b" }\n'
            'combo { rules: ["A", "B"] bonus: 0.5 }'
        )
        rs = parse_rules(text, schema, REGISTERED_MODEL_IDS)
        both = make_case(features={"employee_count": 1, "director_count": 1})
        one = make_case(features={"employee_count": 1, "director_count": 5})
        report_both = score_case(rs, ctx_for(both))
        report_one = score_case(rs, ctx_for(one))
        assert report_both.synergy_bonuses == [(("A", "B"), Decimal("0.5"))]
        assert report_both.score.value == oracle_score(["0.3", "0.3", "0.5"])
        assert report_one.synergy_bonuses == []
        assert report_one.score.value == oracle_score(["0.3"])

    def test_report_reproducible_from_parts(self, pair_ruleset, watch_hub):
        case = make_case(features={"employee_count": 3}, persons=("P1",))
        report = score_case(pair_ruleset, ctx_for(case, hub=watch_hub))
        recombined = combine_contributions(
            [t.contribution for t in report.triggered],
            [b for _, b in report.synergy_bonuses],
        )
        assert recombined == report.score

    def test_rule_partition_is_exact(self, shipped_mt_ruleset, watch_hub):
        case = make_case(features={"employee_count": 3}, persons=("P1",))
        report = score_case(
            shipped_mt_ruleset, ctx_for(case, hub=watch_hub, deactivated={"CashHeavy"})
        )
        listed = (
            {t.rule_name for t in report.triggered}
            | {n for n, _ in report.not_applicable}
            | set(report.deactivated)
        )
        assert listed <= shipped_mt_ruleset.rule_names()
        overlap = [t.rule_name for t in report.triggered if t.rule_name in dict(report.not_applicable)]
        assert not overlap
        assert "CashHeavy" in report.deactivated


class TestScoreBatch:
    def test_empty_batch(self, pair_ruleset):
        assert score_batch(pair_ruleset, [], TrainedModels(), SourceHub()) == []

    def test_batch_equals_single_calls(self, pair_ruleset, watch_hub):
        cases = [
            make_case(case_id=f"C{i:02d}", features={"employee_count": i}, persons=("P1",) if i % 2 else ())
            for i in range(6)
        ]
        batch = score_batch(pair_ruleset, cases, TrainedModels(), watch_hub, clock=3)
        singles = [
            score_case(pair_ruleset, ctx_for(c, hub=watch_hub, clock=3)) for c in cases
        ]
        assert [r.case_id for r in batch] == [c.case_id for c in cases]
        assert batch == singles

    def test_batch_never_aborts_on_bad_case(self, pair_ruleset, watch_hub):
        cases = [
            make_case(case_id="GOOD", features={"employee_count": 3}),
            make_case(case_id="BAD", features={"employee_count": "three"}),
        ]
        batch = score_batch(pair_ruleset, cases, TrainedModels(), watch_hub)
        assert [r.case_id for r in batch] == ["GOOD", "BAD"]
        bad = batch[1]
        assert bad.score.value == 0
        assert any(name == "FewEmployees" for name, _ in bad.not_applicable)


class TestRankCases:
    def _report(self, case_id, score):
        return report_from_obj(
            {
                "case_id": case_id,
                "score": score,
                "triggered": [],
                "not_applicable": [],
                "deactivated": [],
                "synergy_bonuses": [],
                "ruleset_digest": "d",
                "scored_at": 0,
            }
        )

    def test_tie_breaks_by_case_id(self):
        reports = [self._report("B", 700), self._report("A", 700), self._report("C", 10)]
        assert rank_cases(reports, 2) == ["A", "B"]

    def test_k_zero(self):
        assert rank_cases([self._report("A", 1)], 0) == []

    def test_k_exceeds_n(self):
        reports = [self._report("A", 5), self._report("B", 9)]
        assert rank_cases(reports, 10) == ["B", "A"]


class TestRenderExplanations:
    def test_empty_report_has_notice_only(self, pair_ruleset):
        report = score_case(pair_ruleset, ctx_for(make_case(features={"employee_count": 9})))
        doc = render_explanations(report)
        assert "score 0/999" in doc
        assert REGULAR_AUDIT_NOTICE in doc
        assert "Triggered rules:" not in doc

    def test_address_count_appears_from_snapshot(self, schema, watch_hub):
        rs = parse_rules(
            'rule "MultipleAddressUsage" { weight: LOW when: companies_at_address() > 13 '
            'explain: "More than 13 companies are located at this address." }',
            schema,
            REGISTERED_MODEL_IDS,
        )
        case = make_case(address_id="A-SHARED")
        report = score_case(rs, ctx_for(case, hub=watch_hub))
        doc = render_explanations(report)
        assert "companies_at_address() = 14" in doc
        assert "More than 13 companies are located at this address." in doc

    def test_model_backed_without_explanation_gets_notice(self, schema):
        rs = parse_rules(
            'rule "X" { weight: LOW when: case.employee_count < 4 source: model }',
            schema,
            REGISTERED_MODEL_IDS,
        )
        report = score_case(rs, ctx_for(make_case(features={"employee_count": 1})))
        assert LIMITED_EXPLANATION_NOTICE in render_explanations(report)

    def test_placeholder_interpolation(self, schema):
        rs = parse_rules(
            'rule "X" { weight: LOW when: case.employee_count < 4 '
            'explain: "Only {case.employee_count} employees." }',
            schema,
            REGISTERED_MODEL_IDS,
        )
        report = score_case(rs, ctx_for(make_case(features={"employee_count": 2})))
        assert report.triggered[0].explanation == "Only 2 employees."


class TestReportSerialization:
    def test_roundtrip(self, pair_ruleset, watch_hub, tmp_path):
        cases = [
            make_case(case_id=f"C{i:02d}", features={"employee_count": i % 5}, persons=("P1",))
            for i in range(8)
        ]
        reports = score_batch(pair_ruleset, cases, TrainedModels(), watch_hub, clock=2)
        path = tmp_path / "reports.jsonl"
        write_reports(path, reports)
        assert read_reports(path) == reports

    def test_obj_roundtrip_preserves_decimals(self, pair_ruleset, watch_hub):
        case = make_case(features={"employee_count": 3}, persons=("P1",))
        report = score_case(pair_ruleset, ctx_for(case, hub=watch_hub))
        clone = report_from_obj(report_to_obj(report))
        assert clone == report
        assert clone.triggered[0].contribution == Decimal("0.60")
