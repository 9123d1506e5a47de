"""Selection strategies: boundaries, determinism, composition."""

import random
from decimal import Decimal

import pytest

from pacc_select.domain import CaseKind, Corpus, FraudScore
from pacc_select.scoring import report_from_obj
from pacc_select.selection import (
    SelectionPlan,
    Signal,
    SignalKind,
    Strategy,
    compose_plan,
    decision_from_obj,
    decision_to_obj,
    select_by_risk,
    select_by_time,
    select_group_random,
    select_individual,
    select_new_entries,
    select_random_control,
)
from conftest import make_case


def report(case_id, score):
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


class TestSelectByTime:
    def test_never_audited_first(self):
        cases = [
            make_case(case_id="AUDITED", last_audited_year=2020),
            make_case(case_id="NEVER"),
        ]
        picks = select_by_time(cases, 1)
        assert [d.case_id for d in picks] == ["NEVER"]
        assert picks[0].rationale == "never audited"

    def test_oldest_years_first(self):
        cases = [
            make_case(case_id="C2015", last_audited_year=2015),
            make_case(case_id="C2010", last_audited_year=2010),
            make_case(case_id="C2020", last_audited_year=2020),
        ]
        picks = select_by_time(cases, 2)
        assert [d.case_id for d in picks] == ["C2010", "C2015"]
        assert "2010" in picks[0].rationale

    def test_n_zero(self):
        assert select_by_time([make_case()], 0) == []


class TestGroupRandom:
    def test_seed_determinism(self):
        cases = [make_case(case_id=f"C{i}") for i in range(20)]
        a = select_group_random(cases, 5, seed=42)
        b = select_group_random(cases, 5, seed=42)
        assert [d.case_id for d in a] == [d.case_id for d in b]

    def test_n_equals_corpus(self):
        cases = [make_case(case_id=f"C{i}") for i in range(4)]
        assert len(select_group_random(cases, 4, seed=1)) == 4

    def test_n_exceeding_corpus_rejected(self):
        with pytest.raises(ValueError):
            select_group_random([make_case()], 2, seed=1)

    def test_uniformity_monte_carlo(self):
        cases = [make_case(case_id=f"C{i}") for i in range(10)]
        counts = {c.case_id: 0 for c in cases}
        trials = 10_000
        for seed in range(trials):
            picked = select_group_random(cases, 1, seed=seed)
            counts[picked[0].case_id] += 1
        for case_id, n in counts.items():
            assert abs(n / trials - 0.1) <= 0.02, (case_id, n)


class TestIndividual:
    def test_empty_signals(self):
        assert select_individual([make_case()], []) == []

    def test_single_complaint(self):
        cases = [make_case(case_id="C1")]
        picks = select_individual(cases, [Signal("C1", SignalKind.COMPLAINT, "anonymous tip")])
        assert len(picks) == 1
        assert picks[0].strategy is Strategy.INDIVIDUAL
        assert "anonymous tip" in picks[0].rationale

    def test_two_signals_same_case_deduplicate(self):
        cases = [make_case(case_id="C1")]
        picks = select_individual(
            cases,
            [
                Signal("C1", SignalKind.COMPLAINT, "tip"),
                Signal("C1", SignalKind.RESTRUCTURING, "merger"),
            ],
        )
        assert len(picks) == 1
        assert "COMPLAINT" in picks[0].rationale and "RESTRUCTURING" in picks[0].rationale


class TestNewEntries:
    def _corpus(self, *cases):
        return Corpus(cases=list(cases), base_period="2020-01", clock=1)

    def test_gap_25_selected(self):
        case = make_case(case_id="C1", vat_returns=(("2018-01", True),))
        corpus = self._corpus(case)
        picks = select_new_entries(corpus)
        assert [d.case_id for d in picks] == ["C1"]
        assert "25 months" in picks[0].rationale

    def test_gap_24_not_selected(self):
        case = make_case(case_id="C1", vat_returns=(("2018-02", True),))
        assert select_new_entries(self._corpus(case)) == []

    def test_company_audit_kind_out_of_scope(self):
        case = make_case(case_id="C1", kind=CaseKind.COMPANY_AUDIT, vat_returns=(("2017-01", True),))
        assert select_new_entries(self._corpus(case)) == []


class TestSelectByRisk:
    def test_liability_boundary_is_cent_exact(self):
        reports = [report("JUST_UNDER", 900), report("EXACT", 300)]
        liabilities = {
            "JUST_UNDER": Decimal("9999.99"),
            "EXACT": Decimal("10000.00"),
        }
        picks = select_by_risk(reports, liabilities, Decimal("10000"), 10)
        assert [d.case_id for d in picks] == ["EXACT"]
        assert picks[0].estimated_liability_eur == Decimal("10000.00")
        assert picks[0].score == FraudScore(300)

    def test_top_n_by_score(self):
        reports = [report("LOW", 300), report("HIGH", 800)]
        liabilities = {"LOW": Decimal("50000"), "HIGH": Decimal("50000")}
        picks = select_by_risk(reports, liabilities, Decimal("10000"), 1)
        assert [d.case_id for d in picks] == ["HIGH"]

    def test_missing_liability_excluded(self):
        picks = select_by_risk([report("C1", 900)], {}, Decimal("10000"), 5)
        assert picks == []


class TestRandomControl:
    def test_determinism_and_exclusion(self):
        cases = [make_case(case_id=f"C{i}") for i in range(10)]
        a = select_random_control(cases, 3, seed=5)
        assert [d.case_id for d in a] == [d.case_id for d in select_random_control(cases, 3, seed=5)]
        excluded = {d.case_id for d in a}
        b = select_random_control(cases, 3, seed=5, exclude=excluded)
        assert not excluded & {d.case_id for d in b}

    def test_n_zero(self):
        assert select_random_control([make_case()], 0, seed=1) == []


def _mini_world():
    cases = []
    for i in range(30):
        cases.append(
            make_case(
                case_id=f"C{i:02d}",
                features={"tax_base_eur": Decimal(100000)},
                last_audited_year=2000 + i if i % 2 == 0 else None,
                vat_returns=(("2019-12", True),),
            )
        )
    corpus = Corpus(cases=cases, base_period="2020-01", clock=0)
    reports = [report(c.case_id, (i * 37) % 1000) for i, c in enumerate(cases)]
    liabilities = {c.case_id: Decimal("20000") for c in cases}
    return corpus, reports, liabilities


class TestComposePlan:
    def test_all_quotas_zero(self):
        corpus, reports, liabilities = _mini_world()
        plan = SelectionPlan(counts={}, seed=1)
        assert compose_plan(plan, corpus, reports, liabilities).decisions == []

    def test_earlier_strategy_wins_overlap(self):
        corpus, reports, liabilities = _mini_world()
        # every case is RISK-eligible; TIME=1 grabs the never-audited first
        plan = SelectionPlan(counts={Strategy.TIME: 1, Strategy.RISK: 30}, seed=1)
        composed = compose_plan(plan, corpus, reports, liabilities)
        time_picks = [d for d in composed.decisions if d.strategy is Strategy.TIME]
        assert len(time_picks) == 1
        risk_ids = {d.case_id for d in composed.decisions if d.strategy is Strategy.RISK}
        assert time_picks[0].case_id not in risk_ids

    def test_no_duplicates_and_quota_counts(self):
        corpus, reports, liabilities = _mini_world()
        plan = SelectionPlan(
            counts={
                Strategy.TIME: 5,
                Strategy.GROUP_RANDOM: 5,
                Strategy.RISK: 10,
                Strategy.RANDOM_CONTROL: 5,
            },
            seed=3,
        )
        composed = compose_plan(plan, corpus, reports, liabilities)
        ids = [d.case_id for d in composed.decisions]
        assert len(ids) == len(set(ids)) == 25
        by_strategy = {}
        for d in composed.decisions:
            by_strategy[d.strategy] = by_strategy.get(d.strategy, 0) + 1
        assert by_strategy == {
            Strategy.TIME: 5,
            Strategy.GROUP_RANDOM: 5,
            Strategy.RISK: 10,
            Strategy.RANDOM_CONTROL: 5,
        }

    def test_quota_exceeding_pool_truncates_with_warning(self):
        corpus, reports, liabilities = _mini_world()
        plan = SelectionPlan(counts={Strategy.GROUP_RANDOM: 99}, seed=1)
        composed = compose_plan(plan, corpus, reports, liabilities)
        assert len(composed.decisions) == 30
        assert composed.warnings and "truncated" in composed.warnings[0]

    def test_output_order_is_strategy_then_case_id(self):
        corpus, reports, liabilities = _mini_world()
        plan = SelectionPlan(counts={Strategy.TIME: 3, Strategy.RISK: 3}, seed=1)
        composed = compose_plan(plan, corpus, reports, liabilities)
        strategies = [d.strategy for d in composed.decisions]
        assert strategies == sorted(strategies, key=[s for s in Strategy].index)
        for strategy in set(strategies):
            ids = [d.case_id for d in composed.decisions if d.strategy is strategy]
            assert ids == sorted(ids)

    def test_determinism_byte_identical(self):
        corpus, reports, liabilities = _mini_world()
        plan = SelectionPlan(
            counts={Strategy.GROUP_RANDOM: 5, Strategy.RISK: 5, Strategy.RANDOM_CONTROL: 5},
            seed=9,
        )
        a = compose_plan(plan, corpus, reports, liabilities).decisions
        b = compose_plan(plan, corpus, reports, liabilities).decisions
        assert [decision_to_obj(d) for d in a] == [decision_to_obj(d) for d in b]

    def test_risk_scaling_invariance(self):
        corpus, reports, liabilities = _mini_world()
        plan = SelectionPlan(counts={Strategy.RISK: 8}, seed=1)
        base = compose_plan(plan, corpus, reports, liabilities).decisions
        # order-preserving score rescale: halve every score
        scaled_reports = [report(r.case_id, r.score.value // 2) for r in reports]
        scaled = compose_plan(plan, corpus, scaled_reports, liabilities).decisions
        assert {d.case_id for d in base} == {d.case_id for d in scaled}

    def test_risk_decisions_satisfy_threshold_exactly(self):
        corpus, reports, liabilities = _mini_world()
        liabilities["C01"] = Decimal("9999.99")
        plan = SelectionPlan(counts={Strategy.RISK: 30}, seed=1)
        composed = compose_plan(plan, corpus, reports, liabilities)
        risk = [d for d in composed.decisions if d.strategy is Strategy.RISK]
        assert all(d.estimated_liability_eur >= Decimal("10000") for d in risk)
        assert "C01" not in {d.case_id for d in risk}


class TestDecisionSerialization:
    def test_roundtrip(self):
        corpus, reports, liabilities = _mini_world()
        plan = SelectionPlan(counts={Strategy.RISK: 5, Strategy.TIME: 2}, seed=1)
        for d in compose_plan(plan, corpus, reports, liabilities).decisions:
            assert decision_from_obj(decision_to_obj(d)) == d

    def test_rationale_required(self):
        from pacc_select.selection import SelectionDecision

        with pytest.raises(ValueError):
            SelectionDecision("C1", Strategy.TIME, "")

    def test_risk_requires_score_and_liability(self):
        from pacc_select.selection import SelectionDecision

        with pytest.raises(ValueError):
            SelectionDecision("C1", Strategy.RISK, "r")
