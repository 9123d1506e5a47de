"""Pipeline runtime shared by the CLI and the HTTP service.

Owns the on-disk working state (corpus, models, reports, run state) and
exposes the pipeline steps: ingest, train, score, select, simulate-month
and evaluate. Selection commissions audits immediately; their outcomes
mature with the configured delay as the clock advances.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .config import AppConfig
from .domain import Corpus, CaseKind, FeatureSchema, write_cases
from .dsl import RuleSet, parse_rules
from .evaluation import (
    EvaluationReport,
    attach_outcomes,
    estimate_liabilities,
    success_rate,
)
from .models import (
    REGISTERED_MODEL_IDS,
    TrainedModels,
    load_models,
    save_models,
    train_models,
)
from .scoring import ScoreReport, read_reports, render_explanations, score_batch, write_reports
from .selection import ComposedSelection, Signal, compose_plan, load_plan, read_decisions, write_decisions
from .sources import SourceHub, ingest, load_vies_oracle, partner_states
from .synth import GeneratorConfig, read_truth, write_corpus_files

UID_DAYS_PER_MONTH = 30


class DataError(Exception):
    """Bad or missing input data; maps to CLI exit code 2."""


@dataclass
class RunState:
    clock: int = 0
    activation: dict[str, list[str]] = field(default_factory=dict)
    uid_day: int = 0
    uid_results: list[list] = field(default_factory=list)  # [state, case_id, status]
    uid_queued: list[list] = field(default_factory=list)  # [state, case_id, score]


class AppRuntime:
    def __init__(self, config: AppConfig):
        self.config = config
        self.schema = self._load_schema()
        self.state = self._load_state()
        self.hub = SourceHub()
        self.hub.uid_client.daily_quota = config.uid_quota
        self.hub.uid_client.day = self.state.uid_day
        self.corpus: Corpus | None = None
        self.models: TrainedModels | None = None
        self.rulesets: dict[CaseKind, RuleSet] = {}
        self.reports: list[ScoreReport] = []

    # -- loading ------------------------------------------------------

    def _load_schema(self) -> FeatureSchema:
        path = Path(self.config.schema)
        if not path.exists():
            raise DataError(f"feature schema not found: {path}")
        return FeatureSchema.load(path)

    def _load_state(self) -> RunState:
        path = Path(self.config.state)
        if not path.exists():
            return RunState()
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
            return RunState(
                clock=int(raw.get("clock", 0)),
                activation={k: list(v) for k, v in raw.get("activation", {}).items()},
                uid_day=int(raw.get("uid_day", 0)),
                uid_results=[list(r) for r in raw.get("uid_results", [])],
                uid_queued=[list(r) for r in raw.get("uid_queued", [])],
            )
        except (ValueError, KeyError) as exc:
            raise DataError(f"corrupt state file {path}: {exc}")

    def save_state(self) -> None:
        client = self.hub.uid_client
        self.state.uid_day = client.day
        self.state.uid_results = [
            [state, case_id, status]
            for (state, case_id), status in sorted(client.results.items())
            if status != "pending"
        ]
        self.state.uid_queued = sorted(
            [entry.state, entry.case_id, entry.score]
            for entry in client.entries.values()
            if not entry.cancelled
        )
        path = Path(self.config.state)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "clock": self.state.clock,
                    "activation": self.state.activation,
                    "uid_day": self.state.uid_day,
                    "uid_results": self.state.uid_results,
                    "uid_queued": self.state.uid_queued,
                },
                fh,
                indent=1,
            )
            fh.write("\n")

    def _restore_uid_client(self) -> None:
        client = self.hub.uid_client
        for state, case_id, score in self.state.uid_queued:
            client.enqueue(state, case_id, int(score))
        for state, case_id, status in self.state.uid_results:
            client.results[(state, case_id)] = status
            client.by_case.setdefault(case_id, {})[state] = status

    def load_corpus(self) -> Corpus:
        if self.corpus is not None:
            return self.corpus
        cases_path = Path(self.config.cases)
        if not cases_path.exists():
            raise DataError(f"case corpus not found: {cases_path} (run gen or ingest first)")
        result = ingest(
            self.hub,
            cases_path,
            Path(self.config.watchlist),
            Path(self.config.registry),
            schema=self.schema,
        )
        self.corpus = Corpus(
            cases=result.cases,
            base_period=self.config.base_period,
            clock=self.state.clock,
        )
        self._restore_uid_client()
        self.hub.bump()
        return self.corpus

    def load_rulesets(self) -> dict[CaseKind, RuleSet]:
        if self.rulesets:
            return self.rulesets
        for kind, path in (
            (CaseKind.MISSING_TRADER, self.config.rules_missing_trader),
            (CaseKind.COMPANY_AUDIT, self.config.rules_company_audit),
        ):
            p = Path(path)
            if not p.exists():
                raise DataError(f"rule file not found: {p}")
            ruleset = parse_rules(
                p.read_text(encoding="utf-8"),
                self.schema,
                REGISTERED_MODEL_IDS,
                tier_contributions=self.config.tier_contributions,
                default_kind=kind,
            )
            if ruleset.kind is not kind:
                raise DataError(f"{p} declares kind {ruleset.kind.value}, expected {kind.value}")
            self.rulesets[kind] = ruleset
        return self.rulesets

    def load_trained_models(self) -> TrainedModels:
        if self.models is None:
            path = Path(self.config.models)
            if not path.exists():
                raise DataError(f"models not found: {path} (run train first)")
            self.models = load_models(path)
        return self.models

    def load_reports(self) -> list[ScoreReport]:
        if not self.reports:
            path = Path(self.config.reports)
            if not path.exists():
                raise DataError(f"reports not found: {path} (run score first)")
            self.reports = read_reports(path)
        return self.reports

    # -- pipeline steps -------------------------------------------------

    def generate(self, n: int, fraud_rate: float, seed: int, n_clusters: int = 4) -> dict[str, int]:
        cfg = GeneratorConfig(
            n_cases=n,
            fraud_rate=fraud_rate,
            n_clusters=n_clusters,
            seed=seed,
            base_period=self.config.base_period,
        )
        counts = write_corpus_files(cfg, Path(self.config.cases).parent)
        # a fresh corpus resets the run state
        self.state = RunState()
        self.save_state()
        return counts

    def train(self) -> TrainedModels:
        corpus = self.load_corpus()
        self.models = train_models(corpus.cases, k=self.config.k, seed=self.config.seed)
        Path(self.config.models).parent.mkdir(parents=True, exist_ok=True)
        save_models(self.models, self.config.models)
        return self.models

    def score(self, workers: int = 1) -> list[ScoreReport]:
        corpus = self.load_corpus()
        models = self.load_trained_models()
        rulesets = self.load_rulesets()
        activation = {
            case_id: frozenset(names) for case_id, names in self.state.activation.items()
        }
        by_kind: dict[CaseKind, list] = {kind: [] for kind in rulesets}
        for case in corpus.cases:
            by_kind[case.kind].append(case)
        reports: dict[str, ScoreReport] = {}
        for kind, kind_cases in by_kind.items():
            for report in score_batch(
                rulesets[kind],
                kind_cases,
                models,
                self.hub,
                clock=corpus.clock,
                base_period=corpus.base_period,
                activation=activation,
                workers=workers,
            ):
                reports[report.case_id] = report
        self.reports = [reports[c.case_id] for c in corpus.cases]
        write_reports(self.config.reports, self.reports)
        return self.reports

    def select(self, plan_path: str | None = None, signals: list[Signal] | None = None) -> ComposedSelection:
        corpus = self.load_corpus()
        reports = self.load_reports()
        plan_file = Path(plan_path or self.config.plan)
        if not plan_file.exists():
            raise DataError(f"selection plan not found: {plan_file}")
        plan = load_plan(plan_file)
        liabilities = estimate_liabilities(corpus, reports)
        composed = compose_plan(plan, corpus, reports, liabilities, signals)
        write_decisions(self.config.selection, composed.decisions)
        # commissioning the audits: outcomes attach now and mature later
        truth_path = Path(self.config.truth)
        if truth_path.exists():
            truth = read_truth(truth_path)
            attach_outcomes(
                corpus,
                truth,
                [d.case_id for d in composed.decisions],
                clock=corpus.clock,
                delay_months=self.config.outcome_delay_months,
                miss_rate=self.config.outcome_miss_rate,
                jitter_months=self.config.outcome_jitter_months,
                seed=self.config.seed + corpus.clock,
            )
            write_cases(self.config.cases, corpus.cases)
        return composed

    def simulate_month(self) -> dict:
        corpus = self.load_corpus()
        before = corpus.clock
        corpus.advance(1)
        self.state.clock = corpus.clock
        digests = []
        for _ in range(self.config.cadence):
            reports = self.score()
            digests.append(sorted({r.ruleset_digest for r in reports}))
            self._enqueue_uid_checks(reports)
        processed = 0
        oracle = self._vies_oracle()
        for _ in range(UID_DAYS_PER_MONTH):
            processed += len(self.hub.uid_client.run_validation_day(oracle))
            self.hub.bump()
        matured = sum(
            1
            for c in corpus.cases
            if c.outcome is not None and before < c.outcome.available_at <= corpus.clock
        )
        summary = {
            "month": corpus.clock,
            "batches": self.config.cadence,
            "digests": digests,
            "uid_processed": processed,
            "newly_matured": matured,
        }
        self._append_run_log(summary)
        self.save_state()
        return summary

    def _enqueue_uid_checks(self, reports: list[ScoreReport]) -> None:
        corpus = self.load_corpus()
        by_id = {r.case_id: r for r in reports}
        for case in corpus.cases:
            if case.kind is not CaseKind.MISSING_TRADER:
                continue
            report = by_id.get(case.case_id)
            if report is None:
                continue
            for state in partner_states(case):
                self.hub.uid_client.enqueue(state, case.case_id, report.score.value)
        self.hub.bump()

    def _vies_oracle(self):
        path = Path(self.config.vies)
        if not path.exists():
            return lambda case_id: True
        table = load_vies_oracle(path)
        return lambda case_id: table.get(case_id, True)

    def _append_run_log(self, summary: dict) -> None:
        path = Path(self.config.run_log)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(summary, sort_keys=True))
            fh.write("\n")

    def evaluate(self) -> EvaluationReport:
        corpus = self.load_corpus()
        selection_path = Path(self.config.selection)
        if not selection_path.exists():
            raise DataError(f"selection not found: {selection_path} (run select first)")
        decisions = read_decisions(selection_path)
        report = success_rate(
            decisions,
            corpus,
            corpus.clock,
            maturation_delay_used=self.config.outcome_delay_months,
        )
        with open(self.config.evaluation, "w", encoding="utf-8") as fh:
            json.dump(report.to_obj(), fh, indent=1)
            fh.write("\n")
        return report

    def explain(self, case_id: str) -> str:
        for report in self.load_reports():
            if report.case_id == case_id:
                return render_explanations(report)
        raise DataError(f"no score report for case {case_id!r}")
