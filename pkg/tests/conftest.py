"""Shared fixtures: schema, rule fixtures, and a small trained corpus."""

from __future__ import annotations

from datetime import date
from decimal import Decimal
from pathlib import Path

import pytest

from pacc_select.domain import CaseKind, Corpus, FeatureSchema, TaxpayerCase
from pacc_select.dsl import parse_rules
from pacc_select.models import REGISTERED_MODEL_IDS, train_models
from pacc_select.sources import SourceHub
from pacc_select.synth import GeneratorConfig, build_corpus, generate_corpus

REPO_ROOT = Path(__file__).resolve().parent.parent

TABLE1_RULES = """
ruleset for missing_trader

rule "EurofiscPersonLink" {
  weight: HIGH
  when: watchlist_links() >= 1
  explain: "The company has one or more persons linked to another company on the Eurofisc watchlist."
}

rule "HighOverallRisk" {
  weight: HIGH
  when: model.effectiveness >= 0.8
  explain: "High risk score based on the effectiveness model, qualitative weight and frequency weight."
  source: model
}

rule "FewEmployees" {
  weight: MED
  when: case.employee_count < 4
  explain: "The company has fewer than four employees."
}

rule "MultipleAddressUsage" {
  weight: LOW
  when: companies_at_address() > 13
  explain: "More than 13 companies are located at this address."
}
"""


@pytest.fixture(scope="session")
def schema() -> FeatureSchema:
    return FeatureSchema.load(REPO_ROOT / "schema.json")


@pytest.fixture(scope="session")
def table1_ruleset(schema):
    return parse_rules(TABLE1_RULES, schema, REGISTERED_MODEL_IDS)


@pytest.fixture(scope="session")
def shipped_mt_ruleset(schema):
    text = (REPO_ROOT / "rules" / "missing_trader.rules").read_text(encoding="utf-8")
    return parse_rules(text, schema, REGISTERED_MODEL_IDS)


@pytest.fixture(scope="session")
def shipped_ca_ruleset(schema):
    text = (REPO_ROOT / "rules" / "company_audit.rules").read_text(encoding="utf-8")
    return parse_rules(text, schema, REGISTERED_MODEL_IDS)


def make_case(
    case_id: str = "C00001",
    kind: CaseKind = CaseKind.MISSING_TRADER,
    features: dict | None = None,
    persons: tuple[str, ...] = (),
    address_id: str = "A00001",
    vat_returns: tuple = (),
    registered: date = date(2015, 6, 1),
    last_audited_year: int | None = None,
    outcome=None,
) -> TaxpayerCase:
    feats = {}
    for name, value in (features or {}).items():
        if isinstance(value, bool) or isinstance(value, (str, Decimal)):
            feats[name] = value
        elif isinstance(value, (int, float)):
            feats[name] = Decimal(str(value))
        else:
            feats[name] = value
    return TaxpayerCase(
        case_id=case_id,
        kind=kind,
        features=feats,
        persons=persons,
        address_id=address_id,
        vat_returns=vat_returns,
        registered_date=registered,
        last_audited_year=last_audited_year,
        outcome=outcome,
    )


@pytest.fixture(scope="session")
def small_world(schema):
    """A generated 1,500-case corpus with trained models and loaded
    sources; shared read-only across test modules."""
    cfg = GeneratorConfig(n_cases=1500, fraud_rate=0.05, n_clusters=3, seed=11)
    cases, watchlist_rows, registry_rows, truth = generate_corpus(cfg)
    corpus = build_corpus(cases, cfg)
    hub = SourceHub()
    for company_id, person_id in watchlist_rows:
        hub.watchlist.add_link(company_id, person_id)
    for company_id, address_id, state in registry_rows:
        hub.registry.add(company_id, address_id, state)
    hub.bump()
    models = train_models(cases, k=3, seed=11)
    return {
        "cfg": cfg,
        "corpus": corpus,
        "hub": hub,
        "models": models,
        "truth": truth,
    }
