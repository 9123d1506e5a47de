"""Synthetic corpus generator with planted fraud patterns.

Legitimate companies are sampled from well-separated archetype profiles
(the archetype is written into industry_code, which doubles as the
clustering oracle in tests). Three fraud patterns are planted:

  MT_RING           missing-trader rings sharing one address (>13
                    co-located), <4 employees, watchlist-linked persons,
                    no VAT return for over two years, inflated
                    intra-community acquisitions and refund claims.
  LOW_PERSONNEL     personnel costs pushed at least 3 robust z below the
                    archetype median.
  UNDERREPORTED_TAX output tax declared far below the archetype's normal
                    share of the tax base, with patchy filing.

Everything is driven by one seeded RNG, so a seed maps to byte-identical
corpus files.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from datetime import date
from decimal import Decimal
from enum import Enum
from pathlib import Path

from . import jsonio
from .domain import CaseKind, Corpus, TaxpayerCase, index_period

DEFAULT_FRAUD_RATE = 0.05
RING_MIN = 14  # one shared address must host more than 13 companies
MEMBER_STATES = ("DE", "IT", "CZ", "SK", "HU", "SI")


class FraudPattern(str, Enum):
    MT_RING = "MT_RING"
    LOW_PERSONNEL = "LOW_PERSONNEL"
    UNDERREPORTED_TAX = "UNDERREPORTED_TAX"
    NONE = "NONE"


@dataclass(frozen=True)
class TruthEntry:
    is_fraud: bool
    pattern: FraudPattern


@dataclass
class GroundTruth:
    entries: dict[str, TruthEntry] = field(default_factory=dict)

    def is_fraud(self, case_id: str) -> bool:
        entry = self.entries.get(case_id)
        return bool(entry and entry.is_fraud)

    def pattern(self, case_id: str) -> FraudPattern:
        entry = self.entries.get(case_id)
        return entry.pattern if entry else FraudPattern.NONE


@dataclass
class GeneratorConfig:
    n_cases: int = 1000
    fraud_rate: float = DEFAULT_FRAUD_RATE
    n_clusters: int = 4
    ring_size_range: tuple[int, int] = (14, 20)
    seed: int = 0
    noise_scale: float = 0.08
    training_fraction: float = 0.4
    mt_share: float = 0.25  # share of legitimate cases that are VAT traders
    watchlist_fp_rate: float = 0.002
    base_period: str = "2020-01"

    def __post_init__(self) -> None:
        if self.n_cases < 10:
            raise ValueError("n_cases must be >= 10")
        if not 0 <= self.fraud_rate < 1:
            raise ValueError("fraud_rate must be in [0, 1)")
        if not 2 <= self.n_clusters <= 8:
            raise ValueError("n_clusters must be in 2..8")
        if self.ring_size_range[0] < RING_MIN:
            raise ValueError(f"ring size must be >= {RING_MIN} to exceed the address threshold")
        if self.ring_size_range[1] > self.n_cases:
            raise ValueError("ring size exceeds the corpus size")


@dataclass(frozen=True)
class _Archetype:
    index: int
    revenue_mean: float
    employee_mean: float
    industry_code: str
    legal_form: str
    premises: str
    cash_intensity: float


_LEGAL_FORMS = ("e.U.", "OG", "GmbH", "GmbH", "AG", "AG", "SE", "SE")
_PREMISES = ("retail", "office", "office", "industrial", "industrial", "office", "office", "industrial")
_EMPLOYEE_MEANS = (3.0, 9.0, 25.0, 65.0, 160.0, 420.0, 900.0, 2000.0)


def _archetypes(n: int) -> list[_Archetype]:
    return [
        _Archetype(
            index=i,
            revenue_mean=60_000.0 * (6.0**i),
            employee_mean=_EMPLOYEE_MEANS[i],
            industry_code=f"IND-{i}",
            legal_form=_LEGAL_FORMS[i],
            premises=_PREMISES[i],
            cash_intensity=0.45 - 0.05 * i,
        )
        for i in range(n)
    ]


def _money(x: float) -> Decimal:
    return Decimal(f"{x:.2f}")


def _gauss(rng: random.Random, scale: float) -> float:
    # truncated so a single draw cannot jump archetypes
    return max(-3.0, min(3.0, rng.gauss(0.0, 1.0))) * scale


def generate_corpus(
    cfg: GeneratorConfig,
) -> tuple[list[TaxpayerCase], list[tuple[str, str]], list[tuple[str, str, str]], GroundTruth]:
    """Build (cases, watchlist rows, registry rows, ground truth)."""
    rng = random.Random(cfg.seed)
    archetypes = _archetypes(cfg.n_clusters)
    n = cfg.n_cases

    n_fraud = round(n * cfg.fraud_rate)
    ring_sizes: list[int] = []
    ring_budget = n_fraud // 3
    while ring_budget - sum(ring_sizes) >= cfg.ring_size_range[0]:
        size = rng.randint(*cfg.ring_size_range)
        size = min(size, ring_budget - sum(ring_sizes))
        if size < cfg.ring_size_range[0]:
            break
        ring_sizes.append(size)
    if not ring_sizes and n_fraud >= cfg.ring_size_range[0]:
        ring_sizes.append(min(rng.randint(*cfg.ring_size_range), n_fraud))
    ring_total = sum(ring_sizes)
    n_low = (n_fraud - ring_total + 1) // 2
    n_under = n_fraud - ring_total - n_low

    roles: list[tuple[str, int]] = []
    for ring_idx, size in enumerate(ring_sizes):
        roles.extend(("ring", ring_idx) for _ in range(size))
    roles.extend(("low_personnel", -1) for _ in range(n_low))
    roles.extend(("underreported", -1) for _ in range(n_under))
    roles.extend(("legit", -1) for _ in range(n - len(roles)))
    rng.shuffle(roles)

    cases: list[TaxpayerCase] = []
    truth = GroundTruth()
    watchlist_rows: list[tuple[str, str]] = []
    registry_rows: list[tuple[str, str, str]] = []
    person_seq = 0
    shared_addresses = [f"A-HUB-{i:03d}" for i in range(max(1, n // 60))]
    shared_load: dict[str, int] = {a: 0 for a in shared_addresses}
    ring_watchlist = {i: f"W-{i:03d}" for i in range(len(ring_sizes))}

    def next_persons(count: int) -> tuple[str, ...]:
        nonlocal person_seq
        out = tuple(f"P{person_seq + i:06d}" for i in range(count))
        person_seq += count
        return out

    for idx, (role, ring_idx) in enumerate(roles):
        case_id = f"C{idx:05d}"
        arch = archetypes[rng.randrange(len(archetypes))] if role != "ring" else archetypes[0]
        if role == "ring":
            case = _make_ring_case(cfg, rng, case_id, arch, ring_idx, next_persons)
            truth.entries[case_id] = TruthEntry(True, FraudPattern.MT_RING)
            watch_company = ring_watchlist[ring_idx]
            linked = case.persons[0 : max(1, len(case.persons) - 1)]
            for person in linked:
                watchlist_rows.append((watch_company, person))
        elif role == "low_personnel":
            case = _make_company_case(cfg, rng, case_id, arch, next_persons, low_personnel=True)
            truth.entries[case_id] = TruthEntry(True, FraudPattern.LOW_PERSONNEL)
        elif role == "underreported":
            case = _make_company_case(cfg, rng, case_id, arch, next_persons, underreported=True)
            truth.entries[case_id] = TruthEntry(True, FraudPattern.UNDERREPORTED_TAX)
        else:
            is_trader = rng.random() < cfg.mt_share
            case = _make_legit_case(cfg, rng, case_id, arch, next_persons, trader=is_trader,
                                    shared_addresses=shared_addresses, shared_load=shared_load)
            truth.entries[case_id] = TruthEntry(False, FraudPattern.NONE)
            if case.persons and rng.random() < cfg.watchlist_fp_rate:
                watchlist_rows.append((f"W-FP-{idx:05d}", case.persons[0]))
        registry_rows.append((case_id, case.address_id, "AT"))
        cases.append(case)

    _attach_training_outcomes(cfg, rng, cases, truth)
    return cases, watchlist_rows, registry_rows, truth


def _registered(cfg: GeneratorConfig, months_ago: int, rng: random.Random) -> date:
    period = index_period(-months_ago, cfg.base_period)
    return date(int(period[:4]), int(period[5:7]), 1 + rng.randrange(28))


def _monthly_returns(
    rng: random.Random, first: int, last: int, filed_rate: float
) -> tuple[tuple[str, bool], ...]:
    out = []
    for idx in range(first, last + 1):
        out.append((index_period(idx), rng.random() < filed_rate))
    return tuple(out)


def _filed_last_year(returns: tuple[tuple[str, bool], ...]) -> int:
    from .domain import period_index

    return sum(1 for p, filed in returns if filed and period_index(p) > -12)


def _base_features(rng: random.Random, arch: _Archetype, noise: float) -> dict:
    revenue = arch.revenue_mean * (1.0 + _gauss(rng, noise))
    employees = max(1, round(arch.employee_mean * (1.0 + _gauss(rng, noise * 2))))
    personnel = 0.25 * revenue * (1.0 + _gauss(rng, noise))
    profit = 0.08 * revenue * (1.0 + _gauss(rng, noise * 3))
    assets = 0.9 * revenue * (1.0 + _gauss(rng, noise))
    tax_base = 0.85 * revenue * (1.0 + _gauss(rng, noise))
    output_tax = 0.20 * tax_base * (1.0 + _gauss(rng, noise))
    input_tax = 0.55 * output_tax * (1.0 + _gauss(rng, noise))
    return {
        "revenue": revenue,
        "employees": employees,
        "personnel": personnel,
        "profit": profit,
        "assets": assets,
        "tax_base": tax_base,
        "output_tax": output_tax,
        "input_tax": input_tax,
    }


def _feature_map(
    rng: random.Random,
    arch: _Archetype,
    base: dict,
    returns: tuple[tuple[str, bool], ...],
    acquisitions: float,
    deliveries: float,
    refunds: float,
    partner: str,
    bank_accounts: int,
    cash_intensity: float,
    director_count: int,
    premises: str,
    tax_advisor: bool,
    annual_statements: bool,
) -> dict:
    return {
        "employee_count": Decimal(base["employees"]),
        "director_count": Decimal(director_count),
        "revenue_eur": _money(base["revenue"]),
        "personnel_cost_eur": _money(base["personnel"]),
        "profit_eur": _money(base["profit"]),
        "total_assets_eur": _money(base["assets"]),
        "equity_eur": _money(0.3 * base["assets"]),
        "cash_eur": _money(0.1 * base["assets"]),
        "input_tax_eur": _money(base["input_tax"]),
        "output_tax_eur": _money(base["output_tax"]),
        "tax_base_eur": _money(base["tax_base"]),
        "vat_refund_claims_eur": _money(refunds),
        "intra_community_acquisitions_eur": _money(acquisitions),
        "intra_community_deliveries_eur": _money(deliveries),
        "write_offs_eur": _money(0.03 * base["revenue"]),
        "prior_audit_adjustment_eur": _money(0.0),
        "bank_accounts_count": Decimal(bank_accounts),
        "vat_periods_filed_last_year": Decimal(_filed_last_year(returns)),
        "cash_intensity": _money(cash_intensity),
        "industry_code": arch.industry_code,
        "legal_form": arch.legal_form,
        "premises_type": premises,
        "partner_states": partner,
        "filed_annual_statements": annual_statements,
        "has_tax_advisor": tax_advisor,
    }


def _make_legit_case(
    cfg, rng, case_id, arch, next_persons, trader: bool, shared_addresses, shared_load
) -> TaxpayerCase:
    base = _base_features(rng, arch, cfg.noise_scale)
    reg_months = rng.randint(30, 240)
    returns = _monthly_returns(rng, max(-reg_months, -23), 0, 0.97)
    if trader:
        partners = rng.sample(MEMBER_STATES, rng.randint(1, 2))
        acquisitions = 0.30 * base["revenue"] * (1.0 + abs(_gauss(rng, cfg.noise_scale * 3)))
        deliveries = 0.20 * base["revenue"]
    else:
        partners = []
        acquisitions = 0.05 * base["revenue"]
        deliveries = 0.04 * base["revenue"]
    refunds = 0.01 * base["revenue"] if rng.random() < 0.1 else 0.0
    if rng.random() < 0.05 and shared_load:
        address = min(shared_addresses, key=lambda a: (shared_load[a], a))
        if shared_load[address] < 8:
            shared_load[address] += 1
        else:
            address = f"A{case_id[1:]}"
    else:
        address = f"A{case_id[1:]}"
    features = _feature_map(
        rng, arch, base, returns,
        acquisitions=acquisitions, deliveries=deliveries, refunds=refunds,
        partner=",".join(partners),
        bank_accounts=rng.randint(1, 3),
        cash_intensity=max(0.02, arch.cash_intensity + _gauss(rng, 0.05)),
        director_count=rng.randint(1, 3),
        premises=arch.premises,
        tax_advisor=rng.random() < 0.85,
        annual_statements=rng.random() < 0.97,
    )
    return TaxpayerCase(
        case_id=case_id,
        kind=CaseKind.MISSING_TRADER if trader else CaseKind.COMPANY_AUDIT,
        features=features,
        persons=next_persons(rng.randint(1, 3)),
        address_id=address,
        vat_returns=returns,
        registered_date=_registered(cfg, reg_months, rng),
        last_audited_year=2010 + rng.randrange(10) if rng.random() < 0.55 else None,
    )


def _make_company_case(
    cfg, rng, case_id, arch, next_persons, low_personnel=False, underreported=False
) -> TaxpayerCase:
    base = _base_features(rng, arch, cfg.noise_scale)
    if low_personnel:
        # at least 3 robust z below the archetype median, scaled off the
        # configured noise so the margin survives noisier configs
        depression = max(0.30, 5.0 * cfg.noise_scale)
        base["personnel"] = 0.25 * arch.revenue_mean * (1.0 - depression)
    filed_rate = 0.6 if underreported else 0.97
    if underreported:
        base["output_tax"] = 0.06 * base["tax_base"] * (1.0 + _gauss(rng, cfg.noise_scale))
        base["input_tax"] = 0.11 * base["tax_base"] * (1.0 + _gauss(rng, cfg.noise_scale))
    reg_months = rng.randint(30, 240)
    returns = _monthly_returns(rng, max(-reg_months, -23), 0, filed_rate)
    features = _feature_map(
        rng, arch, base, returns,
        acquisitions=0.05 * base["revenue"], deliveries=0.04 * base["revenue"],
        refunds=0.0,
        partner="",
        bank_accounts=rng.randint(1, 3),
        cash_intensity=(
            min(0.95, 0.75 + abs(_gauss(rng, 0.05)))
            if underreported
            else max(0.02, arch.cash_intensity + _gauss(rng, 0.05))
        ),
        director_count=rng.randint(1, 3),
        premises=arch.premises,
        tax_advisor=rng.random() < 0.7,
        annual_statements=rng.random() < 0.9,
    )
    return TaxpayerCase(
        case_id=case_id,
        kind=CaseKind.COMPANY_AUDIT,
        features=features,
        persons=next_persons(rng.randint(1, 3)),
        address_id=f"A{case_id[1:]}",
        vat_returns=returns,
        registered_date=_registered(cfg, reg_months, rng),
        last_audited_year=2010 + rng.randrange(10) if rng.random() < 0.4 else None,
    )


def _make_ring_case(cfg, rng, case_id, arch, ring_idx, next_persons) -> TaxpayerCase:
    base = _base_features(rng, arch, cfg.noise_scale)
    base["employees"] = rng.randint(0, 3)
    base["revenue"] = 0.6 * arch.revenue_mean * (1.0 + _gauss(rng, 0.2))
    base["personnel"] = 0.05 * 0.25 * arch.revenue_mean * (1.0 + abs(_gauss(rng, 0.3)))
    base["profit"] = 0.01 * base["revenue"] * (1.0 + _gauss(rng, 0.5))
    base["assets"] = 0.15 * arch.revenue_mean * (1.0 + abs(_gauss(rng, 0.3)))
    base["tax_base"] = 1.2 * arch.revenue_mean * (1.0 + _gauss(rng, 0.15))
    acquisitions = 1.5 * arch.revenue_mean * (1.0 + abs(_gauss(rng, 0.25)))
    base["input_tax"] = 0.20 * acquisitions
    base["output_tax"] = 0.02 * acquisitions * (1.0 + abs(_gauss(rng, 0.3)))
    refunds = 0.20 * acquisitions

    never_filed = rng.random() < 0.5
    if never_filed:
        reg_months = rng.randint(25, 48)
        returns: tuple[tuple[str, bool], ...] = ()
    else:
        gap = rng.randint(25, 40)
        reg_months = gap + rng.randint(12, 24)
        returns = _monthly_returns(rng, -gap - 11, -gap, 1.0)

    features = _feature_map(
        rng, arch, base, returns,
        acquisitions=acquisitions,
        deliveries=1.2 * arch.revenue_mean * (1.0 + abs(_gauss(rng, 0.3))),
        refunds=refunds,
        partner=",".join(rng.sample(MEMBER_STATES, rng.randint(2, 3))),
        bank_accounts=rng.randint(4, 8),
        cash_intensity=min(0.95, 0.65 + abs(_gauss(rng, 0.1))),
        director_count=1,
        premises="virtual" if rng.random() < 0.7 else "office",
        tax_advisor=rng.random() < 0.15,
        annual_statements=rng.random() < 0.2,
    )
    return TaxpayerCase(
        case_id=case_id,
        kind=CaseKind.MISSING_TRADER,
        features=features,
        persons=next_persons(rng.randint(1, 2)),
        address_id=f"A-RING-{ring_idx:03d}",
        vat_returns=returns,
        registered_date=_registered(cfg, reg_months, rng),
        last_audited_year=None,
    )


def _attach_training_outcomes(cfg, rng, cases: list[TaxpayerCase], truth: GroundTruth) -> None:
    """Mark a training slice as already audited with exact labels, so the
    models have matured history to learn from."""
    from .domain import AuditOutcome

    n_train = round(len(cases) * cfg.training_fraction)
    chosen = set(rng.sample(sorted(c.case_id for c in cases), n_train))
    for i, case in enumerate(cases):
        if case.case_id not in chosen:
            continue
        fraud = truth.is_fraud(case.case_id)
        base = case.features.get("tax_base_eur", Decimal(0))
        outcome = AuditOutcome(
            audited=True,
            fraud_found=fraud,
            back_tax_eur=_money(float(base) * 0.15) if fraud else Decimal(0),
            available_at=-rng.randint(1, 18),
        )
        cases[i] = case.with_outcome(outcome)


# ---------------------------------------------------------------------------
# File emission

def write_truth(path, truth: GroundTruth) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for case_id in sorted(truth.entries):
            entry = truth.entries[case_id]
            fh.write(jsonio.dumps({
                "case_id": case_id,
                "is_fraud": entry.is_fraud,
                "pattern": entry.pattern.value,
            }))
            fh.write("\n")


def read_truth(path) -> GroundTruth:
    import json

    truth = GroundTruth()
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            truth.entries[obj["case_id"]] = TruthEntry(
                is_fraud=bool(obj["is_fraud"]),
                pattern=FraudPattern(obj["pattern"]),
            )
    return truth


def write_corpus_files(cfg: GeneratorConfig, outdir: str | Path) -> dict[str, int]:
    """Generate and write cases.jsonl, watchlist.csv, registry.csv,
    truth.jsonl and the mock VIES oracle vies.csv. Returns row counts."""
    from .domain import write_cases

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    cases, watchlist_rows, registry_rows, truth = generate_corpus(cfg)
    write_cases(outdir / "cases.jsonl", cases)
    with open(outdir / "watchlist.csv", "w", encoding="utf-8") as fh:
        fh.write("company_id,person_id\n")
        for company_id, person_id in watchlist_rows:
            fh.write(f"{company_id},{person_id}\n")
    with open(outdir / "registry.csv", "w", encoding="utf-8") as fh:
        fh.write("company_id,address_id,member_state\n")
        for company_id, address_id, state in registry_rows:
            fh.write(f"{company_id},{address_id},{state}\n")
    write_truth(outdir / "truth.jsonl", truth)
    # mock VIES validity: ring UIDs are mostly dead, legitimate ones fine
    rng = random.Random(cfg.seed ^ 0x5EED)
    with open(outdir / "vies.csv", "w", encoding="utf-8") as fh:
        fh.write("case_id,uid_valid\n")
        for case in cases:
            if truth.pattern(case.case_id) is FraudPattern.MT_RING:
                valid = rng.random() < 0.1
            else:
                valid = rng.random() < 0.99
            fh.write(f"{case.case_id},{'true' if valid else 'false'}\n")
    return {
        "cases": len(cases),
        "watchlist_links": len(watchlist_rows),
        "registry_companies": len(registry_rows),
        "frauds": sum(1 for e in truth.entries.values() if e.is_fraud),
    }


def build_corpus(cases: list[TaxpayerCase], cfg: GeneratorConfig) -> Corpus:
    return Corpus(cases=list(cases), base_period=cfg.base_period, clock=0)
