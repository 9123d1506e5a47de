"""Core domain model: cases, features, outcomes, scores and corpus bookkeeping.

Monetary values are Decimal end to end (JSON numbers are parsed with
parse_float=Decimal) so threshold comparisons stay cent-exact. Time is a
discrete month index relative to a corpus base period.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from datetime import date
from decimal import Decimal, InvalidOperation
from enum import Enum, IntEnum
from pathlib import Path
from typing import Iterable, Iterator

from . import jsonio
from .jsonio import fmt_decimal

DEFAULT_BASE_PERIOD = "2020-01"

_PERIOD_RE = re.compile(r"^(\d{4})-(\d{2})$")


class CaseKind(str, Enum):
    COMPANY_AUDIT = "company_audit"
    MISSING_TRADER = "missing_trader"


class WeightTier(IntEnum):
    """Traffic-light contribution tier; total order LOW < MED < HIGH."""

    LOW = 0
    MED = 1
    HIGH = 2

    def __str__(self) -> str:  # serialized by name, not by ordinal
        return self.name


class _Missing:
    """Singleton for an explicitly missing feature value."""

    _instance: "_Missing | None" = None

    def __new__(cls) -> "_Missing":
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "MISSING"


MISSING = _Missing()

# A feature value is a number (Decimal), text, flag, or explicitly missing.
FeatureValue = Decimal | str | bool | _Missing


class FeatureType(str, Enum):
    NUMBER = "number"
    TEXT = "text"
    FLAG = "flag"


@dataclass(frozen=True)
class FeatureSpec:
    type: FeatureType
    unit: str
    description: str


@dataclass(frozen=True)
class FeatureSchema:
    """Declares every feature name that cases, rules and models may use."""

    features: dict[str, FeatureSpec]

    def type_of(self, name: str) -> FeatureType | None:
        spec = self.features.get(name)
        return spec.type if spec else None

    def numeric_features(self) -> list[str]:
        return [n for n, s in self.features.items() if s.type is FeatureType.NUMBER]

    @classmethod
    def from_json(cls, doc: dict) -> "FeatureSchema":
        feats = {}
        for name, spec in doc.get("features", {}).items():
            feats[name] = FeatureSpec(
                type=FeatureType(spec["type"]),
                unit=spec.get("unit", "none"),
                description=spec.get("description", ""),
            )
        return cls(features=feats)

    @classmethod
    def load(cls, path: str | Path) -> "FeatureSchema":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


@dataclass(frozen=True)
class AuditOutcome:
    """Result of a commissioned audit, visible only once matured.

    Consistency (fraud_found requires audited, back tax requires a
    finding) is checked by validate_case, so records deserialized from
    disk surface diagnostics instead of crashing the loader.
    """

    audited: bool
    fraud_found: bool
    back_tax_eur: Decimal
    available_at: int  # month index at which the result becomes known


@dataclass(frozen=True, order=True)
class FraudScore:
    """Integer fraudulence score; construction rejects values outside 0..999."""

    value: int

    def __post_init__(self) -> None:
        if not isinstance(self.value, int) or isinstance(self.value, bool):
            raise ValueError(f"score must be an integer, got {self.value!r}")
        if not 0 <= self.value <= 999:
            raise ValueError(f"score out of range 0..999: {self.value}")


@dataclass(frozen=True)
class TaxpayerCase:
    case_id: str
    kind: CaseKind
    features: dict[str, FeatureValue]
    persons: tuple[str, ...]
    address_id: str
    vat_returns: tuple[tuple[str, bool], ...]  # (period "YYYY-MM", filed)
    registered_date: date
    last_audited_year: int | None = None
    outcome: AuditOutcome | None = None

    def feature(self, name: str) -> FeatureValue:
        return self.features.get(name, MISSING)

    def with_outcome(self, outcome: AuditOutcome) -> "TaxpayerCase":
        return replace(self, outcome=outcome)


@dataclass
class Diagnostic:
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.path}: {self.message}"


@dataclass(frozen=True)
class NotApplicable:
    """Tri-state outcome carrier: a value that is unavailable rather than
    false or zero. Rules touching one become not-applicable, never wrong."""

    reason: str


class MissingFeatureError(ValueError):
    def __init__(self, feature: str):
        self.feature = feature
        super().__init__(f"missing feature {feature}")


def period_index(period: str, base_period: str = DEFAULT_BASE_PERIOD) -> int:
    """Month index of a YYYY-MM period relative to the corpus base period."""
    m = _PERIOD_RE.match(period)
    if not m:
        raise ValueError(f"bad period {period!r}, expected YYYY-MM")
    b = _PERIOD_RE.match(base_period)
    assert b is not None
    return (int(m.group(1)) - int(b.group(1))) * 12 + (int(m.group(2)) - int(b.group(2)))


def index_period(index: int, base_period: str = DEFAULT_BASE_PERIOD) -> str:
    b = _PERIOD_RE.match(base_period)
    assert b is not None
    total = int(b.group(1)) * 12 + (int(b.group(2)) - 1) + index
    return f"{total // 12:04d}-{total % 12 + 1:02d}"


def date_month_index(d: date, base_period: str = DEFAULT_BASE_PERIOD) -> int:
    return period_index(f"{d.year:04d}-{d.month:02d}", base_period)


@dataclass
class Corpus:
    """Loaded case set plus the simulated clock.

    The clock is advanced only by the simulation driver (single writer);
    everything else treats the corpus as read-only.
    """

    cases: list[TaxpayerCase]
    base_period: str = DEFAULT_BASE_PERIOD
    clock: int = 0
    by_id: dict[str, TaxpayerCase] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if not self.by_id:
            self.by_id = {c.case_id: c for c in self.cases}

    @property
    def current_year(self) -> int:
        base_year = int(self.base_period[:4])
        base_month = int(self.base_period[5:7])
        return base_year + (base_month - 1 + self.clock) // 12

    def advance(self, months: int = 1) -> int:
        if months < 0:
            raise ValueError("clock is monotone; cannot go backwards")
        self.clock += months
        return self.clock

    def update_case(self, case: TaxpayerCase) -> None:
        if case.case_id not in self.by_id:
            raise KeyError(case.case_id)
        self.by_id[case.case_id] = case
        for i, c in enumerate(self.cases):
            if c.case_id == case.case_id:
                self.cases[i] = case
                break


def corpus_clock(corpus: Corpus) -> int:
    """Current simulated month index of the corpus."""
    return corpus.clock


# ---------------------------------------------------------------------------
# Validation

_CASE_FIELDS = {
    "case_id",
    "kind",
    "features",
    "persons",
    "address_id",
    "vat_returns",
    "registered_date",
    "last_audited_year",
    "outcome",
}
_OUTCOME_FIELDS = {"audited", "fraud_found", "back_tax_eur", "available_at"}


def validate_case(
    case: TaxpayerCase,
    schema: FeatureSchema,
    current_year: int | None = None,
) -> list[Diagnostic]:
    """Check a case against its invariants and the feature schema.

    Pure: same input always yields the same diagnostics. Returns an empty
    list iff the case is well formed.
    """
    out: list[Diagnostic] = []
    if not case.case_id:
        out.append(Diagnostic("case_id", "must be non-empty"))
    for name, value in case.features.items():
        expected = schema.type_of(name)
        if expected is None:
            out.append(Diagnostic(f"features.{name}", "unknown feature (not in schema)"))
            continue
        if value is MISSING:
            continue
        if expected is FeatureType.NUMBER and not (
            isinstance(value, Decimal) and not isinstance(value, bool)
        ):
            out.append(Diagnostic(f"features.{name}", f"expected number, got {_kind_name(value)}"))
        elif expected is FeatureType.TEXT and not isinstance(value, str):
            out.append(Diagnostic(f"features.{name}", f"expected text, got {_kind_name(value)}"))
        elif expected is FeatureType.FLAG and not isinstance(value, bool):
            out.append(Diagnostic(f"features.{name}", f"expected flag, got {_kind_name(value)}"))
    prev = None
    for i, (period, _filed) in enumerate(case.vat_returns):
        try:
            idx = period_index(period)
        except ValueError as exc:
            out.append(Diagnostic(f"vat_returns[{i}]", str(exc)))
            continue
        if prev is not None and idx <= prev:
            out.append(Diagnostic(f"vat_returns[{i}]", f"periods must be strictly increasing, {period} follows a later or equal period"))
        prev = idx
    if case.last_audited_year is not None and current_year is not None:
        if case.last_audited_year > current_year:
            out.append(
                Diagnostic("last_audited_year", f"{case.last_audited_year} is after the current corpus year {current_year}")
            )
    if case.outcome is not None:
        o = case.outcome
        if o.fraud_found and not o.audited:
            out.append(Diagnostic("outcome", "fraud_found requires audited"))
        if o.back_tax_eur < 0:
            out.append(Diagnostic("outcome.back_tax_eur", "must be >= 0"))
        if o.back_tax_eur > 0 and not o.fraud_found:
            out.append(Diagnostic("outcome", "back_tax_eur > 0 requires fraud_found"))
    return out


def _kind_name(value: FeatureValue) -> str:
    if isinstance(value, bool):
        return "flag"
    if isinstance(value, Decimal):
        return "number"
    if isinstance(value, str):
        return "text"
    return "missing"


# ---------------------------------------------------------------------------
# JSON Lines serialization

def case_to_obj(case: TaxpayerCase) -> dict:
    feats: dict[str, object] = {}
    for name, value in case.features.items():
        feats[name] = None if value is MISSING else value
    obj: dict[str, object] = {
        "case_id": case.case_id,
        "kind": case.kind.value,
        "features": feats,
        "persons": list(case.persons),
        "address_id": case.address_id,
        "vat_returns": [[p, f] for p, f in case.vat_returns],
        "registered_date": case.registered_date.isoformat(),
        "last_audited_year": case.last_audited_year,
        "outcome": None,
    }
    if case.outcome is not None:
        o = case.outcome
        obj["outcome"] = {
            "audited": o.audited,
            "fraud_found": o.fraud_found,
            "back_tax_eur": o.back_tax_eur,
            "available_at": o.available_at,
        }
    return obj


def case_to_json(case: TaxpayerCase) -> str:
    return jsonio.dumps(case_to_obj(case))


def case_from_obj(obj: dict) -> tuple[TaxpayerCase | None, list[Diagnostic]]:
    """Build a case from a parsed JSON object; unknown fields are rejected."""
    diags: list[Diagnostic] = []
    if not isinstance(obj, dict):
        return None, [Diagnostic("", "case record must be a JSON object")]
    unknown = set(obj) - _CASE_FIELDS
    for name in sorted(unknown):
        diags.append(Diagnostic(name, "unknown field"))
    missing_req = {"case_id", "kind", "features", "persons", "address_id", "vat_returns", "registered_date"} - set(obj)
    for name in sorted(missing_req):
        diags.append(Diagnostic(name, "required field missing"))
    if diags:
        return None, diags
    try:
        kind = CaseKind(obj["kind"])
    except ValueError:
        return None, [Diagnostic("kind", f"unknown case kind {obj['kind']!r}")]
    feats: dict[str, FeatureValue] = {}
    raw_feats = obj["features"]
    if not isinstance(raw_feats, dict):
        return None, [Diagnostic("features", "must be an object")]
    for name, value in raw_feats.items():
        if value is None:
            feats[name] = MISSING
        elif isinstance(value, bool):
            feats[name] = value
        elif isinstance(value, (int, Decimal)):
            feats[name] = Decimal(value)
        elif isinstance(value, float):
            # only reachable when the caller parsed without parse_float=Decimal
            feats[name] = Decimal(str(value))
        elif isinstance(value, str):
            feats[name] = value
        else:
            diags.append(Diagnostic(f"features.{name}", "unsupported value type"))
    try:
        registered = date.fromisoformat(obj["registered_date"])
    except (TypeError, ValueError):
        return None, [Diagnostic("registered_date", "expected ISO date YYYY-MM-DD")]
    vat_returns: list[tuple[str, bool]] = []
    raw_returns = obj["vat_returns"]
    if not isinstance(raw_returns, list):
        return None, [Diagnostic("vat_returns", "must be a list")]
    for i, entry in enumerate(raw_returns):
        if not (isinstance(entry, list) and len(entry) == 2 and isinstance(entry[0], str) and isinstance(entry[1], bool)):
            diags.append(Diagnostic(f"vat_returns[{i}]", "expected [\"YYYY-MM\", bool]"))
            continue
        vat_returns.append((entry[0], entry[1]))
    outcome = None
    raw_outcome = obj.get("outcome")
    if raw_outcome is not None:
        if not isinstance(raw_outcome, dict) or set(raw_outcome) - _OUTCOME_FIELDS:
            diags.append(Diagnostic("outcome", "malformed outcome object"))
        else:
            try:
                back_tax = raw_outcome["back_tax_eur"]
                outcome = AuditOutcome(
                    audited=bool(raw_outcome["audited"]),
                    fraud_found=bool(raw_outcome["fraud_found"]),
                    back_tax_eur=back_tax if isinstance(back_tax, Decimal) else Decimal(str(back_tax)),
                    available_at=int(raw_outcome["available_at"]),
                )
            except (KeyError, ValueError, TypeError, InvalidOperation) as exc:
                diags.append(Diagnostic("outcome", f"invalid outcome: {exc}"))
    last_year = obj.get("last_audited_year")
    if last_year is not None and not isinstance(last_year, int):
        diags.append(Diagnostic("last_audited_year", "expected integer year"))
        last_year = None
    if diags:
        return None, diags
    case = TaxpayerCase(
        case_id=str(obj["case_id"]),
        kind=kind,
        features=feats,
        persons=tuple(str(p) for p in obj["persons"]),
        address_id=str(obj["address_id"]),
        vat_returns=tuple(vat_returns),
        registered_date=registered,
        last_audited_year=last_year,
        outcome=outcome,
    )
    return case, []


def case_from_json(line: str) -> tuple[TaxpayerCase | None, list[Diagnostic]]:
    try:
        obj = json.loads(line, parse_float=Decimal)
    except json.JSONDecodeError as exc:
        return None, [Diagnostic("", f"invalid JSON: {exc.msg}")]
    return case_from_obj(obj)


def write_cases(path: str | Path, cases: Iterable[TaxpayerCase]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for case in cases:
            fh.write(case_to_json(case))
            fh.write("\n")
            n += 1
    return n


def read_cases(
    path: str | Path,
    schema: FeatureSchema | None = None,
    current_year: int | None = None,
) -> tuple[list[TaxpayerCase], list[Diagnostic]]:
    """Load a JSONL case corpus; diagnostics carry line-qualified paths."""
    cases: list[TaxpayerCase] = []
    diags: list[Diagnostic] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            case, case_diags = case_from_json(line)
            for d in case_diags:
                diags.append(Diagnostic(f"line {lineno}:{d.path}", d.message))
            if case is None:
                continue
            if case.case_id in seen:
                diags.append(Diagnostic(f"line {lineno}:case_id", f"duplicate case_id {case.case_id!r}"))
                continue
            seen.add(case.case_id)
            if schema is not None:
                for d in validate_case(case, schema, current_year=current_year):
                    diags.append(Diagnostic(f"line {lineno}:{d.path}", d.message))
            cases.append(case)
    return cases, diags


def iter_jsonl(path: str | Path) -> Iterator[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line, parse_float=Decimal)
