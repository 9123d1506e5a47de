"""Internal and external data sources behind rule-condition calls.

Watchlist and company-registry stores are fed from CSV fixtures, the
cross-border UID-validation client is quota-limited per member state, and
every lookup passes a legal-basis gate: a source without legal basis
fails closed by turning the asking rule not-applicable.
"""

from __future__ import annotations

import csv
import heapq
from dataclasses import dataclass, field
from pathlib import Path

from .domain import (
    Corpus,
    Diagnostic,
    FeatureSchema,
    NotApplicable,
    TaxpayerCase,
    date_month_index,
    period_index,
    read_cases,
)

DEFAULT_UID_DAILY_QUOTA = 100

UID_VALID = "valid"
UID_INVALID = "invalid"
UID_PENDING = "pending"


class IngestError(Exception):
    """A source file was rejected; nothing was installed."""

    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = diagnostics
        super().__init__("; ".join(str(d) for d in diagnostics[:10]))


class SnapshotInvalidated(RuntimeError):
    """A store was mutated while a scoring batch still held its snapshot."""


@dataclass
class WatchlistStore:
    companies: set[str] = field(default_factory=set)
    links: list[tuple[str, str]] = field(default_factory=list)  # (company, person)
    by_person: dict[str, set[str]] = field(default_factory=dict)

    def add_link(self, company_id: str, person_id: str) -> None:
        self.companies.add(company_id)
        self.links.append((company_id, person_id))
        self.by_person.setdefault(person_id, set()).add(company_id)


@dataclass
class RegistryStore:
    address_of: dict[str, str] = field(default_factory=dict)
    state_of: dict[str, str] = field(default_factory=dict)
    companies_at: dict[str, set[str]] = field(default_factory=dict)

    def add(self, company_id: str, address_id: str, member_state: str) -> None:
        self.address_of[company_id] = address_id
        self.state_of[company_id] = member_state
        self.companies_at.setdefault(address_id, set()).add(company_id)


@dataclass(order=True)
class _QueueEntry:
    sort_key: tuple[int, str]
    state: str = field(compare=False)
    case_id: str = field(compare=False)
    score: int = field(compare=False)
    cancelled: bool = field(default=False, compare=False)


@dataclass
class UidValidationClient:
    """Priority-queued UID checks, at most `daily_quota` per state per day.

    Queue order is (score descending, case_id ascending); results keep the
    last decided status per (state, case); pending checks stay queued
    across day boundaries.
    """

    daily_quota: int = DEFAULT_UID_DAILY_QUOTA
    day: int = 0
    queues: dict[str, list[_QueueEntry]] = field(default_factory=dict)
    entries: dict[tuple[str, str], _QueueEntry] = field(default_factory=dict)
    results: dict[tuple[str, str], str] = field(default_factory=dict)
    by_case: dict[str, dict[str, str]] = field(default_factory=dict)
    daily_log: list[dict[str, int]] = field(default_factory=list)

    def enqueue(self, state: str, case_id: str, priority_score: int) -> None:
        key = (state, case_id)
        status = self.results.get(key)
        if status in (UID_VALID, UID_INVALID):
            return  # already decided
        existing = self.entries.get(key)
        if existing is not None and not existing.cancelled:
            if priority_score <= existing.score:
                return
            existing.cancelled = True  # re-queue at the higher priority
        entry = _QueueEntry(
            sort_key=(-priority_score, case_id),
            state=state,
            case_id=case_id,
            score=priority_score,
        )
        self.entries[key] = entry
        heapq.heappush(self.queues.setdefault(state, []), entry)
        self.results[key] = UID_PENDING
        self.by_case.setdefault(case_id, {})[state] = UID_PENDING

    def pending_count(self, state: str) -> int:
        return sum(1 for e in self.queues.get(state, []) if not e.cancelled)

    def run_validation_day(self, oracle) -> list[tuple[str, str, str]]:
        """Process up to the daily quota per state, highest priority first.

        `oracle(case_id) -> bool` decides validity; the remainder stays
        queued for the following days.
        """
        processed: list[tuple[str, str, str]] = []
        counts: dict[str, int] = {}
        for state in sorted(self.queues):
            queue = self.queues[state]
            done = 0
            while queue and done < self.daily_quota:
                entry = heapq.heappop(queue)
                if entry.cancelled:
                    continue
                status = UID_VALID if oracle(entry.case_id) else UID_INVALID
                key = (state, entry.case_id)
                self.results[key] = status
                self.by_case.setdefault(entry.case_id, {})[state] = status
                self.entries.pop(key, None)
                processed.append((state, entry.case_id, status))
                done += 1
            if done:
                counts[state] = done
        self.daily_log.append(counts)
        self.day += 1
        return processed

    def invalid_count(self, case_id: str) -> int:
        return sum(1 for s in self.by_case.get(case_id, {}).values() if s == UID_INVALID)


@dataclass
class SourceHub:
    watchlist: WatchlistStore = field(default_factory=WatchlistStore)
    registry: RegistryStore = field(default_factory=RegistryStore)
    uid_client: UidValidationClient = field(default_factory=UidValidationClient)
    legal_basis: dict[str, bool] = field(
        default_factory=lambda: {"watchlist": True, "registry": True, "uid": True}
    )
    version: int = 0

    def _gate(self, source: str) -> bool:
        return bool(self.legal_basis.get(source, False))

    def bump(self) -> None:
        self.version += 1

    def snapshot(self) -> "SourceSnapshot":
        return SourceSnapshot(hub=self, version=self.version)


@dataclass
class SourceSnapshot:
    """Read-only view pinned to a store version; any lookup after a
    mutation raises instead of mixing generations inside one batch."""

    hub: SourceHub
    version: int

    def _check(self) -> None:
        if self.hub.version != self.version:
            raise SnapshotInvalidated(
                f"stores were mutated mid-batch (version {self.hub.version} != {self.version})"
            )

    def watchlist_links(self, case: TaxpayerCase) -> int | NotApplicable:
        self._check()
        if not self.hub._gate("watchlist"):
            return NotApplicable("no legal basis")
        by_person = self.hub.watchlist.by_person
        return sum(1 for p in case.persons if by_person.get(p))

    def companies_at_address(self, case: TaxpayerCase) -> int | NotApplicable:
        self._check()
        if not self.hub._gate("registry"):
            return NotApplicable("no legal basis")
        return len(self.hub.registry.companies_at.get(case.address_id, ()))

    def uid_invalid_count(self, case: TaxpayerCase) -> int | NotApplicable:
        self._check()
        if not self.hub._gate("uid"):
            return NotApplicable("no legal basis")
        # pending checks are not-yet-known, they simply do not count
        return self.hub.uid_client.invalid_count(case.case_id)


# Spec-level operation wrappers ---------------------------------------------

def watchlist_links(hub: SourceHub | SourceSnapshot, case: TaxpayerCase) -> int | NotApplicable:
    """How many of the case's persons are linked to a watchlisted company."""
    snap = hub if isinstance(hub, SourceSnapshot) else hub.snapshot()
    return snap.watchlist_links(case)


def companies_at_address(hub: SourceHub | SourceSnapshot, case: TaxpayerCase) -> int | NotApplicable:
    """How many companies are registered at the case's address, the case's
    own company included; 0 for an unknown address."""
    snap = hub if isinstance(hub, SourceSnapshot) else hub.snapshot()
    return snap.companies_at_address(case)


def uid_invalid_count(hub: SourceHub | SourceSnapshot, case: TaxpayerCase) -> int | NotApplicable:
    snap = hub if isinstance(hub, SourceSnapshot) else hub.snapshot()
    return snap.uid_invalid_count(case)


def months_since_last_vat_return(
    case: TaxpayerCase, clock: int, base_period: str
) -> int | NotApplicable:
    """Months since the latest filed return; falls back to company age when
    nothing was ever filed, and is not applicable for a company younger
    than one month with no filing history."""
    latest: int | None = None
    for period, filed in case.vat_returns:
        if filed:
            idx = period_index(period, base_period)
            if latest is None or idx > latest:
                latest = idx
    if latest is not None:
        return max(0, clock - latest)
    age = clock - date_month_index(case.registered_date, base_period)
    if age < 1:
        return NotApplicable("no filing history and company younger than one month")
    return age


def enqueue_uid_check(client: UidValidationClient, state: str, case_id: str, priority_score: int) -> None:
    client.enqueue(state, case_id, priority_score)


def run_validation_day(client: UidValidationClient, oracle) -> list[tuple[str, str, str]]:
    return client.run_validation_day(oracle)


# Ingest ---------------------------------------------------------------------

@dataclass
class IngestResult:
    cases: list[TaxpayerCase]
    summary: dict[str, int]


def _read_csv(path: str | Path, expected_header: list[str]) -> tuple[list[list[str]], list[Diagnostic]]:
    rows: list[list[str]] = []
    diags: list[Diagnostic] = []
    name = Path(path).name
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return [], []  # an empty file carries zero rows
        if [h.strip() for h in header] != expected_header:
            diags.append(Diagnostic(f"{name}:1", f"expected header {','.join(expected_header)}"))
            return [], diags
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(expected_header) or any(not cell.strip() for cell in row):
                diags.append(Diagnostic(f"{name}:{lineno}", "malformed row"))
                continue
            rows.append([cell.strip() for cell in row])
    return rows, diags


def ingest(
    hub: SourceHub,
    cases_file: str | Path,
    watchlist_file: str | Path,
    registry_file: str | Path,
    schema: FeatureSchema | None = None,
    current_year: int | None = None,
) -> IngestResult:
    """Load all three source files; all-or-nothing. On any malformed row
    the whole ingest is rejected with line diagnostics and the hub keeps
    its previous stores."""
    diags: list[Diagnostic] = []

    cases, case_diags = read_cases(cases_file, schema=schema, current_year=current_year)
    cases_name = Path(cases_file).name
    diags.extend(Diagnostic(f"{cases_name}:{d.path}", d.message) for d in case_diags)

    watchlist_rows, wl_diags = _read_csv(watchlist_file, ["company_id", "person_id"])
    diags.extend(wl_diags)

    registry_rows, reg_diags = _read_csv(registry_file, ["company_id", "address_id", "member_state"])
    diags.extend(reg_diags)
    seen_companies: set[str] = set()
    for row in registry_rows:
        if row[0] in seen_companies:
            diags.append(Diagnostic(f"{Path(registry_file).name}:company_id", f"duplicate company id {row[0]!r}"))
        seen_companies.add(row[0])

    if diags:
        raise IngestError(diags)

    watchlist = WatchlistStore()
    for company_id, person_id in watchlist_rows:
        watchlist.add_link(company_id, person_id)
    registry = RegistryStore()
    for company_id, address_id, member_state in registry_rows:
        registry.add(company_id, address_id, member_state)

    hub.watchlist = watchlist
    hub.registry = registry
    hub.bump()
    return IngestResult(
        cases=cases,
        summary={
            "cases": len(cases),
            "watchlist_links": len(watchlist_rows),
            "registry_companies": len(registry_rows),
        },
    )


def load_vies_oracle(path: str | Path) -> dict[str, bool]:
    """Mock VIES fixture: case_id -> whether its foreign UIDs are valid."""
    rows, diags = _read_csv(path, ["case_id", "uid_valid"])
    if diags:
        raise IngestError(diags)
    return {case_id: flag.lower() == "true" for case_id, flag in rows}


def partner_states(case: TaxpayerCase) -> list[str]:
    """Member states of the case's foreign trading partners, from the
    partner_states feature; empty when unknown."""
    raw = case.features.get("partner_states")
    if not isinstance(raw, str) or not raw.strip():
        return []
    return [s.strip() for s in raw.split(",") if s.strip()]
