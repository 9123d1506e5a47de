"""Application configuration: file layout, cadence, quotas and defaults.

Loaded from JSON (path argument, else the PACC_SELECT_CONFIG env var,
else built-in defaults anchored at the current directory).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields
from decimal import Decimal
from pathlib import Path

from .domain import DEFAULT_BASE_PERIOD, WeightTier

ENV_VAR = "PACC_SELECT_CONFIG"


@dataclass
class AppConfig:
    workdir: str = "run"
    cases: str = ""
    watchlist: str = ""
    registry: str = ""
    vies: str = ""
    truth: str = ""
    models: str = ""
    reports: str = ""
    selection: str = ""
    evaluation: str = ""
    state: str = ""
    run_log: str = ""
    plan: str = "plan.json"
    schema: str = "schema.json"
    rules_missing_trader: str = "rules/missing_trader.rules"
    rules_company_audit: str = "rules/company_audit.rules"
    uid_quota: int = 100
    port: int = 8571
    seed: int = 7
    cadence: int = 2  # scoring batches per simulated month
    k: int | str = "auto"
    outcome_delay_months: int = 6
    outcome_miss_rate: float = 0.1
    outcome_jitter_months: int = 2
    base_period: str = DEFAULT_BASE_PERIOD
    tier_contributions: dict[WeightTier, Decimal] = field(
        default_factory=lambda: {
            WeightTier.LOW: Decimal("0.10"),
            WeightTier.MED: Decimal("0.30"),
            WeightTier.HIGH: Decimal("0.60"),
        }
    )

    def __post_init__(self) -> None:
        if self.cadence < 1:
            raise ValueError("cadence must be >= 1")
        if not 0 < self.port < 65536:
            raise ValueError("port out of range")
        wd = Path(self.workdir)
        defaults = {
            "cases": "cases.jsonl",
            "watchlist": "watchlist.csv",
            "registry": "registry.csv",
            "vies": "vies.csv",
            "truth": "truth.jsonl",
            "models": "models.json",
            "reports": "reports.jsonl",
            "selection": "selection.jsonl",
            "evaluation": "evaluation.json",
            "state": "state.json",
            "run_log": "run.log",
        }
        for name, filename in defaults.items():
            if not getattr(self, name):
                setattr(self, name, str(wd / filename))


def load_config(path: str | None = None) -> AppConfig:
    if path is None:
        path = os.environ.get(ENV_VAR)
    if path is None:
        return AppConfig()
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    known = {f.name for f in fields(AppConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    if "tier_contributions" in raw:
        raw["tier_contributions"] = {
            WeightTier[k]: Decimal(str(v)) for k, v in raw["tier_contributions"].items()
        }
    return AppConfig(**raw)
