"""Analyst HTTP API over the scored corpus.

JSON endpoints consumed by the review UI (docs/api.md). Reads serve from
an immutable in-memory snapshot; what-if recomputation is pure and only
persists an activation when explicitly asked to. Batch reruns are
serialized behind a single-writer lock (409 when busy).
"""

from __future__ import annotations

import json
import threading
from pathlib import Path

from fastapi import FastAPI, Request, Response
from fastapi.exceptions import RequestValidationError

from . import jsonio
from .config import AppConfig
from .domain import CaseKind
from .runtime import AppRuntime, DataError
from .scoring import (
    CaseContext,
    render_explanations,
    report_to_obj,
    score_case,
    write_reports,
)
from .jsonio import fmt_decimal


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        self.status = status
        self.code = code
        self.message = message
        super().__init__(message)


def _json_response(payload: object, status: int = 200) -> Response:
    return Response(content=jsonio.dumps(payload), status_code=status, media_type="application/json")


def _error_response(status: int, code: str, message: str) -> Response:
    return _json_response({"error": {"code": code, "message": message}}, status)


def build_app(runtime: AppRuntime) -> FastAPI:
    app = FastAPI(title="pacc-select", docs_url=None, redoc_url=None)
    batch_lock = threading.Lock()

    @app.exception_handler(ApiError)
    async def handle_api_error(_request: Request, exc: ApiError) -> Response:
        return _error_response(exc.status, exc.code, exc.message)

    @app.exception_handler(RequestValidationError)
    async def handle_validation_error(_request: Request, exc: RequestValidationError) -> Response:
        return _error_response(400, "bad_request", str(exc.errors()[:1]))

    @app.exception_handler(Exception)
    async def handle_unexpected(_request: Request, exc: Exception) -> Response:
        return _error_response(500, "internal", f"{type(exc).__name__}: {exc}")

    def reports_by_id():
        return {r.case_id: r for r in runtime.load_reports()}

    @app.get("/api/health")
    def health() -> Response:
        corpus = runtime.load_corpus()
        return _json_response(
            {"status": "ok", "clock": corpus.clock, "cases": len(corpus.cases)}
        )

    @app.get("/api/rules")
    def rules() -> Response:
        from .scoring import ruleset_digest

        payload = []
        for kind, ruleset in sorted(runtime.load_rulesets().items(), key=lambda kv: kv[0].value):
            payload.append(
                {
                    "kind": kind.value,
                    "digest": ruleset_digest(ruleset),
                    "rules": [
                        {
                            "name": r.name,
                            "tier": r.tier.name,
                            "contribution": fmt_decimal(r.contribution),
                            "source": r.source.value,
                            "explanation": r.explanation,
                        }
                        for r in ruleset.rules
                    ],
                    "synergies": [
                        {"rules": list(s.rule_names), "bonus": fmt_decimal(s.bonus)}
                        for s in ruleset.synergies
                    ],
                }
            )
        return _json_response({"rulesets": payload})

    @app.get("/api/cases")
    def cases(sort: str = "score", limit: int = 50) -> Response:
        if sort not in ("score", "case_id"):
            raise ApiError(400, "bad_request", f"unsupported sort {sort!r}")
        if limit < 0:
            raise ApiError(400, "bad_request", "limit must be >= 0")
        corpus = runtime.load_corpus()
        by_id = reports_by_id()
        rows = []
        for report in by_id.values():
            case = corpus.by_id.get(report.case_id)
            top = sorted(report.triggered, key=lambda t: (-t.contribution, t.rule_name))
            rows.append(
                {
                    "case_id": report.case_id,
                    "kind": case.kind.value if case else None,
                    "score": report.score.value,
                    "top_rules": [t.rule_name for t in top[:3]],
                }
            )
        if sort == "score":
            rows.sort(key=lambda r: (-r["score"], r["case_id"]))
        else:
            rows.sort(key=lambda r: r["case_id"])
        return _json_response({"cases": rows[:limit], "total": len(rows)})

    @app.get("/api/cases/{case_id}/report")
    def case_report(case_id: str) -> Response:
        report = reports_by_id().get(case_id)
        if report is None:
            raise ApiError(404, "unknown_case", f"no report for case {case_id!r}")
        return _json_response(
            {"report": report_to_obj(report), "explanations": render_explanations(report)}
        )

    @app.post("/api/cases/{case_id}/whatif")
    async def whatif(case_id: str, request: Request) -> Response:
        if batch_lock.locked():
            raise ApiError(409, "batch_running", "a scoring batch is running; retry later")
        try:
            body = json.loads(await request.body() or b"{}")
        except json.JSONDecodeError as exc:
            raise ApiError(400, "bad_request", f"malformed JSON: {exc.msg}")
        if not isinstance(body, dict):
            raise ApiError(400, "bad_request", "request body must be a JSON object")
        disabled = body.get("disabled_rules", [])
        persist = body.get("persist", False)
        if not isinstance(disabled, list) or not all(isinstance(x, str) for x in disabled):
            raise ApiError(400, "bad_request", "disabled_rules must be a list of rule names")
        if not isinstance(persist, bool):
            raise ApiError(400, "bad_request", "persist must be a boolean")
        corpus = runtime.load_corpus()
        case = corpus.by_id.get(case_id)
        if case is None:
            raise ApiError(404, "unknown_case", f"unknown case {case_id!r}")
        ruleset = runtime.load_rulesets()[case.kind]
        unknown = set(disabled) - ruleset.rule_names()
        if unknown:
            raise ApiError(422, "unknown_rule", f"unknown rule name(s): {sorted(unknown)}")
        models = runtime.load_trained_models()
        report = score_case(
            ruleset,
            CaseContext(
                case=case,
                models=models,
                sources=runtime.hub,
                clock=corpus.clock,
                base_period=corpus.base_period,
                deactivated=frozenset(disabled),
            ),
        )
        if persist:
            runtime.state.activation[case_id] = sorted(disabled)
            runtime.save_state()
            stored = runtime.load_reports()
            runtime.reports = [report if r.case_id == case_id else r for r in stored]
            write_reports(runtime.config.reports, runtime.reports)
        return _json_response(
            {
                "report": report_to_obj(report),
                "explanations": render_explanations(report),
                "persisted": persist,
            }
        )

    @app.post("/api/batch/score")
    def batch_score() -> Response:
        if not batch_lock.acquire(blocking=False):
            raise ApiError(409, "batch_running", "a scoring batch is already running")
        try:
            reports = runtime.score()
            digests = sorted({r.ruleset_digest for r in reports})
            return _json_response({"digests": digests, "count": len(reports)})
        finally:
            batch_lock.release()

    @app.get("/api/evaluation/summary")
    def evaluation_summary() -> Response:
        path = Path(runtime.config.evaluation)
        if not path.exists():
            return _json_response({"available": False})
        with open(path, "r", encoding="utf-8") as fh:
            return _json_response({"available": True, "summary": json.load(fh)})

    frontend_dist = Path("frontend/dist")
    if frontend_dist.is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(frontend_dist), html=True), name="ui")

    return app


def serve(config: AppConfig) -> None:
    import uvicorn

    runtime = AppRuntime(config)
    runtime.load_corpus()
    uvicorn.run(build_app(runtime), host="127.0.0.1", port=config.port)
