"""FastAPI service around the routing engine.

Endpoints: ``GET /health``, ``POST /route``, ``POST /evaluate``,
``POST /predict`` (the remote predictor contract, answered from a loaded
trace suite) and ``POST /embed`` (the remote embedder contract, answered by
the built-in embedder).
"""
from __future__ import annotations

import json
from typing import Optional

from fastapi import FastAPI, HTTPException

from ..domain import SubtaskTrace, TraceError, validate_trace
from ..evaluation.policies import Judge, JudgeMode, evaluate_policy, parse_policy
from ..harness.io import TraceWorkload
from ..predictors import PredictorSuite, answer
from ..router import decision_log_lines, route_request
from ..similarity import DEFAULT_EMBEDDER, EmbeddingError
from .schemas import (
    EmbedRequest,
    EvaluateRequest,
    EvaluateResponse,
    ExecutionModel,
    HealthResponse,
    PredictRequest,
    PredictResponse,
    ReportModel,
    RouteRequest,
    RouteResponse,
)


def _workload(raw: list[dict]) -> TraceWorkload:
    try:
        traces = [validate_trace(SubtaskTrace.from_dict(t)) for t in raw]
    except TraceError as exc:
        raise HTTPException(status_code=422, detail=f"invalid trace: {exc}") from None
    ids = [t.request.id for t in traces]
    if len(set(ids)) != len(ids):
        raise HTTPException(status_code=422, detail="duplicate request_id")
    return TraceWorkload(traces)


def create_app(suite: Optional[PredictorSuite] = None) -> FastAPI:
    app = FastAPI(title="subroute", version="0.1.0")

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(predictor_loaded=suite is not None)

    @app.post("/route", response_model=RouteResponse)
    def route(req: RouteRequest) -> RouteResponse:
        try:
            cfg = req.config.to_config()
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from None
        wl = _workload(req.traces)
        world, trace_suite = wl.world(), wl.suite()
        out = []
        for r in wl.requests:
            ex = route_request(cfg, trace_suite, world, r)
            out.append(ExecutionModel(
                request_id=ex.request_id,
                assignment=ex.assignment.bits() if ex.assignment else "",
                slm_usage=ex.slm_usage,
                final_output=ex.final_output,
                finished=ex.finished,
                error=ex.error,
                decisions=[json.loads(line) for line in decision_log_lines(ex)],
            ))
        return RouteResponse(executions=out)

    @app.post("/evaluate", response_model=EvaluateResponse)
    def evaluate(req: EvaluateRequest) -> EvaluateResponse:
        wl = _workload(req.traces)
        world, trace_suite = wl.world(), wl.suite()
        judge = Judge(JudgeMode(req.judge_mode), req.judge_threshold)
        try:
            cfg = req.config.to_config()
            policies = [parse_policy(p, cfg) for p in req.policies]
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from None
        reports = [evaluate_policy(p, trace_suite, world, wl.requests, judge=judge,
                                   workload_name=req.workload).report for p in policies]
        return EvaluateResponse(reports=[ReportModel(**r.to_dict()) for r in reports])

    @app.post("/predict", response_model=PredictResponse)
    def predict(req: PredictRequest) -> PredictResponse:
        if suite is None:
            raise HTTPException(status_code=503, detail="no predictor suite loaded")
        try:
            return PredictResponse(output=answer(suite, req.role, req.inputs))
        except (KeyError, TypeError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=f"bad inputs for {req.role}: {exc}") from None

    @app.post("/embed", response_model=list[float])
    def embed(req: EmbedRequest) -> list[float]:
        try:
            return [float(x) for x in DEFAULT_EMBEDDER.embed(req.text).vector]
        except EmbeddingError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from None

    return app
