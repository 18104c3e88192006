"""Request/response models for the HTTP service."""
from __future__ import annotations

from typing import Any, Literal, Optional

from pydantic import BaseModel, Field

from ..router import RouterConfig
from ..similarity import ThresholdSchedule


class HealthResponse(BaseModel):
    status: str = "ok"
    predictor_loaded: bool = False


class RouterConfigModel(BaseModel):
    urc_threshold: float = Field(0.7, ge=0.0)
    threshold_base: float = 0.6
    threshold_step: float = 0.02
    threshold_cap_id: int = 5
    flat_default: float = 0.7
    cd_horizon: int = Field(5, ge=1)
    sd_max: int = Field(4, ge=1)
    depth_cap: int = Field(15, ge=1)
    use_urc: bool = True
    use_sse: bool = True
    use_sle: bool = True
    use_cd: bool = True
    use_sd: bool = True

    def to_config(self) -> RouterConfig:
        schedule = ThresholdSchedule(self.threshold_base, self.threshold_step, self.threshold_cap_id,
                                     self.flat_default)
        return RouterConfig(self.urc_threshold, schedule, self.cd_horizon, self.sd_max, self.depth_cap,
                            self.use_urc, self.use_sse, self.use_sle, self.use_cd, self.use_sd)


def config_to_payload(cfg: RouterConfig) -> dict[str, Any]:
    s = cfg.schedule
    return RouterConfigModel(
        urc_threshold=cfg.urc_threshold, threshold_base=s.base, threshold_step=s.step,
        threshold_cap_id=s.cap_id, flat_default=s.flat_default, cd_horizon=cfg.cd_horizon,
        sd_max=cfg.sd_max, depth_cap=cfg.depth_cap, use_urc=cfg.use_urc, use_sse=cfg.use_sse,
        use_sle=cfg.use_sle, use_cd=cfg.use_cd, use_sd=cfg.use_sd,
    ).model_dump()


class RouteRequest(BaseModel):
    traces: list[dict[str, Any]] = Field(..., min_length=1)
    config: RouterConfigModel = Field(default_factory=RouterConfigModel)


class DecisionModel(BaseModel):
    request_id: str
    seq_id: int
    choice: Literal["SLM", "LLM"]
    stage: str
    detail: str
    kappa: Optional[float] = None
    score: Optional[float] = None


class ExecutionModel(BaseModel):
    request_id: str
    assignment: str
    slm_usage: float
    final_output: str
    finished: bool
    error: str = ""
    decisions: list[DecisionModel]


class RouteResponse(BaseModel):
    executions: list[ExecutionModel]


class PredictRequest(BaseModel):
    role: Literal["urc", "sp_slm", "sp_llm", "dp", "sd"]
    inputs: dict[str, Any]


class PredictResponse(BaseModel):
    output: Any = None


class EmbedRequest(BaseModel):
    text: str = Field(..., min_length=1)


class EvaluateRequest(BaseModel):
    traces: list[dict[str, Any]] = Field(..., min_length=1)
    policies: list[str] = Field(default_factory=lambda: ["ALL_SLM", "ALL_LLM", "HERA"])
    config: RouterConfigModel = Field(default_factory=RouterConfigModel)
    judge_mode: Literal["auto", "similarity", "exact"] = "auto"
    judge_threshold: float = Field(0.7, ge=0.0, le=1.0)
    workload: str = "request"


class ReportModel(BaseModel):
    policy: str
    workload: str
    n_requests: int
    accuracy: float
    slm_usage: float
    completion_rate: float
    avg_subtasks: float
    cost_usd: float
    sim_latency_s: float


class EvaluateResponse(BaseModel):
    reports: list[ReportModel]
