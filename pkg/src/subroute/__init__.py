"""Subtask-level SLM/LLM routing engine and trace-driven evaluation harness."""
from .domain import Assignment, ModelKind, RoutingDecision, Stage, Subtask, SubtaskTrace, UserRequest, validate_trace
from .predictors import PredictorSuite, RemoteSuite, TraceSuite
from .router import RoutedExecution, RouterConfig, route_request
from .similarity import HashedEmbedder, ThresholdSchedule, cosine, embed, is_similar, threshold_at
from .slmetrics import align, sl_distance, sl_similarity_profile

__version__ = "0.1.0"

__all__ = [
    "Assignment",
    "HashedEmbedder",
    "ModelKind",
    "PredictorSuite",
    "RemoteSuite",
    "RoutedExecution",
    "RouterConfig",
    "RoutingDecision",
    "Stage",
    "Subtask",
    "SubtaskTrace",
    "ThresholdSchedule",
    "TraceSuite",
    "UserRequest",
    "align",
    "cosine",
    "embed",
    "is_similar",
    "route_request",
    "sl_distance",
    "sl_similarity_profile",
    "threshold_at",
    "validate_trace",
]
