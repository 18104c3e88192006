"""Monetary cost of an execution: LLM tokens are metered, the SLM is free."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from ..domain import ModelKind
from ..router import ExecutedUnit, RoutedExecution

TOKENS_PER_WORD = 4 / 3


class TokenCounter(str, Enum):
    WORDS = "words"  # words * 4/3 unless the unit carries exact counts
    EXACT = "exact"  # exact counts required; missing counts are an error


@dataclass(frozen=True)
class CostModel:
    llm_usd_per_1k_prompt_tokens: float = 0.01
    llm_usd_per_1k_completion_tokens: float = 0.01
    token_counter: TokenCounter = TokenCounter.WORDS

    def __post_init__(self) -> None:
        if self.llm_usd_per_1k_prompt_tokens < 0 or self.llm_usd_per_1k_completion_tokens < 0:
            raise ValueError("rates must be >= 0")

    @property
    def slm_cost(self) -> float:
        return 0.0

    def tokens(self, unit: ExecutedUnit) -> tuple[float, float]:
        if unit.prompt_tokens is not None and unit.completion_tokens is not None:
            return float(unit.prompt_tokens), float(unit.completion_tokens)
        if self.token_counter is TokenCounter.EXACT:
            raise ValueError(f"unit for seq {unit.subtask.seq_id} has no exact token counts")
        prompt = unit.prompt_tokens if unit.prompt_tokens is not None else estimate_tokens(unit.prompt)
        completion = unit.completion_tokens if unit.completion_tokens is not None else estimate_tokens(unit.output)
        return float(prompt), float(completion)

    def unit_cost(self, unit: ExecutedUnit) -> float:
        if unit.model is ModelKind.SLM:
            return self.slm_cost
        p, c = self.tokens(unit)
        return p / 1000 * self.llm_usd_per_1k_prompt_tokens + c / 1000 * self.llm_usd_per_1k_completion_tokens


def estimate_tokens(text: str) -> float:
    return len(text.split()) * TOKENS_PER_WORD


def cost_of(execution: RoutedExecution, model: CostModel | None = None) -> float:
    model = model or CostModel()
    return sum(model.unit_cost(u) for u in execution.executed)
