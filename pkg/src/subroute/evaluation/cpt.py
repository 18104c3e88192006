"""Accuracy-vs-LLM-usage curves and CPT(x%) readouts.

CPT(x%) is the smallest LLM-call fraction at which a policy recovers x% of
the accuracy gap between All-SLM (``gap_low``) and All-LLM (``gap_high``).
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Any, Iterable, Optional, Sequence

from .policies import PolicyReport

CPT_LEVELS = (50, 70, 90)
CPT_COLUMNS = ["dataset", "method", "cpt50", "cpt70", "cpt90"]


@dataclass(frozen=True)
class CptCurve:
    points: tuple[tuple[float, float], ...]  # (llm_call_fraction, accuracy), ascending
    gap_low: float
    gap_high: float

    def __post_init__(self) -> None:
        pts = tuple(sorted((float(f), float(a)) for f, a in self.points))
        if any(not 0.0 <= f <= 1.0 for f, _ in pts):
            raise ValueError("llm call fractions must lie in [0, 1]")
        object.__setattr__(self, "points", pts)

    @property
    def degenerate(self) -> bool:
        return self.gap_high <= self.gap_low

    @classmethod
    def from_reports(cls, inputs: Iterable[tuple[Any, PolicyReport] | PolicyReport],
                     gap_low: float, gap_high: float) -> "CptCurve":
        pts = []
        for item in inputs:
            report = item[1] if isinstance(item, tuple) else item
            pts.append((report.llm_fraction, report.accuracy))
        return cls(tuple(pts), gap_low, gap_high)


@dataclass(frozen=True)
class CptResult:
    value: Optional[float]  # None when unattainable
    degenerate: bool = False

    @property
    def attainable(self) -> bool:
        return self.value is not None


def cpt_of_curve(curve: CptCurve, x_percent: float) -> CptResult:
    if not 0.0 < x_percent <= 100.0:
        raise ValueError("x_percent must lie in (0, 100]")
    if curve.degenerate:
        return CptResult(0.0, degenerate=True)
    target = curve.gap_low + x_percent / 100.0 * (curve.gap_high - curve.gap_low)
    for frac, acc in curve.points:
        if acc >= target - 1e-12:
            return CptResult(frac)
    return CptResult(None)


def cpt(curve_inputs: Sequence[tuple[Any, PolicyReport] | PolicyReport | tuple[float, float]],
        gap_low: float, gap_high: float, x_percent: float) -> CptResult:
    """CPT(x%) over reports, or over raw ``(llm_call_fraction, accuracy)`` pairs."""
    pts = []
    for item in curve_inputs:
        if isinstance(item, PolicyReport):
            pts.append((item.llm_fraction, item.accuracy))
        elif isinstance(item[1], PolicyReport):
            pts.append((item[1].llm_fraction, item[1].accuracy))
        else:
            pts.append((float(item[0]), float(item[1])))
    return cpt_of_curve(CptCurve(tuple(pts), gap_low, gap_high), x_percent)


def _fmt(r: CptResult) -> str:
    if r.value is None:
        return "unattainable"
    return f"{r.value:.4f}"


def cpt_rows(dataset: str, curves: dict[str, CptCurve], levels: Sequence[int] = CPT_LEVELS) -> list[list[str]]:
    rows = []
    for method in sorted(curves):
        rows.append([dataset, method] + [_fmt(cpt_of_curve(curves[method], x)) for x in levels])
    return rows


def cpt_csv(rows: Sequence[Sequence[str]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CPT_COLUMNS)
    w.writerows(rows)
    return buf.getvalue()
