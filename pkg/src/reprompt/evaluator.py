"""Measure a prompt's pass rate over a labeled sample set.

Evaluation reuses the training episode loop but routes request text
through a task adapter, then grades the final assistant message with the
task's rule checker. No optimization happens here.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Protocol, Sequence

import yaml

from .actor import (
    FeedbackGenerator,
    NoFeedback,
    TaskSample,
    Terminal,
    run_episode,
)
from .errors import EpisodeError, SampleMismatchError, UnparseableAnswerError
from .gateway import DEFAULT_SEED, DEFAULT_TEMPERATURE, Gateway
from .prompt_model import PromptDocument


class TaskAdapter(Protocol):
    """What the harness needs from a task: build, parse, judge."""

    def fill(self, prompt: PromptDocument, sample: Any) -> str: ...

    def parse_answer(self, text: str) -> Any: ...

    def check(self, answer: Any, sample: Any) -> Any: ...


@dataclass(frozen=True)
class EvalRecord:
    sample_id: str
    delivered: bool
    passed: bool
    rounds_used: int
    terminal: str
    detail: str = ""


@dataclass(frozen=True)
class EvalReport:
    records: tuple[EvalRecord, ...]

    @property
    def total(self) -> int:
        return len(self.records)

    @property
    def delivery_rate(self) -> float:
        if not self.records:
            return 0.0
        return sum(r.delivered for r in self.records) / self.total

    @property
    def pass_rate(self) -> float:
        if not self.records:
            return 0.0
        return sum(r.passed for r in self.records) / self.total


def evaluate(
    prompt: PromptDocument,
    samples: Sequence[Any],
    adapter: TaskAdapter,
    *,
    gateway: Gateway,
    model: str,
    feedback: FeedbackGenerator | None = None,
    max_rounds: int = 1,
    temperature: float = DEFAULT_TEMPERATURE,
    seed: int = DEFAULT_SEED,
) -> EvalReport:
    """Run every sample to a terminal state and grade the last answer.

    A sample counts as delivered when its final assistant message parses
    under the adapter, and as passed when the parsed answer also clears
    the checker. Passed implies delivered, so pass rate never exceeds
    delivery rate.
    """
    fg = feedback if feedback is not None else NoFeedback()
    records: list[EvalRecord] = []
    for sample in samples:
        filled = adapter.fill(prompt, sample)
        shim = TaskSample(id=sample.id, slot_values={})
        try:
            transcript = run_episode(
                prompt,
                shim,
                fg,
                max_rounds,
                gateway=gateway,
                model=model,
                temperature=temperature,
                seed=seed,
                initial_text=filled,
            )
        except EpisodeError as exc:
            records.append(
                EvalRecord(
                    sample_id=sample.id,
                    delivered=False,
                    passed=False,
                    rounds_used=exc.transcript.rounds_used,
                    terminal=Terminal.ERROR.value,
                    detail=str(exc),
                )
            )
            continue
        final = transcript.last_assistant()
        if final is None:
            records.append(
                EvalRecord(
                    sample_id=sample.id,
                    delivered=False,
                    passed=False,
                    rounds_used=transcript.rounds_used,
                    terminal=transcript.terminal.value,
                    detail="no assistant message",
                )
            )
            continue
        try:
            answer = adapter.parse_answer(final)
        except UnparseableAnswerError as exc:
            records.append(
                EvalRecord(
                    sample_id=sample.id,
                    delivered=False,
                    passed=False,
                    rounds_used=transcript.rounds_used,
                    terminal=transcript.terminal.value,
                    detail=str(exc),
                )
            )
            continue
        result = adapter.check(answer, sample)
        detail = ""
        if not result.passed and result.messages:
            detail = result.messages[0]
        records.append(
            EvalRecord(
                sample_id=sample.id,
                delivered=True,
                passed=bool(result.passed),
                rounds_used=transcript.rounds_used,
                terminal=transcript.terminal.value,
                detail=detail,
            )
        )
    return EvalReport(records=tuple(records))


@dataclass(frozen=True)
class RunComparison:
    baseline_pass_rate: float
    candidate_pass_rate: float
    improved: tuple[str, ...]
    regressed: tuple[str, ...]

    @property
    def delta(self) -> float:
        return self.candidate_pass_rate - self.baseline_pass_rate


def compare_runs(baseline: EvalReport, candidate: EvalReport) -> RunComparison:
    """Per-sample comparison of two reports over the same sample set."""
    base = {r.sample_id: r for r in baseline.records}
    cand = {r.sample_id: r for r in candidate.records}
    if set(base) != set(cand):
        only_base = sorted(set(base) - set(cand))
        only_cand = sorted(set(cand) - set(base))
        raise SampleMismatchError(
            "reports cover different samples: "
            f"baseline-only {only_base}, candidate-only {only_cand}"
        )
    improved = []
    regressed = []
    for sid in sorted(base):
        before, after = base[sid].passed, cand[sid].passed
        if after and not before:
            improved.append(sid)
        elif before and not after:
            regressed.append(sid)
    return RunComparison(
        baseline_pass_rate=baseline.pass_rate,
        candidate_pass_rate=candidate.pass_rate,
        improved=tuple(improved),
        regressed=tuple(regressed),
    )


def report_to_dict(report: EvalReport) -> dict:
    return {
        "total": report.total,
        "delivery_rate": report.delivery_rate,
        "pass_rate": report.pass_rate,
        "samples": [
            {
                "id": r.sample_id,
                "delivered": r.delivered,
                "passed": r.passed,
                "rounds_used": r.rounds_used,
                "terminal": r.terminal,
                "detail": r.detail,
            }
            for r in report.records
        ],
    }


def write_report_yaml(report: EvalReport, path: str | Path) -> None:
    Path(path).write_text(
        yaml.safe_dump(report_to_dict(report), sort_keys=False),
        encoding="utf-8",
    )


def write_report_tsv(report: EvalReport, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, dialect="excel-tab")
        writer.writerow(
            ["sample_id", "delivered", "passed", "rounds_used", "terminal", "detail"]
        )
        for r in report.records:
            writer.writerow(
                [
                    r.sample_id,
                    int(r.delivered),
                    int(r.passed),
                    r.rounds_used,
                    r.terminal,
                    r.detail,
                ]
            )
