"""Turns a batch of transcripts into one optimization focus point.

This is the loss signal of the training loop: a model reads the batch's
chat histories and names either the main failure reason, a helpful thought
worth generalizing, or declares that there is no general reason. The last
case is the identity signal, it makes the optimizer skip the round.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum

from . import prompts
from .actor import Transcript, format_transcript
from .errors import MarkerAbsentError, MissingConclusionMarkerError, ScrubRejectedError
from .gateway import (
    ChatRequest,
    DEFAULT_SEED,
    DEFAULT_TEMPERATURE,
    Gateway,
    Message,
    Role,
)
from .prompt_model import PromptDocument, render_prompt

DEFAULT_TRANSCRIPT_BUDGET = 60_000

TRUNCATION_SENTINEL = "\n[... transcript truncated ...]\n"


class FocusCase(Enum):
    FAILURE_REASON = "failure_reason"
    HELPFUL_THOUGHT = "helpful_thought"
    NO_GENERAL_REASON = "no_general_reason"


@dataclass(frozen=True)
class FocusPoint:
    case: FocusCase
    text: str
    raw_output: str
    epoch: int
    batch_index: int

    def __post_init__(self):
        if self.case is FocusCase.NO_GENERAL_REASON and self.text != "":
            raise ValueError("the no-general-reason case carries empty text")
        if self.case is not FocusCase.NO_GENERAL_REASON and not self.text:
            raise ValueError("focus text must be non-empty")


# Conclusions are routed on keywords. Misrouting between the failure-reason
# and helpful-thought cases is harmless downstream, both feed the optimizer
# the same way; only the no-general-reason case changes control flow.
_NO_REASON_KEY = "no general reason"
_THOUGHT_KEYS = ("thought", "helpful", "focus on")


def parse_conclusion(raw: str) -> tuple[FocusCase, str]:
    """Extract and classify the conclusion line from raw summarizer output.

    The substring after the last occurrence of the conclusion marker wins.
    Raises MarkerAbsentError when the marker never appears.
    """
    idx = raw.rfind(prompts.CONCLUSION_MARKER)
    if idx < 0:
        raise MarkerAbsentError("summarizer output has no conclusion marker")
    text = raw[idx + len(prompts.CONCLUSION_MARKER):].strip()
    lowered = text.lower()
    if _NO_REASON_KEY in lowered:
        return FocusCase.NO_GENERAL_REASON, ""
    if any(key in lowered for key in _THOUGHT_KEYS):
        return FocusCase.HELPFUL_THOUGHT, text
    return FocusCase.FAILURE_REASON, text


# Scenario-detail scrubber: focus text must stay general, so digits glued to
# currency or calendar patterns are rejected.
_SCRUB_PATTERNS = tuple(
    re.compile(p, re.IGNORECASE)
    for p in (
        r"[$€£]\s?\d",
        r"\d+(?:\.\d+)?\s?(?:usd|eur|gbp|dollars?|euros?|pounds?)\b",
        r"\b\d{1,2}[/.]\d{1,2}(?:[/.]\d{2,4})?\b",
        r"\b\d{4}-\d{2}-\d{2}\b",
        r"\b(?:jan|feb|mar|apr|may|jun|jul|aug|sep|oct|nov|dec)[a-z]*\.?\s\d{1,2}\b",
        r"\b\d{1,2}\s(?:jan|feb|mar|apr|may|jun|jul|aug|sep|oct|nov|dec)[a-z]*\b",
    )
)


def scrub_violations(text: str) -> list[str]:
    """Return the scenario-specific literals found in a focus text."""
    hits = []
    for pattern in _SCRUB_PATTERNS:
        hits.extend(m.group(0) for m in pattern.finditer(text))
    return hits


def serialize_transcripts(transcripts: list[Transcript], budget: int) -> str:
    """Render transcripts for the summarizer, keeping the total under budget.

    Oversized transcripts are cut symmetrically: head and tail halves are
    kept and one sentinel marks the gap, so both the opening prompt and the
    final exchange stay visible.
    """
    parts = []
    for t in transcripts:
        parts.append(
            f"=== Transcript for sample {t.sample_id} ===\n" + format_transcript(t)
        )
    if not parts:
        return ""
    separator = "\n\n"
    sep_total = len(separator) * (len(parts) - 1)
    allowance = max(0, (budget - sep_total)) // len(parts)
    total = sum(len(p) for p in parts) + sep_total
    if total > budget:
        trimmed = []
        for part in parts:
            if len(part) <= allowance:
                trimmed.append(part)
                continue
            keep = max(0, allowance - len(TRUNCATION_SENTINEL))
            head = keep // 2
            tail = keep - head
            trimmed.append(
                part[:head] + TRUNCATION_SENTINEL + (part[len(part) - tail:] if tail else "")
            )
        parts = trimmed
    result = separator.join(parts)
    return result[:budget] if len(result) > budget else result


def _build_request(
    transcripts: list[Transcript],
    prompt: PromptDocument,
    model: str,
    temperature: float,
    seed: int,
    budget: int,
    extra_note: str | None,
) -> ChatRequest:
    chat_history = (
        f"{prompts.CURRENT_PROMPT_HEADER}\n\n{render_prompt(prompt)}\n\n"
        + serialize_transcripts(transcripts, budget)
    )
    messages = [
        Message(Role.SYSTEM, prompts.SUMMARIZER_SYSTEM_PROMPT),
        Message(
            Role.USER,
            prompts.SUMMARIZER_USER_TEMPLATE.format(chat_history=chat_history),
        ),
    ]
    if extra_note is not None:
        messages.append(Message(Role.USER, extra_note))
    return ChatRequest(
        messages=tuple(messages), model=model, temperature=temperature, seed=seed
    )


def summarize_batch(
    transcripts: list[Transcript],
    prompt: PromptDocument,
    *,
    gateway: Gateway,
    model: str,
    temperature: float = DEFAULT_TEMPERATURE,
    seed: int = DEFAULT_SEED,
    budget: int = DEFAULT_TRANSCRIPT_BUDGET,
    epoch: int = 0,
    batch_index: int = 0,
) -> FocusPoint:
    """Summarize a batch into a FocusPoint, with one retry on bad output.

    One gateway call on the happy path. A missing conclusion line or a
    scrubber hit triggers a single retry that carries a corrective note;
    a second failure raises MissingConclusionMarkerError or
    ScrubRejectedError respectively.
    """
    if not transcripts:
        raise ValueError("cannot summarize an empty batch")
    note = None
    raw = ""
    for attempt in range(2):
        request = _build_request(
            transcripts, prompt, model, temperature, seed, budget, note
        )
        raw = gateway.complete(request).content
        try:
            case, text = parse_conclusion(raw)
        except MarkerAbsentError:
            if attempt == 1:
                raise MissingConclusionMarkerError(
                    "no conclusion line, even after the retry"
                )
            note = prompts.SUMMARIZER_FORMAT_REMINDER
            continue
        hits = scrub_violations(text)
        if hits:
            if attempt == 1:
                raise ScrubRejectedError(
                    f"focus text still carries scenario details: {hits}"
                )
            note = prompts.SUMMARIZER_DETAIL_REMINDER
            continue
        return FocusPoint(
            case=case,
            text=text,
            raw_output=raw,
            epoch=epoch,
            batch_index=batch_index,
        )
    raise AssertionError("unreachable")
