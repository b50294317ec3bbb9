"""Rewrites a prompt's step instructions to address one focus point.

The optimizer asks a model for a full improved prompt, parses it from
behind a fixed final-line marker, routes it through the guardrails, and
verifies that nothing outside the step instructions moved. A focus point
with no general reason short-circuits to an identity update without any
model call.
"""
from __future__ import annotations

from dataclasses import dataclass

from . import prompts
from .errors import (
    GuardrailRejectionError,
    MarkerAbsentError,
    MissingFinalMarkerError,
)
from .gateway import (
    ChatRequest,
    DEFAULT_SEED,
    DEFAULT_TEMPERATURE,
    Gateway,
    Message,
    Role,
)
from .guardrails import GuardConfig, GuardReport, Verdict, review_candidate
from .prompt_model import (
    DiffStatus,
    PromptDocument,
    SegmentKind,
    SegmentationConfig,
    StepEdit,
    StepEditOp,
    diff_prompts,
    extract_steps,
    classify_step_edits,
    has_step_instructions,
    render_prompt,
)
from .summarizer import FocusCase, FocusPoint


@dataclass(frozen=True)
class Placement:
    """Where the accepted edit landed within the step block."""

    op: StepEditOp
    index: int | None = None
    multi_edit: bool = False

    def __str__(self) -> str:
        return str(StepEdit(self.op, self.index)) + (
            " [multi-edit]" if self.multi_edit else ""
        )


@dataclass(frozen=True)
class PromptUpdate:
    focus: FocusPoint
    raw_output: str
    new_prompt: PromptDocument
    changed: bool
    placement: Placement | None = None
    guard_report: GuardReport | None = None

    def __post_init__(self):
        if self.changed and self.placement is None:
            raise ValueError("a changed update must carry a placement")
        if not self.changed and self.placement is not None:
            raise ValueError("an unchanged update carries no placement")


def parse_final_prompt(raw: str) -> str:
    """Extract the improved prompt from behind the last final-line marker.

    One leading space (the marker's own separator) and one leading newline
    are trimmed; everything else is returned byte for byte.
    """
    marker = prompts.FINAL_PROMPT_MARKER.rstrip(" ")
    idx = raw.rfind(marker)
    if idx < 0:
        raise MarkerAbsentError("optimizer output has no final-prompt marker")
    rest = raw[idx + len(marker):]
    if rest.startswith(" "):
        rest = rest[1:]
    if rest.startswith("\r\n"):
        rest = rest[2:]
    elif rest.startswith("\n"):
        rest = rest[1:]
    return rest


def classify_placement(
    old: PromptDocument, new: PromptDocument
) -> Placement:
    """Describe the accepted step edit; collapses to a coarse whole-block
    replacement (multi-edit flagged) when several steps moved at once."""
    edits, multi = classify_step_edits(extract_steps(old), extract_steps(new))
    if not edits:
        edits = (StepEdit(StepEditOp.REPLACE_STEP, None),)
        multi = True
    return Placement(op=edits[0].op, index=edits[0].index, multi_edit=multi)


def _conservation_failure(
    old: PromptDocument, new: PromptDocument
) -> str | None:
    """Reject reason when anything outside the step block changed."""
    for entry in diff_prompts(old, new).entries:
        if entry.status is DiffStatus.IDENTICAL:
            continue
        if (
            entry.status is DiffStatus.MODIFIED
            and entry.kind is SegmentKind.STEP_INSTRUCTIONS
        ):
            continue
        return (
            f"prompt text outside the step instructions changed "
            f"({entry.kind.value}: {entry.status.value})"
        )
    return None


def optimize(
    prompt: PromptDocument,
    focus: FocusPoint,
    *,
    gateway: Gateway,
    model: str,
    repair_model: str | None = None,
    temperature: float = DEFAULT_TEMPERATURE,
    seed: int = DEFAULT_SEED,
    seg_config: SegmentationConfig | None = None,
    required_tokens: tuple[str, ...] = (),
    guard_config: GuardConfig | None = None,
) -> PromptUpdate:
    """Produce the next prompt version for one focus point.

    The no-general-reason case returns the input prompt unchanged with zero
    gateway calls. Otherwise each attempt sends the optimizer prompt, and a
    missing marker or a guardrail rejection consumes one attempt from the
    shared budget; retries carry a note naming the previous rejection.
    """
    if not has_step_instructions(prompt):
        raise ValueError("optimize needs a structured prompt (with step instructions)")
    if focus.case is FocusCase.NO_GENERAL_REASON:
        return PromptUpdate(
            focus=focus, raw_output="", new_prompt=prompt, changed=False
        )
    cfg = guard_config or GuardConfig()
    attempts = cfg.optimizer_attempts
    old_text = render_prompt(prompt)
    base_user = prompts.OPTIMIZER_USER_TEMPLATE.format(
        prompt=old_text, focus=focus.text
    )
    marker_missing = 0
    last_reason: str | None = None
    last_report: GuardReport | None = None
    for _ in range(attempts):
        messages = [
            Message(Role.SYSTEM, prompts.OPTIMIZER_SYSTEM_PROMPT),
            Message(Role.USER, base_user),
        ]
        if last_reason is not None:
            messages.append(
                Message(
                    Role.USER,
                    prompts.OPTIMIZER_RETRY_NOTE_TEMPLATE.format(reason=last_reason),
                )
            )
        request = ChatRequest(
            messages=tuple(messages),
            model=model,
            temperature=temperature,
            seed=seed,
        )
        raw = gateway.complete(request).content
        try:
            candidate = parse_final_prompt(raw)
        except MarkerAbsentError:
            marker_missing += 1
            last_reason = "the final-prompt line was missing"
            continue
        report, parsed = review_candidate(
            prompt,
            candidate,
            seg_config=seg_config,
            required_tokens=required_tokens,
            guard_config=cfg,
            gateway=gateway,
            repair_model=repair_model or model,
            temperature=temperature,
            seed=seed,
        )
        last_report = report
        if report.verdict is Verdict.REJECTED or parsed is None:
            last_reason = (
                report.violations[0].detail if report.violations else "rejected"
            )
            continue
        problem = _conservation_failure(prompt, parsed)
        if problem is not None:
            last_reason = problem
            continue
        changed = render_prompt(parsed) != old_text
        if not changed:
            return PromptUpdate(
                focus=focus,
                raw_output=raw,
                new_prompt=prompt,
                changed=False,
                guard_report=report,
            )
        new_prompt = PromptDocument(
            segments=parsed.segments,
            version=prompt.version + 1,
            parent_version=prompt.version,
        )
        return PromptUpdate(
            focus=focus,
            raw_output=raw,
            new_prompt=new_prompt,
            changed=True,
            placement=classify_placement(prompt, new_prompt),
            guard_report=report,
        )
    if marker_missing == attempts:
        raise MissingFinalMarkerError(
            f"no final-prompt line in any of {attempts} attempts"
        )
    raise GuardrailRejectionError(
        f"every optimizer attempt was rejected (last: {last_reason})",
        report=last_report,
    )
