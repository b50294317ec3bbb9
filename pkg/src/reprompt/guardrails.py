"""Safety checks applied to every optimizer candidate before acceptance.

Three independent nets: placeholder detection with model-driven repair
(optimizers love to abbreviate long example blocks), byte-exact
verification of protected segments, and required-token enforcement (a
case change in a load-bearing word silently breaks downstream parsers).
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum

from . import prompts
from .errors import EmptyPromptError, RepairFailedError
from .gateway import (
    ChatRequest,
    DEFAULT_SEED,
    DEFAULT_TEMPERATURE,
    Gateway,
    Message,
    Role,
)
from .prompt_model import (
    PromptDocument,
    SegmentKind,
    SegmentationConfig,
    parse_prompt,
    render_prompt,
)

# Default placeholder shapes: angle-bracket references to the original
# prompt, angle-bracket example stubs, mathematical angle quotes, and
# brace-wrapped example stubs. Extend per task via configuration.
DEFAULT_PLACEHOLDER_PATTERNS = (
    r"<[^<>\n]*original prompt[^<>\n]*>",
    r"<\s*Examples?\b[^<>\n]*>",
    r"⟨[^⟨⟩\n]*⟩",
    r"\{Example[^{}\n]*\}",
)


def compile_placeholder_patterns(
    extra: tuple[str, ...] = ()
) -> tuple[re.Pattern, ...]:
    return tuple(
        re.compile(p, re.IGNORECASE)
        for p in DEFAULT_PLACEHOLDER_PATTERNS + tuple(extra)
    )


_DEFAULT_COMPILED = compile_placeholder_patterns()


@dataclass(frozen=True)
class PlaceholderSpan:
    start: int
    end: int
    text: str


class ViolationKind(Enum):
    PLACEHOLDER_FOUND = "placeholder_found"
    EXAMPLES_MUTATED = "examples_mutated"
    FORMAT_MUTATED = "format_mutated"
    REQUIRED_TOKEN_MISSING = "required_token_missing"


@dataclass(frozen=True)
class Violation:
    kind: ViolationKind
    detail: str


class Verdict(Enum):
    ACCEPTED = "accepted"
    REPAIRED = "repaired"
    REJECTED = "rejected"


@dataclass(frozen=True)
class GuardReport:
    verdict: Verdict
    violations: tuple[Violation, ...] = ()
    repaired_prompt: str | None = None

    def __post_init__(self):
        if self.verdict is Verdict.REPAIRED and self.repaired_prompt is None:
            raise ValueError("a repaired verdict must carry the repaired prompt")


def detect_placeholders(
    text: str, patterns: tuple[re.Pattern, ...] | None = None
) -> list[PlaceholderSpan]:
    """Find placeholder spans in candidate text, ordered by position."""
    compiled = patterns if patterns is not None else _DEFAULT_COMPILED
    spans = [
        PlaceholderSpan(m.start(), m.end(), m.group(0))
        for pattern in compiled
        for m in pattern.finditer(text)
    ]
    return sorted(spans, key=lambda s: (s.start, s.end))


def _first_diff_range(old: str, new: str) -> tuple[int, int]:
    """Minimal character range of ``old`` not reproduced in ``new``."""
    prefix = 0
    limit = min(len(old), len(new))
    while prefix < limit and old[prefix] == new[prefix]:
        prefix += 1
    suffix = 0
    while (
        suffix < limit - prefix
        and old[len(old) - 1 - suffix] == new[len(new) - 1 - suffix]
    ):
        suffix += 1
    return prefix, max(len(old) - suffix, prefix + 1)


def verify_protected(old: PromptDocument, new: PromptDocument) -> GuardReport:
    """Check that old's protected segments appear byte-identical, in order.

    Each violation names the mutated segment kind and the minimal character
    range that differs from the closest same-kind counterpart.
    """
    kind_map = {
        SegmentKind.EXAMPLES: ViolationKind.EXAMPLES_MUTATED,
        SegmentKind.FORMAT_REQUIREMENTS: ViolationKind.FORMAT_MUTATED,
    }
    new_protected = [s for s in new.segments if s.protected]
    violations: list[Violation] = []
    cursor = 0
    occurrence: dict[SegmentKind, int] = {}
    for old_seg in (s for s in old.segments if s.protected):
        nth = occurrence.get(old_seg.kind, 0)
        occurrence[old_seg.kind] = nth + 1
        found = None
        for idx in range(cursor, len(new_protected)):
            candidate = new_protected[idx]
            if candidate.kind is old_seg.kind and candidate.text == old_seg.text:
                found = idx
                break
        if found is not None:
            cursor = found + 1
            continue
        same_kind = [s for s in new_protected if s.kind is old_seg.kind]
        if nth < len(same_kind):
            lo, hi = _first_diff_range(old_seg.text, same_kind[nth].text)
            detail = (
                f"{old_seg.kind.value} segment {nth + 1} mutated at chars {lo}..{hi}"
            )
        else:
            detail = f"{old_seg.kind.value} segment {nth + 1} is missing"
        violations.append(Violation(kind_map[old_seg.kind], detail))
    if violations:
        return GuardReport(Verdict.REJECTED, tuple(violations))
    return GuardReport(Verdict.ACCEPTED)


def verify_required_tokens(
    new: PromptDocument, tokens: tuple[str, ...]
) -> GuardReport:
    """Case-sensitive presence check for tokens the task depends on."""
    rendered = render_prompt(new)
    violations = tuple(
        Violation(
            ViolationKind.REQUIRED_TOKEN_MISSING,
            f"required token {token!r} not found (case-sensitive)",
        )
        for token in tokens
        if token not in rendered
    )
    if violations:
        return GuardReport(Verdict.REJECTED, violations)
    return GuardReport(Verdict.ACCEPTED)


def repair_placeholders(
    candidate: str,
    original: PromptDocument,
    *,
    gateway: Gateway,
    model: str,
    temperature: float = DEFAULT_TEMPERATURE,
    seed: int = DEFAULT_SEED,
    patterns: tuple[re.Pattern, ...] | None = None,
    attempts: int = 3,
) -> str:
    """Ask a model to splice original text back over placeholder stubs.

    The result must contain zero placeholders and every original examples
    segment verbatim; otherwise the call is retried with a corrective note,
    and RepairFailedError is raised once the budget is spent.
    """
    original_text = render_prompt(original)
    example_texts = [
        s.text for s in original.segments if s.kind is SegmentKind.EXAMPLES
    ]
    note = None
    for _ in range(attempts):
        messages = [
            Message(Role.SYSTEM, prompts.TEMPLATE_REPLACER_SYSTEM_PROMPT),
            Message(
                Role.USER,
                prompts.TEMPLATE_REPLACER_USER_TEMPLATE.format(
                    original=original_text, candidate=candidate
                ),
            ),
        ]
        if note is not None:
            messages.append(Message(Role.USER, note))
        request = ChatRequest(
            messages=tuple(messages),
            model=model,
            temperature=temperature,
            seed=seed,
        )
        repaired = gateway.complete(request).content
        if not detect_placeholders(repaired, patterns) and all(
            text in repaired for text in example_texts
        ):
            return repaired
        note = prompts.REPAIR_RETRY_NOTE
    raise RepairFailedError(
        f"placeholders survived {attempts} repair attempts"
    )


@dataclass(frozen=True)
class GuardConfig:
    extra_placeholder_patterns: tuple[str, ...] = ()
    repair_attempts: int = 3
    optimizer_attempts: int = 3

    def compiled_patterns(self) -> tuple[re.Pattern, ...]:
        return compile_placeholder_patterns(self.extra_placeholder_patterns)


def review_candidate(
    old: PromptDocument,
    candidate: str,
    *,
    seg_config: SegmentationConfig | None = None,
    required_tokens: tuple[str, ...] = (),
    guard_config: GuardConfig | None = None,
    gateway: Gateway | None = None,
    repair_model: str = "agent",
    temperature: float = DEFAULT_TEMPERATURE,
    seed: int = DEFAULT_SEED,
) -> tuple[GuardReport, PromptDocument | None]:
    """Run the full guard pipeline over one candidate prompt text.

    Returns the report plus the parsed document when the candidate survives.
    Placeholders trigger repair when a gateway is available (a clean text is
    never re-sent anywhere, which makes re-reviewing a repaired prompt free
    and idempotent). Any repair failure or residual violation rejects.
    """
    cfg = guard_config or GuardConfig()
    patterns = cfg.compiled_patterns()
    verdict = Verdict.ACCEPTED
    repaired_text: str | None = None
    spans = detect_placeholders(candidate, patterns)
    if spans:
        placeholder_violations = tuple(
            Violation(
                ViolationKind.PLACEHOLDER_FOUND,
                f"placeholder {span.text!r} at chars {span.start}..{span.end}",
            )
            for span in spans
        )
        if gateway is None:
            return GuardReport(Verdict.REJECTED, placeholder_violations), None
        try:
            candidate = repair_placeholders(
                candidate,
                old,
                gateway=gateway,
                model=repair_model,
                temperature=temperature,
                seed=seed,
                patterns=patterns,
                attempts=cfg.repair_attempts,
            )
        except RepairFailedError:
            return GuardReport(Verdict.REJECTED, placeholder_violations), None
        verdict = Verdict.REPAIRED
        repaired_text = candidate
    try:
        parsed = parse_prompt(candidate, seg_config)
    except EmptyPromptError:
        return (
            GuardReport(
                Verdict.REJECTED,
                (
                    Violation(
                        ViolationKind.PLACEHOLDER_FOUND,
                        "candidate prompt is empty",
                    ),
                ),
            ),
            None,
        )
    violations: list[Violation] = []
    violations.extend(verify_protected(old, parsed).violations)
    violations.extend(verify_required_tokens(parsed, required_tokens).violations)
    if violations:
        return GuardReport(Verdict.REJECTED, tuple(violations)), None
    return GuardReport(verdict, repaired_prompt=repaired_text), parsed
