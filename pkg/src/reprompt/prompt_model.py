"""Prompt representation: ordered segments with byte-lossless parse and render.

A prompt is modeled as a sequence of typed segments (preamble, step
instructions, examples, format requirements, task slot). Parsing assigns
every byte of the source text to exactly one segment, so rendering the
document always reproduces the original text unchanged. The optimizer and
the guardrails rely on that property to compare segments byte for byte.
"""
from __future__ import annotations

import difflib
import re
from dataclasses import dataclass, field
from enum import Enum

from .errors import (
    AlreadyStructuredError,
    EmptyPromptError,
    OverlappingMarkersError,
    SlotMissingError,
)
from .prompts import DEFAULT_STEP_INSTRUCTIONS


class SegmentKind(Enum):
    PREAMBLE = "preamble"
    STEP_INSTRUCTIONS = "step_instructions"
    EXAMPLES = "examples"
    FORMAT_REQUIREMENTS = "format_requirements"
    TASK_SLOT = "task_slot"


# Segment kinds the optimizer must never touch.
_ALWAYS_PROTECTED = {SegmentKind.EXAMPLES, SegmentKind.FORMAT_REQUIREMENTS}


@dataclass(frozen=True)
class PromptSegment:
    """One contiguous span of prompt text.

    Examples and format requirements are always protected; step
    instructions never are. The flag is derived when not given explicitly.
    """

    kind: SegmentKind
    text: str
    protected: bool | None = None

    def __post_init__(self):
        if not self.text:
            raise ValueError("segment text must be non-empty")
        if self.kind in _ALWAYS_PROTECTED:
            if self.protected is False:
                raise ValueError(f"{self.kind.value} segments are always protected")
            object.__setattr__(self, "protected", True)
        elif self.kind is SegmentKind.STEP_INSTRUCTIONS:
            if self.protected is True:
                raise ValueError("step instruction segments are never protected")
            object.__setattr__(self, "protected", False)
        elif self.protected is None:
            object.__setattr__(self, "protected", False)


@dataclass(frozen=True)
class PromptDocument:
    """An ordered segment sequence plus its version lineage."""

    segments: tuple[PromptSegment, ...]
    version: int = 0
    parent_version: int | None = None

    def __post_init__(self):
        if not self.segments:
            raise ValueError("a prompt document needs at least one segment")
        n_steps = sum(
            1 for s in self.segments if s.kind is SegmentKind.STEP_INSTRUCTIONS
        )
        if n_steps > 1:
            raise ValueError("at most one step instruction segment is allowed")
        if self.version < 0:
            raise ValueError("version must be non-negative")
        if self.version == 0 and self.parent_version is not None:
            raise ValueError("version 0 has no parent")
        if self.version > 0 and self.parent_version != self.version - 1:
            raise ValueError("version n must have parent_version n - 1")


@dataclass(frozen=True)
class SegmentationConfig:
    """Boundary patterns used to split raw prompt text into segments.

    All patterns match when a line, stripped of surrounding whitespace,
    starts with the pattern text. Step blocks are found heuristically:
    either a run of lines numbered from 1, or a block introduced by a line
    containing one of the ``step_introducers`` phrases.
    """

    examples_open: tuple[str, ...] = (
        "***** Example *****",
        "Here are two examples",
        "Here is one example",
    )
    examples_close: tuple[str, ...] = ("***** Example Ends *****",)
    task_open: tuple[str, ...] = ("Here is the task", "Given information:")
    format_open: tuple[str, ...] = ()
    format_close: tuple[str, ...] = ()
    step_introducers: tuple[str, ...] = ("step by step", "one by one")
    detect_numbered_steps: bool = True


DEFAULT_SEGMENTATION = SegmentationConfig()

_ITEM_RE = re.compile(r"^\s{0,3}(\d+)[.)]\s")
# Lines that continue a numbered item across a blank gap: indented text,
# dash or bullet lists, and lettered sub-items such as "a. ...".
_CONT_RE = re.compile(r"^(?:\s+\S|[-*•]\s|[a-z][.)]\s)")

_BOUNDARY_FIELDS = (
    ("examples_open", "examples_open"),
    ("examples_close", "examples_close"),
    ("task_open", "task_open"),
    ("format_open", "format_open"),
    ("format_close", "format_close"),
)


def _item_number(line: str) -> int | None:
    m = _ITEM_RE.match(line)
    return int(m.group(1)) if m else None


def _line_categories(line: str, config: SegmentationConfig) -> set[str]:
    stripped = line.strip()
    if not stripped:
        return set()
    cats = set()
    for cat, attr in _BOUNDARY_FIELDS:
        if any(stripped.startswith(marker) for marker in getattr(config, attr)):
            cats.add(cat)
    return cats


def _scan_numbered(lines: list[str], start: int, is_boundary) -> int | None:
    """Return the exclusive end of a numbered block starting at ``start``.

    Items must be numbered 1, 2, ... with no renumbering gaps. Blank gaps
    are allowed between items and before bullet or indented continuation
    paragraphs. Returns None when ``start`` does not open a block.
    """
    n = len(lines)
    expected = 1
    i = start
    content_end = start
    while i < n and not is_boundary(i) and _item_number(lines[i]) == expected:
        expected += 1
        i += 1
        content_end = i
        while i < n:
            if is_boundary(i):
                break
            line = lines[i]
            if _item_number(line) is not None:
                break
            if not line.strip():
                k = i
                while k < n and not lines[k].strip():
                    k += 1
                if k < n and not is_boundary(k):
                    if _item_number(lines[k]) is None and _CONT_RE.match(lines[k]):
                        i = k
                        continue
                    if _item_number(lines[k]) == expected:
                        i = k
                break
            i += 1
            content_end = i
    if expected == 1:
        return None
    return content_end


def _scan_introducer(lines: list[str], start: int, is_boundary) -> int:
    """End of a step block opened by an introducer line.

    Covers the introducer's own paragraph plus a directly following
    numbered block, if any.
    """
    n = len(lines)
    i = start + 1
    while (
        i < n
        and lines[i].strip()
        and not is_boundary(i)
        and _item_number(lines[i]) is None
    ):
        i += 1
    content_end = i
    k = i
    while k < n and not lines[k].strip():
        k += 1
    if k < n and not is_boundary(k) and _item_number(lines[k]) == 1:
        numbered_end = _scan_numbered(lines, k, is_boundary)
        if numbered_end is not None:
            content_end = numbered_end
    return content_end


def parse_prompt(
    raw: str, config: SegmentationConfig | None = None
) -> PromptDocument:
    """Split raw prompt text into a segment document, losslessly.

    Raises EmptyPromptError for empty input and OverlappingMarkersError
    when one line matches two different boundary categories.
    """
    if raw == "":
        raise EmptyPromptError("cannot parse an empty prompt")
    cfg = config or DEFAULT_SEGMENTATION
    lines = raw.splitlines(keepends=True)
    n = len(lines)

    categories = [_line_categories(line, cfg) for line in lines]
    for idx, cats in enumerate(categories):
        if len(cats) > 1:
            raise OverlappingMarkersError(
                f"line {idx + 1} matches several boundary patterns: {sorted(cats)}"
            )

    def is_boundary(i: int) -> bool:
        return bool(categories[i])

    def absorb_blanks(i: int) -> int:
        while i < n and not lines[i].strip():
            i += 1
        return i

    regions: list[tuple[SegmentKind, int, int]] = []
    pre_start = 0

    def flush_preamble(upto: int) -> None:
        if pre_start < upto:
            regions.append((SegmentKind.PREAMBLE, pre_start, upto))

    step_seen = False
    i = 0
    while i < n:
        cats = categories[i]
        if "examples_open" in cats:
            flush_preamble(i)
            j = i + 1
            while j < n:
                if "task_open" in categories[j]:
                    break
                if "examples_close" in categories[j]:
                    j += 1
                    break
                j += 1
            j = absorb_blanks(j)
            regions.append((SegmentKind.EXAMPLES, i, j))
            i = pre_start = j
            continue
        if "task_open" in cats:
            flush_preamble(i)
            regions.append((SegmentKind.TASK_SLOT, i, n))
            i = pre_start = n
            continue
        if "format_open" in cats:
            flush_preamble(i)
            j = i + 1
            if cfg.format_close:
                while j < n and "format_close" not in categories[j]:
                    if categories[j]:
                        break
                    j += 1
                if j < n and "format_close" in categories[j]:
                    j += 1
            else:
                while j < n and lines[j].strip() and not categories[j]:
                    j += 1
            j = absorb_blanks(j)
            regions.append((SegmentKind.FORMAT_REQUIREMENTS, i, j))
            i = pre_start = j
            continue
        if not step_seen and cfg.detect_numbered_steps and _item_number(lines[i]) == 1:
            end = _scan_numbered(lines, i, is_boundary)
            if end is not None:
                flush_preamble(i)
                end = absorb_blanks(end)
                regions.append((SegmentKind.STEP_INSTRUCTIONS, i, end))
                i = pre_start = end
                step_seen = True
                continue
        if not step_seen and any(
            key in lines[i].lower() for key in cfg.step_introducers
        ):
            flush_preamble(i)
            end = absorb_blanks(_scan_introducer(lines, i, is_boundary))
            regions.append((SegmentKind.STEP_INSTRUCTIONS, i, end))
            i = pre_start = end
            step_seen = True
            continue
        i += 1
    flush_preamble(n)

    segments = tuple(
        PromptSegment(kind=kind, text="".join(lines[a:b])) for kind, a, b in regions
    )
    return PromptDocument(segments=segments)


def render_prompt(doc: PromptDocument) -> str:
    return "".join(segment.text for segment in doc.segments)


def has_step_instructions(doc: PromptDocument) -> bool:
    return any(s.kind is SegmentKind.STEP_INSTRUCTIONS for s in doc.segments)


def _separator_prefix(previous_text: str) -> str:
    if previous_text.endswith("\n\n"):
        return ""
    if previous_text.endswith("\n"):
        return "\n"
    return "\n\n"


def inject_default_steps(doc: PromptDocument) -> PromptDocument:
    """Insert the engine's two default steps into an unstructured prompt.

    The block goes immediately before the first examples segment, or at the
    end of the document when there are no examples. Every other segment is
    carried over byte-identical. Raises AlreadyStructuredError when the
    document already has step instructions.
    """
    if has_step_instructions(doc):
        raise AlreadyStructuredError("prompt already contains step instructions")
    insert_at = len(doc.segments)
    for idx, segment in enumerate(doc.segments):
        if segment.kind is SegmentKind.EXAMPLES:
            insert_at = idx
            break
    prefix = ""
    if insert_at > 0:
        prefix = _separator_prefix(doc.segments[insert_at - 1].text)
    suffix = "\n" if insert_at < len(doc.segments) else ""
    block = PromptSegment(
        kind=SegmentKind.STEP_INSTRUCTIONS,
        text=prefix + DEFAULT_STEP_INSTRUCTIONS + suffix,
    )
    segments = doc.segments[:insert_at] + (block,) + doc.segments[insert_at:]
    return PromptDocument(
        segments=segments, version=doc.version, parent_version=doc.parent_version
    )


# --- step lists -------------------------------------------------------------


@dataclass(frozen=True)
class Step:
    index: int
    text: str


@dataclass(frozen=True)
class StepList:
    steps: tuple[Step, ...] = ()

    def __post_init__(self):
        for pos, step in enumerate(self.steps, start=1):
            if step.index != pos:
                raise ValueError("step indices must run 1, 2, ... without gaps")
            if not step.text:
                raise ValueError("step text must be non-empty")

    def texts(self) -> list[str]:
        return [s.text for s in self.steps]

    def __len__(self) -> int:
        return len(self.steps)


def steps_from_text(text: str) -> StepList:
    """Parse the numbered items out of a step segment's text.

    Introducer lines before the first item are not steps. Continuation
    lines attach to the preceding item. Item numbering prefixes are
    stripped and surrounding whitespace trimmed.
    """
    collected: list[list[str]] = []
    expected = 1
    current: list[str] | None = None
    for line in text.splitlines(keepends=True):
        num = _item_number(line)
        if num == expected:
            if current is not None:
                collected.append(current)
            current = [line[_ITEM_RE.match(line).end():]]
            expected += 1
        elif current is not None:
            current.append(line)
    if current is not None:
        collected.append(current)
    steps = tuple(
        Step(index=i, text="".join(parts).strip())
        for i, parts in enumerate(collected, start=1)
    )
    return StepList(steps=steps)


def extract_steps(doc: PromptDocument) -> StepList:
    for segment in doc.segments:
        if segment.kind is SegmentKind.STEP_INSTRUCTIONS:
            return steps_from_text(segment.text)
    return StepList()


# --- structural diff ---------------------------------------------------------


class DiffStatus(Enum):
    IDENTICAL = "identical"
    MODIFIED = "modified"
    ADDED = "added"
    REMOVED = "removed"


class StepEditOp(Enum):
    INSERT_BEFORE = "InsertBefore"
    REPLACE_STEP = "ReplaceStep"
    APPEND_STEP = "AppendStep"


@dataclass(frozen=True)
class StepEdit:
    op: StepEditOp
    index: int | None = None

    def __str__(self) -> str:
        if self.op is StepEditOp.APPEND_STEP:
            return "AppendStep"
        slot = "*" if self.index is None else str(self.index)
        return f"{self.op.value}({slot})"


def classify_step_edits(
    old: StepList, new: StepList
) -> tuple[tuple[StepEdit, ...], bool]:
    """Describe how ``new`` differs from ``old`` at step granularity.

    Single insertions, replacements and appends are reported precisely.
    Anything else collapses to a whole-block replacement with the
    multi-edit flag set.
    """
    o = old.texts()
    nw = new.texts()
    if o == nw:
        return (), False
    if len(nw) == len(o) + 1:
        if nw[:-1] == o:
            return (StepEdit(StepEditOp.APPEND_STEP),), False
        for k in range(len(o)):
            if nw[:k] == o[:k] and nw[k + 1:] == o[k:]:
                return (StepEdit(StepEditOp.INSERT_BEFORE, k + 1),), False
    if len(nw) == len(o):
        changed = [i for i, (x, y) in enumerate(zip(o, nw)) if x != y]
        if len(changed) == 1:
            return (StepEdit(StepEditOp.REPLACE_STEP, changed[0] + 1),), False
    return (StepEdit(StepEditOp.REPLACE_STEP, None),), True


@dataclass(frozen=True)
class SegmentDiff:
    kind: SegmentKind
    status: DiffStatus
    step_edits: tuple[StepEdit, ...] = ()
    multi_edit: bool = False

    def __str__(self) -> str:
        label = f"{self.kind.value:20s} {self.status.value}"
        if self.step_edits:
            label += ": " + ", ".join(str(e) for e in self.step_edits)
        return label


@dataclass(frozen=True)
class StructuredDiff:
    entries: tuple[SegmentDiff, ...]

    @property
    def all_identical(self) -> bool:
        return all(e.status is DiffStatus.IDENTICAL for e in self.entries)

    def changed_kinds(self) -> set[SegmentKind]:
        return {
            e.kind for e in self.entries if e.status is not DiffStatus.IDENTICAL
        }

    def __str__(self) -> str:
        return "\n".join(str(e) for e in self.entries)


def _step_pair_edits(
    old_text: str, new_text: str
) -> tuple[tuple[StepEdit, ...], bool]:
    try:
        return classify_step_edits(
            steps_from_text(old_text), steps_from_text(new_text)
        )
    except ValueError:
        return (StepEdit(StepEditOp.REPLACE_STEP, None),), True


def diff_prompts(a: PromptDocument, b: PromptDocument) -> StructuredDiff:
    """Compare two documents segment by segment.

    Equal rendered text short-circuits to an all-identical diff, so the
    diff detects inequality exactly when the rendered bytes differ.
    """
    if render_prompt(a) == render_prompt(b):
        return StructuredDiff(
            tuple(SegmentDiff(s.kind, DiffStatus.IDENTICAL) for s in a.segments)
        )
    sa = [(s.kind, s.text) for s in a.segments]
    sb = [(s.kind, s.text) for s in b.segments]
    matcher = difflib.SequenceMatcher(a=sa, b=sb, autojunk=False)
    entries: list[SegmentDiff] = []
    for tag, i1, i2, j1, j2 in matcher.get_opcodes():
        if tag == "equal":
            entries.extend(
                SegmentDiff(kind, DiffStatus.IDENTICAL) for kind, _ in sa[i1:i2]
            )
        elif tag == "delete":
            entries.extend(
                SegmentDiff(kind, DiffStatus.REMOVED) for kind, _ in sa[i1:i2]
            )
        elif tag == "insert":
            entries.extend(
                SegmentDiff(kind, DiffStatus.ADDED) for kind, _ in sb[j1:j2]
            )
        else:
            paired = min(i2 - i1, j2 - j1)
            for t in range(paired):
                kind_a, text_a = sa[i1 + t]
                kind_b, text_b = sb[j1 + t]
                if kind_a is kind_b:
                    edits: tuple[StepEdit, ...] = ()
                    multi = False
                    if kind_a is SegmentKind.STEP_INSTRUCTIONS:
                        edits, multi = _step_pair_edits(text_a, text_b)
                    entries.append(
                        SegmentDiff(kind_a, DiffStatus.MODIFIED, edits, multi)
                    )
                else:
                    entries.append(SegmentDiff(kind_a, DiffStatus.REMOVED))
                    entries.append(SegmentDiff(kind_b, DiffStatus.ADDED))
            for kind, _ in sa[i1 + paired : i2]:
                entries.append(SegmentDiff(kind, DiffStatus.REMOVED))
            for kind, _ in sb[j1 + paired : j2]:
                entries.append(SegmentDiff(kind, DiffStatus.ADDED))
    return StructuredDiff(tuple(entries))


# --- task slots --------------------------------------------------------------

_SLOT_RE = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")


def slot_names(doc: PromptDocument) -> set[str]:
    names: set[str] = set()
    for segment in doc.segments:
        if segment.kind is SegmentKind.TASK_SLOT:
            names.update(_SLOT_RE.findall(segment.text))
    return names


def fill_slots(doc: PromptDocument, values: dict[str, str]) -> str:
    """Render the document with task-slot placeholders substituted.

    Raises SlotMissingError when the task slot references a name that has
    no value. Braces outside the task slot are left alone, they are
    ordinary prompt text.
    """
    missing = slot_names(doc) - set(values)
    if missing:
        raise SlotMissingError(missing)

    def substitute(match: re.Match) -> str:
        name = match.group(1)
        return str(values[name]) if name in values else match.group(0)

    parts = []
    for segment in doc.segments:
        if segment.kind is SegmentKind.TASK_SLOT:
            parts.append(_SLOT_RE.sub(substitute, segment.text))
        else:
            parts.append(segment.text)
    return "".join(parts)
