"""Numbered-line translation prompts, judge prompts, and parsers for both replies.

Templates are plain UTF-8 files in ``alpo/templates`` with ``{NAME}``
placeholders. Substitution is literal ``str.replace`` so JSON braces in the
judge prompt need no escaping.
"""
from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Sequence

from alpo.errors import LineCountError, ResponseFormatError, ScoreParseError, TemplateError

LANGUAGE_NAMES = {
    "en": "English",
    "de": "German",
    "fr": "French",
    "zh": "Chinese",
    "ko": "Korean",
    "th": "Thai",
    "ja": "Japanese",
    "es": "Spanish",
}

DIMENSIONS = ("accuracy", "naturalness", "vividness")
TRANSLATION_PLACEHOLDERS = ("{INSTRUCTION}", "{EXAMPLE}", "{LINES}")

RE_NUMBERED = re.compile(r"^(\d+)\.(.*)$")
RE_PENDING = re.compile(r"\n(\d+)\.$")


def language_name(tag: str) -> str:
    return LANGUAGE_NAMES.get(tag.split("-")[0].lower(), tag)


def load_template(name: str) -> str:
    return resources.files("alpo").joinpath("templates", f"{name}.txt").read_text(encoding="utf-8")


def _fill(template: str, **values: str) -> str:
    for key, value in values.items():
        template = template.replace("{" + key + "}", value)
    return template


def numbered(lines: Sequence[str], start: int = 1) -> str:
    return "\n".join(f"{i}.{line}" for i, line in enumerate(lines, start))


@dataclass(frozen=True)
class RenderedPrompt:
    text: str
    expected_lines: int
    direction: tuple[str, str]


@dataclass(frozen=True)
class ParsedResponse:
    translations: tuple[str, ...]

    def __len__(self):
        return len(self.translations)

    def __getitem__(self, i):
        return self.translations[i]


@dataclass(frozen=True)
class OneShotExample:
    source_lines: Sequence[str]
    target_lines: Sequence[str]

    def render(self) -> str:
        return (
            "<EXAMPLE>\nOriginal text:\n"
            f"{numbered(self.source_lines)}\n\n"
            "Translation results:\n"
            f"{numbered(self.target_lines)}\n"
        )


def default_instruction(direction: tuple[str, str]) -> str:
    src, tgt = direction
    return _fill(load_template("instruction"), SRC=language_name(src), TGT=language_name(tgt)).rstrip("\n")


def render_translation_prompt(
    block,
    template: str | None = None,
    one_shot: OneShotExample | None = None,
    direction: tuple[str, str] = ("zh", "en"),
    instruction: str | None = None,
) -> RenderedPrompt:
    if template is None:
        template = load_template("translation")
    missing = [p for p in TRANSLATION_PLACEHOLDERS if p not in template]
    if missing:
        raise TemplateError(f"template lacks placeholder(s) {', '.join(missing)}")
    lines = list(block.lines)
    if not lines:
        raise ValueError("cannot render a prompt with zero lines")
    if instruction is None:
        instruction = block.context_header or default_instruction(direction)
    text = _fill(
        template,
        INSTRUCTION=instruction,
        EXAMPLE=one_shot.render() if one_shot is not None else "",
        LINES=numbered(lines),
    )
    return RenderedPrompt(text=text.rstrip("\n"), expected_lines=len(lines), direction=tuple(direction))


def continuation_prefix(prompt_text: str, previous: Sequence[str]) -> str:
    """Prompt followed by the already-fixed translations and the next line number."""
    parts = [prompt_text]
    if previous:
        parts.append(numbered(previous))
    parts.append(f"{len(previous) + 1}.")
    return "\n".join(parts)


def pending_line(prefix: str) -> tuple[int, str | None]:
    """Recover ``(line number, source text)`` that a continuation prefix asks for.

    The source text is looked up in the last ``Original text:`` listing of the
    prompt; returns ``None`` for it when the prompt has no such line.
    """
    m = RE_PENDING.search(prefix)
    if not m:
        raise ResponseFormatError("prefix does not end with a pending line number")
    idx = int(m.group(1))
    return idx, source_lines(prefix).get(idx)


def source_lines(prompt_text: str) -> dict[int, str]:
    head, sep, tail = prompt_text.rpartition("Original text:\n")
    if not sep:
        return {}
    out = {}
    for row in tail.split("\n"):
        m = RE_NUMBERED.match(row)
        if not m:
            break
        out[int(m.group(1))] = m.group(2)
    return out


def parse_translation_response(text: str, expected: int) -> ParsedResponse:
    """Extract ``"i.<translation>"`` lines; numbering must run 1, 2, 3, ... exactly."""
    out = []
    for row in text.splitlines():
        row = row.strip()
        if not row:
            continue
        m = RE_NUMBERED.match(row)
        if not m:
            raise ResponseFormatError(f"unnumbered line in response: {row!r}")
        number = int(m.group(1))
        if number != len(out) + 1:
            raise ResponseFormatError(
                f"line number {number} where {len(out) + 1} was expected"
            )
        out.append(m.group(2).strip())
    if len(out) != expected:
        raise LineCountError(len(out), expected)
    return ParsedResponse(tuple(out))


def candidate_labels(count: int) -> list[str]:
    """A, B, ..., Z, AA, AB, ... in spreadsheet order."""
    labels = []
    for i in range(count):
        label = ""
        i += 1
        while i:
            i, r = divmod(i - 1, 26)
            label = chr(ord("A") + r) + label
        labels.append(label)
    return labels


@dataclass
class EvalPromptSpec:
    line_under_eval: str
    candidates: Sequence[str]
    context_before: Sequence[str] = ()
    context_after: Sequence[str] = ()
    dimension: str = "vividness"
    direction: tuple[str, str] = ("zh", "en")
    labels: Sequence[str] = field(default=())

    def __post_init__(self):
        # single-candidate prompts occur when scoring one sampled line at a time
        if len(self.candidates) < 1:
            raise ValueError("an evaluation prompt needs at least one candidate")
        if self.dimension not in DIMENSIONS:
            raise ValueError(f"unknown dimension {self.dimension!r}")
        if not self.labels:
            self.labels = candidate_labels(len(self.candidates))
        if len(self.labels) != len(self.candidates) or len(set(self.labels)) != len(self.labels):
            raise ValueError("labels must be unique and one per candidate")


def render_eval_prompt(spec: EvalPromptSpec) -> str:
    src, tgt = (language_name(t) for t in spec.direction)
    instruction = _fill(load_template(f"eval_{spec.dimension}"), SRC=src, TGT=tgt).rstrip("\n")
    rows = ["<INSTRUCTION>", instruction, "<TASK>", f"{src} original text:"]
    rows += [f"[Context] {c}" for c in spec.context_before]
    rows.append(f"[To be evaluated] {spec.line_under_eval}")
    rows += [f"[Context] {c}" for c in spec.context_after]
    rows += ["", f"{tgt} translation:"]
    for label, cand in zip(spec.labels, spec.candidates):
        rows += [f"Translation {label}: {cand}", ""]
    shape = ", ".join(f'"{label}": score' for label in spec.labels)
    rows.append(f"Output the ratings as JSON only: {{{shape}}}")
    rows.append("Evaluation score:")
    return "\n".join(rows)


def extract_json_object(text: str) -> str:
    """Return the first balanced ``{...}`` in ``text`` that parses as JSON.

    Braces inside JSON strings are skipped while balancing; a balanced span
    that is not valid JSON (stray braces in prose) is passed over.
    """
    start = text.find("{")
    while start != -1:
        depth = 0
        in_str = False
        escaped = False
        for pos in range(start, len(text)):
            ch = text[pos]
            if in_str:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_str = False
            elif ch == '"':
                in_str = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    candidate = text[start:pos + 1]
                    try:
                        json.loads(candidate)
                    except json.JSONDecodeError:
                        break
                    return candidate
        start = text.find("{", start + 1)
    raise ScoreParseError("no balanced JSON object in evaluator output")


def parse_eval_scores(text: str, labels: Sequence[str]) -> list[int]:
    payload = json.loads(extract_json_object(text))
    if not isinstance(payload, dict):
        raise ScoreParseError("evaluator output is not a JSON object")
    scores = []
    for label in labels:
        if label not in payload:
            raise ScoreParseError(f"no score for candidate {label}")
        value = payload[label]
        if isinstance(value, bool) or not isinstance(value, int):
            raise ScoreParseError(f"score for {label} is not an integer: {value!r}")
        if not 0 <= value <= 100:
            raise ScoreParseError(f"score for {label} out of range: {value}")
        scores.append(value)
    return scores


def shuffled_order(count: int, seed: int) -> list[int]:
    """A seeded presentation order; ``order[k]`` is the candidate shown in slot ``k``."""
    order = list(range(count))
    random.Random(seed).shuffle(order)
    return order


def unshuffle_scores(scores: Sequence[int], order: Sequence[int]) -> list[int]:
    """Map scores given in presentation order back to the original candidate order."""
    out = [0] * len(order)
    for slot, original in enumerate(order):
        out[original] = scores[slot]
    return out


def backtranslation_prompt(text: str, direction: tuple[str, str]) -> str:
    """Literal translation request from the target language back to the source."""
    src, tgt = direction
    return _fill(
        load_template("backtranslation"), SRC=language_name(tgt), TGT=language_name(src), TEXT=text
    ).rstrip("\n")
