"""Segment-wise candidate sampling against abstract generator and evaluator services.

All randomness for one prompt flows from a single seed, so running prompts in
parallel never changes what any individual prompt produces.
"""
from __future__ import annotations

import abc
import logging
import random
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

from alpo import codec
from alpo.errors import (
    BackendError,
    PipelineError,
    ResponseFormatError,
    SamplingError,
    ScoreParseError,
    SelectionError,
)

logger = logging.getLogger(__name__)

SCHEMA = "alpo/v1"
DEFAULT_K = 15
TOP_N = 3


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = 1.0
    top_k: int = 40
    top_p: float = 0.9
    max_new_tokens: int = 256

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must lie in (0, 1]")


class Generator(abc.ABC):
    """Draws completions from the model being aligned."""

    @abc.abstractmethod
    def sample(self, prefix: str, params: SamplingParams, count: int, seed: int | None = None) -> list[str]:
        """Return exactly ``count`` raw completions of ``prefix``."""


class Evaluator(abc.ABC):
    """Scores candidate translations of one source line, 0-100 each."""

    @abc.abstractmethod
    def score(
        self,
        line: str,
        candidates: Sequence[str],
        before: Sequence[str] = (),
        after: Sequence[str] = (),
    ) -> list[int]:
        """Return one integer in [0, 100] per candidate, in candidate order."""


@dataclass(frozen=True)
class RetryPolicy:
    attempts: int = 3
    backoff: float = 0.5

    def call(self, fn: Callable, *, line_index=None, sleep=time.sleep):
        delay = self.backoff
        for attempt in range(1, self.attempts + 1):
            try:
                return fn()
            except (BackendError, ScoreParseError, ResponseFormatError) as exc:
                if attempt == self.attempts:
                    raise PipelineError(
                        f"backend failed after {self.attempts} attempts: {exc}", line_index
                    ) from exc
                logger.warning("attempt %d failed (%s); retrying in %.2fs", attempt, exc, delay)
                if delay > 0:
                    sleep(delay)
                delay *= 2


# --- selection rules -----------------------------------------------------------

def _ranked(scores: Sequence[int], descending: bool) -> list[int]:
    sign = -1 if descending else 1
    return sorted(range(len(scores)), key=lambda i: (sign * scores[i], i))


def top_indices(scores: Sequence[int], count: int = TOP_N) -> list[int]:
    return _ranked(scores, True)[:count]


def bottom_indices(scores: Sequence[int], count: int = TOP_N) -> list[int]:
    return _ranked(scores, False)[:count]


def select_chosen(scores: Sequence[int], rng: random.Random) -> int:
    """Uniform draw among the three best-scored candidates (fewer if fewer exist)."""
    if not scores:
        raise SelectionError("no candidates to choose from")
    return rng.choice(top_indices(scores))


def select_bottom(scores: Sequence[int], rng: random.Random) -> int:
    if not scores:
        raise SelectionError("no candidates to choose from")
    return rng.choice(bottom_indices(scores))


def select_rejected(scores: Sequence[int]) -> int:
    """Third-lowest scored candidate; the very lowest is skipped as too easy a contrast."""
    if len(scores) < 3:
        raise SelectionError(f"need at least 3 candidates, got {len(scores)}")
    return _ranked(scores, False)[2]


def dedup_candidates(samples: Sequence[str], reference: str | None = None) -> tuple[list[str], bool]:
    """Trim and drop repeats, keeping first occurrences; a reference goes first."""
    seen = set()
    out = []
    if reference is not None and reference.strip():
        ref = reference.strip()
        out.append(ref)
        seen.add(ref)
    for s in samples:
        s = s.strip()
        if s and s not in seen:
            seen.add(s)
            out.append(s)
    return out, bool(reference is not None and reference.strip())


def first_line(text: str) -> str:
    for row in text.splitlines():
        if row.strip():
            return row.strip()
    return ""


def context_window(lines: Sequence[str], i: int, width: int = 2) -> tuple[list[str], list[str]]:
    return list(lines[max(0, i - width):i]), list(lines[i + 1:i + 1 + width])


# --- results -------------------------------------------------------------------

@dataclass
class SampledLine:
    source: str
    candidates: list[str]
    scores: list[int]
    chosen: int
    has_ref: bool
    prefix: list[str] = field(default_factory=list)

    @property
    def chosen_text(self) -> str:
        return self.candidates[self.chosen]


@dataclass
class SampledPrompt:
    prompt_id: str
    prompt: str
    lines: list[SampledLine]
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "kind": "alpo",
            "prompt_id": self.prompt_id,
            "seed": self.seed,
            "prompt": self.prompt,
            "lines": [
                {
                    "s": ln.source,
                    "candidates": ln.candidates,
                    "scores": ln.scores,
                    "chosen": ln.chosen,
                    "has_ref": ln.has_ref,
                }
                for ln in self.lines
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SampledPrompt":
        lines = []
        chosen_so_far: list[str] = []
        for raw in d["lines"]:
            ln = SampledLine(
                source=raw["s"],
                candidates=list(raw["candidates"]),
                scores=[int(x) for x in raw["scores"]],
                chosen=int(raw["chosen"]),
                has_ref=bool(raw.get("has_ref", False)),
                prefix=list(chosen_so_far),
            )
            if len(ln.scores) != len(ln.candidates) or not 0 <= ln.chosen < len(ln.candidates):
                raise ValueError("scores/candidates/chosen are inconsistent")
            lines.append(ln)
            chosen_so_far.append(ln.chosen_text)
        return cls(d["prompt_id"], d.get("prompt", ""), lines, int(d.get("seed", 0)))


@dataclass
class ResponsePair:
    """Whole-response chosen/rejected pair for the vanilla DPO baselines."""

    prompt_id: str
    prompt: str
    chosen: str
    rejected: str
    chosen_score: float | None = None
    rejected_score: float | None = None
    kind: str = "coarse-dpo"

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "kind": self.kind,
            "prompt_id": self.prompt_id,
            "prompt": self.prompt,
            "chosen": self.chosen,
            "rejected": self.rejected,
            "chosen_score": self.chosen_score,
            "rejected_score": self.rejected_score,
        }


@dataclass
class TrajectoryStep:
    prefix: str
    translation: str
    score: int


# --- samplers ------------------------------------------------------------------

def _prompt_text(block, prompt, direction) -> str:
    if prompt is None:
        return codec.render_translation_prompt(block, direction=direction).text
    return prompt if isinstance(prompt, str) else prompt.text


def _draw_line(gen, evaluator, block, i, prompt_text, previous, k, params, rng, retry, use_reference):
    prefix = codec.continuation_prefix(prompt_text, previous)
    call_seed = rng.getrandbits(31)

    def draw():
        out = gen.sample(prefix, params, k, seed=call_seed)
        if len(out) != k:
            raise BackendError(f"generator returned {len(out)} samples, expected {k}")
        return out

    samples = retry.call(draw, line_index=i)
    reference = block.references[i] if (use_reference and block.references) else None
    candidates, has_ref = dedup_candidates([first_line(s) for s in samples], reference)
    if not candidates:
        raise PipelineError("no usable candidates after deduplication", i)
    before, after = context_window(block.lines, i)

    def judge():
        scores = evaluator.score(block.lines[i], candidates, before, after)
        if len(scores) != len(candidates):
            raise ScoreParseError(f"{len(scores)} scores for {len(candidates)} candidates")
        return [int(s) for s in scores]

    scores = retry.call(judge, line_index=i)
    return candidates, scores, has_ref


def sample_prompt_alpo(
    block,
    gen: Generator,
    evaluator: Evaluator,
    k: int = DEFAULT_K,
    rng_seed: int = 0,
    params: SamplingParams | None = None,
    use_reference: bool = True,
    retry: RetryPolicy | None = None,
    prompt=None,
    direction: tuple[str, str] = ("zh", "en"),
) -> SampledPrompt:
    """Sample, deduplicate, score and pick a chosen translation line by line.

    The chosen translation of each line is appended to the prefix used when
    sampling the following line.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    params = params or SamplingParams()
    retry = retry or RetryPolicy()
    rng = random.Random(rng_seed)
    prompt_text = _prompt_text(block, prompt, direction)
    chosen_texts: list[str] = []
    lines = []
    for i, source in enumerate(block.lines):
        candidates, scores, has_ref = _draw_line(
            gen, evaluator, block, i, prompt_text, chosen_texts, k, params, rng, retry, use_reference
        )
        chosen = select_chosen(scores, rng)
        lines.append(SampledLine(source, candidates, scores, chosen, has_ref, list(chosen_texts)))
        chosen_texts.append(candidates[chosen])
    return SampledPrompt(block.block_id, prompt_text, lines, rng_seed)


def sample_fine_dpo(
    block,
    gen: Generator,
    evaluator: Evaluator,
    k: int = DEFAULT_K,
    rng_seed: int = 0,
    params: SamplingParams | None = None,
    use_reference: bool = True,
    retry: RetryPolicy | None = None,
    prompt=None,
    direction: tuple[str, str] = ("zh", "en"),
) -> ResponsePair:
    """Two segment-wise passes: best-of-top-3 lines for chosen, worst-of-bottom-3 for rejected."""
    if k < 3:
        raise ValueError("k must be at least 3")
    params = params or SamplingParams()
    retry = retry or RetryPolicy()
    rng = random.Random(rng_seed)
    prompt_text = _prompt_text(block, prompt, direction)
    responses = []
    for pick in (select_chosen, select_bottom):
        picked: list[str] = []
        for i in range(block.n):
            candidates, scores, _ = _draw_line(
                gen, evaluator, block, i, prompt_text, picked, k, params, rng, retry, use_reference
            )
            picked.append(candidates[pick(scores, rng)])
        responses.append(codec.numbered(picked))
    return ResponsePair(block.block_id, prompt_text, responses[0], responses[1], kind="fine-dpo")


def sample_coarse_dpo(
    block,
    gen: Generator,
    evaluator: Evaluator,
    k: int = DEFAULT_K,
    rng_seed: int = 0,
    params: SamplingParams | None = None,
    retry: RetryPolicy | None = None,
    prompt=None,
    direction: tuple[str, str] = ("zh", "en"),
) -> ResponsePair:
    """Sample ``k`` whole responses; the best and worst score sums form the pair.

    Responses whose numbering does not parse to ``n`` lines are discarded.
    Ties go to the lower index for chosen; rejected is the lowest sum among
    the remaining responses, again lower index first.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    params = params or SamplingParams()
    retry = retry or RetryPolicy()
    rng = random.Random(rng_seed)
    prompt_text = _prompt_text(block, prompt, direction)
    call_seed = rng.getrandbits(31)
    raw = retry.call(lambda: gen.sample(prompt_text, params, k, seed=call_seed))
    parsed = []
    for j, text in enumerate(raw):
        try:
            parsed.append((j, text.strip(), codec.parse_translation_response(text, block.n)))
        except ResponseFormatError as exc:
            logger.info("discarding response %d of %s: %s", j, block.block_id, exc)
    if len(parsed) < 2:
        raise SamplingError(f"only {len(parsed)} parseable responses for {block.block_id!r}")
    totals = [0] * len(parsed)
    for i in range(block.n):
        before, after = context_window(block.lines, i)
        cands = [p[2][i] for p in parsed]
        scores = retry.call(
            lambda: evaluator.score(block.lines[i], cands, before, after), line_index=i
        )
        for j, s in enumerate(scores):
            totals[j] += int(s)
    best = max(range(len(parsed)), key=lambda j: (totals[j], -j))
    rest = [j for j in range(len(parsed)) if j != best]
    worst = min(rest, key=lambda j: (totals[j], j))
    return ResponsePair(
        block.block_id,
        prompt_text,
        parsed[best][1],
        parsed[worst][1],
        chosen_score=totals[best],
        rejected_score=totals[worst],
        kind="coarse-dpo",
    )


def sample_trajectory(
    block,
    gen: Generator,
    evaluator: Evaluator,
    rng_seed: int = 0,
    params: SamplingParams | None = None,
    retry: RetryPolicy | None = None,
    prompt=None,
    direction: tuple[str, str] = ("zh", "en"),
) -> list[TrajectoryStep]:
    """One sample per line, scored on its own; the prefix follows the sampled lines."""
    if not block.lines:
        return []
    params = params or SamplingParams()
    retry = retry or RetryPolicy()
    rng = random.Random(rng_seed)
    prompt_text = _prompt_text(block, prompt, direction)
    taken: list[str] = []
    steps = []
    for i in range(block.n):
        prefix = codec.continuation_prefix(prompt_text, taken)
        call_seed = rng.getrandbits(31)
        text = first_line(retry.call(lambda: gen.sample(prefix, params, 1, seed=call_seed)[0], line_index=i))
        before, after = context_window(block.lines, i)
        score = retry.call(lambda: evaluator.score(block.lines[i], [text], before, after)[0], line_index=i)
        steps.append(TrajectoryStep(prefix, text, int(score)))
        taken.append(text)
    return steps
