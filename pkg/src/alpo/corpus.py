"""Subtitle parsing, bilingual alignment, corpus splitting and prompt chunking."""
from __future__ import annotations

import json
import logging
import random
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from alpo import kernels
from alpo.errors import ConfigError, EmptyTrackError, SubtitleParseError

logger = logging.getLogger(__name__)

SCHEMA = "alpo/v1"
DEFAULT_THRESHOLD = 0.7
DEFAULT_LINES_PER_PROMPT = 35

RE_HTML_TAG = re.compile(r"<[^>]*>")
RE_ASS_OVERRIDE = re.compile(r"\{[^}]*\}")
RE_SRT_TIME = re.compile(r"^\s*(\d+):(\d{1,2}):(\d{1,2})[,.](\d{1,3})\s*$")
RE_ASS_TIME = re.compile(r"^\s*(\d+):(\d{1,2}):(\d{1,2})(?:\.(\d{1,3}))?\s*$")
RE_SRT_ARROW = re.compile(r"\s*-->\s*")

ASS_DEFAULT_FORMAT = [
    "Layer", "Start", "End", "Style", "Name",
    "MarginL", "MarginR", "MarginV", "Effect", "Text",
]


@dataclass(frozen=True)
class SubtitleLine:
    start: float
    end: float
    text: str

    def to_dict(self):
        return {"start": self.start, "end": self.end, "text": self.text}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["start"]), float(d["end"]), str(d["text"]))


@dataclass(frozen=True)
class SubtitleTrack:
    lines: tuple[SubtitleLine, ...]
    language: str = "und"

    def __len__(self):
        return len(self.lines)

    def starts(self) -> np.ndarray:
        return np.fromiter((ln.start for ln in self.lines), dtype=np.float64, count=len(self.lines))


@dataclass(frozen=True)
class BilingualPair:
    src: SubtitleLine
    tgt: SubtitleLine


@dataclass
class AlignmentResult:
    """Matched pairs plus the bookkeeping the CLI manifest reports."""

    pairs: list[BilingualPair]
    unmatched_src: int
    unmatched_tgt: int
    half_width: int

    def __iter__(self):
        return iter(self.pairs)

    def __len__(self):
        return len(self.pairs)


@dataclass
class ParallelCorpus:
    pairs: list[BilingualPair]
    program_id: str
    direction: tuple[str, str] = ("und", "und")

    def __len__(self):
        return len(self.pairs)


@dataclass
class PromptBlock:
    context_header: str
    lines: list[str]
    references: list[str] | None = None
    block_id: str = ""

    def __post_init__(self):
        if not self.lines:
            raise ValueError("a prompt block needs at least one line")
        if self.references is not None and len(self.references) != len(self.lines):
            raise ValueError(
                f"{len(self.references)} references for {len(self.lines)} lines"
            )

    @property
    def n(self):
        return len(self.lines)

    def to_dict(self):
        return {
            "schema": SCHEMA,
            "prompt_id": self.block_id,
            "context_header": self.context_header,
            "lines": list(self.lines),
            "references": None if self.references is None else list(self.references),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            context_header=d.get("context_header", ""),
            lines=list(d["lines"]),
            references=d.get("references"),
            block_id=d.get("prompt_id", ""),
        )


# --- parsing -----------------------------------------------------------------

def _clean_text(text: str) -> str:
    text = text.replace("\\N", " ").replace("\\n", " ").replace("\\h", " ")
    text = RE_ASS_OVERRIDE.sub("", text)
    text = RE_HTML_TAG.sub("", text)
    return " ".join(text.split())


def _to_millis(h, m, s, frac):
    frac = (frac or "0").ljust(3, "0")[:3]
    return ((int(h) * 60 + int(m)) * 60 + int(s)) * 1000 + int(frac)


def _parse_srt_time(raw, line_no):
    m = RE_SRT_TIME.match(raw)
    if not m:
        raise SubtitleParseError(f"malformed timestamp {raw!r}", line_no)
    h, mi, s, frac = m.groups()
    return _to_millis(h, mi, s, frac) / 1000


def _parse_ass_time(raw, line_no):
    m = RE_ASS_TIME.match(raw)
    if not m:
        raise SubtitleParseError(f"malformed timestamp {raw!r}", line_no)
    h, mi, s, frac = m.groups()
    # ass fractions are centiseconds: "0:00:01.5" means 1.50 s
    frac = (frac or "0").ljust(2, "0")
    return _to_millis(h, mi, s, frac) / 1000


def _make_line(start, end, text, line_no):
    if end < start:
        raise SubtitleParseError(f"cue ends ({end}) before it starts ({start})", line_no)
    return SubtitleLine(start, end, text)


def _parse_srt(text: str) -> list[SubtitleLine]:
    out = []
    rows = text.splitlines()
    i = 0
    while i < len(rows):
        if not rows[i].strip():
            i += 1
            continue
        # optional numeric cue index
        if "-->" not in rows[i]:
            if rows[i].strip().isdigit() and i + 1 < len(rows) and "-->" in rows[i + 1]:
                i += 1
            else:
                raise SubtitleParseError(f"expected a timing line, got {rows[i]!r}", i + 1)
        timing_no = i + 1
        parts = RE_SRT_ARROW.split(rows[i].strip())
        if len(parts) != 2:
            raise SubtitleParseError(f"malformed timing line {rows[i]!r}", timing_no)
        # positional hints after the end stamp ("X1:..") are ignored
        start = _parse_srt_time(parts[0], timing_no)
        end = _parse_srt_time(parts[1].split()[0] if parts[1].split() else "", timing_no)
        i += 1
        body = []
        while i < len(rows) and rows[i].strip():
            body.append(rows[i])
            i += 1
        cleaned = _clean_text(" ".join(body))
        if cleaned:
            out.append(_make_line(start, end, cleaned, timing_no))
    return out


def _parse_ass(text: str) -> list[SubtitleLine]:
    out = []
    fmt = ASS_DEFAULT_FORMAT
    in_events = None
    for line_no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            in_events = line.lower() == "[events]"
            continue
        if in_events is False:
            continue
        key, sep, rest = line.partition(":")
        if not sep:
            continue
        key = key.strip().lower()
        if key == "format":
            fmt = [f.strip() for f in rest.split(",")]
            if "Text" not in fmt or fmt[-1] != "Text":
                raise SubtitleParseError("Format line must end with Text", line_no)
        elif key == "dialogue":
            fields = [f.strip() for f in rest.split(",", len(fmt) - 1)]
            if len(fields) != len(fmt):
                raise SubtitleParseError(
                    f"Dialogue has {len(fields)} fields, Format declares {len(fmt)}", line_no
                )
            row = dict(zip(fmt, fields))
            try:
                start_raw, end_raw = row["Start"], row["End"]
            except KeyError:
                raise SubtitleParseError("Format lacks Start/End columns", line_no) from None
            start = _parse_ass_time(start_raw, line_no)
            end = _parse_ass_time(end_raw, line_no)
            cleaned = _clean_text(row["Text"])
            if cleaned:
                out.append(_make_line(start, end, cleaned, line_no))
    return out


_PARSERS = {"srt": _parse_srt, "ass": _parse_ass, "ass-dialogue": _parse_ass}


def parse_subtitle_file(data: bytes | str, fmt: str = "srt", language: str = "und") -> SubtitleTrack:
    """Parse an srt file or the Dialogue events of an ass file into a sorted track.

    Markup (``<i>``, ``{\\an8}``) is stripped; cues whose text is empty after
    stripping are dropped.
    """
    try:
        parser = _PARSERS[fmt]
    except KeyError:
        raise ConfigError(f"unknown subtitle format {fmt!r}") from None
    if isinstance(data, bytes):
        try:
            text = data.decode("utf-8-sig")
        except UnicodeDecodeError as exc:
            raise SubtitleParseError(f"content is not UTF-8: {exc}") from None
    else:
        text = data.lstrip("﻿")
    lines = parser(text)
    if not lines:
        raise EmptyTrackError("no dialogue events found")
    lines.sort(key=lambda ln: ln.start)
    return SubtitleTrack(tuple(lines), language)


def guess_format(path: str) -> str:
    return "ass" if str(path).lower().endswith((".ass", ".ssa")) else "srt"


def _fmt_srt_time(t):
    ms = int(round(t * 1000))
    s, ms = divmod(ms, 1000)
    m, s = divmod(s, 60)
    h, m = divmod(m, 60)
    return f"{h:02}:{m:02}:{s:02},{ms:03}"


def _fmt_ass_time(t):
    cs = int(round(t * 100))
    s, cs = divmod(cs, 100)
    m, s = divmod(s, 60)
    h, m = divmod(m, 60)
    return f"{h}:{m:02}:{s:02}.{cs:02}"


def serialize_srt(track: SubtitleTrack) -> str:
    blocks = []
    for i, ln in enumerate(track.lines, 1):
        blocks.append(f"{i}\n{_fmt_srt_time(ln.start)} --> {_fmt_srt_time(ln.end)}\n{ln.text}\n")
    return "\n".join(blocks)


def serialize_ass(track: SubtitleTrack) -> str:
    rows = ["[Events]", "Format: " + ", ".join(ASS_DEFAULT_FORMAT)]
    for ln in track.lines:
        rows.append(
            f"Dialogue: 0,{_fmt_ass_time(ln.start)},{_fmt_ass_time(ln.end)},Default,,0,0,0,,{ln.text}"
        )
    return "\n".join(rows) + "\n"


# --- alignment ---------------------------------------------------------------

def window_half_width(n_src: int, n_tgt: int) -> int:
    """Search radius around the same ordinal index: the length gap, at least 1."""
    return max(abs(n_src - n_tgt), 1)


def align_tracks(
    src: SubtitleTrack, tgt: SubtitleTrack, threshold: float = DEFAULT_THRESHOLD
) -> AlignmentResult:
    """Pair each source line with the closest-starting unused target line nearby.

    For source index ``i`` only target indices within ``window_half_width``
    of ``i`` are considered; a candidate must start within ``threshold``
    seconds. Among several, the smallest start gap wins, then the lower index.
    """
    if not src.lines or not tgt.lines:
        raise ValueError("both tracks must be non-empty")
    half = window_half_width(len(src), len(tgt))
    match = kernels.align_scan(src.starts(), tgt.starts(), float(threshold), half)
    pairs = [
        BilingualPair(src.lines[i], tgt.lines[j]) for i, j in enumerate(match) if j >= 0
    ]
    return AlignmentResult(
        pairs=pairs,
        unmatched_src=len(src) - len(pairs),
        unmatched_tgt=len(tgt) - len(pairs),
        half_width=half,
    )


# --- corpus handling ---------------------------------------------------------

def split_corpus(
    corpora: Sequence[ParallelCorpus], sft_fraction: float = 0.8, seed: int = 0
) -> tuple[list[ParallelCorpus], list[ParallelCorpus]]:
    """Split whole programs into a demonstration part and an alignment part."""
    if not 0.0 < sft_fraction < 1.0:
        raise ConfigError(f"sft_fraction must lie in (0, 1), got {sft_fraction}")
    if len(corpora) < 2:
        raise ConfigError("need at least two programs to split")
    n_sft = int(round(sft_fraction * len(corpora)))
    n_sft = min(max(n_sft, 1), len(corpora) - 1)
    order = list(range(len(corpora)))
    random.Random(seed).shuffle(order)
    chosen = set(order[:n_sft])
    sft = [c for i, c in enumerate(corpora) if i in chosen]
    alpo = [c for i, c in enumerate(corpora) if i not in chosen]
    return sft, alpo


def chunk_into_prompts(
    corpus: ParallelCorpus, n: int = DEFAULT_LINES_PER_PROMPT, context_header: str = ""
) -> list[PromptBlock]:
    if n < 1:
        raise ConfigError("lines per prompt must be at least 1")
    blocks = []
    for b, lo in enumerate(range(0, len(corpus.pairs), n)):
        window = corpus.pairs[lo:lo + n]
        blocks.append(
            PromptBlock(
                context_header=context_header,
                lines=[p.src.text for p in window],
                references=[p.tgt.text for p in window],
                block_id=f"{corpus.program_id}#{b}",
            )
        )
    return blocks


# --- JSONL -------------------------------------------------------------------

def corpus_to_records(corpus: ParallelCorpus) -> Iterable[dict]:
    for p in corpus.pairs:
        yield {
            "schema": SCHEMA,
            "src": p.src.to_dict(),
            "tgt": p.tgt.to_dict(),
            "program": corpus.program_id,
            "direction": list(corpus.direction),
        }


def write_corpus_jsonl(corpora: Iterable[ParallelCorpus], fh) -> int:
    count = 0
    for corpus in corpora:
        for rec in corpus_to_records(corpus):
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
            count += 1
    return count


def read_corpus_jsonl(fh) -> list[ParallelCorpus]:
    """Group pair records by program, keeping first-seen program order."""
    programs: dict[str, ParallelCorpus] = {}
    for line_no, line in enumerate(fh, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            pair = BilingualPair(SubtitleLine.from_dict(rec["src"]), SubtitleLine.from_dict(rec["tgt"]))
            program = str(rec["program"])
        except (KeyError, TypeError, ValueError) as exc:
            raise SubtitleParseError(f"bad corpus record: {exc}", line_no) from None
        direction = tuple(rec.get("direction") or ("und", "und"))
        corpus = programs.setdefault(program, ParallelCorpus([], program, direction))
        corpus.pairs.append(pair)
    return list(programs.values())
