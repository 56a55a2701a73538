"""Translation similarity metrics, rater agreement statistics and score reports.

Sentence BLEU uses the effective order: n-gram orders the candidate is too
short to contain are left out, and remaining zero precisions are floored at
1e-9. Corpus BLEU pools raw counts. ChrF++ macro-averages precision and
recall over character 1..6-grams and word 1..2-grams before the F-beta.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from alpo import codec
from alpo.errors import AlignmentError, AlpoError, UndefinedCorrelationError
from alpo.sampling import Generator, RetryPolicy, SamplingParams, first_line

logger = logging.getLogger(__name__)

PRECISION_FLOOR = 1e-9
UNRELIABLE_SKIP_FRACTION = 0.10
LOA_Z = 1.96

_CHAR_SCRIPTS = "\u0E00-\u0E7F\u3040-\u30FF\u3400-\u4DBF\u4E00-\u9FFF\uF900-\uFAFF"  # Thai, kana, CJK
_TOKEN = re.compile(rf"[{_CHAR_SCRIPTS}]|[^\W{_CHAR_SCRIPTS}]+|[^\w\s]")


@dataclass(frozen=True)
class MetricScore:
    value: float
    scale: tuple[float, float] = (0.0, 100.0)
    warning: str | None = None

    def __post_init__(self):
        lo, hi = self.scale
        if not (lo - 1e-9 <= self.value <= hi + 1e-9):
            raise ValueError(f"metric value {self.value} outside {self.scale}")

    def __float__(self):
        return float(self.value)


def tokenize(text: str) -> list[str]:
    """Words and single punctuation marks; Chinese, Japanese and Thai split per character."""
    return _TOKEN.findall(text)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _bleu_stats(cand: list[str], refs: list[list[str]], max_n: int):
    matches, totals = [], []
    for n in range(1, max_n + 1):
        c = _ngrams(cand, n)
        best: Counter = Counter()
        for r in refs:
            best |= _ngrams(r, n)
        matches.append(sum(min(k, best[g]) for g, k in c.items()))
        totals.append(max(0, len(cand) - n + 1))
    # closest reference length, shorter one on ties
    ref_len = min((abs(len(r) - len(cand)), len(r)) for r in refs)[1]
    return matches, totals, len(cand), ref_len


def _brevity(c: int, r: int) -> float:
    if c == 0:
        return 0.0
    return 1.0 if c > r else math.exp(1.0 - r / c)


def _check_refs(references):
    refs = [references] if isinstance(references, str) else list(references)
    if not refs:
        raise ValueError("at least one reference is required")
    return refs


def bleu(candidate: str, references: Sequence[str] | str, max_n: int = 4) -> MetricScore:
    refs = [tokenize(r) for r in _check_refs(references)]
    cand = tokenize(candidate)
    if not cand:
        return MetricScore(0.0, warning="empty candidate")
    matches, totals, c, r = _bleu_stats(cand, refs, max_n)
    logs = [math.log(max(m / t, PRECISION_FLOOR)) for m, t in zip(matches, totals) if t > 0]
    value = 100.0 * _brevity(c, r) * math.exp(sum(logs) / len(logs))
    return MetricScore(min(value, 100.0))


def corpus_bleu(candidates: Sequence[str], references: Sequence[Sequence[str] | str], max_n: int = 4) -> MetricScore:
    """BLEU from pooled counts; ``references[i]`` holds the reference(s) for ``candidates[i]``."""
    if len(candidates) != len(references):
        raise AlignmentError(f"{len(candidates)} candidates for {len(references)} reference sets")
    matches = [0] * max_n
    totals = [0] * max_n
    c_len = r_len = 0
    for cand, refs in zip(candidates, references):
        refs = [tokenize(r) for r in _check_refs(refs)]
        m, t, c, r = _bleu_stats(tokenize(cand), refs, max_n)
        matches = [a + b for a, b in zip(matches, m)]
        totals = [a + b for a, b in zip(totals, t)]
        c_len += c
        r_len += r
    if c_len == 0:
        return MetricScore(0.0, warning="empty candidates")
    used = [(m, t) for m, t in zip(matches, totals) if t > 0]
    if any(m == 0 for m, _ in used):
        return MetricScore(0.0)
    log_p = sum(math.log(m / t) for m, t in used) / len(used)
    return MetricScore(min(100.0, 100.0 * _brevity(c_len, r_len) * math.exp(log_p)))


# --- ChrF++ ----------------------------------------------------------------------

def _chrf_stats(hyp: str, ref: str, char_n: int, word_n: int) -> list[tuple[int, int, int]]:
    """Per order ``(matches, hypothesis n-grams, reference n-grams)``: chars first, then words."""
    hc, rc = "".join(hyp.split()), "".join(ref.split())
    hw, rw = tokenize(hyp), tokenize(ref)
    stats = []
    for seq_h, seq_r, top in ((hc, rc, char_n), (hw, rw, word_n)):
        for n in range(1, top + 1):
            h, r = _ngrams(seq_h, n), _ngrams(seq_r, n)
            stats.append((sum((h & r).values()), sum(h.values()), sum(r.values())))
    return stats


def _chrf_from_stats(stats, beta: float) -> float:
    precisions, recalls = [], []
    for m, h, r in stats:
        if h == 0 or r == 0:
            continue
        precisions.append(m / h)
        recalls.append(m / r)
    if not precisions:
        return 0.0
    p = sum(precisions) / len(precisions)
    rc = sum(recalls) / len(recalls)
    if p + rc == 0:
        return 0.0
    b2 = beta * beta
    return 100.0 * (1 + b2) * p * rc / (b2 * p + rc)


def chrf_pp(candidate: str, references: Sequence[str] | str, char_n: int = 6, word_n: int = 2,
            beta: float = 2.0) -> MetricScore:
    refs = _check_refs(references)
    if not candidate.strip():
        return MetricScore(0.0, warning="empty candidate")
    best = max(_chrf_from_stats(_chrf_stats(candidate, r, char_n, word_n), beta) for r in refs)
    return MetricScore(min(best, 100.0))


def corpus_chrf_pp(candidates: Sequence[str], references: Sequence[str], char_n: int = 6,
                   word_n: int = 2, beta: float = 2.0) -> MetricScore:
    if len(candidates) != len(references):
        raise AlignmentError(f"{len(candidates)} candidates for {len(references)} references")
    total = None
    for cand, ref in zip(candidates, references):
        s = _chrf_stats(cand, ref, char_n, word_n)
        total = s if total is None else [tuple(a + b for a, b in zip(x, y)) for x, y in zip(total, s)]
    if total is None:
        return MetricScore(0.0, warning="empty corpus")
    return MetricScore(min(_chrf_from_stats(total, beta), 100.0))


# --- system similarity -------------------------------------------------------------

@dataclass
class SimilarityMatrix:
    labels: list[str]
    values: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([""] + self.labels)
        for label, row in zip(self.labels, self.values):
            writer.writerow([label] + [f"{v:.4f}" for v in row])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"labels": self.labels, "values": self.values.tolist()}


def pairwise_similarity(systems: Mapping[str, Sequence[str]]) -> SimilarityMatrix:
    """Entry ``(a, b)`` is corpus BLEU of system a's outputs against system b's as references."""
    labels = list(systems)
    sizes = {len(systems[k]) for k in labels}
    if len(sizes) > 1:
        raise AlignmentError(f"systems cover different numbers of items: {sorted(sizes)}")
    values = np.zeros((len(labels), len(labels)))
    for i, a in enumerate(labels):
        for j, b in enumerate(labels):
            values[i, j] = corpus_bleu(list(systems[a]), [[r] for r in systems[b]]).value
    return SimilarityMatrix(labels, values)


@dataclass
class BackTranslationResult:
    bleu: MetricScore
    chrf: MetricScore
    total: int
    skipped: int
    back_translations: list[str | None] = field(default_factory=list)

    @property
    def unreliable(self) -> bool:
        return self.total > 0 and self.skipped / self.total > UNRELIABLE_SKIP_FRACTION

    def to_dict(self) -> dict:
        return {
            "bleu": self.bleu.value,
            "chrf_pp": self.chrf.value,
            "total": self.total,
            "skipped": self.skipped,
            "unreliable": self.unreliable,
        }


def back_translation_consistency(
    corpus,
    translator: Generator,
    direction: tuple[str, str] | None = None,
    params: SamplingParams | None = None,
    retry: RetryPolicy | None = None,
) -> BackTranslationResult:
    """Round-trip every target line to the source language and compare with the original.

    Lines whose back-translation fails are skipped and counted. Lower scores
    mean freer, less literal translation.
    """
    direction = tuple(direction or corpus.direction)
    params = params or SamplingParams(temperature=1.0, top_k=1, top_p=1.0)
    retry = retry or RetryPolicy(attempts=1, backoff=0.0)
    hyps, refs, outputs = [], [], []
    skipped = 0
    for i, pair in enumerate(corpus.pairs):
        prompt = codec.backtranslation_prompt(pair.tgt.text, direction)
        try:
            text = first_line(retry.call(lambda: translator.sample(prompt, params, 1, seed=i)[0], line_index=i))
        except AlpoError as exc:
            logger.warning("back-translation of line %d skipped: %s", i, exc)
            skipped += 1
            outputs.append(None)
            continue
        outputs.append(text)
        hyps.append(text)
        refs.append(pair.src.text)
    result = BackTranslationResult(
        corpus_bleu(hyps, [[r] for r in refs]), corpus_chrf_pp(hyps, refs), len(corpus.pairs), skipped, outputs
    )
    if result.unreliable:
        logger.warning("%d of %d lines skipped; result marked unreliable", skipped, result.total)
    return result


# --- agreement ---------------------------------------------------------------------

def _paired(a, b) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"need two 1-D sequences of equal length, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise ValueError("need at least two paired observations")
    return x, y


def average_ranks(values) -> np.ndarray:
    """1-based ranks; tied values share the mean of the ranks they span."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="mergesort")
    ranks = np.empty(v.size)
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and v[order[j + 1]] == v[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman_rho(a, b) -> MetricScore:
    x, y = _paired(a, b)
    rx, ry = average_ranks(x), average_ranks(y)
    dx, dy = rx - rx.mean(), ry - ry.mean()
    denom = math.sqrt(float(dx @ dx) * float(dy @ dy))
    if denom == 0:
        raise UndefinedCorrelationError("rank correlation is undefined for a constant sequence")
    rho = float(dx @ dy) / denom
    return MetricScore(max(-1.0, min(1.0, rho)), scale=(-1.0, 1.0))


@dataclass(frozen=True)
class AgreementStats:
    mean_difference: float
    loa_low: float
    loa_high: float
    sd: float
    n: int

    def to_dict(self) -> dict:
        return {"md": self.mean_difference, "loa": [self.loa_low, self.loa_high], "sd": self.sd, "n": self.n}


def bland_altman(a, b) -> AgreementStats:
    x, y = _paired(a, b)
    d = x - y
    md = float(d.mean())
    sd = float(d.std(ddof=1))
    return AgreementStats(md, md - LOA_Z * sd, md + LOA_Z * sd, sd, int(d.size))


# --- dimension reports ----------------------------------------------------------------

@dataclass
class DimensionReport:
    systems: list[str]
    dimensions: list[str]
    means: dict[str, dict[str, float | None]]
    gaps: list[tuple[str, str, str]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "means": self.means,
            "gaps": [{"system": s, "dimension": d, "evaluator": e} for s, d, e in self.gaps],
        }

    def to_text(self) -> str:
        rows = [[s] + [_fmt(self.means[s].get(d)) for d in self.dimensions] for s in self.systems]
        return format_table(["system"] + self.dimensions, rows)


def _fmt(v) -> str:
    return "-" if v is None else f"{v:.2f}"


def aggregate_dimension_report(rows: Iterable[Mapping]) -> DimensionReport:
    """Mean over items within each evaluator, then the mean across evaluators.

    Rows are ``{"system", "evaluator", "dimension", "item_id", "score"}``. A
    (system, dimension) cell an evaluator never scored is listed as a gap and
    that evaluator is left out of the cell's mean.
    """
    cells: dict[tuple[str, str, str], list[float]] = {}
    systems, dims, evaluators = {}, {}, {}
    for row in rows:
        s, e, d = str(row["system"]), str(row["evaluator"]), str(row["dimension"])
        score = float(row["score"])
        if not 0.0 <= score <= 100.0:
            raise ValueError(f"score {score} outside [0, 100]")
        systems.setdefault(s, None)
        dims.setdefault(d, None)
        evaluators.setdefault(e, None)
        cells.setdefault((s, d, e), []).append(score)
    means: dict[str, dict[str, float | None]] = {}
    gaps = []
    for s in systems:
        means[s] = {}
        for d in dims:
            per_eval = []
            for e in evaluators:
                scores = cells.get((s, d, e))
                if scores is None:
                    gaps.append((s, d, e))
                else:
                    per_eval.append(math.fsum(scores) / len(scores))
            means[s][d] = math.fsum(per_eval) / len(per_eval) if per_eval else None
    return DimensionReport(list(systems), list(dims), means, gaps)


def format_table(headers: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(str(x)) for x in col) for col in zip(headers, *rows)]
    lines = ["  ".join(str(h).ljust(w) for h, w in zip(headers, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(str(c).ljust(w) for c, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"


def dump_json(obj, fh) -> None:
    json.dump(obj, fh, ensure_ascii=False, indent=2, sort_keys=True)
    fh.write("\n")
