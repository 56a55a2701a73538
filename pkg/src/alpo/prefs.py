"""Turn sampled prompts into weighted segment-level preference records."""
from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, field

from alpo import codec
from alpo.errors import DegenerateBatchError
from alpo.losses import adaptive_weights, dynamic_beta, gate, mix_prefix
from alpo.sampling import SampledPrompt, select_rejected, top_indices

SCHEMA = "alpo/v1"


@dataclass
class PreferenceRecord:
    prompt_id: str
    line: int
    context: str
    prefix: str
    chosen: str
    rejected: str
    w: float
    beta: float
    n_candidates: int
    score_range: int
    r_chosen: int
    r_rejected: int
    prefix_chosen: list[str] = field(default_factory=list)
    prefix_pool: list[list[str]] = field(default_factory=list)

    def materialize_prefix(self, lam: float = 1.0, rng: random.Random | None = None) -> str:
        """Prefix for training: each earlier slot keeps its chosen text with probability ``lam``."""
        if rng is None or lam >= 1.0 or not self.prefix_pool:
            return self.prefix
        mixed = mix_prefix(self.line, self.prefix_chosen, self.prefix_pool, lam, rng)
        return codec.continuation_prefix(self.context, mixed)

    def to_dict(self) -> dict:
        return {"schema": SCHEMA, **asdict(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "PreferenceRecord":
        names = cls.__dataclass_fields__
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class ExtractionStats:
    segments: int = 0
    gated: int = 0
    collisions: int = 0
    skipped_prompts: int = 0

    @property
    def active(self) -> int:
        return self.segments - self.gated


def extract_preferences(sampled: SampledPrompt, seed: int = 0, stats: ExtractionStats | None = None) -> list[PreferenceRecord]:
    """Apply the gate, pick rejected (third-lowest) and fix chosen/rejected collisions.

    When the chosen candidate does not outscore the rejected one, chosen is
    redrawn among top-3 candidates that do; if none does, the segment is gated.
    """
    stats = stats if stats is not None else ExtractionStats()
    rng = random.Random(f"{seed}:{sampled.prompt_id}")
    counts, gates, picks = [], [], []
    for ln in sampled.lines:
        scores = ln.scores
        counts.append(len(ln.candidates))
        g = gate(len(ln.candidates), max(scores) - min(scores))
        pick = None
        if g:
            rej = select_rejected(scores)
            chosen = ln.chosen
            if scores[chosen] <= scores[rej]:
                stats.collisions += 1
                better = [j for j in top_indices(scores) if scores[j] > scores[rej]]
                if better:
                    chosen = rng.choice(better)
                else:
                    g = 0
            if g:
                pick = (chosen, rej)
        gates.append(g)
        picks.append(pick)
    stats.segments += len(sampled.lines)
    stats.gated += len(sampled.lines) - sum(gates)
    if not any(gates):
        return []
    weights = adaptive_weights(counts, gates)
    active = [i for i, g in enumerate(gates) if g]
    gaps = [sampled.lines[i].scores[picks[i][0]] - sampled.lines[i].scores[picks[i][1]] for i in active]
    try:
        betas = dynamic_beta(gaps)
    except DegenerateBatchError:
        stats.skipped_prompts += 1
        return []
    records = []
    for beta, i in zip(betas, active):
        ln = sampled.lines[i]
        c, r = picks[i]
        records.append(
            PreferenceRecord(
                prompt_id=sampled.prompt_id,
                line=i,
                context=sampled.prompt,
                prefix=codec.continuation_prefix(sampled.prompt, ln.prefix),
                chosen=ln.candidates[c],
                rejected=ln.candidates[r],
                w=float(weights[i]),
                beta=float(beta),
                n_candidates=len(ln.candidates),
                score_range=max(ln.scores) - min(ln.scores),
                r_chosen=ln.scores[c],
                r_rejected=ln.scores[r],
                prefix_chosen=list(ln.prefix),
                prefix_pool=[list(sampled.lines[j].candidates) for j in range(i)],
            )
        )
    return records


def write_records(records, fh) -> int:
    n = 0
    for rec in records:
        fh.write(json.dumps(rec.to_dict(), ensure_ascii=False) + "\n")
        n += 1
    return n


def read_records(fh) -> list[PreferenceRecord]:
    out = []
    for line_no, line in enumerate(fh, 1):
        if not line.strip():
            continue
        try:
            out.append(PreferenceRecord.from_dict(json.loads(line)))
        except (TypeError, ValueError) as exc:
            raise ValueError(f"line {line_no}: bad preference record: {exc}") from None
    return out


def betas_normalised(records) -> bool:
    """Per prompt, the largest beta is 1 and all betas lie in [0, 1]."""
    by_prompt: dict[str, list[float]] = {}
    for r in records:
        by_prompt.setdefault(r.prompt_id, []).append(r.beta)
    return all(
        abs(max(b) - 1.0) <= 1e-12 and all(0.0 <= x <= 1.0 for x in b) for b in by_prompt.values()
    )


__all__ = [
    "PreferenceRecord",
    "ExtractionStats",
    "extract_preferences",
    "write_records",
    "read_records",
    "betas_normalised",
]
