"""A tabular autoregressive policy with exact log-probabilities and gradients.

The next-token distribution depends only on the previous ``order`` tokens.
Every distinct context of that length has its own row of logits, plus one
shared row for positions with fewer than ``order`` predecessors, so the table
has ``V**order + 1`` rows and gradients are exact.
"""
from __future__ import annotations

import json
import math
from collections import OrderedDict
from typing import Iterable, Sequence

import numpy as np

from alpo import kernels
from alpo.errors import NumericError, VocabularyError
from alpo.losses import (
    LossBreakdown,
    MixSchedule,
    PromptBatch,
    SegmentPreference,
    SegmentTerm,
    dpo_term,
    dpo_term_slope,
    lambda_at,
)

CHECKPOINT_SCHEMA = "alpo/toy-policy/v1"


class ToyPolicy:
    def __init__(self, vocab: Sequence[str], order: int = 1, logits: np.ndarray | None = None, seed: int = 0):
        if order < 1:
            raise ValueError("order must be at least 1")
        self.vocab = list(vocab)
        if len(set(self.vocab)) != len(self.vocab):
            raise ValueError("vocabulary symbols must be unique")
        self.index = {tok: i for i, tok in enumerate(self.vocab)}
        self.order = order
        self.seed = seed
        shape = (self.n_contexts, len(self.vocab))
        if logits is None:
            logits = np.zeros(shape)
        logits = np.ascontiguousarray(logits, dtype=np.float64)
        if logits.shape != shape:
            raise ValueError(f"logits have shape {logits.shape}, expected {shape}")
        if not np.all(np.isfinite(logits)):
            raise NumericError("logits must be finite")
        self.logits = logits

    @classmethod
    def random(cls, vocab: Sequence[str], order: int = 1, seed: int = 0, scale: float = 0.1) -> "ToyPolicy":
        """Logits drawn uniformly from ``[-scale, scale]``."""
        n_rows = len(vocab) ** order + 1
        rng = np.random.default_rng(seed)
        return cls(vocab, order, rng.uniform(-scale, scale, size=(n_rows, len(vocab))), seed)

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    @property
    def n_contexts(self) -> int:
        return len(self.vocab) ** self.order + 1

    def copy(self) -> "ToyPolicy":
        return ToyPolicy(self.vocab, self.order, self.logits.copy(), self.seed)

    # --- tokenisation ----------------------------------------------------------

    def encode(self, tokens: str | Iterable[str]) -> np.ndarray:
        if isinstance(tokens, str):
            tokens = tokens.split()
        try:
            return np.fromiter((self.index[t] for t in tokens), dtype=np.int64)
        except KeyError as exc:
            raise VocabularyError(f"token {exc.args[0]!r} is not in the vocabulary") from None

    def _joined(self, prefix, segment) -> tuple[np.ndarray, int]:
        pre = prefix.split() if isinstance(prefix, str) else list(prefix)
        # only the last `order` prefix tokens can influence the segment
        pre = pre[-self.order:]
        ids = self.encode(list(pre) + (segment.split() if isinstance(segment, str) else list(segment)))
        return ids, len(pre)

    # --- probabilities ---------------------------------------------------------

    def context_class(self, context: Sequence[str]) -> int:
        ids = self.encode(list(context)[-self.order:] if len(context) >= self.order else list(context))
        return int(kernels.context_class(ids, len(ids), self.order, self.vocab_size))

    def token_logprob(self, context: Sequence[str], token: str) -> float:
        if token not in self.index:
            raise VocabularyError(f"token {token!r} is not in the vocabulary")
        row = self.logits[self.context_class(context)]
        m = row.max()
        return float(row[self.index[token]] - (m + math.log(np.exp(row - m).sum())))

    def row_probs(self, context: Sequence[str]) -> np.ndarray:
        row = self.logits[self.context_class(context)]
        e = np.exp(row - row.max())
        return e / e.sum()

    def sequence_logprob(self, prefix, segment) -> float:
        ids, start = self._joined(prefix, segment)
        return float(kernels.sequence_logprob(self.logits, ids, start, self.order))

    def grad_sequence_logprob(self, prefix, segment) -> np.ndarray:
        grad = np.zeros_like(self.logits)
        self.accumulate_grad(prefix, segment, 1.0, grad)
        return grad

    def accumulate_grad(self, prefix, segment, coef: float, grad: np.ndarray) -> float:
        """Add ``coef`` times the log-prob gradient into ``grad``; returns the log-prob."""
        ids, start = self._joined(prefix, segment)
        return float(kernels.accumulate_sequence_grad(self.logits, ids, start, self.order, coef, grad))

    def logprob_fn(self):
        """Adapter with the ``(text, prefix) -> log-prob`` signature the losses expect."""
        return lambda text, prefix: self.sequence_logprob(prefix, text)

    # --- persistence -----------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "schema": CHECKPOINT_SCHEMA,
            "vocab": self.vocab,
            "order": self.order,
            "seed": self.seed,
            "logits": self.logits.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ToyPolicy":
        return cls(d["vocab"], int(d["order"]), np.array(d["logits"], dtype=np.float64), int(d.get("seed", 0)))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "ToyPolicy":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# --- loss and gradient over prompt batches ---------------------------------------

def dpo_loss_and_grad(
    policy: ToyPolicy, reference: ToyPolicy, batches: Sequence[PromptBatch]
) -> tuple[LossBreakdown, np.ndarray]:
    """ALPO-DPO loss summed within each prompt and averaged over prompts, with its gradient.

    Recorded term values already include the ``1/len(batches)`` factor so
    that ``total`` equals the sum of the terms.
    """
    grad = np.zeros_like(policy.logits)
    terms: list[SegmentTerm] = []
    if not batches:
        return LossBreakdown(0.0, terms), grad
    scale = 1.0 / len(batches)
    for batch in batches:
        for i, seg in enumerate(batch.segments):
            w = float(batch.weights[i])
            b = float(batch.betas[i])
            if w == 0.0:
                terms.append(SegmentTerm(0.0, b, None, 0.0))
                continue
            pc = policy.sequence_logprob(seg.prefix, seg.chosen)
            pr = policy.sequence_logprob(seg.prefix, seg.rejected)
            rc = reference.sequence_logprob(seg.prefix, seg.chosen)
            rr = reference.sequence_logprob(seg.prefix, seg.rejected)
            margin = (pc - rc) - (pr - rr)
            if not math.isfinite(margin):
                raise NumericError("non-finite margin", i)
            slope = scale * dpo_term_slope(w, b, margin)
            policy.accumulate_grad(seg.prefix, seg.chosen, slope, grad)
            policy.accumulate_grad(seg.prefix, seg.rejected, -slope, grad)
            terms.append(SegmentTerm(w, b, margin, scale * dpo_term(w, b, margin)))
    return LossBreakdown(math.fsum(t.value for t in terms), terms), grad


def group_by_prompt(records) -> list[list]:
    groups: "OrderedDict[str, list]" = OrderedDict()
    for rec in records:
        groups.setdefault(rec.prompt_id, []).append(rec)
    return list(groups.values())


def records_to_batches(records, lam: float = 1.0, rng=None) -> list[PromptBatch]:
    """Materialise prefixes (mixing with probability ``lam``) and keep stored weights and betas."""
    batches = []
    for group in group_by_prompt(records):
        segs = [
            SegmentPreference(
                prefix=rec.materialize_prefix(lam, rng),
                chosen=rec.chosen,
                rejected=rec.rejected,
                candidate_count=rec.n_candidates,
                score_range=rec.score_range,
                reward_chosen=rec.r_chosen,
                reward_rejected=rec.r_rejected,
            )
            for rec in group
        ]
        batches.append(
            PromptBatch(segs, np.array([r.w for r in group], dtype=np.float64),
                        np.array([r.beta for r in group], dtype=np.float64))
        )
    return batches


def alpo_train_step(
    policy: ToyPolicy,
    reference: ToyPolicy,
    records,
    learning_rate: float,
    progress: float = 1.0,
    schedule: MixSchedule = MixSchedule(),
    rng=None,
) -> tuple[ToyPolicy, LossBreakdown]:
    """One full-batch gradient-descent step on the ALPO-DPO loss; updates ``policy`` in place."""
    if policy.vocab != reference.vocab or policy.order != reference.order:
        raise ValueError("policy and reference must share vocabulary and order")
    lam = lambda_at(progress, schedule)
    batches = records_to_batches(records, lam, rng)
    loss, grad = dpo_loss_and_grad(policy, reference, batches)
    if not math.isfinite(loss.total) or not np.all(np.isfinite(grad)):
        raise NumericError(f"training aborted: loss={loss.total}")
    if learning_rate != 0.0 and any(t.weight for t in loss.segments):
        policy.logits -= learning_rate * grad
    return policy, loss


def preference_rate(policy: ToyPolicy, records) -> float:
    """Share of records whose chosen text is more likely than the rejected one."""
    records = list(records)
    if not records:
        return 0.0
    wins = sum(
        policy.sequence_logprob(r.prefix, r.chosen) > policy.sequence_logprob(r.prefix, r.rejected)
        for r in records
    )
    return wins / len(records)


def build_vocab(records, order: int = 1) -> list[str]:
    """Sorted set of whitespace tokens the toy policy can be asked about.

    Beyond the candidate texts, only the tail of any prefix matters: line
    markers ``"<j>."``, the numbered candidate lines a mixed prefix can end
    with, and the last ``order`` tokens of the prompt itself.
    """
    vocab = set()
    for r in records:
        vocab.update(r.chosen.split())
        vocab.update(r.rejected.split())
        vocab.update(r.prefix.split()[-order:])
        vocab.update(r.context.split()[-order:])
        vocab.update(f"{j}." for j in range(1, r.line + 2))
        # a mixed prefix line reads "<j>.<candidate>", so its first word is glued to the marker
        for j, pool in enumerate(r.prefix_pool, 1):
            for cand in pool:
                vocab.update(f"{j}.{cand}".split())
    return sorted(vocab)
