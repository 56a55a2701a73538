"""Adaptive weights, dynamic beta, prefix mixing and the preference losses.

Everything here is a pure function of scores and log-probabilities. Log
probabilities of a segment are supplied by callables so any model (the toy
policy in ``alpo.toy`` or a real LM) can plug in.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from alpo.errors import DegenerateBatchError, DegenerateInputError, NumericError

MIN_CANDIDATES = 3  # gate closes at |T_i| <= 3
MIN_SCORE_RANGE = 5  # gate closes at max(E_i) - min(E_i) <= 5

LogProbFn = Callable[[str, str], float]


def log_sigmoid(z: float) -> float:
    """``log(1 / (1 + exp(-z)))`` without overflow at large ``|z|``."""
    if z >= 0:
        return -math.log1p(math.exp(-z))
    return z - math.log1p(math.exp(z))


def sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


# --- weights -------------------------------------------------------------------

def gate(candidate_count: int, score_range: int) -> int:
    """1 when a segment has enough distinct candidates and enough score spread."""
    if candidate_count <= MIN_CANDIDATES or score_range <= MIN_SCORE_RANGE:
        return 0
    return 1


def importance(candidate_counts: Sequence[int]) -> np.ndarray:
    counts = np.asarray(candidate_counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise DegenerateInputError("candidate counts sum to zero")
    return counts / total


def adaptive_weights(candidate_counts: Sequence[int], gates: Sequence[int]) -> np.ndarray:
    """Gate times importance; importance normalises over all segments, gated or not."""
    if len(gates) != len(candidate_counts):
        raise ValueError("one gate per segment is required")
    return np.asarray(gates, dtype=np.float64) * importance(candidate_counts)


def dynamic_beta(reward_gaps: Sequence[float]) -> np.ndarray:
    """Each gap divided by the largest gap in the prompt."""
    gaps = np.asarray(reward_gaps, dtype=np.float64)
    if gaps.size == 0:
        raise DegenerateInputError("dynamic beta needs at least one active segment")
    if np.any(gaps < 0):
        raise ValueError("reward gaps must be non-negative")
    top = gaps.max()
    if top <= 0:
        raise DegenerateBatchError("all reward gaps are zero")
    return gaps / top


@dataclass(frozen=True)
class MixSchedule:
    lambda_start: float = 0.2
    lambda_end: float = 0.6

    def __post_init__(self):
        for v in (self.lambda_start, self.lambda_end):
            if not 0.0 <= v <= 1.0:
                raise ValueError("mixing probabilities must lie in [0, 1]")


def lambda_at(progress: float, schedule: MixSchedule = MixSchedule()) -> float:
    """Linear ramp from ``lambda_start`` at progress 0 to ``lambda_end`` at progress 1."""
    if not 0.0 <= progress <= 1.0:
        raise ValueError(f"progress must lie in [0, 1], got {progress}")
    # convex-combination form hits both endpoints exactly in floating point
    return schedule.lambda_start * (1.0 - progress) + schedule.lambda_end * progress


def mix_prefix(
    i: int,
    chosen: Sequence[str],
    candidate_sets: Sequence[Sequence[str]],
    lam: float,
    rng: random.Random,
) -> list[str]:
    """Translations for slots ``0..i-1``: the chosen one with probability ``lam``, else a uniform pick."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    out = []
    for j in range(i):
        if rng.random() < lam:
            out.append(chosen[j])
        else:
            out.append(rng.choice(list(candidate_sets[j])))
    return out


# --- batches -------------------------------------------------------------------

@dataclass
class SegmentPreference:
    prefix: str
    chosen: str
    rejected: str
    candidate_count: int
    score_range: int
    reward_chosen: int
    reward_rejected: int

    @property
    def gap(self) -> int:
        return self.reward_chosen - self.reward_rejected


@dataclass
class PromptBatch:
    segments: list[SegmentPreference]
    weights: np.ndarray
    betas: np.ndarray

    @classmethod
    def build(cls, segments: Sequence[SegmentPreference], gates: Sequence[int] | None = None) -> "PromptBatch":
        """Compute weights and betas for one prompt's segments.

        Gated segments get weight 0 and beta 0 and are left out of the beta
        normaliser. Raises ``DegenerateBatchError`` when active segments exist
        but every gap among them is zero.
        """
        segments = list(segments)
        if gates is None:
            gates = [gate(s.candidate_count, s.score_range) for s in segments]
        weights = adaptive_weights([s.candidate_count for s in segments], gates)
        betas = np.zeros(len(segments))
        active = [i for i, g in enumerate(gates) if g]
        if active:
            betas[active] = dynamic_beta([segments[i].gap for i in active])
        return cls(segments, weights, betas)


@dataclass
class SegmentTerm:
    weight: float
    beta: float | None
    margin: float | None
    value: float


@dataclass
class LossBreakdown:
    total: float
    segments: list[SegmentTerm] = field(default_factory=list)

    @property
    def values(self) -> np.ndarray:
        return np.array([s.value for s in self.segments])


def dpo_term(weight: float, beta: float, margin: float) -> float:
    return -weight * log_sigmoid(beta * margin)


def dpo_term_slope(weight: float, beta: float, margin: float) -> float:
    """Derivative of ``dpo_term`` with respect to the margin."""
    return -weight * beta * sigmoid(-beta * margin)


def _finite(value: float, segment: int, what: str) -> float:
    if not math.isfinite(value):
        raise NumericError(f"non-finite {what} log-probability ({value})", segment)
    return value


def segment_margin(seg: SegmentPreference, logp_policy: LogProbFn, logp_ref: LogProbFn, index: int = 0) -> float:
    """``(log pi(c) - log ref(c)) - (log pi(r) - log ref(r))`` under the segment prefix."""
    pc = _finite(logp_policy(seg.chosen, seg.prefix), index, "policy chosen")
    rc = _finite(logp_ref(seg.chosen, seg.prefix), index, "reference chosen")
    pr = _finite(logp_policy(seg.rejected, seg.prefix), index, "policy rejected")
    rr = _finite(logp_ref(seg.rejected, seg.prefix), index, "reference rejected")
    return (pc - rc) - (pr - rr)


def alpo_dpo_loss(batch: PromptBatch, logp_policy: LogProbFn, logp_ref: LogProbFn) -> LossBreakdown:
    """Weighted Bradley-Terry loss summed over one prompt's segments.

    Zero-weight segments contribute exactly 0 and their log-probabilities are
    never evaluated.
    """
    terms = []
    for i, seg in enumerate(batch.segments):
        w = float(batch.weights[i])
        b = float(batch.betas[i])
        if w == 0.0:
            terms.append(SegmentTerm(0.0, b, None, 0.0))
            continue
        margin = segment_margin(seg, logp_policy, logp_ref, i)
        terms.append(SegmentTerm(w, b, margin, dpo_term(w, b, margin)))
    return LossBreakdown(math.fsum(t.value for t in terms), terms)


def vanilla_dpo_loss(policy_chosen, policy_rejected, ref_chosen, ref_rejected, beta: float) -> float:
    """Mean over pairs of ``-log sigmoid(beta * (chosen log-ratio - rejected log-ratio))``."""
    pc, pr, rc, rr = (np.atleast_1d(np.asarray(a, dtype=np.float64)) for a in
                      (policy_chosen, policy_rejected, ref_chosen, ref_rejected))
    margins = (pc - rc) - (pr - rr)
    return float(np.mean([-log_sigmoid(beta * m) for m in margins]))


# --- group-relative variant ------------------------------------------------------

def grpo_advantages(scores: Sequence[float]) -> np.ndarray | None:
    """Standardised scores with the population std; ``None`` when the std is zero."""
    e = np.asarray(scores, dtype=np.float64)
    std = e.std()
    if std == 0:
        return None
    return (e - e.mean()) / std


def kl_estimate(log_ratios) -> np.ndarray:
    """Per-candidate ``ref/pi - log(ref/pi) - 1`` given ``log(pi/ref)``; never negative."""
    lr = np.asarray(log_ratios, dtype=np.float64)
    # expm1 keeps precision near zero; the clamp removes the last-ulp negatives
    return np.maximum(np.expm1(-lr) + lr, 0.0)


def grpo_segment_objective(log_ratios, advantages, eps: float = 0.2, eta: float = 0.0) -> float:
    """Mean over candidates of ``min(r A, clip(r) A) - eta * KL`` (to be maximised)."""
    lr = np.asarray(log_ratios, dtype=np.float64)
    adv = np.asarray(advantages, dtype=np.float64)
    ratio = np.exp(lr)
    surrogate = np.minimum(ratio * adv, np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv)
    return float(np.mean(surrogate - eta * kl_estimate(lr)))


def alpo_grpo_loss(
    log_ratios: Sequence[Sequence[float]],
    scores: Sequence[Sequence[float]],
    weights: Sequence[float],
    eps: float = 0.2,
    eta: float = 0.0,
) -> LossBreakdown:
    """``-sum_i w_i * objective_i`` with advantages standardised within each segment.

    Segments with zero weight or zero score variance contribute 0.
    """
    if not (len(log_ratios) == len(scores) == len(weights)):
        raise ValueError("log_ratios, scores and weights must align per segment")
    terms = []
    for i, (lr, e, w) in enumerate(zip(log_ratios, scores, weights)):
        w = float(w)
        if len(lr) != len(e):
            raise ValueError(f"segment {i}: {len(lr)} log-ratios for {len(e)} scores")
        if w == 0.0:
            terms.append(SegmentTerm(0.0, None, None, 0.0))
            continue
        if len(e) < 2:
            raise DegenerateInputError(f"segment {i}: need at least two scored candidates")
        if not np.all(np.isfinite(lr)):
            raise NumericError("non-finite log-ratio", i)
        adv = grpo_advantages(e)
        if adv is None:
            terms.append(SegmentTerm(w, None, None, 0.0))
            continue
        terms.append(SegmentTerm(w, None, None, -w * grpo_segment_objective(lr, adv, eps, eta)))
    return LossBreakdown(math.fsum(t.value for t in terms), terms)


# --- PPO pieces ------------------------------------------------------------------

def gae_advantages(rewards, values, gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """TD residuals ``-E_i + gamma V_{i+1} - V_i`` and their discounted suffix sums.

    The score enters with a negative sign, exactly as in the source procedure.
    """
    e = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if v.shape[0] != e.shape[0] + 1:
        raise ValueError("values must have one more entry than rewards")
    deltas = -e + gamma * v[1:] - v[:-1]
    adv = np.empty_like(deltas)
    running = 0.0
    for i in range(len(deltas) - 1, -1, -1):
        running = deltas[i] + gamma * lam * running
        adv[i] = running
    return deltas, adv


def ppo_clip_loss(ratios, advantages, eps: float = 0.2) -> float:
    """``-sum_i min(r A, clip(r, 1-eps, 1+eps) A)`` per trajectory, averaged over trajectories.

    1-D inputs are a single trajectory; 2-D inputs are ``(batch, steps)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    r = np.asarray(ratios, dtype=np.float64)
    a = np.asarray(advantages, dtype=np.float64)
    if r.shape != a.shape:
        raise ValueError("ratios and advantages must have the same shape")
    obj = np.minimum(r * a, np.clip(r, 1.0 - eps, 1.0 + eps) * a)
    if obj.ndim == 1:
        obj = obj[None, :]
    return float(np.mean(-obj.sum(axis=-1)))
